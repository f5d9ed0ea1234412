"""A UAV flying down a featureless corridor drifts on its own.

A teammate hovering in the hall at the corridor mouth keeps observing it, which
bounds the error. Compare against the same flight with every packet lost.
"""
import os

from swarmest.harness import load_scenario, run

PATH = os.path.join(os.path.dirname(__file__), "..", "scenarios", "corridor2.yaml")

if __name__ == "__main__":
    with_team = run(PATH)
    alone = run(load_scenario(PATH).with_overrides(network={"plr": 1.0}))
    print(f"degenerate scans flagged: {with_team.degenerate_scans.get(2, 0)}")
    print(f"with teammate: ego RMSE {with_team.ego_rmse(2)[0]:.3f} m, final error {with_team.final_error[2]:.3f} m")
    print(f"alone:         ego RMSE {alone.ego_rmse(2)[0]:.3f} m, final error {alone.final_error[2]:.1f} m")
