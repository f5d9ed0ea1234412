"""Sweep packet loss on a five-UAV forest flight and report estimation accuracy and traffic."""
import os

from swarmest.harness import sweep

PATH = os.path.join(os.path.dirname(__file__), "..", "scenarios", "forest5.yaml")

if __name__ == "__main__":
    for plr, rep in zip((0, 25, 50, 75, 100), sweep(PATH, "plr", [0, 25, 50, 75, 100])):
        tx = sum(v[0] for v in rep.bandwidth.values()) / len(rep.bandwidth) / 1e3
        print(f"PLR {plr:3d}%  ego RMSE {rep.mean_ego_rmse():.4f} m  mutual RMSE {rep.mean_mutual_rmse():.4f} m  "
              f"tx {tx:5.1f} KB/s per UAV")
