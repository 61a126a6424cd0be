"""Sigma-point entry probability against a Monte-Carlo reference.

Sweeps the distance of a Gaussian position estimate from a FoV ball of
radius 70 m and prints both values, showing where the 7-point rule is
coarse (the boundary, with large spread).
"""

import argparse

import numpy as np

from disac.geometry import BsConfig
from disac.handover import entry_probability
from disac.trajectory import TrajectoryBernoulli, TrajectoryGaussian


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--std", type=float, default=5.0, help="position standard deviation per axis (m)")
    p.add_argument("--samples", type=int, default=200_000)
    args = p.parse_args()
    dest = BsConfig(2, np.zeros(3), 70.0, 0.9, 3.0, np.diag([1e-18, 1e-4, 1e-4]))
    rng = np.random.default_rng(0)
    cov = np.eye(6) * args.std**2
    print("distance_m,sigma_point,monte_carlo")
    for dist in np.arange(50.0, 90.1, 2.5):
        mean = np.array([dist, 0, 0, 0, 0, 0])
        b = TrajectoryBernoulli(1.0, TrajectoryGaussian.single(1, mean, cov, 5))
        pts = rng.normal(mean[:3], args.std, size=(args.samples, 3))
        mc = 0.9 * np.mean(np.linalg.norm(pts, axis=1) <= 70.0)
        print(f"{dist:.1f},{entry_probability(b, dest):.4f},{mc:.4f}")


if __name__ == "__main__":
    main()
