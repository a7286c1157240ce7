"""Chamfer and EMD on small clouds, checked against brute force.

Run: python3 demos/01_metrics.py
"""

import itertools
import math

import numpy as np

from csipoint.metrics import chamfer_distance, emd, nearest_neighbors


def main():
    print("hand values")
    print("  CD({0}, {(1,0,0)})   =", chamfer_distance([[0, 0, 0]], [[1, 0, 0]]), "(squared distance, both ways)")
    print("  EMD({0}, {(3,4,0)})  =", emd([[0, 0, 0]], [[3, 4, 0]]), "(one match of length 5)")

    rng = np.random.default_rng(0)
    P, Q = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    brute = min(math.fsum(math.dist(P[i], Q[j]) for i, j in enumerate(perm))
                for perm in itertools.permutations(range(5))) / 5
    print(f"\nEMD of two 5-point clouds: solver {emd(P, Q):.12f}, all 120 matchings {brute:.12f}")

    shift = np.array([3.0, -1.0, 2.0])
    print(f"translation: CD {chamfer_distance(P, Q):.15f} vs shifted {chamfer_distance(P + shift, Q + shift):.15f}")

    ref, queries = rng.standard_normal((2000, 3)), rng.standard_normal((1000, 3))
    same = np.array_equal(nearest_neighbors(ref, queries, "kdtree"), nearest_neighbors(ref, queries, "brute"))
    print(f"KD-tree and linear scan agree on 1000 nearest-neighbour queries: {same}")


if __name__ == "__main__":
    main()
