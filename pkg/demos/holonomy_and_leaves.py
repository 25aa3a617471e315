"""Weak-unstable leaves and their holonomy for the control and live models.

Prints quasi-isometry constants of a level-set leaf of length 40 and the
holonomy verdict over 24 base points.

    python3 demos/holonomy_and_leaves.py
"""

import numpy as np

from endolab import families
from endolab.foliation import holonomy_jacobian, levelset_leaf, quasi_isometry_scan


def main():
    base = np.random.default_rng(3).random((24, 3))
    for eps_b in (0.0, 0.5):
        model = families.cross_shear(0.5, eps_b)
        seg = levelset_leaf(model, np.array([0.3, 0.3, 0.3]), 40.0, 1e-2)
        qi = quasi_isometry_scan(seg, model.splitting.basis[:, 1])
        hol = holonomy_jacobian(model, base)
        print(f"{model.name:>20}: Q = {qi.Q:.4f}, R_c = {qi.R_c:.4f}, holonomy {hol.verdict} "
              f"(spread slope CI [{hol.trend_ci[0]:.4f}, {hol.trend_ci[1]:.4f}])")


if __name__ == "__main__":
    main()
