"""Exponent transfer between the two unstable directions.

Compares the triangular control cross_shear(0.5, 0) with the live
cross_shear(0.5, 0.5). Both keep the sum of unstable exponents at
log(2) + log(2 + sqrt 2); only the live model moves the weak exponent.

    python3 demos/exponent_transfer.py [orbits] [steps]
"""

import math
import sys

from endolab import families
from endolab.lyapunov import ensemble_spectrum

LOG_WU = math.log(2.0)
LOG_SUM = math.log(2.0) + math.log(2.0 + math.sqrt(2.0))


def main(orbits=16, steps=100_000):
    for eps_b in (0.0, 0.5):
        model = families.cross_shear(0.5, eps_b)
        ens = ensemble_spectrum(model, orbits, steps, seed=20240601)
        d_wu = ens.exponents[1] - LOG_WU
        d_sum = ens.exponents[1:].sum() - LOG_SUM
        print(f"{model.name:>20}: delta lambda_wu = {d_wu:+.5f} (se {ens.stderr[1]:.1e}), "
              f"delta sum = {d_sum:+.1e} (se {ens.sum_stderr[2]:.1e})")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
