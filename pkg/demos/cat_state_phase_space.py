"""Wigner and Husimi functions of a 1D Schroedinger cat state.

Prints the most negative Wigner value (interference fringes between the two
packets), the Husimi minimum (nonnegative up to roundoff), both masses and
the marginal error against the position density.

    python demos/cat_state_phase_space.py [hbar]
"""

import sys

import numpy as np

from paulilab.quantum import coherent_state, density, pure_state
from paulilab.spectral import make_grid
from paulilab.wigner import husimi, make_phase_grid, moment_density, wigner_transform


def main(hbar: float = 0.1) -> None:
    # three grid cells per packet standard deviation sqrt(hbar/2)
    n = int(np.ceil(3 * 10.0 / np.sqrt(hbar / 2) / 16)) * 16
    g = make_grid(1, n, 10.0, origin=-5.0)
    u = coherent_state(g, hbar, -1.2, 0.3) + coherent_state(g, hbar, 1.2, -0.3)
    u /= np.sqrt(np.sum(np.abs(u) ** 2) * g.cell_volume)
    st = pure_state(g, hbar, u, C=1e6)

    f = wigner_transform(st, make_phase_grid(g, hbar))
    fh = husimi(f)
    marginal = np.max(np.abs(moment_density(f) - density(st)))

    print(f"hbar={hbar}  grid={f.phase.shape}")
    print(f"Wigner  min={f.values.min():+.4e}  mass={f.mass:.12f}")
    print(f"Husimi  min={fh.values.min():+.4e}  mass={fh.mass:.12f}")
    print(f"marginal error={marginal:.3e}")


if __name__ == "__main__":
    main(float(sys.argv[1]) if len(sys.argv) > 1 else 0.1)
