"""External smoothing force f = phi(x) + eps * div Psi(x, t).

Psi is a tensor-valued quadratic polynomial in time whose coefficients are
the initial value and first two time derivatives of twice the pulled-back
strain times the cofactor matrix; at t = 0 its boundary column cancels the
viscous traction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, diff


@dataclass
class ForcingData:
    grid: Grid
    phi: np.ndarray    # (2, n2, n1), time independent
    psi0: np.ndarray   # (2, 2, n2, n1)
    psi1: np.ndarray
    psi2: np.ndarray
    _div: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self._div = tuple(self._divergence(p) for p in (self.psi0, self.psi1, self.psi2))

    def _divergence(self, psi: np.ndarray) -> np.ndarray:
        out = np.empty((2, self.grid.n2, self.grid.n1))
        for i in range(2):
            out[i] = diff(self.grid, psi[i, 0], 1) + diff(self.grid, psi[i, 1], 2)
        return out

    def psi_at(self, t: float) -> np.ndarray:
        return self.psi0 + t * self.psi1 + 0.5 * t * t * self.psi2

    def div_psi_at(self, t: float) -> np.ndarray:
        d0, d1, d2 = self._div
        return d0 + t * d1 + 0.5 * t * t * d2


def zero_forcing(grid: Grid) -> ForcingData:
    return ForcingData(
        grid=grid,
        phi=np.zeros((2, grid.n2, grid.n1)),
        psi0=np.zeros((2, 2, grid.n2, grid.n1)),
        psi1=np.zeros((2, 2, grid.n2, grid.n1)),
        psi2=np.zeros((2, 2, grid.n2, grid.n1)),
    )
