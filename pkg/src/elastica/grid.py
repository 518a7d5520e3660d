"""Periodic-strip grid, field storage and the basic discrete calculus.

The domain is the flat reference strip: periodic in x1 with circumference
2*pi, walls at x2 = 0 and x2 = 1.  All fields are plain numpy arrays in
row-major layout with x1 on the last axis:

    scalar  (n2, n1)
    vector  (2, n2, n1)
    tensor  (2, 2, n2, n1)   T[i, j] = T_ij

Flow maps are stored as displacements from the identity (eta = x + u with
u periodic in x1); only the periodic part is ever differentiated or
mollified, the identity part is handled analytically by the callers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Collocated node-centered mesh on T x (0, 1).

    n1 nodes cover [0, 2*pi) without duplicating the seam; n2 nodes cover
    [0, 1] with both walls included.
    """

    n1: int
    n2: int

    @property
    def h1(self) -> float:
        return TWO_PI / self.n1

    @property
    def h2(self) -> float:
        return 1.0 / (self.n2 - 1)

    @property
    def x1(self) -> np.ndarray:
        return np.arange(self.n1) * self.h1

    @property
    def x2(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays (X1, X2), each of shape (n2, n1)."""
        X2, X1 = np.meshgrid(self.x2, self.x1, indexing="ij")
        return X1, X2

    def scalar(self, value: float = 0.0) -> np.ndarray:
        return np.full((self.n2, self.n1), value)

    def vector(self) -> np.ndarray:
        return np.zeros((2, self.n2, self.n1))

    def tensor(self) -> np.ndarray:
        return np.zeros((2, 2, self.n2, self.n1))


@dataclass
class BoundaryField:
    """Per-wall samples on Gamma, periodic in x1 (no seam duplication).

    bottom/top have shape (n1,) for scalars or (2, n1) for 2-vectors.
    """

    bottom: np.ndarray
    top: np.ndarray

    def map(self, fn) -> "BoundaryField":
        return BoundaryField(fn(self.bottom), fn(self.top))

    @property
    def max_abs(self) -> float:
        return max(np.abs(self.bottom).max(), np.abs(self.top).max())


# Outward reference normal N = -e2 (bottom), +e2 (top): sign of the x2 component.
N_SIGN = {"bottom": -1.0, "top": 1.0}


def make_grid(n1: int, n2: int) -> Grid:
    if n1 < 8 or n1 % 2 != 0:
        raise ConfigError(f"n1 must be even and >= 8, got {n1}")
    if n2 < 5:
        raise ConfigError(f"n2 must be >= 5, got {n2}")
    return Grid(n1=n1, n2=n2)


def diff(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    """Second-order first derivative along x1 (periodic) or x2 (one-sided walls).

    Axis-1 and axis-2 applications commute (they act on different array axes),
    and the wall stencils are exact on quadratics in x2.
    """
    if axis == 1:
        return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2.0 * grid.h1)
    if axis == 2:
        out = np.empty_like(f)
        out[..., 1:-1, :] = (f[..., 2:, :] - f[..., :-2, :]) / (2.0 * grid.h2)
        out[..., 0, :] = (-3.0 * f[..., 0, :] + 4.0 * f[..., 1, :] - f[..., 2, :]) / (2.0 * grid.h2)
        out[..., -1, :] = (3.0 * f[..., -1, :] - 4.0 * f[..., -2, :] + f[..., -3, :]) / (2.0 * grid.h2)
        return out
    raise ConfigError(f"axis must be 1 or 2, got {axis}")


def diff1_periodic(values: np.ndarray, h1: float) -> np.ndarray:
    """Periodic centered derivative for wall traces (last axis is x1)."""
    return (np.roll(values, -1, axis=-1) - np.roll(values, 1, axis=-1)) / (2.0 * h1)


def laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    return diff(grid, diff(grid, f, 1), 1) + diff(grid, diff(grid, f, 2), 2)


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Rectangle rule in x1 times trapezoid rule in x2 over Omega.

    Multi-component fields are summed over their leading axes first, so
    integrate(grid, f**2) is the squared L2 norm for any field kind.
    """
    flat = f.reshape((-1, grid.n2, grid.n1)).sum(axis=0)
    w2 = np.ones(grid.n2)
    w2[0] = w2[-1] = 0.5
    return float((w2 @ flat.sum(axis=-1)) * grid.h1 * grid.h2)


def boundary_integrate(g: BoundaryField, h1: float) -> float:
    """Sum of the rectangle rule over both walls."""
    return float((g.bottom.sum() + g.top.sum()) * h1)


def _mollifier_weights(radius: float, h: float) -> np.ndarray | None:
    """Normalized samples of the standard bump exp(-1/(1-(r/k)^2)) on the grid.

    Returns None when the support holds no neighbor node (under-resolved).
    """
    m = int(np.floor(radius / h))
    if m < 1:
        return None
    r = np.arange(-m, m + 1) * h / radius
    w = np.zeros(2 * m + 1)
    inside = np.abs(r) < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return w / w.sum()


def mollify(grid: Grid, f: np.ndarray, kappa: float) -> np.ndarray:
    """Discrete mollification with a 2-D bump of radius kappa.

    Periodic wrap in x1; even reflection across the walls extends the field
    before convolving in x2 (a discrete Sobolev extension).  Kernel mass is
    exactly 1, so constants are preserved bitwise.  Fields smaller than one
    cell in both directions come back unchanged.
    """
    if kappa <= 0.0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    w1 = _mollifier_weights(kappa, grid.h1)
    w2 = _mollifier_weights(kappa, grid.h2)
    if w1 is None and w2 is None:
        return f.copy()
    out = f.copy()
    if w1 is not None:
        m = len(w1) // 2
        acc = np.zeros_like(out)
        for k, wk in enumerate(w1):
            acc += wk * np.roll(out, m - k, axis=-1)
        out = acc
    if w2 is not None:
        m = len(w2) // 2
        # even reflection pad: f[-j] = f[j], f[n-1+j] = f[n-1-j]
        top_pad = out[..., -2 : -2 - m : -1, :]
        bot_pad = out[..., m:0:-1, :]
        ext = np.concatenate([bot_pad, out, top_pad], axis=-2)
        acc = np.zeros_like(out)
        for k, wk in enumerate(w2):
            acc += wk * ext[..., k : k + grid.n2, :]
        out = acc
    return out


def mollify_boundary(values: np.ndarray, kappa: float, h1: float) -> np.ndarray:
    """1-D periodic mollification of a wall trace (last axis is x1)."""
    if kappa <= 0.0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    w = _mollifier_weights(kappa, h1)
    if w is None:
        return values.copy()
    m = len(w) // 2
    acc = np.zeros_like(values)
    for k, wk in enumerate(w):
        acc += wk * np.roll(values, m - k, axis=-1)
    return acc


def wall_traces(f: np.ndarray) -> BoundaryField:
    """Extract bottom/top wall rows of a field (any leading axes)."""
    return BoundaryField(bottom=f[..., 0, :].copy(), top=f[..., -1, :].copy())


def check_finite(f: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(f)):
        from .errors import AssemblyError

        raise AssemblyError(f"non-finite values in {what}")


def save_field(path, grid: Grid, f: np.ndarray) -> None:
    """Write a field snapshot: header `n1,n2,h1,h2,components`, then the
    values row-major with x1 fastest (one CSV row per (component, x2-row))."""
    comps = 1 if f.ndim == 2 else int(np.prod(f.shape[:-2]))
    flat = f.reshape((comps, grid.n2, grid.n1))
    with open(path, "w") as fh:
        fh.write(f"{grid.n1},{grid.n2},{grid.h1!r},{grid.h2!r},{comps}\n")
        for c in range(comps):
            for j in range(grid.n2):
                fh.write(",".join(repr(float(v)) for v in flat[c, j]) + "\n")


def load_field(path) -> tuple[Grid, np.ndarray]:
    """Read a snapshot written by save_field.  Scalars come back as (n2, n1),
    2-component fields as (2, n2, n1), 4-component as (2, 2, n2, n1)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 5:
            raise ConfigError(f"bad snapshot header in {path}")
        n1, n2, comps = int(header[0]), int(header[1]), int(header[4])
        data = np.loadtxt(fh, delimiter=",").reshape((comps, n2, n1))
    grid = make_grid(n1, n2)
    if comps == 1:
        return grid, data[0]
    if comps == 2:
        return grid, data
    if comps == 4:
        return grid, data.reshape((2, 2, n2, n1))
    raise ConfigError(f"unsupported component count {comps} in {path}")
