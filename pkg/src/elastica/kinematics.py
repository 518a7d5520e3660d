"""Geometry of the flow map: deformation gradient, cofactor matrix, boundary
frame, curvature term, and the pulled-back differential operators.

Conventions
-----------
Maps are handled through their displacement u = eta - x (periodic in x1), so
F = I + grad(u) with the identity part exact.  The cofactor matrix is
assembled algebraically from the entries of F,

    A = [[ F22, -F21],
         [-F12,  F11]],

never by numerical inversion; this makes A F^T = det(F) I and
A[:, 1] = (-d1 eta_2, d1 eta_1) hold to machine precision, which the
identity audits rely on.  E = A^T A is assembled entrywise so that it is
bitwise symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryDegeneracyError, DegenerateMapError
from .grid import BoundaryField, Grid, diff, diff1_periodic, wall_traces


@dataclass
class KinematicBundle:
    grid: Grid
    disp: np.ndarray  # displacement u, shape (2, n2, n1)
    F: np.ndarray     # (2, 2, n2, n1)
    J: np.ndarray     # (n2, n1), det F > 0
    A: np.ndarray     # cofactor matrix, (2, 2, n2, n1)
    E: np.ndarray     # A^T A, (2, 2, n2, n1)

    @property
    def Acol2(self) -> np.ndarray:
        """Second column A[:, 1] = (-d1 eta_2, d1 eta_1)."""
        return self.A[:, 1]


@dataclass
class BoundaryFrame:
    """Unit tangent/outward normal and tangent stretch on both walls."""

    tau: BoundaryField      # (2, n1) per wall
    n: BoundaryField        # (2, n1) per wall, outward
    arclen: BoundaryField   # |d1 eta|, (n1,) per wall
    d1eta: BoundaryField    # (2, n1) per wall


def cofactor(F: np.ndarray) -> np.ndarray:
    A = np.empty_like(F)
    A[0, 0] = F[1, 1]
    A[0, 1] = -F[1, 0]
    A[1, 0] = -F[0, 1]
    A[1, 1] = F[0, 0]
    return A


def cofactor_rate(grad_v: np.ndarray) -> np.ndarray:
    """d/dt of the cofactor matrix, i.e. the cofactor pattern applied to
    grad(v) (exact in 2-D since A is linear in F)."""
    return cofactor(grad_v)


def grad_map(grid: Grid, disp: np.ndarray) -> np.ndarray:
    """F = I + grad(u) with F[i, j] = d_j eta_i."""
    F = np.empty((2, 2, grid.n2, grid.n1))
    for i in range(2):
        F[i, 0] = diff(grid, disp[i], 1)
        F[i, 1] = diff(grid, disp[i], 2)
        F[i, i] += 1.0
    return F


def grad_field(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Gradient of a plain (non-map) vector field, (grad v)[i, j] = d_j v_i."""
    G = np.empty((2, 2, grid.n2, grid.n1))
    for i in range(2):
        G[i, 0] = diff(grid, v[i], 1)
        G[i, 1] = diff(grid, v[i], 2)
    return G


def build_kinematics(grid: Grid, disp: np.ndarray) -> KinematicBundle:
    F = grad_map(grid, disp)
    J = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
    if not np.all(np.isfinite(J)) or np.any(J <= 0.0):
        raise DegenerateMapError(f"det(grad eta) min = {np.nanmin(J):.3e} (must stay positive)")
    A = cofactor(F)
    E = np.empty_like(A)
    for j in range(2):
        for k in range(2):
            E[j, k] = A[0, j] * A[0, k] + A[1, j] * A[1, k]
    return KinematicBundle(grid=grid, disp=disp, F=F, J=J, A=A, E=E)


def piola_residual(bundle: KinematicBundle) -> np.ndarray:
    """d_j A[i, j] per row i; machine-zero wherever the two diff axes commute
    exactly (everywhere, up to rounding)."""
    grid = bundle.grid
    out = np.empty((2, grid.n2, grid.n1))
    for i in range(2):
        out[i] = diff(grid, bundle.A[i, 0], 1) + diff(grid, bundle.A[i, 1], 2)
    return out


def _multi_diff(grid: Grid, f: np.ndarray, a: tuple[int, int]) -> np.ndarray:
    out = f
    for _ in range(a[0]):
        out = diff(grid, out, 1)
    for _ in range(a[1]):
        out = diff(grid, out, 2)
    return out


def perp(w: np.ndarray) -> np.ndarray:
    """w^perp = (-w_2, w_1)."""
    return np.stack([-w[1], w[0]])


def antisymmetry_residual(
    grid: Grid, disp: np.ndarray, a: tuple[int, int], b: tuple[int, int]
) -> np.ndarray:
    """Residual of d^a eta . d^b eta^perp + d^b eta . d^a eta^perp.

    Vanishes identically by the antisymmetry of the 2-D cross product; the
    identity-map part of eta is included exactly (its derivatives are
    constants).
    """
    if sum(a) > 3 or sum(b) > 3:
        raise ValueError("multi-indices up to order 3 only")
    X1, X2 = grid.mesh()
    ident = np.stack([X1, X2])

    def deriv(mi: tuple[int, int]) -> np.ndarray:
        d = _multi_diff(grid, disp, mi)
        # analytic derivative of the identity part
        if mi == (0, 0):
            d = d + ident
        elif mi == (1, 0):
            d = d.copy()
            d[0] += 1.0
        elif mi == (0, 1):
            d = d.copy()
            d[1] += 1.0
        return d

    da, db = deriv(a), deriv(b)
    term1 = da[0] * (-db[1]) + da[1] * db[0]  # da . db^perp
    term2 = db[0] * (-da[1]) + db[1] * da[0]  # db . da^perp
    return term1 + term2


def boundary_frame(grid: Grid, disp: np.ndarray, min_stretch: float = 1e-12) -> BoundaryFrame:
    traces = wall_traces(disp)
    frames = {}
    for side, tr in (("bottom", traces.bottom), ("top", traces.top)):
        d1 = diff1_periodic(tr, grid.h1)
        d1[0] += 1.0  # d1 eta = e1 + d1 u
        frames[side] = d1
    return frame_from_tangent(frames["bottom"], frames["top"], min_stretch)


def frame_from_tangent(
    d1eta_bottom: np.ndarray, d1eta_top: np.ndarray, min_stretch: float = 1e-12
) -> BoundaryFrame:
    """Frame from explicit wall tangents d1 eta (shape (2, n1) each)."""
    arclen, tau, n = {}, {}, {}
    for side, d1 in (("bottom", d1eta_bottom), ("top", d1eta_top)):
        s = np.sqrt(d1[0] ** 2 + d1[1] ** 2)
        if np.any(s < min_stretch):
            raise BoundaryDegeneracyError(
                f"|d1 eta| = {s.min():.3e} on {side} wall (threshold {min_stretch:.3e})"
            )
        arclen[side] = s
        tau[side] = d1 / s
        # outward normal n = A N / |A N|; A N = sign * (-d1 eta_2, d1 eta_1)
        sign = -1.0 if side == "bottom" else 1.0
        n[side] = sign * np.stack([-d1[1], d1[0]]) / s
    return BoundaryFrame(
        tau=BoundaryField(tau["bottom"], tau["top"]),
        n=BoundaryField(n["bottom"], n["top"]),
        arclen=BoundaryField(arclen["bottom"], arclen["top"]),
        d1eta=BoundaryField(d1eta_bottom, d1eta_top),
    )


def curvature_term(grid: Grid, disp: np.ndarray, min_stretch: float = 1e-12) -> BoundaryField:
    """d1 of the unit tangent along each wall; equals |d1 eta| H n in the
    continuum and is exactly the surface-tension term of the traction balance."""
    frame = boundary_frame(grid, disp, min_stretch)
    return BoundaryField(
        diff1_periodic(frame.tau.bottom, grid.h1),
        diff1_periodic(frame.tau.top, grid.h1),
    )


def curvature_from_tangent(d1eta: np.ndarray, h1: float) -> np.ndarray:
    """Same as curvature_term but for one explicit wall tangent trace."""
    s = np.sqrt(d1eta[0] ** 2 + d1eta[1] ** 2)
    return diff1_periodic(d1eta / s, h1)


def div_eta(grid: Grid, v: np.ndarray, bundle: KinematicBundle) -> np.ndarray:
    """Div_eta v = J^{-1} A[i, j] d_j v_i."""
    G = grad_field(grid, v)
    acc = bundle.A[0, 0] * G[0, 0]
    for i in range(2):
        for j in range(2):
            if i == 0 and j == 0:
                continue
            acc = acc + bundle.A[i, j] * G[i, j]
    return acc / bundle.J


def grad_eta(grid: Grid, q: np.ndarray, bundle: KinematicBundle) -> np.ndarray:
    """(grad_eta q)_i = J^{-1} A[i, j] d_j q."""
    d1, d2 = diff(grid, q, 1), diff(grid, q, 2)
    return np.stack([
        (bundle.A[0, 0] * d1 + bundle.A[0, 1] * d2) / bundle.J,
        (bundle.A[1, 0] * d1 + bundle.A[1, 1] * d2) / bundle.J,
    ])


def strain_eta(grid: Grid, v: np.ndarray, bundle: KinematicBundle) -> np.ndarray:
    """S_eta(v)_ij = (A[j,k] d_k v_i + A[i,k] d_k v_j) / (2 J)."""
    G = grad_field(grid, v)
    DV = np.empty_like(G)  # DV[i, j] = d_{eta_j} v_i = A[j,k] d_k v_i / J
    for i in range(2):
        for j in range(2):
            DV[i, j] = (bundle.A[j, 0] * G[i, 0] + bundle.A[j, 1] * G[i, 1]) / bundle.J
    S = np.empty_like(G)
    for i in range(2):
        for j in range(2):
            S[i, j] = 0.5 * (DV[i, j] + DV[j, i])
    return S


def visc_div(grid: Grid, v: np.ndarray, bundle: KinematicBundle) -> np.ndarray:
    """J Delta_eta v in divergence form: d_j ( J^{-1} E[j, m] d_m v_i )."""
    out = np.empty_like(v)
    for i in range(2):
        d1, d2 = diff(grid, v[i], 1), diff(grid, v[i], 2)
        flux1 = (bundle.E[0, 0] * d1 + bundle.E[0, 1] * d2) / bundle.J
        flux2 = (bundle.E[1, 0] * d1 + bundle.E[1, 1] * d2) / bundle.J
        out[i] = diff(grid, flux1, 1) + diff(grid, flux2, 2)
    return out
