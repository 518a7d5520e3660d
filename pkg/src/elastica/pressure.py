"""Variable-coefficient elliptic solver for the Lagrangian pressure.

The pressure solves  -Div(E grad q) = rhs  on the strip with Dirichlet rows
on both walls, where E = A^T A.  The same assembly doubles as the generic
-Div(C grad .) operator used by the re-projection, the harmonic solves of
the initial-data pipeline and the viscous blocks of the Stokes systems.

Discretization: conservative flux form for the diagonal coefficients
(arithmetic-mean face values), centered skew form for the mixed term.  The
interior block is bitwise symmetric and reduces to the 5-point Laplacian
when C = I.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BoundaryDegeneracyError, PressureSolveError
from .grid import BoundaryField, Grid, check_finite, diff, diff1_periodic, wall_traces
from .kinematics import KinematicBundle, cofactor_rate, grad_field, visc_div


def _node_index(grid: Grid, j: np.ndarray, i: np.ndarray) -> np.ndarray:
    return j * grid.n1 + np.mod(i, grid.n1)


_PATTERN_CACHE: dict = {}


def _operator_pattern(grid: Grid):
    """Fixed sparsity pattern of the 9-point operator plus the permutation
    taking the term-ordered value vector into CSR data order (the pattern has
    no duplicate positions, so assembly is a pure scatter)."""
    key = (grid.n1, grid.n2)
    if key in _PATTERN_CACHE:
        return _PATTERN_CACHE[key]
    n1, n2 = grid.n1, grid.n2
    jj, ii = np.meshgrid(np.arange(1, n2 - 1), np.arange(n1), indexing="ij")
    rows_idx = _node_index(grid, jj, ii).ravel()
    rows, cols = [], []

    def add(col_j, col_i):
        rows.append(rows_idx)
        cols.append(_node_index(grid, col_j, col_i).ravel())

    add(jj, ii)
    add(jj, ii + 1)
    add(jj, ii - 1)
    add(jj + 1, ii)
    add(jj - 1, ii)
    for sj in (-1, 1):
        for si in (-1, 1):
            add(jj + sj, ii + si)
    wall = np.concatenate([np.arange(n1), (n2 - 1) * n1 + np.arange(n1)])
    rows.append(wall)
    cols.append(wall)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    tagged = sp.coo_matrix(
        (np.arange(len(rows), dtype=float) + 1.0, (rows, cols)),
        shape=(n1 * n2, n1 * n2),
    ).tocsr()
    perm = tagged.data.astype(np.int64) - 1
    pattern = (tagged.indptr.copy(), tagged.indices.copy(), perm)
    _PATTERN_CACHE[key] = pattern
    return pattern


def assemble_operator(grid: Grid, C: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix for -Div(C grad q): 9-point interior rows, identity
    rows on both walls.  C has shape (2, 2, n2, n1) and must be symmetric."""
    check_finite(C, "operator coefficients")
    n1, n2 = grid.n1, grid.n2
    h1, h2 = grid.h1, grid.h2
    jj, ii = np.meshgrid(np.arange(1, n2 - 1), np.arange(n1), indexing="ij")

    C11, C22, C12 = C[0, 0], C[1, 1], C[0, 1]
    a_e = 0.5 * (C11[jj, ii] + C11[jj, np.mod(ii + 1, n1)]) / h1**2
    a_w = 0.5 * (C11[jj, ii] + C11[jj, np.mod(ii - 1, n1)]) / h1**2
    b_n = 0.5 * (C22[jj, ii] + C22[jj + 1, ii]) / h2**2
    b_s = 0.5 * (C22[jj, ii] + C22[jj - 1, ii]) / h2**2
    vals = [
        (a_e + a_w + b_n + b_s).ravel(),
        (-a_e).ravel(),
        (-a_w).ravel(),
        (-b_n).ravel(),
        (-b_s).ravel(),
    ]
    # mixed term -d1(C12 d2 q) - d2(C12 d1 q), centered: corner (j+sj, i+si)
    # picks up -si*sj*(C12[j, i+si] + C12[j+sj, i]) / (4 h1 h2)
    for sj in (-1, 1):
        for si in (-1, 1):
            coeff = -si * sj * (C12[jj, np.mod(ii + si, n1)] + C12[jj + sj, ii]) / (4.0 * h1 * h2)
            vals.append(coeff.ravel())
    vals.append(np.ones(2 * n1))
    flat = np.concatenate(vals)
    indptr, indices, perm = _operator_pattern(grid)
    return sp.csr_matrix((flat[perm], indices, indptr), shape=(n1 * n2, n1 * n2))


def lu_solve_refined(lu, matrix, b: np.ndarray, tol: float, what: str,
                     max_refine: int = 4) -> np.ndarray:
    """LU solve with iterative refinement until the relative residual meets
    tol (raises PressureSolveError otherwise)."""
    x = lu.solve(b)
    scale = max(np.linalg.norm(b), 1e-300)
    for _ in range(max_refine):
        r = b - matrix @ x
        if np.linalg.norm(r) <= tol * scale:
            return x
        x = x + lu.solve(r)
    rel = np.linalg.norm(b - matrix @ x) / scale
    if not np.isfinite(rel) or rel > tol:
        raise PressureSolveError(f"{what} residual {rel:.3e} exceeds tol {tol:.3e}")
    return x


class EllipticSolver:
    """Direct sparse factorization with a residual-check contract.

    The factorization is immutable once built; solves are read-only on the
    factors and may run concurrently.
    """

    def __init__(self, grid: Grid, matrix: sp.csr_matrix):
        import time

        self.grid = grid
        self.matrix = matrix
        t0 = time.perf_counter()
        try:
            self._lu = spla.splu(matrix.tocsc())
        except RuntimeError as exc:
            raise PressureSolveError(f"sparse factorization failed: {exc}") from exc
        self.factor_ms = (time.perf_counter() - t0) * 1e3

    def solve(self, rhs_interior: np.ndarray, dirichlet: BoundaryField, tol: float) -> np.ndarray:
        """Solve with interior right-hand side and wall Dirichlet values."""
        grid = self.grid
        b = rhs_interior.copy()
        b[0, :] = dirichlet.bottom
        b[-1, :] = dirichlet.top
        check_finite(b, "elliptic right-hand side")
        q = self._lu.solve(b.ravel())
        resid = self.matrix @ q - b.ravel()
        scale = np.linalg.norm(b.ravel())
        rel = np.linalg.norm(resid) / (scale if scale > 0 else 1.0)
        if not np.isfinite(rel) or rel > tol:
            raise PressureSolveError(f"elliptic solve residual {rel:.3e} exceeds tol {tol:.3e}")
        return q.reshape((grid.n2, grid.n1))


@dataclass
class PressureBVP:
    """Assembled pressure problem; keeps the bundle and forcing references
    that its diagnostics need."""

    grid: Grid
    bundle: KinematicBundle
    v: np.ndarray
    operator: sp.csr_matrix
    rhs: np.ndarray            # right-hand side field (wall rows overwritten at solve)
    dirichlet: BoundaryField   # wall values of q (= G2 - 1)
    eps: float
    forcing: object | None
    t: float
    _solver: EllipticSolver | None = field(default=None, init=False, repr=False)

    @property
    def solver(self) -> EllipticSolver:
        if self._solver is None:
            self._solver = EllipticSolver(self.grid, self.operator)
        return self._solver


def wall_frame_traces(grid: Grid, bundle: KinematicBundle):
    """Per-wall (d1eta, Acol2, AN, |d1eta|^2, J) traces computed with the
    same periodic stencil as everything else."""
    disp_tr = wall_traces(bundle.disp)
    J_tr = wall_traces(bundle.J)
    out = {}
    for side in ("bottom", "top"):
        u = getattr(disp_tr, side)
        d1eta = diff1_periodic(u, grid.h1)
        d1eta[0] += 1.0
        acol2 = np.stack([-d1eta[1], d1eta[0]])
        nsign = -1.0 if side == "bottom" else 1.0
        s2 = d1eta[0] ** 2 + d1eta[1] ** 2
        if np.any(s2 <= 0.0):
            raise BoundaryDegeneracyError(f"|d1 eta| vanished on {side} wall")
        out[side] = {
            "d1eta": d1eta,
            "acol2": acol2,
            "AN": nsign * acol2,
            "s2": s2,
            "J": getattr(J_tr, side),
        }
    return out


def dirichlet_g2(
    grid: Grid,
    bundle: KinematicBundle,
    v: np.ndarray,
    eps: float,
    psi_col2: BoundaryField | None,
) -> BoundaryField:
    """Dirichlet trace G2 (so q = G2 - 1 on each wall):

        G2 = -(d1^2 eta . A N)/|d1 eta|^3
             + (J - 2 eps dtA_{j2} A_{j2} - eps Psi_{i2} A_{i2})/|d1 eta|^2
    """
    frames = wall_frame_traces(grid, bundle)
    disp_tr = wall_traces(bundle.disp)
    v_tr = wall_traces(v)
    out = {}
    for side in ("bottom", "top"):
        fr = frames[side]
        u = getattr(disp_tr, side)
        d2_1eta = diff1_periodic(diff1_periodic(u, grid.h1), grid.h1)
        num = fr["J"].copy()
        if eps != 0.0:
            d1v = diff1_periodic(getattr(v_tr, side), grid.h1)
            dtA2 = np.stack([-d1v[1], d1v[0]])
            num = num - 2.0 * eps * (dtA2[0] * fr["acol2"][0] + dtA2[1] * fr["acol2"][1])
            if psi_col2 is not None:
                p2 = getattr(psi_col2, side)
                num = num - eps * (p2[0] * fr["acol2"][0] + p2[1] * fr["acol2"][1])
        curv = (d2_1eta[0] * fr["AN"][0] + d2_1eta[1] * fr["AN"][1]) / (np.sqrt(fr["s2"]) * fr["s2"])
        out[side] = -curv + num / fr["s2"]
    return BoundaryField(out["bottom"], out["top"])


def pressure_g1(grid: Grid, bundle: KinematicBundle, v: np.ndarray, deltaJ: np.ndarray) -> np.ndarray:
    """Interior source G1 = -dtA_{ij} d_j v_i + d_k A_{ij} d_k F_{ij} - Delta J."""
    Gv = grad_field(grid, v)
    Adot = cofactor_rate(Gv)
    g1 = -np.einsum("ij...,ij...->...", Adot, Gv)
    for k_axis in (1, 2):
        dA = diff(grid, bundle.A, k_axis)
        dF = diff(grid, bundle.F, k_axis)
        g1 = g1 + np.einsum("ij...,ij...->...", dA, dF)
    return g1 - deltaJ


def _div_div_psi(grid: Grid, bundle: KinematicBundle, psi: np.ndarray) -> np.ndarray:
    """A_{ik} d_k (d_j Psi_{ij})."""
    out = np.zeros((grid.n2, grid.n1))
    for i in range(2):
        div_psi_i = diff(grid, psi[i, 0], 1) + diff(grid, psi[i, 1], 2)
        out += bundle.A[i, 0] * diff(grid, div_psi_i, 1) + bundle.A[i, 1] * diff(grid, div_psi_i, 2)
    return out


def assemble_pressure(
    grid: Grid,
    bundle: KinematicBundle,
    v: np.ndarray,
    eps: float = 0.0,
    forcing=None,
    t: float = 0.0,
    deltaJ: np.ndarray | None = None,
) -> PressureBVP:
    """Assemble -Div(E grad q) = G1 (+ forcing terms) with Dirichlet data
    G2 - 1.  `deltaJ` may carry the precomputed Laplacian of the frozen
    Jacobian; by default it is computed from the bundle."""
    if deltaJ is None:
        deltaJ = diff(grid, diff(grid, bundle.J, 1), 1) + diff(grid, diff(grid, bundle.J, 2), 2)
    rhs = pressure_g1(grid, bundle, v, deltaJ)
    psi_col2 = None
    if forcing is not None:
        rhs = rhs + np.einsum("jk...,jk...->...", bundle.A, grad_field(grid, forcing.phi))
        if eps != 0.0:
            psi = forcing.psi_at(t)
            rhs = rhs + eps * _div_div_psi(grid, bundle, psi)
            psi_col2 = BoundaryField(psi[:, 1, 0, :].copy(), psi[:, 1, -1, :].copy())
    g2 = dirichlet_g2(grid, bundle, v, eps, psi_col2)
    dirichlet = BoundaryField(g2.bottom - 1.0, g2.top - 1.0)
    operator = assemble_operator(grid, bundle.E)
    return PressureBVP(
        grid=grid,
        bundle=bundle,
        v=v,
        operator=operator,
        rhs=rhs,
        dirichlet=dirichlet,
        eps=eps,
        forcing=forcing,
        t=t,
    )


def solve_pressure(bvp: PressureBVP, tol: float = 1e-10) -> np.ndarray:
    return bvp.solver.solve(bvp.rhs, bvp.dirichlet, tol)


def neumann_residual(bvp: PressureBVP, q: np.ndarray, dtv: np.ndarray) -> BoundaryField:
    """Wall residual of  A_{i2} A_{ij} d_j q = G3, with dtv supplied by the
    momentum balance.  A consistency diagnostic for the Dirichlet solve;
    wall derivatives are one-sided, so the residual is O(h^2) on smooth
    states rather than exactly zero.
    """
    grid, bundle = bvp.grid, bvp.bundle
    d1q, d2q = diff(grid, q, 1), diff(grid, q, 2)
    lhs = wall_traces(bundle.E[1, 0] * d1q + bundle.E[1, 1] * d2q)

    static = diff(grid, diff(grid, bundle.disp, 1), 1) + diff(grid, diff(grid, bundle.disp, 2), 2)
    if bvp.eps != 0.0:
        static = static + bvp.eps * visc_div(grid, bvp.v, bundle)
    if bvp.forcing is not None:
        static = static - bvp.forcing.phi
        if bvp.eps != 0.0:
            static = static - bvp.eps * bvp.forcing.div_psi_at(bvp.t)
    acol2 = wall_traces(bundle.Acol2)
    static_tr = wall_traces(static)
    dtv_tr = wall_traces(dtv)
    out = {}
    for side in ("bottom", "top"):
        a = getattr(acol2, side)
        g3 = sum(a[i] * (getattr(static_tr, side)[i] - getattr(dtv_tr, side)[i]) for i in range(2))
        out[side] = getattr(lhs, side) - g3
    return BoundaryField(out["bottom"], out["top"])


def diagnostic_dump(bvp: PressureBVP, q: np.ndarray, dtv: np.ndarray | None = None) -> dict:
    """JSON-ready solve diagnostics: Dirichlet data range, Neumann residual,
    relative solve residual, factorization time."""
    b = bvp.rhs.copy()
    b[0, :] = bvp.dirichlet.bottom
    b[-1, :] = bvp.dirichlet.top
    resid = bvp.operator @ q.ravel() - b.ravel()
    scale = max(np.linalg.norm(b.ravel()), 1e-300)
    neumann_max = None
    if dtv is not None:
        neumann_max = neumann_residual(bvp, q, dtv).max_abs
    return {
        "dirichlet_data_minmax": [
            float(min(bvp.dirichlet.bottom.min(), bvp.dirichlet.top.min())),
            float(max(bvp.dirichlet.bottom.max(), bvp.dirichlet.top.max())),
        ],
        "neumann_residual_max": neumann_max,
        "solve_residual": float(np.linalg.norm(resid) / scale),
        "factorization_time_ms": bvp.solver.factor_ms,
    }


def project_tangential(f: np.ndarray, acol2: np.ndarray) -> np.ndarray:
    """Pi f = f - (f . a) a / |a|^2 with a = A_{.2}; wall arrays (2, n1)."""
    a2 = acol2[0] ** 2 + acol2[1] ** 2
    if np.any(a2 <= 0.0):
        raise BoundaryDegeneracyError("A_{.2} vanished on a wall")
    fa = f[0] * acol2[0] + f[1] * acol2[1]
    return f - acol2 * (fa / a2)


def traction_identity_residual(
    grid: Grid,
    bundle: KinematicBundle,
    v: np.ndarray,
    eps: float = 0.0,
    forcing=None,
    t: float = 0.0,
) -> BoundaryField:
    """Residual of the projected traction identity on each wall:

        F_{i2} + (eps/J)(E_{12} d1 v_i + E_{22} d2 v_i)
          = (J - 2 eps dtA_{j2}A_{j2} - eps Psi_{k2}A_{k2}) A_{i2}/|A_{.2}|^2
            + eps dtA_{i2} + eps Psi_{i2}

    whose right side contains only tangential derivatives.  F_{i2} at the
    wall is the one-sided derivative, so the residual measures how well the
    evolved state satisfies the boundary structure.
    """
    frames = wall_frame_traces(grid, bundle)
    jrow = {"bottom": 0, "top": -1}
    F_tr = BoundaryField(bundle.F[:, 1, 0, :].copy(), bundle.F[:, 1, -1, :].copy())
    v_tr = wall_traces(v)
    d1v_full = diff(grid, v, 1)
    d2v_full = diff(grid, v, 2)
    d1v_tr = wall_traces(d1v_full)
    d2v_tr = wall_traces(d2v_full)
    J_tr = wall_traces(bundle.J)
    psi_col2 = None
    if forcing is not None and eps != 0.0:
        psi = forcing.psi_at(t)
        psi_col2 = BoundaryField(psi[:, 1, 0, :].copy(), psi[:, 1, -1, :].copy())
    out = {}
    for side in ("bottom", "top"):
        fr = frames[side]
        acol2 = fr["acol2"]
        a2 = acol2[0] ** 2 + acol2[1] ** 2
        J = getattr(J_tr, side)
        lhs = getattr(F_tr, side).copy()
        num = J.copy()
        rhs = np.zeros_like(lhs)
        if eps != 0.0:
            jr = jrow[side]
            E12, E22 = bundle.E[0, 1, jr, :], bundle.E[1, 1, jr, :]
            lhs = lhs + (eps / J) * (E12 * getattr(d1v_tr, side) + E22 * getattr(d2v_tr, side))
            d1v = diff1_periodic(getattr(v_tr, side), grid.h1)
            dtA2 = np.stack([-d1v[1], d1v[0]])
            num = num - 2.0 * eps * (dtA2[0] * acol2[0] + dtA2[1] * acol2[1])
            rhs = rhs + eps * dtA2
            if psi_col2 is not None:
                p2 = getattr(psi_col2, side)
                num = num - eps * (p2[0] * acol2[0] + p2[1] * acol2[1])
                rhs = rhs + eps * p2
        rhs = rhs + acol2 * (num / a2)
        out[side] = lhs - rhs
    return BoundaryField(out["bottom"], out["top"])
