"""Compatibility checks, constructive smoothing of initial data, and the
external-force pair (phi, Psi).

The smoothing pipeline follows the constructive route: a fourth-order
(biharmonic) solve regularizes the map while imposing the zeroth-order
compatibility condition as a wall row; Stokes-type solves regularize the
velocity and the first time derivative while keeping the divergence and
traction conditions; the force phi repairs the second-order condition and
Psi cancels the viscous boundary terms at t = 0 through second order in
time.  The mollifier radius is kappa = 1/|ln eps|.

Time derivatives of the pressure (q1, q2) come from differentiating the
assembled discrete pressure system with jet arithmetic, which is exact for
the semi-discrete trajectory, rather than from transcribed schematic
right-hand sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import jets
from .errors import ConfigError, IllPosedDataError, PressureSolveError
from .forcing import ForcingData
from .grid import (
    BoundaryField,
    Grid,
    diff,
    diff1_periodic,
    integrate,
    laplacian,
    mollify,
    mollify_boundary,
    wall_traces,
)
from .kinematics import (
    KinematicBundle,
    build_kinematics,
    cofactor,
    cofactor_rate,
    grad_field,
    strain_eta,
)
from .pressure import (
    EllipticSolver,
    assemble_operator,
    assemble_pressure,
    dirichlet_g2,
    lu_solve_refined,
    pressure_g1,
    solve_pressure,
    wall_frame_traces,
)


def kappa_of(eps: float) -> float:
    if not 0 < eps < 1:
        raise ConfigError(f"eps must lie in (0, 1), got {eps}")
    return 1.0 / abs(np.log(eps))


@dataclass
class CompatReport:
    zcomp_residual: float
    comp1_residual: float
    comp2_residual: float

    def as_dict(self) -> dict:
        return {
            "zcomp_residual": self.zcomp_residual,
            "comp1_residual": self.comp1_residual,
            "comp2_residual": self.comp2_residual,
        }


@dataclass
class InitialDataBundle:
    grid: Grid
    eta0: np.ndarray       # smoothed displacement
    v0: np.ndarray
    q0: np.ndarray
    dtv0: np.ndarray
    dt2v0: np.ndarray
    dt3v0: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    w1: np.ndarray
    kappa: float
    epsilon: float


def _project_wall(f: np.ndarray, acol2: np.ndarray) -> np.ndarray:
    a2 = acol2[0] ** 2 + acol2[1] ** 2
    fa = f[0] * acol2[0] + f[1] * acol2[1]
    return f - acol2 * (fa / a2)


def check_compatibility(grid: Grid, disp0: np.ndarray, v0: np.ndarray,
                        dtv0: np.ndarray | None = None,
                        solver_tol: float = 1e-10) -> CompatReport:
    """Max-norm wall residuals of the zeroth/first/second-order conditions.

    The second-order condition needs dv/dt(0); if not supplied it is computed
    from the momentum balance after an internal pressure solve.
    """
    bundle = build_kinematics(grid, disp0)
    frames = wall_frame_traces(grid, bundle)
    F_tr = wall_traces(bundle.F[:, 1])           # d2 eta, one-sided at walls
    d2v_tr = wall_traces(diff(grid, v0, 2))
    v_tr = wall_traces(v0)

    zres = 0.0
    c1res = 0.0
    for side in ("bottom", "top"):
        fr = frames[side]
        acol2, s2 = fr["acol2"], fr["s2"]
        zres = max(zres, float(np.abs(getattr(F_tr, side) - acol2 / s2).max()))
        d1v = diff1_periodic(getattr(v_tr, side), grid.h1)
        dtA2 = np.stack([-d1v[1], d1v[0]])
        c1 = _project_wall(getattr(d2v_tr, side) - dtA2 / s2, acol2)
        c1res = max(c1res, float(np.abs(c1).max()))

    if dtv0 is None:
        bvp = assemble_pressure(grid, bundle, v0)
        q0 = solve_pressure(bvp, solver_tol)
        dtv0 = laplacian(grid, disp0) - np.stack([
            bundle.A[0, 0] * diff(grid, q0, 1) + bundle.A[0, 1] * diff(grid, q0, 2),
            bundle.A[1, 0] * diff(grid, q0, 1) + bundle.A[1, 1] * diff(grid, q0, 2),
        ])
    d2dtv_tr = wall_traces(diff(grid, dtv0, 2))
    dtv_tr = wall_traces(dtv0)
    c2res = 0.0
    for side in ("bottom", "top"):
        fr = frames[side]
        acol2, s2, d1eta = fr["acol2"], fr["s2"], fr["d1eta"]
        d1v = diff1_periodic(getattr(v_tr, side), grid.h1)
        dtA2 = np.stack([-d1v[1], d1v[0]])
        d1dtv = diff1_periodic(getattr(dtv_tr, side), grid.h1)
        dt2A2 = np.stack([-d1dtv[1], d1dtv[0]])
        mix = d1eta[0] * d1v[0] + d1eta[1] * d1v[1]
        c2 = _project_wall(
            -dt2A2 / s2 + 2.0 * (mix / s2**2) * dtA2 + getattr(d2dtv_tr, side), acol2
        )
        c2res = max(c2res, float(np.abs(c2).max()))
    return CompatReport(zcomp_residual=zres, comp1_residual=c1res, comp2_residual=c2res)


def solve_q0(grid: Grid, disp0: np.ndarray, v0: np.ndarray,
             forcing: ForcingData | None = None,
             zcomp_tol: float = 1e-6, solver_tol: float = 1e-10) -> np.ndarray:
    """Initial pressure from the assembled elliptic system (inviscid form).

    Refuses data whose zeroth-order compatibility residual exceeds zcomp_tol,
    since the Dirichlet and Neumann descriptions of the same problem then
    disagree at leading order.
    """
    bundle = build_kinematics(grid, disp0)
    frames = wall_frame_traces(grid, bundle)
    F_tr = wall_traces(bundle.F[:, 1])
    zres = max(
        float(np.abs(getattr(F_tr, s) - frames[s]["acol2"] / frames[s]["s2"]).max())
        for s in ("bottom", "top")
    )
    if zres > zcomp_tol:
        raise IllPosedDataError(
            f"zeroth-order compatibility residual {zres:.3e} exceeds {zcomp_tol:.3e}"
        )
    bvp = assemble_pressure(grid, bundle, v0, eps=0.0, forcing=forcing)
    return solve_pressure(bvp, solver_tol)


# ---------------------------------------------------------------------------
# biharmonic smoothing of the map
# ---------------------------------------------------------------------------

def _compact_lap_1d(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    e = np.ones(n)
    L = sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], format="lil")
    if periodic:
        L[0, -1] = 1.0
        L[-1, 0] = 1.0
    L = L / h**2
    return L.tocsr()


def smooth_eta0(grid: Grid, disp0: np.ndarray, kappa: float,
                solver_tol: float = 1e-9) -> np.ndarray:
    """Fourth-order smoothing of the map displacement.

    Solves Delta^2 u = rho_kappa * E(Delta^2 u0) componentwise with wall rows
    imposing the mollified trace and the one-sided wall-normal derivative
    dictated by the zeroth-order compatibility condition.  One ghost layer per
    wall carries the extra unknowns; the output satisfies the compatibility
    row exactly at the one-sided stencil (solver precision).
    """
    n1, n2 = grid.n1, grid.n2
    h2 = grid.h2
    next_ = n2 + 2  # extended rows j' = 0..n2+1 for true j = -1..n2

    # rhs: mollified discrete bilaplacian (the mollifier's reflection pad
    # realizes the Sobolev extension of the bilaplacian field)
    rhs_field = mollify(grid, laplacian(grid, laplacian(grid, disp0)), kappa)

    # mollified boundary traces and the compatibility normal derivative
    tr = wall_traces(disp0)
    m_b = mollify_boundary(tr.bottom, kappa, grid.h1)
    m_t = mollify_boundary(tr.top, kappa, grid.h1)

    def normal_data(m: np.ndarray) -> np.ndarray:
        d1 = diff1_periodic(m, grid.h1)
        d1[0] += 1.0
        s2 = d1[0] ** 2 + d1[1] ** 2
        g = np.stack([-d1[1], d1[0]]) / s2
        g[1] -= 1.0  # displacement convention: subtract e2
        return g

    g_b, g_t = normal_data(m_b), normal_data(m_t)

    L5 = sp.kron(sp.identity(next_, format="csr"), _compact_lap_1d(n1, grid.h1, True)) + sp.kron(
        _compact_lap_1d(next_, h2, False), sp.identity(n1, format="csr")
    )
    B = (L5 @ L5).tocsr()

    def row(jp: int, i) -> np.ndarray:
        return jp * n1 + np.asarray(i)

    n_tot = next_ * n1
    ii = np.arange(n1)
    # boundary-condition rows in COO form
    bc_rows, bc_cols, bc_vals = [], [], []

    def add_rows(r, c, vals):
        bc_rows.append(r)
        bc_cols.append(c)
        bc_vals.append(np.broadcast_to(vals, r.shape).astype(float))

    add_rows(row(1, ii), row(1, ii), 1.0)
    add_rows(row(n2, ii), row(n2, ii), 1.0)
    for col_jp, coef in ((1, -3.0), (2, 4.0), (3, -1.0)):
        add_rows(row(0, ii), row(col_jp, ii), coef / (2.0 * h2))
    for col_jp, coef in ((n2, 3.0), (n2 - 1, -4.0), (n2 - 2, 1.0)):
        add_rows(row(n2 + 1, ii), row(col_jp, ii), coef / (2.0 * h2))
    bc = sp.coo_matrix(
        (np.concatenate(bc_vals), (np.concatenate(bc_rows), np.concatenate(bc_cols))),
        shape=(n_tot, n_tot),
    ).tocsr()

    keep_interior = np.zeros(n_tot)
    keep_interior[row(2, 0): row(n2, 0)] = 1.0
    M = sp.diags(keep_interior) @ B + bc

    rhs = np.zeros((2, n_tot))
    for c in range(2):
        rhs[c, row(2, 0): row(n2, 0)] = rhs_field[c, 1: n2 - 1, :].ravel()
        rhs[c, row(1, 0): row(2, 0)] = m_b[c]
        rhs[c, row(n2, 0): row(n2 + 1, 0)] = m_t[c]
        rhs[c, row(0, 0): row(1, 0)] = g_b[c]
        rhs[c, row(n2 + 1, 0): row(n2 + 2, 0)] = g_t[c]

    # row equilibration: the bilaplacian rows are ~h^{-4} while the data rows
    # are O(1), which otherwise caps the achievable relative residual
    Mr = M.tocsr()
    row_scale = 1.0 / np.maximum(np.abs(Mr).max(axis=1).toarray().ravel(), 1e-300)
    Mc = (sp.diags(row_scale) @ Mr).tocsc()
    lu = spla.splu(Mc)
    out = np.empty_like(disp0)
    for c in range(2):
        sol = lu_solve_refined(lu, Mc, row_scale * rhs[c], solver_tol, "biharmonic solve")
        out[c] = sol.reshape((next_, n1))[1 : n2 + 1]
    return out


# ---------------------------------------------------------------------------
# harmonic and Stokes solves
# ---------------------------------------------------------------------------

def solve_harmonic(grid: Grid, bundle: KinematicBundle, dirichlet: BoundaryField,
                   solver_tol: float = 1e-10) -> np.ndarray:
    """-Div(J^{-1} E grad r) = 0 with Dirichlet wall data (discrete -Delta_eta)."""
    op = assemble_operator(grid, bundle.E / bundle.J)
    return EllipticSolver(grid, op).solve(np.zeros((grid.n2, grid.n1)), dirichlet, solver_tol)


_DIFF_MATRIX_CACHE: dict = {}


def _diff_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse first-derivative operators matching grid.diff (centered
    periodic in x1; centered interior, one-sided walls in x2)."""
    key = (grid.n1, grid.n2)
    if key in _DIFF_MATRIX_CACHE:
        return _DIFF_MATRIX_CACHE[key]
    n1, n2 = grid.n1, grid.n2
    D1 = sp.lil_matrix((n1, n1))
    for i in range(n1):
        D1[i, (i + 1) % n1] = 1.0
        D1[i, (i - 1) % n1] = -1.0
    D1 = (D1 / (2.0 * grid.h1)).tocsr()
    D2 = sp.lil_matrix((n2, n2))
    for j in range(1, n2 - 1):
        D2[j, j - 1] = -1.0
        D2[j, j + 1] = 1.0
    D2[0, 0], D2[0, 1], D2[0, 2] = -3.0, 4.0, -1.0
    D2[-1, -1], D2[-1, -2], D2[-1, -3] = 3.0, -4.0, 1.0
    D2 = (D2 / (2.0 * grid.h2)).tocsr()
    out = (
        sp.kron(sp.identity(n2, format="csr"), D1, format="csr"),
        sp.kron(D2, sp.identity(n1, format="csr"), format="csr"),
    )
    _DIFF_MATRIX_CACHE[key] = out
    return out


def _stokes_blocks(grid: Grid, bundle: KinematicBundle, theta: float = 2e-4):
    """Momentum/continuity blocks of the collocated Stokes system:

        -J Delta_eta v + A grad r = J f      (interior rows)
        (-2 S_eta(v) + r I) n_hat = h        (wall rows)
        A_{ij} d_j v_i - theta h^2 Lap_c r = J g   (all rows)
    """
    n1, n2 = grid.n1, grid.n2
    N = n1 * n2
    D1, D2 = _diff_matrices(grid)

    def dia(f):
        return sp.diags(np.asarray(f).ravel())

    wall_mask = np.zeros((n2, n1))
    wall_mask[0, :] = 1.0
    wall_mask[-1, :] = 1.0
    Mint = dia(1.0 - wall_mask)
    Mwall = dia(wall_mask)

    Lvisc = assemble_operator(grid, bundle.E / bundle.J)  # identity wall rows
    A = bundle.A
    J = bundle.J

    grad_r = [dia(A[i, 0]) @ D1 + dia(A[i, 1]) @ D2 for i in range(2)]
    div_v = [dia(A[i, 0]) @ D1 + dia(A[i, 1]) @ D2 for i in range(2)]

    # unit deformed normal on the walls, as full fields supported there
    frames = wall_frame_traces(grid, bundle)
    nhat = np.zeros((2, n2, n1))
    for side, jrow in (("bottom", 0), ("top", -1)):
        fr = frames[side]
        s = np.sqrt(fr["s2"])
        sign = -1.0 if side == "bottom" else 1.0
        nhat[0, jrow, :] = sign * fr["acol2"][0] / s
        nhat[1, jrow, :] = sign * fr["acol2"][1] / s

    # traction row operators: (-2 S(v) + r I) . nhat, i-th component
    # S_{ik} = (A_{km} d_m v_i + A_{im} d_m v_k) / (2 J)
    c_m = [nhat[0] * A[0, m] + nhat[1] * A[1, m] for m in range(2)]  # A_{km} nhat_k
    trac_vv = {
        (i, i): -(dia(c_m[0] / J) @ D1 + dia(c_m[1] / J) @ D2) for i in range(2)
    }
    trac_cross = {
        (i, k): -(dia(A[i, 0] * nhat[k] / J) @ D1 + dia(A[i, 1] * nhat[k] / J) @ D2)
        for i in range(2)
        for k in range(2)
    }

    blocks_mom = [[None, None, None], [None, None, None]]
    for i in range(2):
        for k in range(2):
            blk = sp.csr_matrix((N, N))
            if i == k:
                blk = blk + Mint @ Lvisc + Mwall @ trac_vv[(i, i)]
            blk = blk + Mwall @ trac_cross[(i, k)]
            blocks_mom[i][k] = blk
        blocks_mom[i][2] = Mint @ grad_r[i] + Mwall @ dia(nhat[i])

    stab = theta * (grid.h1**2 * sp.kron(sp.identity(n2), _compact_lap_1d(n1, grid.h1, True))
                    + grid.h2**2 * sp.kron(_compact_lap_1d(n2, grid.h2, False), sp.identity(n1)))
    blocks_div = [div_v[0], div_v[1], -stab]
    return blocks_mom, blocks_div


def stokes_momentum_apply(grid: Grid, bundle: KinematicBundle, v: np.ndarray, r: np.ndarray) -> np.ndarray:
    """J(-Delta_eta v + grad_eta r) evaluated with the same interior rows as
    the assembled Stokes system (so the smoothing is an exact fixed point on
    already-compatible data up to the pressure stabilization)."""
    blocks_mom, _ = _stokes_blocks(grid, bundle)
    N = grid.n1 * grid.n2
    out = np.empty((2, grid.n2, grid.n1))
    for i in range(2):
        acc = blocks_mom[i][0] @ v[0].ravel() + blocks_mom[i][1] @ v[1].ravel()
        acc = acc + blocks_mom[i][2] @ r.ravel()
        out[i] = acc.reshape((grid.n2, grid.n1))
    return out


def stokes_solve(
    grid: Grid,
    bundle: KinematicBundle,
    rhs_momentum: np.ndarray,      # J * f, shape (2, n2, n1)
    div_data: np.ndarray,          # J * prescribed divergence, (n2, n1)
    traction: BoundaryField,       # per-wall (2, n1) data for (-2 S + r I) n_hat
    mean_target: np.ndarray,       # target mean of each velocity component
    theta: float = 2e-4,
    solver_tol: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Monolithic collocated Stokes-type solve in the deformed frame.

    A compact-Laplacian pressure stabilization (scaled by theta) removes the
    collocated checkerboard modes; the two rigid translation null modes are
    pinned by bordered mean constraints.
    """
    n1, n2 = grid.n1, grid.n2
    N = n1 * n2
    blocks_mom, blocks_div = _stokes_blocks(grid, bundle, theta)

    A_full = sp.bmat([
        [blocks_mom[0][0], blocks_mom[0][1], blocks_mom[0][2]],
        [blocks_mom[1][0], blocks_mom[1][1], blocks_mom[1][2]],
        [blocks_div[0], blocks_div[1], blocks_div[2]],
    ], format="csr")

    # bordered translation constraints: mean of each velocity component
    w = np.ones(N) / N
    C = sp.lil_matrix((3 * N, 2))
    C[0:N, 0] = w[:, None]
    C[N : 2 * N, 1] = w[:, None]
    K = sp.bmat([[A_full, C], [C.T, None]], format="csc")

    b = np.zeros(3 * N + 2)
    # wall rows of the momentum blocks carry the traction data
    bm = rhs_momentum.copy()
    for i in range(2):
        bm[i, 0, :] = traction.bottom[i]
        bm[i, -1, :] = traction.top[i]
    b[0:N] = bm[0].ravel()
    b[N : 2 * N] = bm[1].ravel()
    b[2 * N : 3 * N] = div_data.ravel()
    b[3 * N] = float(mean_target[0])
    b[3 * N + 1] = float(mean_target[1])

    sol = lu_solve_refined(spla.splu(K), K, b, solver_tol, "Stokes solve")
    v = np.stack([sol[0:N].reshape((n2, n1)), sol[N : 2 * N].reshape((n2, n1))])
    r = sol[2 * N : 3 * N].reshape((n2, n1))
    return v, r


_DIV_PATTERN_CACHE: dict = {}


def divergence_matrix(grid: Grid, bundle: KinematicBundle) -> sp.csr_matrix:
    """Sparse N x 2N matrix of v -> A_{ij} d_j v_i (the J-weighted discrete
    divergence, same stencils as the pointwise evaluation).  The sparsity
    pattern is cached per grid; assembly only row-scales the cached
    derivative entries."""
    key = (grid.n1, grid.n2)
    if key not in _DIV_PATTERN_CACHE:
        D1, D2 = _diff_matrices(grid)
        d1_rows = np.repeat(np.arange(D1.shape[0]), np.diff(D1.indptr))
        d2_rows = np.repeat(np.arange(D2.shape[0]), np.diff(D2.indptr))
        _DIV_PATTERN_CACHE[key] = (D1, D2, d1_rows, d2_rows)
    D1, D2, d1_rows, d2_rows = _DIV_PATTERN_CACHE[key]

    def scaled(D, rows, coeff):
        out = D.copy()
        out.data = out.data * coeff.ravel()[rows]
        return out

    blocks = [
        scaled(D1, d1_rows, bundle.A[i, 0]) + scaled(D2, d2_rows, bundle.A[i, 1])
        for i in range(2)
    ]
    return sp.hstack(blocks, format="csr")


def project_divergence_free(grid: Grid, bundle: KinematicBundle, v: np.ndarray,
                            mu_rel: float = 1e-13, div_target: np.ndarray | None = None,
                            max_div: float | None = None) -> np.ndarray:
    """Exact constrained projection: the closest field to v (in the discrete
    L2 sense) whose J-weighted divergence rows equal div_target (default 0).
    Solved through the definite Schur complement

        (B B^T + mu I) lam = B v - target,   v* = v - B^T lam,

    so the constraint rows hold to refinement precision plus mu |lam|.
    """
    N = grid.n1 * grid.n2
    B = divergence_matrix(grid, bundle)
    S = (B @ B.T).tocsc()
    mu = mu_rel * abs(S.diagonal()).max()
    S = S + mu * sp.identity(N, format="csc")
    target = np.zeros(N) if div_target is None else div_target.ravel()
    b = B @ v.reshape(2 * N) - target
    lam = lu_solve_refined(spla.splu(S), S, b, 1e-10, "constrained projection", max_refine=8)
    out_flat = v.reshape(2 * N) - B.T @ lam
    if max_div is not None:
        worst = float(np.abs(B @ out_flat - target).max())
        if worst > max_div:
            raise PressureSolveError(
                f"constrained projection residual {worst:.3e} exceeds {max_div:.3e}"
            )
    return out_flat.reshape((2, grid.n2, grid.n1))


def _r0_dirichlet_data(grid: Grid, bundle: KinematicBundle, v: np.ndarray) -> BoundaryField:
    """Dirichlet trace 2 S(v)_{ij} A_{j2} A_{i2} / |d1 eta|^2 per wall."""
    S = strain_eta(grid, v, bundle)
    frames = wall_frame_traces(grid, bundle)
    out = {}
    for side, jrow in (("bottom", 0), ("top", -1)):
        fr = frames[side]
        Sw = S[:, :, jrow, :]
        acol2 = fr["acol2"]
        val = np.zeros(grid.n1)
        for i in range(2):
            for j in range(2):
                val = val + 2.0 * Sw[i, j] * acol2[j] * acol2[i]
        out[side] = val / fr["s2"]
    return BoundaryField(out["bottom"], out["top"])


def smooth_v0(
    grid: Grid,
    dispk: np.ndarray,
    disp0: np.ndarray,
    v0: np.ndarray,
    r0: np.ndarray,
    kappa: float,
    solver_tol: float = 1e-9,
) -> tuple[np.ndarray, np.ndarray]:
    """Velocity smoothing: Stokes-type solve in the smoothed frame driven by
    the mollified residual of the raw velocity, divergence-free with zero
    traction.  A projection sweep removes the stabilization's divergence
    leak."""
    b0 = build_kinematics(grid, disp0)
    bk = build_kinematics(grid, dispk)
    f_raw = stokes_momentum_apply(grid, b0, v0, r0) / b0.J
    f_moll = mollify(grid, f_raw, kappa)
    zero_tr = BoundaryField(np.zeros((2, grid.n1)), np.zeros((2, grid.n1)))
    mean = np.array([integrate(grid, v0[0]), integrate(grid, v0[1])]) / (2.0 * np.pi)
    vk, rk = stokes_solve(
        grid, bk, bk.J * f_moll, np.zeros((grid.n2, grid.n1)), zero_tr, mean,
        solver_tol=solver_tol,
    )
    vk = project_divergence_free(grid, bk, vk)
    return vk, rk


def _wall_g_data(grid: Grid, bundle: KinematicBundle, v: np.ndarray, r0: np.ndarray) -> BoundaryField:
    """Boundary vector g built from wall traces of the strain, the cofactor
    rate and the harmonic pressure (same frame for all factors)."""
    S = strain_eta(grid, v, bundle)
    dtA = cofactor_rate(grad_field(grid, v))
    Gv = grad_field(grid, v)
    frames = wall_frame_traces(grid, bundle)
    r_tr = wall_traces(r0)
    out = {}
    for side, jrow in (("bottom", 0), ("top", -1)):
        fr = frames[side]
        s = np.sqrt(fr["s2"])
        acol2 = fr["acol2"]
        Sw = S[:, :, jrow, :]
        dtAw = dtA[:, :, jrow, :]
        Gvw = Gv[:, :, jrow, :]
        rw = getattr(r_tr, side)
        g = np.zeros((2, grid.n1))
        for i in range(2):
            term = fr["s2"] * rw * dtAw[i, 1]
            term = term + 2.0 * (Sw[i, 0] * dtAw[0, 1] + Sw[i, 1] * dtAw[1, 1])
            # dtA_{i a} d_a v_j A_{j2}
            for a in range(2):
                term = term + dtAw[i, a] * (Gvw[0, a] * acol2[0] + Gvw[1, a] * acol2[1])
            # dtA_{j a} d_a v_i A_{j2}
            for a in range(2):
                for jj in range(2):
                    term = term + dtAw[jj, a] * Gvw[i, a] * acol2[jj]
            g[i] = term / s
        out[side] = g
    return BoundaryField(out["bottom"], out["top"])


def build_w1(
    grid: Grid,
    dispk: np.ndarray,
    vk: np.ndarray,
    r0k: np.ndarray,
    disp0: np.ndarray,
    v0: np.ndarray,
    dtv_raw: np.ndarray,
    r1_raw: np.ndarray,
    kappa: float,
    solver_tol: float = 1e-9,
) -> np.ndarray:
    """Stokes solve for the smoothed first time derivative of the velocity."""
    b0 = build_kinematics(grid, disp0)
    bk = build_kinematics(grid, dispk)
    f_raw = stokes_momentum_apply(grid, b0, dtv_raw, r1_raw) / b0.J
    f_moll = mollify(grid, f_raw, kappa)
    # divergence data: + d_{eta_i} v_j d_{eta_j} v_i in the smoothed frame
    Gv = grad_field(grid, vk)
    DV = np.empty_like(Gv)
    for i in range(2):
        for j in range(2):
            DV[i, j] = (bk.A[j, 0] * Gv[i, 0] + bk.A[j, 1] * Gv[i, 1]) / bk.J
    div_data = np.einsum("ij...,ji...->...", DV, DV)
    gk = _wall_g_data(grid, bk, vk, r0k)
    mean = np.array([integrate(grid, dtv_raw[0]), integrate(grid, dtv_raw[1])]) / (2.0 * np.pi)
    w1, _ = stokes_solve(grid, bk, bk.J * f_moll, bk.J * div_data, gk, mean, solver_tol=solver_tol)
    return w1


# ---------------------------------------------------------------------------
# jet differentiation of the pressure system
# ---------------------------------------------------------------------------

def _kinematic_jets(grid: Grid, u_jet):
    """F, A, J, E jets from the displacement jet."""
    K = len(u_jet) - 1
    F_jet = []
    for k, u in enumerate(u_jet):
        G = grad_field(grid, u)
        if k == 0:
            G = G.copy()
            G[0, 0] += 1.0
            G[1, 1] += 1.0
        F_jet.append(G)
    A_jet = [cofactor(F) for F in F_jet]
    J_jet = []
    for k in range(K + 1):
        acc = np.zeros((grid.n2, grid.n1))
        for i in range(k + 1):
            acc = acc + F_jet[i][0, 0] * F_jet[k - i][1, 1] - F_jet[i][0, 1] * F_jet[k - i][1, 0]
        J_jet.append(acc)
    E_jet = []
    for k in range(K + 1):
        acc = np.zeros((2, 2, grid.n2, grid.n1))
        for i in range(k + 1):
            acc = acc + np.einsum("ij...,ik...->jk...", A_jet[i], A_jet[k - i])
        E_jet.append(acc)
    return F_jet, A_jet, J_jet, E_jet


def _g1_jet_coeff(grid: Grid, F_jet, A_jet, v_jet, deltaJ0, k: int):
    """Taylor coefficient k of G1 = -dtA_{ij} d_j v_i + d_k A_{ij} d_k F_{ij}
    - Delta J0 (the Jacobian term is frozen)."""
    Gv_jet = [grad_field(grid, v) for v in v_jet[: k + 1]]
    Adot_jet = [cofactor(G) for G in Gv_jet]
    acc = np.zeros((grid.n2, grid.n1))
    for i in range(k + 1):
        acc = acc - np.einsum("ij...,ij...->...", Adot_jet[i], Gv_jet[k - i])
    for ax in (1, 2):
        for i in range(k + 1):
            dA = diff(grid, A_jet[i], ax)
            dF = diff(grid, F_jet[k - i], ax)
            acc = acc + np.einsum("ij...,ij...->...", dA, dF)
    if k == 0:
        acc = acc - deltaJ0
    return acc


def _g2_jets(grid: Grid, u_jet, J_jet, order: int):
    """Jets of the Dirichlet data G2 - 1 per wall (inviscid form)."""
    out = {"bottom": [], "top": []}
    for side, jrow, nsign in (("bottom", 0, -1.0), ("top", -1, 1.0)):
        d1 = [diff1_periodic(u[:, jrow, :], grid.h1) for u in u_jet]
        d1[0][0] = d1[0][0] + 1.0
        acol2 = [np.stack([-d[1], d[0]]) for d in d1]
        d2_1 = [diff1_periodic(diff1_periodic(u[:, jrow, :], grid.h1), grid.h1) for u in u_jet]
        s2 = jets.mul([d[0] for d in d1], [d[0] for d in d1])
        s2 = jets.add(s2, jets.mul([d[1] for d in d1], [d[1] for d in d1]))
        inv_s2 = jets.recip(s2)
        s = jets.sqrt(s2)
        inv_s3 = jets.mul(inv_s2, jets.recip(s))
        # curvature part: (d1^2 eta . A N) / s^3
        curv = []
        for k in range(order + 1):
            acc = np.zeros(grid.n1)
            for i in range(k + 1):
                acc = acc + nsign * (d2_1[i][0] * acol2[k - i][0] + d2_1[i][1] * acol2[k - i][1])
            curv.append(acc)
        term1 = jets.mul(curv, inv_s3)
        Jw = [J[jrow, :] for J in J_jet]
        term2 = jets.mul(Jw, inv_s2)
        g2m1 = jets.sub(term2, term1)
        g2m1[0] = g2m1[0] - 1.0
        out[side] = g2m1
    return out


def initial_time_derivatives(
    grid: Grid,
    disp0: np.ndarray,
    v0: np.ndarray,
    phi: np.ndarray | None = None,
    solver_tol: float = 1e-10,
) -> dict:
    """q0, q1, q2 and dv/dt, d2v/dt2, d3v/dt3 at t = 0 for the inviscid
    system (with the optional static force phi), by exact jet differentiation
    of the assembled semi-discrete pressure problem.

    Staged: q0 -> dv/dt -> q1 -> d2v/dt2 -> q2 -> d3v/dt3, each feeding the
    next jet coefficient.
    """
    from .dynamics import ghost_closure, laplacian_with_ghosts, map_laplacian_with_ghosts

    bundle = build_kinematics(grid, disp0)
    deltaJ0 = laplacian(grid, bundle.J)
    grad_phi = grad_field(grid, phi) if phi is not None else None

    op0 = assemble_operator(grid, bundle.E)
    solver = EllipticSolver(grid, op0)

    # order 0
    g1_0 = pressure_g1(grid, bundle, v0, deltaJ0)
    g2_0 = dirichlet_g2(grid, bundle, v0, 0.0, None)
    rhs0 = g1_0.copy()
    if grad_phi is not None:
        rhs0 += np.einsum("jk...,jk...->...", bundle.A, grad_phi)
    q0 = solver.solve(rhs0, BoundaryField(g2_0.bottom - 1.0, g2_0.top - 1.0), solver_tol)

    def a_grad(A_mat, q):
        d1, d2 = diff(grid, q, 1), diff(grid, q, 2)
        return np.stack([
            A_mat[0, 0] * d1 + A_mat[0, 1] * d2,
            A_mat[1, 0] * d1 + A_mat[1, 1] * d2,
        ])

    gb0, gt0 = ghost_closure(grid, bundle, v0)
    dtv0 = map_laplacian_with_ghosts(grid, disp0, gb0, gt0) - a_grad(bundle.A, q0)
    if phi is not None:
        dtv0 = dtv0 - phi

    # displacement jet to order 2 (eta ~ eta0 + v0 t + dtv0 t^2/2)
    u_jet = [disp0, v0, 0.5 * dtv0]
    F_jet, A_jet, J_jet, E_jet = _kinematic_jets(grid, u_jet)
    g2_jets = _g2_jets(grid, u_jet, J_jet, 2)
    ghost_jet = _ghost_closure_jets(grid, u_jet, A_jet, J_jet, 2)

    # order 1: L(E0) q1 = b1 - L(E1) q0
    v_jet = [v0, dtv0]
    b1 = _g1_jet_coeff(grid, F_jet, A_jet, v_jet, deltaJ0, 1)
    if grad_phi is not None:
        b1 += np.einsum("jk...,jk...->...", A_jet[1], grad_phi)
    op1 = assemble_operator(grid, E_jet[1])
    rhs1 = b1 - (op1 @ q0.ravel()).reshape((grid.n2, grid.n1))
    dir1 = BoundaryField(g2_jets["bottom"][1], g2_jets["top"][1])
    q1 = solver.solve(rhs1, dir1, solver_tol)

    # second derivative of v: d/dt [Lap_ghost(eta) - A grad q - phi]
    dt2v0 = (
        laplacian_with_ghosts(grid, v0, ghost_jet["bottom"][1], ghost_jet["top"][1])
        - a_grad(A_jet[1], q0)
        - a_grad(A_jet[0], q1)
    )

    # order 2: L(E0) qh2 = b2 - L(E1) qh1 - L(E2) q0 ; q2 = 2 qh2
    v_jet = [v0, dtv0, 0.5 * dt2v0]
    b2 = _g1_jet_coeff(grid, F_jet, A_jet, v_jet, deltaJ0, 2)
    if grad_phi is not None:
        b2 += np.einsum("jk...,jk...->...", A_jet[2], grad_phi)
    op2 = assemble_operator(grid, E_jet[2])
    qh1 = q1
    corr2 = (op1 @ qh1.ravel() + op2 @ q0.ravel()).reshape((grid.n2, grid.n1))
    rhs2 = b2 - corr2
    dir2 = BoundaryField(g2_jets["bottom"][2], g2_jets["top"][2])
    qh2 = solver.solve(rhs2, dir2, solver_tol)
    q2 = 2.0 * qh2

    dt3v0 = (
        laplacian_with_ghosts(grid, dtv0, 2.0 * ghost_jet["bottom"][2], 2.0 * ghost_jet["top"][2])
        - a_grad(2.0 * A_jet[2], q0)
        - 2.0 * a_grad(A_jet[1], q1)
        - a_grad(A_jet[0], q2)
    )
    return {
        "q0": q0, "q1": q1, "q2": q2,
        "dtv0": dtv0, "dt2v0": dt2v0, "dt3v0": dt3v0,
        "bundle": bundle,
    }


def _ghost_closure_jets(grid: Grid, u_jet, A_jet, J_jet, order: int):
    """Jets of the inviscid ghost-closure value G = J A_{.2} / |A_{.2}|^2
    per wall (Taylor coefficients; note G itself, not G - e2)."""
    out = {}
    for side, jrow in (("bottom", 0), ("top", -1)):
        acol2 = [A[:, 1, jrow, :] for A in A_jet]
        Jw = [J[jrow, :] for J in J_jet]
        s2 = []
        for k in range(order + 1):
            acc = np.zeros(grid.n1)
            for i in range(k + 1):
                acc = acc + acol2[i][0] * acol2[k - i][0] + acol2[i][1] * acol2[k - i][1]
            s2.append(acc)
        inv_s2 = jets.recip(s2)
        coef = jets.mul(Jw, inv_s2)
        G = []
        for k in range(order + 1):
            acc = np.zeros((2, grid.n1))
            for i in range(k + 1):
                acc = acc + coef[i] * acol2[k - i]
            G.append(acc)
        out[side] = G
    return out


# ---------------------------------------------------------------------------
# forcing construction and the full pipeline
# ---------------------------------------------------------------------------

def build_forcing(
    grid: Grid,
    dispk: np.ndarray,
    vk: np.ndarray,
    w1: np.ndarray,
    q0k: np.ndarray,
    derivs: dict,
    eps: float,
) -> ForcingData:
    """phi from the displayed definition; Psi's polynomial coefficients from
    jets of 2 S_eta(v) A along the (inviscid + phi) trajectory."""
    bundle: KinematicBundle = derivs["bundle"]
    phi = laplacian(grid, dispk) - np.stack([
        bundle.A[0, 0] * diff(grid, q0k, 1) + bundle.A[0, 1] * diff(grid, q0k, 2),
        bundle.A[1, 0] * diff(grid, q0k, 1) + bundle.A[1, 1] * diff(grid, q0k, 2),
    ]) - w1

    # psi0 bitwise from the standard operators
    S0 = strain_eta(grid, vk, bundle)
    psi0 = 2.0 * np.einsum("ik...,kj...->ij...", S0, bundle.A)

    u_jet = [dispk, vk, 0.5 * derivs["dtv0"]]
    v_jet = [vk, derivs["dtv0"], 0.5 * derivs["dt2v0"]]
    F_jet, A_jet, J_jet, E_jet = _kinematic_jets(grid, u_jet)
    invJ = jets.recip(J_jet)
    Gv_jet = [grad_field(grid, v) for v in v_jet]
    # DV[i,j] = d_{eta_j} v_i jets: (A_{jk} d_k v_i) / J
    SA_jet = []
    for k in range(3):
        DV_k = np.zeros((2, 2, grid.n2, grid.n1))
        for a in range(k + 1):
            for b in range(k - a + 1):
                c = k - a - b
                DV_k = DV_k + invJ[c] * np.einsum("jk...,ik...->ij...", A_jet[a], Gv_jet[b])
        SA_jet.append(DV_k)
    # symmetrize then multiply by A: Psi(t) = 2 S A
    psi_coeffs = []
    for k in range(3):
        acc = np.zeros((2, 2, grid.n2, grid.n1))
        for i in range(k + 1):
            S_i = 0.5 * (SA_jet[i] + np.swapaxes(SA_jet[i], 0, 1))
            acc = acc + np.einsum("ik...,kj...->ij...", S_i, A_jet[k - i])
        psi_coeffs.append(2.0 * acc)
    psi1 = psi_coeffs[1]          # first derivative (Taylor c1 * 1!)
    psi2 = 2.0 * psi_coeffs[2]    # second derivative (Taylor c2 * 2!)
    return ForcingData(grid=grid, phi=phi, psi0=psi0, psi1=psi1, psi2=psi2)


@dataclass
class SmoothingResult:
    bundle: InitialDataBundle
    forcing: ForcingData
    compat_raw: CompatReport
    compat_smoothed: CompatReport
    norms: dict


def smooth_initial_data(
    grid: Grid,
    disp0: np.ndarray,
    v0: np.ndarray,
    eps: float,
    zcomp_tol: float = 1e-5,
    solver_tol: float = 1e-9,
) -> SmoothingResult:
    """Full constructive pipeline from raw (eta0, v0) to the smoothed bundle
    and the forcing pair, with kappa = 1/|ln eps|."""
    from .energy import sobolev_norm

    kappa = kappa_of(eps)
    compat_raw = check_compatibility(grid, disp0, v0)
    if compat_raw.zcomp_residual > zcomp_tol:
        raise IllPosedDataError(
            f"raw data zcomp residual {compat_raw.zcomp_residual:.3e} exceeds {zcomp_tol:.3e}; "
            "the pipeline presumes data compatible at order zero"
        )
    b0 = build_kinematics(grid, disp0)
    q0_raw = solve_q0(grid, disp0, v0, zcomp_tol=zcomp_tol, solver_tol=solver_tol)
    dtv_raw = laplacian(grid, disp0) - np.stack([
        b0.A[0, 0] * diff(grid, q0_raw, 1) + b0.A[0, 1] * diff(grid, q0_raw, 2),
        b0.A[1, 0] * diff(grid, q0_raw, 1) + b0.A[1, 1] * diff(grid, q0_raw, 2),
    ])

    # harmonic r0 with Dirichlet data 2 S(v0)_{ij} A_{j2} A_{i2} / s^2
    frames0 = wall_frame_traces(grid, b0)
    r0_raw = solve_harmonic(grid, b0, _r0_dirichlet_data(grid, b0, v0), solver_tol)

    dispk = smooth_eta0(grid, disp0, kappa, solver_tol)
    vk, r0k = smooth_v0(grid, dispk, disp0, v0, r0_raw, kappa, solver_tol)

    q0k = solve_q0(grid, dispk, vk, zcomp_tol=max(zcomp_tol, 1e-6), solver_tol=solver_tol)

    # harmonic r1 with Dirichlet (2 S(dtv) n + g) . n in the raw frame
    g_raw = _wall_g_data(grid, b0, v0, r0_raw)
    Sdt = strain_eta(grid, dtv_raw, b0)
    r1_dir = {}
    for side, jrow in (("bottom", 0), ("top", -1)):
        fr = frames0[side]
        s = np.sqrt(fr["s2"])
        sign = -1.0 if side == "bottom" else 1.0
        nh = sign * fr["acol2"] / s
        Sw = Sdt[:, :, jrow, :]
        Sn = np.stack([Sw[0, 0] * nh[0] + Sw[0, 1] * nh[1], Sw[1, 0] * nh[0] + Sw[1, 1] * nh[1]])
        gv = getattr(g_raw, side)
        r1_dir[side] = (2.0 * Sn[0] + gv[0]) * nh[0] + (2.0 * Sn[1] + gv[1]) * nh[1]
    r1_raw = solve_harmonic(grid, b0, BoundaryField(r1_dir["bottom"], r1_dir["top"]), solver_tol)

    w1 = build_w1(grid, dispk, vk, r0k, disp0, v0, dtv_raw, r1_raw, kappa, solver_tol)

    bk = build_kinematics(grid, dispk)
    phi = laplacian(grid, dispk) - np.stack([
        bk.A[0, 0] * diff(grid, q0k, 1) + bk.A[0, 1] * diff(grid, q0k, 2),
        bk.A[1, 0] * diff(grid, q0k, 1) + bk.A[1, 1] * diff(grid, q0k, 2),
    ]) - w1

    derivs = initial_time_derivatives(grid, dispk, vk, phi=phi, solver_tol=solver_tol)
    forcing = build_forcing(grid, dispk, vk, w1, q0k, derivs, eps)
    compat_smoothed = check_compatibility(grid, dispk, vk, dtv0=derivs["dtv0"])

    grad_psi_sq = 0.0
    for p in (forcing.psi0, forcing.psi1, forcing.psi2):
        for ax in (1, 2):
            grad_psi_sq += integrate(grid, diff(grid, p, ax) ** 2)
    norms = {
        "phi_H2_sq": sobolev_norm(grid, forcing.phi, 2) ** 2,
        "eps_grad_psi_sq": eps * grad_psi_sq,
    }
    bundle = InitialDataBundle(
        grid=grid, eta0=dispk, v0=vk,
        q0=derivs["q0"], dtv0=derivs["dtv0"], dt2v0=derivs["dt2v0"], dt3v0=derivs["dt3v0"],
        q1=derivs["q1"], q2=derivs["q2"], r0=r0k, r1=r1_raw, w1=w1,
        kappa=kappa, epsilon=eps,
    )
    return SmoothingResult(
        bundle=bundle, forcing=forcing,
        compat_raw=compat_raw, compat_smoothed=compat_smoothed, norms=norms,
    )
