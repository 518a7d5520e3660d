"""Time integration of the modified viscoelastic system and its inviscid
(epsilon = 0) elastodynamic limit.

The traction boundary condition is split the way the analysis splits it:
its normal projection becomes the Dirichlet pressure data, its tangential
projection becomes a ghost-value closure expressing the wall-normal
derivative of eta through tangential quantities.  Time stepping is explicit
RK2 (Heun for the velocity, the trapezoidal endpoint form for the map so the
map only ever integrates divergence-projected velocities); each stage
rebuilds the kinematics, installs ghosts, solves the pressure and evaluates
the momentum balance.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError, PressureSolveError, StepRejectedError
from .forcing import ForcingData
from .grid import BoundaryField, Grid, diff, diff1_periodic, wall_traces
from .kinematics import KinematicBundle, build_kinematics, visc_div
from .pressure import PressureBVP, assemble_pressure, wall_frame_traces


@dataclass
class State:
    t: float
    disp: np.ndarray          # displacement u with eta = x + u, (2, n2, n1)
    v: np.ndarray             # (2, n2, n1)
    q: np.ndarray             # last solved pressure, (n2, n1)
    J0: np.ndarray            # frozen Jacobian det(grad eta_0), (n2, n1)
    deltaJ0: np.ndarray       # precomputed discrete Laplacian of J0


@dataclass
class SimConfig:
    epsilon: float = 0.0
    sigma: float = 1.0        # fixed surface tension coefficient
    dt: float | None = None   # None selects auto_dt
    t_end: float = 1.0
    cfl_elastic: float = 0.25
    cfl_visc: float = 0.7
    cfl_st: float = 0.25
    reproject_every: int = 1
    refactor_every: int = 0   # 0: refactor only when refinement stalls
    solver_tol: float = 1e-10
    forcing_on: bool = False
    arclen_floor_frac: float = 0.25  # abort when |d1 eta| < frac * min |d1 eta_0|

    def validate(self) -> None:
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.sigma != 1.0:
            raise ConfigError("sigma is fixed to 1")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not (0 < self.solver_tol < 1):
            raise ConfigError("solver_tol must lie in (0, 1)")
        if self.t_end <= 0:
            raise ConfigError("t_end must be positive")


def initial_state(grid: Grid, disp: np.ndarray, v: np.ndarray) -> State:
    bundle = build_kinematics(grid, disp)
    J0 = bundle.J.copy()
    deltaJ0 = diff(grid, diff(grid, J0, 1), 1) + diff(grid, diff(grid, J0, 2), 2)
    return State(t=0.0, disp=disp.copy(), v=v.copy(), q=np.zeros((grid.n2, grid.n1)), J0=J0, deltaJ0=deltaJ0)


def ghost_closure(
    grid: Grid,
    bundle: KinematicBundle,
    v: np.ndarray,
    eps: float = 0.0,
    forcing: ForcingData | None = None,
    t: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Wall-normal derivative of eta dictated by the projected traction
    identity, per wall:

        d2 eta = (J - 2 eps dtA_{j2}A_{j2} - eps Psi_{k2}A_{k2}) A_{.2}/|A_{.2}|^2
                 + eps dtA_{.2} + eps Psi_{.2}
                 - (eps/J)(E_{12} d1 v + E_{22} d2 v)

    with d2 v taken one-sided (equivalent to a quadratic-extrapolation ghost).
    Returns (G_bottom, G_top), each of shape (2, n1).
    """
    frames = wall_frame_traces(grid, bundle)
    v_tr = wall_traces(v)
    psi_col2 = None
    if forcing is not None and eps != 0.0:
        psi = forcing.psi_at(t)
        psi_col2 = BoundaryField(psi[:, 1, 0, :].copy(), psi[:, 1, -1, :].copy())
    d2v_tr = wall_traces(diff(grid, v, 2)) if eps != 0.0 else None
    jrow = {"bottom": 0, "top": -1}
    out = {}
    for side in ("bottom", "top"):
        fr = frames[side]
        acol2, a2, J = fr["acol2"], fr["s2"], fr["J"]
        num = J.copy()
        extra = np.zeros((2, grid.n1))
        if eps != 0.0:
            d1v = diff1_periodic(getattr(v_tr, side), grid.h1)
            dtA2 = np.stack([-d1v[1], d1v[0]])
            num = num - 2.0 * eps * (dtA2[0] * acol2[0] + dtA2[1] * acol2[1])
            extra = extra + eps * dtA2
            if psi_col2 is not None:
                p2 = getattr(psi_col2, side)
                num = num - eps * (p2[0] * acol2[0] + p2[1] * acol2[1])
                extra = extra + eps * p2
            jr = jrow[side]
            E12, E22 = bundle.E[0, 1, jr, :], bundle.E[1, 1, jr, :]
            d1v_full = diff1_periodic(getattr(v_tr, side), grid.h1)
            extra = extra - (eps / J) * (E12 * d1v_full + E22 * getattr(d2v_tr, side))
        out[side] = acol2 * (num / a2) + extra
    return out["bottom"], out["top"]


def _ghost_rows(grid: Grid, f: np.ndarray, G_bottom: np.ndarray, G_top: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ghost rows one cell beyond each wall such that the 4-point third-order
    one-sided derivative at the wall equals the prescribed value."""
    h2 = grid.h2
    gb = (-6.0 * h2 * G_bottom - 3.0 * f[..., 0, :] + 6.0 * f[..., 1, :] - f[..., 2, :]) / 2.0
    gt = (6.0 * h2 * G_top - 3.0 * f[..., -1, :] + 6.0 * f[..., -2, :] - f[..., -3, :]) / 2.0
    return gb, gt


def laplacian_with_ghosts(grid: Grid, f: np.ndarray, gb_val: np.ndarray, gt_val: np.ndarray) -> np.ndarray:
    """Laplacian of f with wall rows closed by ghosts chosen so the wall
    d2-derivative of f equals the prescribed values (linear in f and in the
    prescribed data)."""
    gb, gt = _ghost_rows(grid, f, gb_val, gt_val)
    lap = diff(grid, diff(grid, f, 1), 1)
    d2 = np.empty_like(f)
    inner = (f[..., 2:, :] - 2.0 * f[..., 1:-1, :] + f[..., :-2, :]) / grid.h2**2
    d2[..., 1:-1, :] = inner
    d2[..., 0, :] = (gb - 2.0 * f[..., 0, :] + f[..., 1, :]) / grid.h2**2
    d2[..., -1, :] = (gt - 2.0 * f[..., -1, :] + f[..., -2, :]) / grid.h2**2
    return lap + d2


def map_laplacian_with_ghosts(grid: Grid, disp: np.ndarray, G_bottom: np.ndarray, G_top: np.ndarray) -> np.ndarray:
    """Delta eta with the traction closure: G carries the prescribed d2 eta of
    the full map, whose identity part contributes e2."""
    e2 = np.zeros((2, grid.n1))
    e2[1] = 1.0
    return laplacian_with_ghosts(grid, disp, G_bottom - e2, G_top - e2)


def momentum_rhs(
    grid: Grid,
    state: State,
    bundle: KinematicBundle,
    q: np.ndarray,
    eps: float = 0.0,
    forcing: ForcingData | None = None,
) -> np.ndarray:
    """dv/dt = Delta eta - A grad q + eps * J Delta_eta v - phi - eps div Psi."""
    gb, gt = ghost_closure(grid, bundle, state.v, eps, forcing, state.t)
    rhs = map_laplacian_with_ghosts(grid, state.disp, gb, gt)
    d1q, d2q = diff(grid, q, 1), diff(grid, q, 2)
    for i in range(2):
        rhs[i] -= bundle.A[i, 0] * d1q + bundle.A[i, 1] * d2q
    if eps != 0.0:
        rhs += eps * visc_div(grid, state.v, bundle)
    if forcing is not None:
        rhs -= forcing.phi
        if eps != 0.0:
            rhs -= eps * forcing.div_psi_at(state.t)
    return rhs


class PressureWorkspace:
    """Reuses the last LU factorization via warm-started iterative refinement
    while the operator drifts slowly; refactors when refinement stalls.

    Warm starts are extrapolated per call slot (the RK stages form a fixed
    cyclic pattern, so consecutive solutions within a slot vary smoothly).
    """

    def __init__(self, refactor_every: int = 0, max_refine: int = 14):
        # refactor_every <= 0 means refinement-driven refactoring only
        self.refactor_every = refactor_every
        self.max_refine = max_refine
        self._lu = None
        self._age = 0
        self._hist = {}

    def _refine(self, A, b, x, tol_abs):
        for _ in range(self.max_refine):
            r = b - A @ x
            nr = np.linalg.norm(r)
            if nr <= tol_abs:
                return x, nr
            x = x + self._lu.solve(r)
        r = b - A @ x
        return x, np.linalg.norm(r)

    def _guess(self, slot: str, b):
        hist = self._hist.get(slot)
        if hist is None:
            return None
        last, prev = hist
        if prev is None:
            return last.copy()
        return 2.0 * last - prev

    def _store(self, slot: str, x):
        hist = self._hist.get(slot)
        self._hist[slot] = (x, None if hist is None else hist[0])

    def solve(self, bvp: PressureBVP, tol: float, slot: str = "a") -> np.ndarray:
        grid = bvp.grid
        b = bvp.rhs.copy()
        b[0, :] = bvp.dirichlet.bottom
        b[-1, :] = bvp.dirichlet.top
        b = b.ravel()
        A = bvp.operator
        scale = max(np.linalg.norm(b), 1e-300)
        stale = self.refactor_every > 0 and self._age >= self.refactor_every
        if self._lu is not None and not stale:
            x0 = self._guess(slot, b)
            if x0 is None:
                x0 = self._lu.solve(b)
            x, nr = self._refine(A, b, x0, tol * scale)
            if nr <= tol * scale:
                self._age += 1
                self._store(slot, x)
                return x.reshape((grid.n2, grid.n1))
        self._lu = spla.splu(A.tocsc())
        self._age = 1
        x, nr = self._refine(A, b, self._lu.solve(b), tol * scale)
        rel = nr / scale
        if not np.isfinite(rel) or rel > tol:
            raise PressureSolveError(f"pressure solve residual {rel:.3e} exceeds tol {tol:.3e}")
        self._store(slot, x)
        return x.reshape((grid.n2, grid.n1))


class ProjectionWorkspace:
    """Constrained divergence projection via the Schur complement of the KKT
    system: (B B^T + mu I) lam = B v, then v <- v - B^T lam.  The normal
    matrix is definite and small; its factorization is cached and refreshed
    only when warm-started refinement stalls."""

    def __init__(self, mu_rel: float = 1e-13, max_refine: int = 4, tol: float = 3e-9):
        # the effective tolerance self-calibrates to the refinement floor of
        # the normal equations (which grows with grid conditioning); what
        # matters downstream is only that the post-projection divergence is
        # far below the constraint-transport budget
        self.mu_rel = mu_rel
        self.max_refine = max_refine
        self.tol = tol
        self._lu = None
        self._mu = 0.0
        self._floor = 0.0

    def _refine(self, B, lam, b, tol_abs):
        best, best_r = lam, np.linalg.norm(b - (B @ (B.T @ lam) + self._mu * lam))
        for _ in range(self.max_refine):
            if best_r <= tol_abs:
                return best, best_r
            lam = best + self._lu.solve(b - (B @ (B.T @ best) + self._mu * best))
            r = np.linalg.norm(b - (B @ (B.T @ lam) + self._mu * lam))
            if r >= best_r:
                return best, best_r
            best, best_r = lam, r
        return best, best_r

    def project(self, grid: Grid, bundle: KinematicBundle, v: np.ndarray) -> np.ndarray:
        import scipy.sparse as sp

        from .initial_data import divergence_matrix

        N = grid.n1 * grid.n2
        B = divergence_matrix(grid, bundle)
        b = B @ v.reshape(2 * N)
        scale = max(np.linalg.norm(b), 1e-300)
        tol_abs = max(self.tol, 4.0 * self._floor) * scale
        if self._lu is not None:
            lam, res = self._refine(B, self._lu.solve(b), b, tol_abs)
            if res <= tol_abs:
                return (v.reshape(2 * N) - B.T @ lam).reshape((2, grid.n2, grid.n1))
        S = (B @ B.T).tocsc()
        self._mu = self.mu_rel * abs(S.diagonal()).max()
        S = S + self._mu * sp.identity(N, format="csc")
        self._lu = spla.splu(S)
        lam, res = self._refine(B, self._lu.solve(b), b, 0.0)
        self._floor = res / scale
        return (v.reshape(2 * N) - B.T @ lam).reshape((2, grid.n2, grid.n1))


def auto_dt(grid: Grid, state: State, config: SimConfig) -> float:
    """dt = min(elastic, viscous, surface-tension) stability bounds."""
    h = min(grid.h1, grid.h2)
    dt = min(config.cfl_elastic * h, config.cfl_st * h ** 1.5)
    if config.epsilon > 0:
        bundle = build_kinematics(grid, state.disp)
        stiff = float(np.max(np.trace(bundle.E) / bundle.J))
        dt = min(dt, config.cfl_visc * h**2 / (4.0 * config.epsilon * stiff))
    return dt


def _check_arclen(grid: Grid, bundle: KinematicBundle, floor: float) -> float:
    frames = wall_frame_traces(grid, bundle)
    smin = min(float(np.sqrt(frames[s]["s2"]).min()) for s in ("bottom", "top"))
    if smin < floor:
        raise StepRejectedError(f"boundary stretch {smin:.3e} below floor {floor:.3e}")
    return smin


@dataclass
class StepDiagnostics:
    dt: float
    q_min: float
    q_max: float
    div_residual_max: float
    ghost_residual_max: float


class Stepper:
    """Owns the solver workspace and the non-degeneracy floors for one run.

    The first stage of each step reuses the evaluation done at the end of the
    previous step (the momentum balance along the accepted trajectory), which
    also exposes the exact semi-discrete dv/dt via `last_rhs`.
    """

    def __init__(self, grid: Grid, config: SimConfig, forcing: ForcingData | None = None):
        config.validate()
        self.grid = grid
        self.config = config
        self.forcing = forcing if config.forcing_on else None
        self.workspace = PressureWorkspace(refactor_every=config.refactor_every)
        self.projection = ProjectionWorkspace()
        self._arclen_floor = None
        self._steps = 0
        self._fsal_key = None
        self._fsal = None
        self.last_rhs = None
        self.last_bundle = None

    def _stage(self, state: State, slot: str = "a", tol: float | None = None) -> tuple[np.ndarray, np.ndarray, KinematicBundle]:
        grid, cfg = self.grid, self.config
        try:
            bundle = build_kinematics(grid, state.disp)
        except Exception as exc:
            raise StepRejectedError(str(exc)) from exc
        if self._arclen_floor is None:
            frames = wall_frame_traces(grid, bundle)
            smin = min(float(np.sqrt(frames[s]["s2"]).min()) for s in ("bottom", "top"))
            self._arclen_floor = cfg.arclen_floor_frac * smin
        _check_arclen(grid, bundle, self._arclen_floor)
        bvp = assemble_pressure(
            grid, bundle, state.v, eps=cfg.epsilon, forcing=self.forcing, t=state.t,
            deltaJ=state.deltaJ0,
        )
        q = self.workspace.solve(bvp, tol if tol is not None else cfg.solver_tol, slot=slot)
        accel = momentum_rhs(grid, state, bundle, q, cfg.epsilon, self.forcing)
        return q, accel, bundle

    def stage_eval(self, state: State) -> tuple[np.ndarray, np.ndarray, KinematicBundle]:
        """Pressure solve and momentum balance at a given state (cached when
        it matches the last accepted state)."""
        if self._fsal_key is not None and state is self._fsal_key:
            return self._fsal
        return self._stage(state)

    def step(self, state: State, dt: float | None = None) -> tuple[State, StepDiagnostics]:
        grid, cfg = self.grid, self.config
        if dt is None:
            dt = cfg.dt if cfg.dt is not None else auto_dt(grid, state, cfg)
        q1, a1, _ = self.stage_eval(state)
        mid = replace(
            state,
            t=state.t + dt,
            disp=state.disp + dt * state.v,
            v=state.v + dt * a1,
        )
        q2, a2, _ = self._stage(mid, slot='mid', tol=max(cfg.solver_tol, 1e-7))
        v_new = state.v + 0.5 * dt * (a1 + a2)
        new = replace(
            state, t=state.t + dt, disp=state.disp + 0.5 * dt * (state.v + v_new), v=v_new
        )
        self._steps += 1
        if cfg.reproject_every > 0 and self._steps % cfg.reproject_every == 0:
            new = self.reproject_velocity(new)
            # trapezoidal map update with the projected endpoint velocity keeps
            # the Jacobian transport at the projection's residual level
            new = replace(new, disp=state.disp + 0.5 * dt * (state.v + new.v))
        q_new, rhs_new, bundle = self._stage(new, slot='end')
        new = replace(new, q=q_new)
        self._fsal_key = new
        self._fsal = (q_new, rhs_new, bundle)
        self.last_rhs = rhs_new
        self.last_bundle = bundle
        div = _j_weighted_divergence(grid, bundle, new.v) / bundle.J
        ghost = _ghost_residual(grid, bundle, new.v, cfg.epsilon, self.forcing, new.t)
        diag = StepDiagnostics(
            dt=dt,
            q_min=float(new.q.min()),
            q_max=float(new.q.max()),
            div_residual_max=float(np.abs(div).max()),
            ghost_residual_max=ghost,
        )
        return new, diag

    def reproject_velocity(self, state: State, tol: float | None = None) -> State:
        """Constrained projection of v onto the discrete divergence-free set
        (closest field whose J-weighted divergence rows vanish)."""
        bundle = build_kinematics(self.grid, state.disp)
        v_new = self.projection.project(self.grid, bundle, state.v)
        return replace(state, v=v_new)


def _j_weighted_divergence(grid: Grid, bundle: KinematicBundle, v: np.ndarray) -> np.ndarray:
    """J Div_eta v = A_{ij} d_j v_i (no Piola rearrangement)."""
    acc = np.zeros((grid.n2, grid.n1))
    for i in range(2):
        acc += bundle.A[i, 0] * diff(grid, v[i], 1) + bundle.A[i, 1] * diff(grid, v[i], 2)
    return acc


def _ghost_residual(
    grid: Grid,
    bundle: KinematicBundle,
    v: np.ndarray,
    eps: float,
    forcing: ForcingData | None,
    t: float,
) -> float:
    """Max-norm wall residual of the one-sided d2 eta against the closure."""
    gb, gt = ghost_closure(grid, bundle, v, eps, forcing, t)
    F_tr = wall_traces(bundle.F[:, 1])
    return float(max(np.abs(F_tr.bottom - gb).max(), np.abs(F_tr.top - gt).max()))
