"""Discrete energy functionals and conservation/identity monitors.

Two functionals are tracked: the inviscid high-order energy (sum over three
time derivatives of Sobolev norms of grad eta and v plus boundary terms) and
its viscous counterpart with epsilon-weighted blocks and running time
integrals.  Time derivatives beyond the first are reconstructed from a short
uniform-step history ring; dv/dt comes from the stored momentum balance
(exact semi-discretely), higher derivatives from backward differences of it,
which caps their accuracy at O(dt^2) for order 2 and O(dt) for order 3.
Every report records that caveat.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .grid import Grid, diff, diff1_periodic, integrate, wall_traces
from .kinematics import boundary_frame, grad_field

ACCURACY_NOTE = "dt^2-accurate reconstructions for order <= 2 time derivatives, dt-accurate at order 3"


@dataclass
class HistoryEntry:
    t: float
    disp: np.ndarray
    v: np.ndarray
    rhs: np.ndarray | None = None  # momentum balance (dv/dt), exact semi-discretely


@dataclass
class HistoryRing:
    """Up to `capacity` most recent states at uniform spacing."""

    capacity: int = 5
    entries: list = field(default_factory=list)

    def push(self, entry: HistoryEntry) -> None:
        if self.entries:
            dt_new = entry.t - self.entries[-1].t
            if dt_new <= 0:
                raise ConfigError("history timestamps must increase")
            if len(self.entries) >= 2:
                dt_old = self.entries[-1].t - self.entries[-2].t
                if abs(dt_new - dt_old) > 1e-12 * max(abs(dt_new), abs(dt_old)):
                    raise ConfigError("history requires uniform time spacing")
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            self.entries.pop(0)

    @property
    def dt(self) -> float:
        if len(self.entries) < 2:
            raise ConfigError("history needs at least two states for a spacing")
        return self.entries[-1].t - self.entries[-2].t

    def require(self, k: int) -> None:
        if len(self.entries) < k + 1:
            raise ConfigError(f"history holds {len(self.entries)} states, need {k + 1}")


def sobolev_norm(grid: Grid, f: np.ndarray, m: int) -> float:
    """H^m norm: sqrt of the sum of squared L2 norms of all derivatives of
    order <= m (periodic in x1, one-sided at the walls in x2)."""
    if not 0 <= m <= 3:
        raise ConfigError("Sobolev order must be in 0..3")
    total = integrate(grid, f * f)
    layer = {(0, 0): f}
    for _ in range(m):
        new_layer = {}
        for (a1, a2), g in layer.items():
            new_layer[(a1 + 1, a2)] = diff(grid, g, 1)
            new_layer[(a1, a2 + 1)] = diff(grid, g, 2)
        for g in new_layer.values():
            total += integrate(grid, g * g)
        layer = new_layer
    return float(np.sqrt(total))


def _backward1(ring: HistoryRing, values: list[np.ndarray]) -> np.ndarray:
    """Second-order backward first derivative of a sampled sequence."""
    dt = ring.dt
    if len(values) >= 3:
        return (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dt)
    return (values[-1] - values[-2]) / dt


def _backward2(ring: HistoryRing, values: list[np.ndarray]) -> np.ndarray:
    dt = ring.dt
    return (values[-1] - 2.0 * values[-2] + values[-3]) / dt**2


def _backward3(ring: HistoryRing, values: list[np.ndarray]) -> np.ndarray:
    dt = ring.dt
    return (values[-1] - 3.0 * values[-2] + 3.0 * values[-3] - values[-4]) / dt**3


def time_derivative(ring: HistoryRing, what: str, k: int) -> np.ndarray:
    """k-th time derivative of eta or v at the newest ring entry.

    Prefers stored momentum-balance fields (dv/dt exact) and falls back to
    difference stencils on the stored states.
    """
    if k < 1 or k > 3:
        raise ConfigError("time derivative order must be 1..3")
    entries = ring.entries
    have_rhs = all(e.rhs is not None for e in entries)
    if what == "eta":
        if k == 1:
            return entries[-1].v
        return time_derivative(ring, "v", k - 1)
    if what != "v":
        raise ConfigError(f"unknown field {what!r}")
    if k == 1:
        if have_rhs:
            return entries[-1].rhs
        ring.require(2)
        return _backward1(ring, [e.v for e in entries])
    if k == 2:
        if have_rhs and len(entries) >= 3:
            return _backward1(ring, [e.rhs for e in entries])
        ring.require(2)
        return _backward2(ring, [e.v for e in entries])
    if have_rhs and len(entries) >= 3:
        return _backward2(ring, [e.rhs for e in entries])
    ring.require(3)
    return _backward3(ring, [e.v for e in entries])


@dataclass
class EnergyReport:
    t: float
    E_total: float
    components: dict
    extras: dict = field(default_factory=dict)  # comparison variants, not summed
    note: str = ACCURACY_NOTE

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "E_total": self.E_total,
            "components": self.components,
            "extras": self.extras,
            "note": self.note,
        }


def _eta_time_fields(grid: Grid, ring: HistoryRing) -> dict[int, np.ndarray]:
    """Displacement-convention time derivatives of the map, orders 0..3."""
    out = {0: ring.entries[-1].disp}
    for k in (1, 2, 3):
        out[k] = time_derivative(ring, "eta", k)
    return out


def _v_time_fields(grid: Grid, ring: HistoryRing) -> dict[int, np.ndarray]:
    out = {0: ring.entries[-1].v}
    for k in (1, 2, 3):
        out[k] = time_derivative(ring, "v", k)
    return out


def _grad_full(grid: Grid, disp_like: np.ndarray, with_identity: bool) -> np.ndarray:
    G = grad_field(grid, disp_like)
    if with_identity:
        G = G.copy()
        G[0, 0] += 1.0
        G[1, 1] += 1.0
    return G


def _boundary_sq(grid: Grid, w: np.ndarray, normal) -> float:
    """|w . n|_{L^2(Gamma)}^2 with w a per-wall pair dict of (2, n1) arrays."""
    total = 0.0
    for side in ("bottom", "top"):
        n = getattr(normal, side)
        dot = w[side][0] * n[0] + w[side][1] * n[1]
        total += float((dot**2).sum() * grid.h1)
    return total


def _d1_power_trace(grid: Grid, f: np.ndarray, power: int) -> dict:
    tr = wall_traces(f)
    out = {}
    for side in ("bottom", "top"):
        w = getattr(tr, side)
        for _ in range(power):
            w = diff1_periodic(w, grid.h1)
        out[side] = w
    return out


def energy_inviscid(grid: Grid, ring: HistoryRing) -> EnergyReport:
    """Sum over j <= 3 of |d_t^j grad eta|_{H^{3-j}}^2 + |d_t^j v|_{H^{3-j}}^2
    + |d_t^j d_1^{4-j} eta . n|_{L^2(Gamma)}^2 with the current normal.

    The boundary terms are also reported against the unnormalized cofactor
    direction (extras, excluded from the total) so either convention can be
    compared."""
    ring.require(1)
    eta_t = _eta_time_fields(grid, ring)
    v_t = _v_time_fields(grid, ring)
    frame = boundary_frame(grid, ring.entries[-1].disp)
    # unit vector along A_{.2} per wall (differs from n by the outward sign)
    acol2_dir = {
        side: getattr(frame.n, side) * (-1.0 if side == "bottom" else 1.0)
        for side in ("bottom", "top")
    }
    comps = {}
    extras = {}
    for j in range(4):
        G = _grad_full(grid, eta_t[j], with_identity=(j == 0))
        comps[f"grad_eta_dt{j}_H{3 - j}_sq"] = sobolev_norm(grid, G, 3 - j) ** 2
        comps[f"v_dt{j}_H{3 - j}_sq"] = sobolev_norm(grid, v_t[j], 3 - j) ** 2
        trace = _d1_power_trace(grid, eta_t[j], 4 - j)
        comps[f"bnd_dt{j}_d1pow{4 - j}_sq"] = _boundary_sq(grid, trace, frame.n)
        alt = 0.0
        for side in ("bottom", "top"):
            d = acol2_dir[side]
            dot = trace[side][0] * d[0] + trace[side][1] * d[1]
            alt += float((dot**2).sum() * grid.h1)
        extras[f"bnd_dt{j}_d1pow{4 - j}_acol2dir_sq"] = alt
    total = float(sum(comps.values()))
    return EnergyReport(t=ring.entries[-1].t, E_total=total, components=comps, extras=extras)


def x_norm_sq(grid: Grid, fields: dict[int, np.ndarray], m: int) -> float:
    """Space-time norm: sum over l <= m of |d_t^l u|_{H^{m-l}}^2, from the
    supplied time-derivative fields."""
    total = 0.0
    for ell in range(m + 1):
        total += sobolev_norm(grid, fields[ell], m - ell) ** 2
    return float(total)


def viscous_instantaneous(grid: Grid, ring: HistoryRing, eps: float) -> dict:
    """The instantaneous (non-integrated) blocks of the viscous energy."""
    ring.require(1)
    eta_t = _eta_time_fields(grid, ring)
    frame = boundary_frame(grid, ring.entries[-1].disp)
    comps = {}

    # tangential block: sum over a+b=2 of |d1^{a+1} dt^b eta|_{X^1}-style terms
    tang = 0.0
    for a, b in ((2, 0), (1, 1), (0, 2)):
        w = eta_t[b]
        for _ in range(a + 1):
            w = diff(grid, w, 1)
        tang += sobolev_norm(grid, w, 1) ** 2
        if b + 1 <= 3:
            wt = eta_t[b + 1]
            for _ in range(a + 1):
                wt = diff(grid, wt, 1)
            tang += sobolev_norm(grid, wt, 0) ** 2
    comps["tangential_d2d1_eta_X1_sq"] = tang

    bnd = 0.0
    for a, b in ((2, 0), (1, 1), (0, 2)):
        trace = _d1_power_trace(grid, eta_t[b], a + 2)
        bnd += _boundary_sq(grid, trace, frame.n)
    comps["bnd_d1sq_d2_eta_sq"] = bnd

    X1, X2 = grid.mesh()
    eta_full = dict(eta_t)
    eta_full[0] = eta_t[0] + np.stack([X1, X2])
    comps["eta_X3_sq"] = x_norm_sq(grid, eta_full, 3)

    hess = {}
    for ell in range(3):
        G = grad_field(grid, eta_t[ell])
        H = np.stack([diff(grid, G, 1), diff(grid, G, 2)])
        hess[ell] = H
    comps["eps_hessian_eta_X2_sq"] = eps * x_norm_sq(grid, hess, 2)
    return comps


def energy_viscous(
    grid: Grid,
    ring: HistoryRing,
    eps: float,
    running: dict,
) -> EnergyReport:
    """Viscous energy: instantaneous blocks plus the running integrals
    accumulated by the harness (rectangle rule, keys as in RunningIntegrals)."""
    comps = viscous_instantaneous(grid, ring, eps)
    for key in (
        "int_grad_eta_X3_sq",
        "int_eps_grad_v_X3_sq",
        "int_sqrt_eps_d2d1_grad_v_sq",
        "int_quartic_dt3",
    ):
        comps[key] = float(running.get(key, 0.0))
    total = float(sum(comps.values()))
    return EnergyReport(t=ring.entries[-1].t, E_total=total, components=comps)


class RunningIntegrals:
    """Rectangle-rule accumulator for the time-integrated blocks of the
    viscous energy, synchronized with the step size."""

    def __init__(self, grid: Grid, eps: float):
        self.grid = grid
        self.eps = eps
        self.values = {
            "int_grad_eta_X3_sq": 0.0,
            "int_eps_grad_v_X3_sq": 0.0,
            "int_sqrt_eps_d2d1_grad_v_sq": 0.0,
            "int_quartic_dt3": 0.0,
        }
        self._inner_eps2 = 0.0  # int_0^t |dt^3 grad v|_0^2 (for the eps^2 quartic)

    def accumulate(self, ring: HistoryRing, dt: float) -> None:
        grid, eps = self.grid, self.eps
        if len(ring.entries) < 4:
            return
        eta_t = _eta_time_fields(grid, ring)
        v_t = _v_time_fields(grid, ring)
        grad_eta = {ell: _grad_full(grid, eta_t[ell], with_identity=(ell == 0)) for ell in range(4)}
        grad_v = {ell: grad_field(grid, v_t[ell]) for ell in range(4)}
        self.values["int_grad_eta_X3_sq"] += dt * x_norm_sq(grid, grad_eta, 3)
        self.values["int_eps_grad_v_X3_sq"] += dt * eps**2 * x_norm_sq(grid, grad_v, 3)
        mixed = 0.0
        for a, b in ((2, 0), (1, 1), (0, 2)):
            w = v_t[b]
            for _ in range(a + 1):
                w = diff(grid, w, 1)
            mixed += sobolev_norm(grid, grad_field(grid, w), 0) ** 2
        self.values["int_sqrt_eps_d2d1_grad_v_sq"] += dt * eps * mixed
        dt3v = v_t[3]
        dt3_grad_eta = grad_v[2]
        frame = boundary_frame(grid, ring.entries[-1].disp)
        trace = _d1_power_trace(grid, eta_t[3], 1)
        bnd4 = _boundary_sq(grid, trace, frame.n) ** 2
        n3v4 = sobolev_norm(grid, dt3v, 0) ** 4
        n3ge4 = sobolev_norm(grid, dt3_grad_eta, 0) ** 4
        self._inner_eps2 += dt * sobolev_norm(grid, grad_v[3], 0) ** 2
        self.values["int_quartic_dt3"] += dt * (n3v4 + n3ge4 + bnd4 + (eps * self._inner_eps2) ** 2)


def basic_energy(grid: Grid, disp: np.ndarray, v: np.ndarray) -> float:
    """(1/2)|v|_0^2 + (1/2)|grad eta|_0^2 + int_Gamma |d1 eta|."""
    G = _grad_full(grid, disp, with_identity=True)
    tr = wall_traces(disp)
    bnd = 0.0
    for side in ("bottom", "top"):
        d1 = diff1_periodic(getattr(tr, side), grid.h1)
        d1[0] += 1.0
        bnd += float(np.sqrt(d1[0] ** 2 + d1[1] ** 2).sum() * grid.h1)
    return float(0.5 * integrate(grid, v * v) + 0.5 * integrate(grid, G * G) + bnd)


def dissipation_rate(grid: Grid, disp: np.ndarray, v: np.ndarray, eps: float) -> float:
    """2 eps int_Omega J |S_eta(v)|^2 (the basic energy law's dissipation)."""
    if eps == 0.0:
        return 0.0
    from .kinematics import build_kinematics, strain_eta

    bundle = build_kinematics(grid, disp)
    S = strain_eta(grid, v, bundle)
    return float(2.0 * eps * integrate(grid, bundle.J * np.einsum("ij...,ij...->...", S, S)))
