"""Experiment orchestration: single runs, viscosity sweeps, MMS and identity
audits, initial-data smoothing, and their on-disk artifacts.

All artifacts self-describe the configuration through a sha256 hash; CSV
files carry it as a leading comment line, JSON files as a field.  Runs are
deterministic for a fixed config and seed (single-threaded per run;
parallelism only across sweep members).
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import SimConfig, Stepper, auto_dt, initial_state
from .energy import (
    HistoryEntry,
    HistoryRing,
    RunningIntegrals,
    basic_energy,
    dissipation_rate,
    energy_inviscid,
    energy_viscous,
)
from .errors import ConfigError
from .forcing import ForcingData
from .grid import Grid, diff, integrate, make_grid, save_field, load_field
from .initial_data import smooth_eta0, smooth_initial_data
from .kinematics import build_kinematics

RUN_LOG_COLUMNS = [
    "t", "dt", "E_basic", "dissipation_integral", "J_drift_max",
    "div_residual_max", "ghost_residual_max", "q_min", "q_max",
]

_SCHEMA_VERSION = 1

_ALLOWED_KEYS = {
    "": {"schema", "kind", "grid", "sim", "initial_data", "epsilon_list",
         "output_dir", "seed", "energy_every", "snapshot_every", "track_energy",
         "inviscid_reference"},
    "grid": {"n1", "n2"},
    "sim": {"epsilon", "dt", "t_end", "cfl_elastic", "cfl_visc", "cfl_st",
            "reproject_every", "solver_tol", "forcing"},
    "initial_data": {"kind", "amplitude", "mode", "smooth_kappa", "eta", "v", "epsilon"},
}


def _check_keys(obj: dict, section: str) -> None:
    allowed = _ALLOWED_KEYS[section]
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r} in section {section or 'root'!r}")


def config_hash(cfg: dict) -> str:
    """Hash of the numerical configuration (the output location is excluded
    so relocated reruns stay bit-identical)."""
    stripped = {k: v for k, v in cfg.items() if k != "output_dir"}
    return hashlib.sha256(json.dumps(stripped, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    kind: str
    grid: Grid
    sim: SimConfig
    initial_data: dict
    output_dir: Path
    epsilon_list: list = field(default_factory=list)
    seed: int = 0
    energy_every: int = 0
    snapshot_every: int = 0
    track_energy: bool = False
    inviscid_reference: bool = False
    raw: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, "")
    if raw.get("schema") != _SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {_SCHEMA_VERSION}")
    kind = raw.get("kind")
    if kind not in {"simulate", "sweep", "mms", "audit", "smooth-init"}:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    gspec = raw.get("grid", {"n1": 64, "n2": 33})
    _check_keys(gspec, "grid")
    grid = make_grid(int(gspec["n1"]), int(gspec["n2"]))
    sspec = dict(raw.get("sim", {}))
    _check_keys(sspec, "sim")
    forcing_on = bool(sspec.pop("forcing", False))
    sim = SimConfig(forcing_on=forcing_on, **{k: v for k, v in sspec.items()})
    sim.validate()
    idspec = dict(raw.get("initial_data", {"kind": "equilibrium"}))
    _check_keys(idspec, "initial_data")
    eps_list = list(raw.get("epsilon_list", []))
    if kind == "sweep":
        if len(eps_list) < 1:
            raise ConfigError("sweep requires epsilon_list")
        if any(e <= 0 for e in eps_list):
            raise ConfigError("sweep epsilons must be positive")
        if sorted(eps_list, reverse=True) != eps_list:
            raise ConfigError("epsilon_list must be strictly decreasing")
        if len(set(eps_list)) != len(eps_list):
            raise ConfigError("epsilon_list must be strictly decreasing")
    out = Path(raw.get("output_dir", "out"))
    return ExperimentConfig(
        kind=kind, grid=grid, sim=sim, initial_data=idspec, output_dir=out,
        epsilon_list=eps_list, seed=int(raw.get("seed", 0)),
        energy_every=int(raw.get("energy_every", 0)),
        snapshot_every=int(raw.get("snapshot_every", 0)),
        track_energy=bool(raw.get("track_energy", False)),
        inviscid_reference=bool(raw.get("inviscid_reference", False)),
        raw=raw,
    )


def build_initial_data(grid: Grid, spec: dict, sim: SimConfig):
    """Initial displacement/velocity (and forcing when requested)."""
    kind = spec.get("kind", "equilibrium")
    zero = np.zeros((2, grid.n2, grid.n1))
    if kind == "equilibrium":
        return zero, zero.copy(), None
    if kind == "perturbed":
        amp = float(spec.get("amplitude", 0.05))
        mode = int(spec.get("mode", 1))
        kappa = float(spec.get("smooth_kappa", 0.25))
        X1, _ = grid.mesh()
        raw = np.stack([np.zeros_like(X1), amp * np.sin(mode * X1)])
        disp = smooth_eta0(grid, raw, kappa)
        forcing = None
        if sim.forcing_on:
            eps_id = float(spec.get("epsilon", max(sim.epsilon, 1e-6)))
            result = smooth_initial_data(grid, disp, zero, eps_id)
            return result.bundle.eta0, result.bundle.v0, result.forcing
        return disp, zero.copy(), forcing
    if kind == "files":
        g_eta, disp = load_field(spec["eta"])
        g_v, v = load_field(spec["v"])
        if (g_eta.n1, g_eta.n2) != (grid.n1, grid.n2) or (g_v.n1, g_v.n2) != (grid.n1, grid.n2):
            raise ConfigError("snapshot grids do not match the configured grid")
        return disp, v, None
    raise ConfigError(f"unknown initial_data kind {kind!r}")


@dataclass
class RunResult:
    t_end: float
    steps: int
    E0: float
    max_energy_drift_rel: float
    max_J_drift: float
    max_div: float
    max_ghost: float
    max_E_viscous: float
    eta_snaps: list          # (t, disp) pairs for sweep diffs
    log_path: str


def run_simulate(cfg: ExperimentConfig, keep_snap_every: int = 0,
                 forcing: ForcingData | None = None,
                 disp0: np.ndarray | None = None,
                 v0: np.ndarray | None = None,
                 epsilon: float | None = None,
                 subdir: str | None = None) -> RunResult:
    grid, sim = cfg.grid, cfg.sim
    if epsilon is not None:
        from dataclasses import replace as dc_replace

        sim = dc_replace(sim, epsilon=epsilon)
    outdir = cfg.output_dir if subdir is None else cfg.output_dir / subdir
    outdir.mkdir(parents=True, exist_ok=True)
    if disp0 is None:
        disp0, v0, forcing_built = build_initial_data(grid, cfg.initial_data, sim)
        if forcing is None:
            forcing = forcing_built
    state = initial_state(grid, disp0, v0)
    stepper = Stepper(grid, sim, forcing)
    dt = sim.dt if sim.dt is not None else auto_dt(grid, state, sim)
    nsteps = max(1, int(round(sim.t_end / dt)))

    ring = HistoryRing()
    running = RunningIntegrals(grid, sim.epsilon)
    log_path = outdir / "run.csv"
    E0 = basic_energy(grid, state.disp, state.v)
    diss = 0.0
    prev_rate = dissipation_rate(grid, state.disp, state.v, sim.epsilon)
    max_drift = 0.0
    max_J = 0.0
    max_div = 0.0
    max_ghost = 0.0
    max_Eeps = 0.0
    max_v_inf = 0.0
    eta_snaps = [(0.0, disp0.copy())]
    with open(log_path, "w") as log:
        log.write(f"# config_hash={cfg.hash}\n")
        log.write(",".join(RUN_LOG_COLUMNS) + "\n")
        for k in range(1, nsteps + 1):
            state, diag = stepper.step(state, dt)
            bundle = build_kinematics(grid, state.disp)
            rate = dissipation_rate(grid, state.disp, state.v, sim.epsilon)
            diss += 0.5 * dt * (prev_rate + rate)
            prev_rate = rate
            E = basic_energy(grid, state.disp, state.v)
            drift = abs(E + diss - E0) / abs(E0)
            J_drift = float(np.abs((bundle.J - state.J0) / state.J0).max())
            max_drift = max(max_drift, drift)
            max_J = max(max_J, J_drift)
            max_v_inf = max(max_v_inf, float(np.abs(state.v).max()))
            max_div = max(max_div, diag.div_residual_max)
            max_ghost = max(max_ghost, diag.ghost_residual_max)
            log.write(
                f"{state.t!r},{dt!r},{E!r},{diss!r},{J_drift!r},"
                f"{diag.div_residual_max!r},{diag.ghost_residual_max!r},"
                f"{diag.q_min!r},{diag.q_max!r}\n"
            )
            ring.push(HistoryEntry(t=state.t, disp=state.disp, v=state.v,
                                   rhs=stepper.last_rhs))
            if (cfg.track_energy or cfg.energy_every) and len(ring.entries) >= 4:
                running.accumulate(ring, dt)
                rep = energy_viscous(grid, ring, sim.epsilon, running.values)
                max_Eeps = max(max_Eeps, rep.E_total)
                if cfg.energy_every and k % cfg.energy_every == 0:
                    rep_inv = energy_inviscid(grid, ring)
                    payload = {
                        "config_hash": cfg.hash,
                        "inviscid": rep_inv.as_dict(),
                        "viscous": rep.as_dict(),
                    }
                    (outdir / f"energy_{k:06d}.json").write_text(json.dumps(payload, indent=1))
            if keep_snap_every and k % keep_snap_every == 0:
                eta_snaps.append((state.t, state.disp.copy()))
            if cfg.snapshot_every and k % cfg.snapshot_every == 0:
                save_field(outdir / f"eta_{k:06d}.csv", grid, state.disp)
                save_field(outdir / f"v_{k:06d}.csv", grid, state.v)
                save_field(outdir / f"q_{k:06d}.csv", grid, state.q)
    if keep_snap_every and (nsteps % keep_snap_every != 0):
        eta_snaps.append((state.t, state.disp.copy()))
    summary = {
        "config_hash": cfg.hash,
        "steps": nsteps,
        "dt": dt,
        "t_end": state.t,
        "E_basic_initial": E0,
        "max_energy_drift_rel": max_drift,
        "max_J_drift": max_J,
        "max_div": max_div,
        "max_ghost_residual": max_ghost,
        "max_E_viscous": max_Eeps,
        "max_v_inf": max_v_inf,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=1))
    return RunResult(
        t_end=state.t, steps=nsteps, E0=E0, max_energy_drift_rel=max_drift,
        max_J_drift=max_J, max_div=max_div, max_ghost=max_ghost,
        max_E_viscous=max_Eeps, eta_snaps=eta_snaps, log_path=str(log_path),
    )


def _sweep_member(args):
    cfg_raw, eps, disp0, v0, dt, keep_every = args
    cfg = parse_config(cfg_raw)
    from dataclasses import replace as dc_replace

    cfg.sim = dc_replace(cfg.sim, epsilon=eps, dt=dt)
    return eps, run_simulate(
        cfg, keep_snap_every=keep_every, disp0=disp0, v0=v0,
        subdir=f"eps_{eps:.0e}",
    )


def run_sweep(cfg: ExperimentConfig) -> dict:
    """Run all epsilons on identical data in parallel worker processes and
    compare trajectories against the smallest-epsilon member."""
    grid, sim = cfg.grid, cfg.sim
    disp0, v0, _ = build_initial_data(grid, cfg.initial_data, sim)
    from dataclasses import replace as dc_replace

    dts = []
    for eps in cfg.epsilon_list:
        member_sim = dc_replace(sim, epsilon=eps)
        dts.append(auto_dt(grid, initial_state(grid, disp0, v0), member_sim))
    dt = min(dts) if sim.dt is None else sim.dt
    nsteps = max(1, int(round(sim.t_end / dt)))
    keep_every = max(1, nsteps // 32)

    workers = int(os.environ.get("ELASTICA_WORKERS", os.cpu_count() or 1))
    member_raw = dict(cfg.raw)
    member_raw["track_energy"] = True
    eps_members = list(cfg.epsilon_list)
    if cfg.inviscid_reference:
        eps_members.append(0.0)
    jobs = [(member_raw, eps, disp0, v0, dt, keep_every) for eps in eps_members]
    results = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for eps, res in pool.map(_sweep_member, jobs):
                results[eps] = res
    else:
        for job in jobs:
            eps, res = _sweep_member(job)
            results[eps] = res

    eps_ref = 0.0 if cfg.inviscid_reference else min(cfg.epsilon_list)
    ref = results[eps_ref]
    report = {"config_hash": cfg.hash, "epsilon_ref": eps_ref, "members": {}}
    diffs = []
    for eps in eps_members:
        res = results[eps]
        sup_diff = 0.0
        final_diff = 0.0
        for (t_a, da), (t_b, db) in zip(res.eta_snaps, ref.eta_snaps):
            d = float(np.sqrt(integrate(grid, (da - db) ** 2)))
            sup_diff = max(sup_diff, d)
            final_diff = d
        report["members"][f"{eps:.6e}"] = {
            "max_E_viscous": res.max_E_viscous,
            "eta_diff_sup": sup_diff,
            "eta_diff_final": final_diff,
            "steps": res.steps,
        }
        if eps != eps_ref:
            diffs.append((eps, sup_diff))
    e_values = [report["members"][f"{e:.6e}"]["max_E_viscous"] for e in cfg.epsilon_list]
    report["spread_ratio"] = max(e_values) / min(e_values) if min(e_values) > 0 else 1.0
    report["diffs_decreasing"] = all(
        diffs[i][1] > diffs[i + 1][1] for i in range(len(diffs) - 1)
    ) if len(diffs) > 1 else True
    if len(diffs) >= 2:
        xs = np.log([d[0] for d in diffs])
        ys = np.log([max(d[1], 1e-300) for d in diffs])
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = float("nan")
    report["inviscid_slope"] = slope
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "sweep.json").write_text(json.dumps(report, indent=1))
    with open(cfg.output_dir / "sweep.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.hash}\n")
        fh.write("epsilon,max_E_viscous,eta_diff_sup,eta_diff_final\n")
        for eps in cfg.epsilon_list:
            m = report["members"][f"{eps:.6e}"]
            fh.write(f"{eps!r},{m['max_E_viscous']!r},{m['eta_diff_sup']!r},{m['eta_diff_final']!r}\n")
    return report


# ---------------------------------------------------------------------------
# MMS
# ---------------------------------------------------------------------------

def _mms_problems():
    import sympy as sy

    x1, x2 = sy.symbols("x1 x2")
    qs = x2 * (1 - x2) * sy.cos(x1)
    problems = {}
    # constant coefficients (identity map)
    E = [[sy.Integer(1), sy.Integer(0)], [sy.Integer(0), sy.Integer(1)]]
    flux1 = E[0][0] * sy.diff(qs, x1) + E[0][1] * sy.diff(qs, x2)
    flux2 = E[1][0] * sy.diff(qs, x1) + E[1][1] * sy.diff(qs, x2)
    rhs = -(sy.diff(flux1, x1) + sy.diff(flux2, x2))
    problems["constant"] = {
        "disp": lambda X1, X2: np.zeros((2,) + X1.shape),
        "qstar": sy.lambdify((x1, x2), qs, "numpy"),
        "rhs": sy.lambdify((x1, x2), rhs, "numpy"),
    }
    # variable coefficients (sheared map eta = (x1, x2 + 0.1 sin x1))
    c = sy.cos(x1)
    E11, E12, E22 = sy.Integer(1), -sy.Rational(1, 10) * c, 1 + sy.Rational(1, 100) * c**2
    flux1 = E11 * sy.diff(qs, x1) + E12 * sy.diff(qs, x2)
    flux2 = E12 * sy.diff(qs, x1) + E22 * sy.diff(qs, x2)
    rhs_v = -(sy.diff(flux1, x1) + sy.diff(flux2, x2))
    problems["variable"] = {
        "disp": lambda X1, X2: np.stack([np.zeros_like(X1), 0.1 * np.sin(X1)]),
        "qstar": sy.lambdify((x1, x2), qs, "numpy"),
        "rhs": sy.lambdify((x1, x2), rhs_v, "numpy"),
    }
    return problems


def run_mms(cfg: ExperimentConfig) -> dict:
    """Pressure-solve and derivative-operator convergence orders over
    three nested grids; observed orders must land in [1.8, 2.2]."""
    from .grid import BoundaryField
    from .pressure import EllipticSolver, assemble_operator

    sizes = [(32, 17), (64, 33), (128, 65)]
    rows = []
    report = {"config_hash": cfg.hash, "problems": {}, "ok": True}
    for name, prob in _mms_problems().items():
        errs = []
        for n1, n2 in sizes:
            grid = make_grid(n1, n2)
            X1, X2 = grid.mesh()
            bundle = build_kinematics(grid, prob["disp"](X1, X2))
            op = assemble_operator(grid, bundle.E)
            sol = EllipticSolver(grid, op).solve(
                np.asarray(prob["rhs"](X1, X2), dtype=float),
                BoundaryField(np.zeros(n1), np.zeros(n1)),
                1e-11,
            )
            err = float(np.sqrt(integrate(grid, (sol - prob["qstar"](X1, X2)) ** 2)))
            errs.append(err)
            rows.append((name, n1, n2, err))
        orders = [float(np.log2(errs[i] / errs[i + 1])) for i in range(len(errs) - 1)]
        ok = all(1.8 <= o <= 2.2 for o in orders)
        report["problems"][name] = {"errors": errs, "orders": orders, "ok": ok}
        report["ok"] = report["ok"] and ok
    # derivative operator order on sin(x1)
    errs = []
    for n1, n2 in sizes:
        grid = make_grid(n1, n2)
        X1, X2 = grid.mesh()
        d = diff(grid, np.sin(X1), 1)
        errs.append(float(np.abs(d - np.cos(X1)).max()))
    orders = [float(np.log2(errs[i] / errs[i + 1])) for i in range(len(errs) - 1)]
    ok = all(1.8 <= o <= 2.2 for o in orders)
    report["problems"]["derivative_x1"] = {"errors": errs, "orders": orders, "ok": ok}
    report["ok"] = report["ok"] and ok
    # operator round trip at a fixed grid: no discretization error by construction
    grid = make_grid(64, 33)
    X1, X2 = grid.mesh()
    bundle = build_kinematics(grid, np.stack([np.zeros_like(X1), 0.1 * np.sin(X1)]))
    from .pressure import EllipticSolver as ES, assemble_operator as AO

    op = AO(grid, bundle.E)
    qstar = X2 * (1 - X2) * np.cos(X1) + 0.2 * np.cos(2 * X1) * X2
    rhs_full = (op @ qstar.ravel()).reshape((grid.n2, grid.n1))
    from .grid import BoundaryField as BF

    sol = ES(grid, op).solve(rhs_full, BF(qstar[0].copy(), qstar[-1].copy()), 1e-11)
    report["round_trip_error"] = float(np.abs(sol - qstar).max())
    report["ok"] = report["ok"] and report["round_trip_error"] < 1e-9

    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.output_dir / "mms.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.hash}\n")
        fh.write("problem,n1,n2,l2_error\n")
        for name, n1, n2, err in rows:
            fh.write(f"{name},{n1},{n2},{err!r}\n")
    (cfg.output_dir / "mms.json").write_text(json.dumps(report, indent=1))
    return report


# ---------------------------------------------------------------------------
# identity audit
# ---------------------------------------------------------------------------

def random_smooth_displacement(grid: Grid, rng: np.random.Generator,
                               amplitude: float = 0.08, kmax: int = 3) -> np.ndarray:
    """Seeded band-limited displacement, small enough to keep J > 0."""
    X1, X2 = grid.mesh()
    disp = np.zeros((2, grid.n2, grid.n1))
    for c in range(2):
        for k1 in range(kmax + 1):
            for m in range(kmax + 1):
                a, b = rng.standard_normal(2)
                w = amplitude / ((1 + k1**2 + m**2) ** 1.5)
                disp[c] += w * (a * np.cos(k1 * X1) + b * np.sin(k1 * X1)) * np.cos(m * np.pi * X2)
    return disp


def run_audit(grid: Grid, seed: int, n_maps: int = 20, outdir: Path | None = None) -> dict:
    """Randomized audit of the exact algebraic identities plus the boundary
    structure on compatibility-smoothed data."""
    from .kinematics import antisymmetry_residual, piola_residual
    from .pressure import traction_identity_residual

    rng = np.random.default_rng(seed)
    worst = {
        "cofactor_max": 0.0, "acol2_max": 0.0, "antisym_max": 0.0,
        "piola_max_interior": 0.0, "piola_max_wall": 0.0,
        "traction_resid_smoothed": 0.0, "zcomp_smoothed": 0.0,
    }
    X1, X2 = grid.mesh()
    for _ in range(n_maps):
        disp = random_smooth_displacement(grid, rng)
        bundle = build_kinematics(grid, disp)
        cof = np.einsum("ij...,kj...->ik...", bundle.A, bundle.F)
        cof[0, 0] -= bundle.J
        cof[1, 1] -= bundle.J
        worst["cofactor_max"] = max(worst["cofactor_max"], float(np.abs(cof).max()))
        d1 = diff(grid, disp, 1)
        d1[0] += 1.0
        acol2_direct = np.stack([-d1[1], d1[0]])
        worst["acol2_max"] = max(worst["acol2_max"], float(np.abs(bundle.Acol2 - acol2_direct).max()))
        a_idx = tuple(rng.integers(0, 2, size=2))
        b_idx = tuple(rng.integers(0, 2, size=2))
        anti = antisymmetry_residual(grid, disp, (2, 0), (1, 1))
        anti2 = antisymmetry_residual(grid, disp, a_idx, b_idx)
        worst["antisym_max"] = max(worst["antisym_max"], float(np.abs(anti).max()), float(np.abs(anti2).max()))
        pr = piola_residual(bundle)
        worst["piola_max_interior"] = max(worst["piola_max_interior"], float(np.abs(pr[:, 1:-1, :]).max()))
        worst["piola_max_wall"] = max(worst["piola_max_wall"], float(np.abs(pr[:, [0, -1], :]).max()))
    # boundary structure on one compatibility-smoothed map
    disp = smooth_eta0(grid, random_smooth_displacement(grid, rng, amplitude=0.05), 0.2)
    bundle = build_kinematics(grid, disp)
    tr = traction_identity_residual(grid, bundle, np.zeros((2, grid.n2, grid.n1)))
    worst["traction_resid_smoothed"] = tr.max_abs
    from .initial_data import check_compatibility

    rep = check_compatibility(grid, disp, np.zeros((2, grid.n2, grid.n1)))
    worst["zcomp_smoothed"] = rep.zcomp_residual
    worst["seed"] = seed
    worst["n_maps"] = n_maps
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "audit.json").write_text(json.dumps(worst, indent=1))
    return worst


def run_smooth_init(cfg: ExperimentConfig) -> dict:
    """Read raw (eta0, v0) snapshots (or build the configured perturbation),
    run the smoothing pipeline, persist the bundle plus a JSON manifest."""
    grid = cfg.grid
    spec = cfg.initial_data
    eps = float(spec.get("epsilon", 1e-3))
    if spec.get("kind") == "files":
        _, disp0 = load_field(spec["eta"])
        _, v0 = load_field(spec["v"])
    else:
        disp0, v0, _ = build_initial_data(grid, spec, cfg.sim)
    result = smooth_initial_data(grid, disp0, v0, eps)
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    b = result.bundle
    for name, fieldv in (
        ("eta0", b.eta0), ("v0", b.v0), ("q0", b.q0), ("dtv0", b.dtv0),
        ("dt2v0", b.dt2v0), ("dt3v0", b.dt3v0), ("q1", b.q1), ("q2", b.q2),
        ("r0", b.r0), ("r1", b.r1), ("w1", b.w1),
        ("phi", result.forcing.phi), ("psi0", result.forcing.psi0),
        ("psi1", result.forcing.psi1), ("psi2", result.forcing.psi2),
    ):
        save_field(outdir / f"{name}.csv", grid, fieldv)
    manifest = {
        "config_hash": cfg.hash,
        "kappa": b.kappa,
        "epsilon": b.epsilon,
        "residuals": {
            "raw": result.compat_raw.as_dict(),
            "smoothed": result.compat_smoothed.as_dict(),
        },
        "norms": result.norms,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
