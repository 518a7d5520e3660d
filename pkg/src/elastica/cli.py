"""Command-line entry point.

Subcommands: simulate, sweep, mms, audit, smooth-init, check-compat.
Exit codes: 0 success, 1 numerical failure, 2 configuration error.
Worker count for sweeps comes from ELASTICA_WORKERS.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, ElasticaError


def _load_config(path: str):
    from .harness import parse_config

    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="elastica")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sweep", "mms", "smooth-init"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
    p_audit = sub.add_parser("audit")
    p_audit.add_argument("--seed", type=int, default=0)
    p_audit.add_argument("--n1", type=int, default=64)
    p_audit.add_argument("--n2", type=int, default=33)
    p_audit.add_argument("--out", default="out/audit")
    p_cc = sub.add_parser("check-compat")
    p_cc.add_argument("--eta", required=True)
    p_cc.add_argument("--v", required=True)
    args = parser.parse_args(argv)

    try:
        if args.command == "simulate":
            cfg = _load_config(args.config)
            if cfg.kind != "simulate":
                raise ConfigError(f"config kind is {cfg.kind!r}, expected 'simulate'")
            from .harness import run_simulate

            res = run_simulate(cfg)
            print(json.dumps({
                "t_end": res.t_end, "steps": res.steps,
                "max_energy_drift_rel": res.max_energy_drift_rel,
                "max_div": res.max_div, "log": res.log_path,
            }, indent=1))
        elif args.command == "sweep":
            cfg = _load_config(args.config)
            if cfg.kind != "sweep":
                raise ConfigError(f"config kind is {cfg.kind!r}, expected 'sweep'")
            from .harness import run_sweep

            report = run_sweep(cfg)
            print(json.dumps(report, indent=1))
        elif args.command == "mms":
            cfg = _load_config(args.config)
            from .harness import run_mms

            report = run_mms(cfg)
            print(json.dumps(report, indent=1))
            if not report["ok"]:
                return 1
        elif args.command == "audit":
            from .grid import make_grid
            from .harness import run_audit

            grid = make_grid(args.n1, args.n2)
            report = run_audit(grid, args.seed, outdir=Path(args.out))
            print(json.dumps(report, indent=1))
            exact = max(report["cofactor_max"], report["acol2_max"],
                        report["antisym_max"], report["piola_max_interior"])
            if exact > 1e-10:
                return 1
        elif args.command == "smooth-init":
            cfg = _load_config(args.config)
            from .harness import run_smooth_init

            manifest = run_smooth_init(cfg)
            print(json.dumps(manifest, indent=1))
        elif args.command == "check-compat":
            from .grid import load_field
            from .initial_data import check_compatibility

            grid, disp = load_field(args.eta)
            _, v = load_field(args.v)
            rep = check_compatibility(grid, disp, v)
            print(json.dumps(rep.as_dict(), indent=1))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ElasticaError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
