"""Command-line front end: run, sweep, compare and solve-mdp."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .sim.config import ConfigError, ScenarioConfig, coerce, load_config, make_config, parse_mode
from .sim.metrics import aggregate, run_many
from .sim.outputs import write_json, write_rows, write_run

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
TABLE_FIELDS = ("min_safe_distance", "max_gap_reduction", "mean_recovery_error", "mean_aoi",
                "status_packets", "collisions")
_DEFAULTS = ScenarioConfig()


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--out", default=None, help="output directory")
    g = p.add_argument_group("scenario fields")
    for f in fields(ScenarioConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None,
                       metavar=type(getattr(_DEFAULTS, f.name)).__name__.upper(),
                       help=f"default: {getattr(_DEFAULTS, f.name)}")


def _scenario(args) -> ScenarioConfig:
    values = {}
    for f in fields(ScenarioConfig):
        raw = getattr(args, "cfg_" + f.name)
        if raw is None:
            continue
        if f.name == "mode":
            values.update(parse_mode(raw))
        else:
            values[f.name] = coerce(f.name, raw)
    if args.config:
        return load_config(args.config, **values)
    return make_config(**values)


def parse_seeds(text: str, base: int = 0) -> list[int]:
    """``'20'`` -> 20 seeds from ``base``; ``'3-7'`` inclusive range; ``'1,4,9'`` list."""
    text = text.strip()
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        if "-" in text[1:]:
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        n = int(text)
    except ValueError:
        raise ConfigError(f"cannot parse seeds {text!r}") from None
    if n < 1:
        raise ConfigError("need at least one seed")
    return list(range(base, base + n))


def worker_count(jobs: int) -> int:
    cap = os.environ.get("STATUSLINK_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"STATUSLINK_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(n, jobs))


def _format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    def cell(x):
        return "%.4f" % x if isinstance(x, float) else str(x)
    body = [[cell(x) for x in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


def _summary_rows(key_name: str, groups: list[tuple[str, dict]]):
    header = [key_name, "runs"]
    for f in TABLE_FIELDS:
        header += [f + "_mean", f + "_min", f + "_max"]
    rows = []
    for key, agg in groups:
        row = [key, agg["runs"]]
        for f in TABLE_FIELDS:
            a = agg.get(f, {"mean": float("nan"), "min": float("nan"), "max": float("nan")})
            row += [a["mean"], a["min"], a["max"]]
        rows.append(row)
    return header, rows


def _batch(configs: list[ScenarioConfig], keys: list[str], key_name: str, args,
           out_name: str) -> int:
    workers = worker_count(len(configs))
    metrics = run_many(configs, workers=workers)
    groups: dict[str, list] = {}
    for k, m in zip(keys, metrics):
        groups.setdefault(k, []).append(m)
    order = list(dict.fromkeys(keys))
    aggs = [(k, aggregate(groups[k])) for k in order]
    header, rows = _summary_rows(key_name, aggs)
    print(_format_table([key_name, "runs", "min_safe_mean", "min_safe_min", "min_safe_max",
                         "status_pkts_mean"],
                        [[r[0], r[1], r[2], r[3], r[4], r[14]] for r in rows]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / out_name, header, rows)
        configs[0].save(out / "config.txt")
        write_json(out / (Path(out_name).stem + ".json"), {k: a for k, a in aggs})
    return EXIT_OK


def cmd_run(args) -> int:
    from .sim.engine import run
    cfg = _scenario(args)
    res = run(cfg, record=args.out is not None)
    m = res.metrics
    print(_format_table(["label", "seed", "min_safe_distance", "max_gap_reduction",
                         "mean_recovery_error", "mean_aoi", "status_packets", "collisions"],
                        [[m["label"], m["seed"], m["min_safe_distance"], m["max_gap_reduction"],
                          m["mean_recovery_error"], m["mean_aoi"], m["status_packets"],
                          m["collisions"]]]))
    if args.out:
        write_run(res, args.out)
    return EXIT_OK


def _frange(lo: float, hi: float, step: float) -> list[float]:
    if step <= 0:
        raise ConfigError("--step must be > 0")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    if n < 1:
        raise ConfigError("empty sweep range")
    return [lo + i * step for i in range(n)]


def cmd_sweep(args) -> int:
    base = _scenario(args)
    name = args.param
    if name not in {f.name for f in fields(ScenarioConfig)} or name in ("mode", "norm",
                                                                        "profile", "channel"):
        raise ConfigError(f"cannot sweep over '{name}'")
    seeds = parse_seeds(args.seeds, base.seed)
    configs, keys = [], []
    for x in _frange(args.start, args.stop, args.step):
        val = coerce(name, round(x, 12) if isinstance(getattr(base, name), float) else x)
        key = str(val)
        for s in seeds:
            configs.append(make_config(**{**vars(base), name: val, "seed": s}))
            keys.append(key)
    return _batch(configs, keys, name, args, "sweep.csv")


def cmd_compare(args) -> int:
    base = _scenario(args)
    seeds = parse_seeds(args.seeds, base.seed)
    configs, keys = [], []
    for spec in [m for m in args.modes.split(",") if m.strip()]:
        over = parse_mode(spec)
        for s in seeds:
            cfg = make_config(**{**vars(base), **over, "seed": s})
            configs.append(cfg)
            keys.append(cfg.label)
    if not configs:
        raise ConfigError("--modes is empty")
    return _batch(configs, keys, "mode", args, "compare.csv")


def _matrix(text: Optional[str], name: str):
    if text is None:
        return None
    try:
        return np.asarray(json.loads(text), dtype=float)
    except (json.JSONDecodeError, TypeError, ValueError):
        raise ConfigError(f"--{name} must be a JSON array") from None


def cmd_solve_mdp(args) -> int:
    from .smart import (NoConvergence, NotUnichain, DecoupledMdp, error_chain_mdp,
                        bellman_residual, solve_decoupled)
    spec = {}
    if args.mdp:
        try:
            spec = json.loads(Path(args.mdp).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.mdp}: {exc}") from None
    for name in ("cost0", "cost1", "p0", "p1"):
        val = _matrix(getattr(args, name), name)
        if val is not None:
            spec[name] = val
    if args.m is not None:
        spec["m"] = args.m
    try:
        if {"cost0", "cost1", "p0", "p1"} <= set(spec):
            mdp = DecoupledMdp(spec["cost0"], spec["cost1"], spec["p0"], spec["p1"],
                               float(spec.get("m", 0.0)))
        elif spec.keys() - {"m"}:
            raise ConfigError("an explicit MDP needs cost0, cost1, p0 and p1")
        else:
            mdp = error_chain_mdp(args.bins, p_up=args.p_up, p_down=args.p_down,
                                  success=args.success, m=float(spec.get("m", 0.0)))
        sol = solve_decoupled(mdp, tol=args.tol, max_sweeps=args.max_sweeps)
    except (ValueError, NotUnichain) as exc:
        raise ConfigError(str(exc)) from None
    except NoConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    res = float(np.max(np.abs(bellman_residual(mdp, sol.f, sol.J))))
    doc = {"m": mdp.m, "average_cost": sol.J, "policy": [int(x) for x in sol.policy],
           "relative_values": sol.f.tolist(), "sweeps": sol.sweeps, "bellman_residual": res}
    print(f"average cost {sol.J:.10g}  transmit states "
          f"{[i for i, x in enumerate(sol.policy) if x]}  residual {res:.2e}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "mdp_solution.json", doc)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="statuslink",
                                 description="Parallel status update co-simulator for platoons.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    _add_scenario_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one numeric field over seeds")
    _add_scenario_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--step", type=float, required=True)
    p.add_argument("--seeds", default="1", help="count, 'a-b' or comma list (default: 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="side-by-side metrics of several modes")
    _add_scenario_flags(p)
    p.add_argument("--modes", required=True, help="e.g. parallel,status_unaware:40")
    p.add_argument("--seeds", default="1", help="count, 'a-b' or comma list (default: 1)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("solve-mdp", help="average-cost solution of a two-action MDP")
    p.add_argument("--mdp", help="JSON file with cost0, cost1, p0, p1 and optional m")
    for name in ("cost0", "cost1", "p0", "p1"):
        p.add_argument("--" + name, help="JSON array (overrides the file)")
    p.add_argument("--m", type=float, default=None, help="transmission price (default: 0)")
    p.add_argument("--bins", type=int, default=16, help="error-chain size when no MDP is given")
    p.add_argument("--p-up", type=float, default=0.5)
    p.add_argument("--p-down", type=float, default=0.0)
    p.add_argument("--success", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-sweeps", type=int, default=100_000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve_mdp)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
