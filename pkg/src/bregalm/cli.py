"""Command-line front end.

Subcommands: ``generate`` (write a Lasso instance), ``solve`` (single runs,
restarts or theory-mode parameters over a seed list), ``sweep-q`` (several
``q`` values at a matched oracle budget) and ``verify-sp`` (Monte-Carlo
check of the ``S_p`` constants).

Solver options come from, in increasing precedence: built-in defaults, a
flat ``key=value`` config file (``--config``), then command-line flags.
Outputs go to ``--out``, else ``$BREGALM_OUTPUT_DIR``, else ``./bregalm_out``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .alm import (KnownConstants, RunReport, SolverConfig, derive_theory_params, solve,
                  solve_with_restarts)
from .bregman import BregmanGeometry
from .estimator import DirectionDistribution, estimate_sp, smoothing_moments
from .exceptions import BregalmError, ConfigError, EstimationError, NumericalError, StageError
from .problems import LassoInstance, gen_constrained_lasso, load_instance, read_kv, save_instance

ENV_OUTPUT_DIR = "BREGALM_OUTPUT_DIR"
TRACE_COLUMNS = ("k", "f", "viol_p", "viol_2", "stat_q", "oracle_calls", "wall_ms")
DEFAULT_Q_GRID = (1.2, 1.4, 1.6, 1.8, 2.0)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# name -> (type, default).  ``None`` defaults are filled from the instance.
SOLVER_OPTIONS = {
    "q": (float, 2.0),
    "eta": (float, 1e-3),
    "mu": (float, 1.0),
    "mu_schedule": (str, "geometric"),
    "mu_cap": (float, 1000.0),
    "mu_growth": (float, 1.5),
    "alpha": (float, 0.5),
    "nu": (float, None),  # 1e-4 * sqrt(d)
    "n": (int, None),  # ceil(0.12 d)
    "n0": (int, None),
    "K": (int, 1000),
    "rho": (float, 1.0),
    "dist": (str, "rademacher"),
    "row_batch": (int, None),  # m // 2
    "output_rule": (str, "uniform"),
    "per_sample_directions": (bool, False),
    "unscaled": (bool, False),
    "seeds": (int, 10),
    "seed_start": (int, 0),
    "epsilon": (float, None),
}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(name, raw):
    typ = SOLVER_OPTIONS[name][0]
    if isinstance(raw, typ) and not (typ is int and isinstance(raw, bool)):
        return raw
    if typ is bool:
        return _parse_bool(raw)
    if typ is int:
        value = float(raw)
        if value != int(value):
            raise ValueError(f"{name} must be an integer")
        return int(value)
    return typ(raw)


def load_config_file(path) -> Dict[str, object]:
    """Read a flat ``key=value`` config; keys may use dashes or underscores."""
    raw = read_kv(path)
    out, bad = {}, []
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in SOLVER_OPTIONS:
            bad.append(key)
            continue
        try:
            out[name] = _coerce(name, value)
        except ValueError:
            bad.append(key)
    if bad:
        raise ConfigError(f"bad config file entries: {', '.join(bad)}", bad)
    return out


def effective_options(args, inst: Optional[LassoInstance]) -> Dict[str, object]:
    """Merge defaults, config file and flags (later wins), then fill instance defaults."""
    opts = {name: default for name, (_, default) in SOLVER_OPTIONS.items()}
    if getattr(args, "config", None):
        opts.update(load_config_file(args.config))
    for name in SOLVER_OPTIONS:
        value = getattr(args, name, None)
        if value is not None:
            opts[name] = value
    if inst is not None:
        d, m = inst.d, inst.m
        if opts["nu"] is None:
            opts["nu"] = 1e-4 * math.sqrt(d)
        if opts["n"] is None:
            opts["n"] = max(1, int(math.ceil(0.12 * d)))
        if opts["row_batch"] is None:
            opts["row_batch"] = max(1, m // 2)
    return opts


def build_config(opts, seed: int) -> SolverConfig:
    bad = []
    if opts["q"] is None or not (1.0 < opts["q"] <= 2.0):
        bad.append("q")
    if opts["row_batch"] is not None and opts["row_batch"] < 1:
        bad.append("row_batch")
    if bad:
        raise ConfigError(f"invalid solver configuration: {', '.join(bad)}", bad)
    cfg = SolverConfig(
        eta=opts["eta"], mu=opts["mu"], alpha=opts["alpha"], nu=opts["nu"], n=opts["n"],
        K=opts["K"], n0=opts["n0"], rho=opts["rho"],
        geom=BregmanGeometry(opts["q"], scaled=not opts["unscaled"]), dist=opts["dist"],
        seed=seed, output_rule=opts["output_rule"], mu_schedule=opts["mu_schedule"],
        mu_cap=opts["mu_cap"], mu_growth=opts["mu_growth"],
        per_sample_directions=opts["per_sample_directions"])
    return cfg.validate()


def seed_list(opts) -> List[int]:
    if opts["seeds"] is None or opts["seeds"] < 1:
        raise ConfigError("seed list is empty", ["seeds"])
    return list(range(opts["seed_start"], opts["seed_start"] + opts["seeds"]))


def output_dir(args) -> Path:
    out = getattr(args, "out", None) or os.environ.get(ENV_OUTPUT_DIR) or "bregalm_out"
    return Path(out)


def content_hash(payload: dict, files: Sequence[Path] = ()) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(payload, sort_keys=True, default=str).encode("utf-8"))
    for path in sorted(files):
        h.update(path.name.encode("utf-8"))
        h.update(path.read_bytes())
    return h.hexdigest()


def write_trace(report: RunReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in report.trace:
            w.writerow([_fmt(getattr(row, c)) for c in TRACE_COLUMNS])


def write_manifest(out: Path, command: str, opts: dict, seeds, instance_path,
                   extra: Optional[dict] = None) -> str:
    files = [p for p in Path(instance_path).iterdir() if p.is_file()] if instance_path else []
    payload = {"command": command, "config": opts, "seeds": list(seeds),
               "instance": str(instance_path) if instance_path else None}
    if extra:
        payload.update(extra)
    digest = content_hash(payload, files)
    manifest = dict(payload, output_dir=str(out), hash=digest)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                  default=str) + "\n", encoding="utf-8")
    return digest


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def _theory_config(opts, inst, constants_path, seed) -> SolverConfig:
    if opts["epsilon"] is None:
        raise ConfigError("--theory needs --epsilon", ["epsilon"])
    if not constants_path:
        raise ConfigError("--theory needs --constants", ["constants"])
    raw = read_kv(constants_path)
    known = {f for f in KnownConstants.__dataclass_fields__}
    bad = [k for k in raw if k not in known]
    if bad:
        raise ConfigError(f"unknown constants: {', '.join(bad)}", bad)
    try:
        kc = KnownConstants(**{k: float(v) for k, v in raw.items()})
    except ValueError as exc:
        raise ConfigError(f"constants must be numbers: {exc}", list(raw)) from exc
    problem = inst.to_problem(opts["row_batch"])
    geom = BregmanGeometry(opts["q"], scaled=not opts["unscaled"])
    cfg = derive_theory_params(kc, opts["epsilon"], geom,
                               DirectionDistribution(opts["dist"], inst.d), inst.d, 1,
                               rho=opts["rho"], problem=problem, seed=seed)
    return cfg


def run_solve(inst: LassoInstance, opts: dict, seeds, restarts=False, theory=False,
              constants=None, k_override=None) -> List[RunReport]:
    problem = inst.to_problem(opts["row_batch"])
    reports = []
    for seed in seeds:
        if theory:
            cfg = _theory_config(opts, inst, constants, seed)
            if k_override is not None:
                cfg = cfg.replace(K=k_override)
        else:
            cfg = build_config(opts, seed)
        if restarts:
            if opts["epsilon"] is None:
                raise ConfigError("--restarts needs --epsilon", ["epsilon"])
            reports.append(solve_with_restarts(problem, cfg, opts["epsilon"]))
        else:
            reports.append(solve(problem, cfg))
    return reports


def _summary_rows(inst, reports, seeds, label=None):
    rows = []
    for seed, rep in zip(seeds, reports):
        row = {"seed": seed, "R": rep.R, "objective": inst.objective(rep.returned_x),
               "stationarity": rep.final_kkt.stationarity,
               "feasibility": rep.final_kkt.feasibility,
               "final_f": rep.trace[-1].f, "final_viol_2": rep.trace[-1].viol_2,
               "oracle_calls": rep.oracle_count}
        if label is not None:
            row = {"q": label, **row}
        rows.append(row)
    return rows


def _write_rows(path: Path, rows: List[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _print_stats(rows, label=""):
    for key in ("stationarity", "feasibility", "objective"):
        m, se = _mean_se([r[key] for r in rows])
        print(f"{label}{key}: {m:.6g} +/- {se:.2g}")


def cmd_generate(args) -> int:
    inst = gen_constrained_lasso(args.m, args.d, sparsity=args.sparsity,
                                 noise_std=args.noise_std, lambda_h=args.lambda_h,
                                 rng=args.seed)
    out = Path(args.out) if args.out else output_dir(args) / f"lasso_m{args.m}_d{args.d}_s{args.seed}"
    save_instance(inst, out)
    print(f"instance written to {out}")
    print(f"m={inst.m} d={inst.d} nnz={int(np.count_nonzero(inst.x_star))} "
          f"lambda_h={inst.lambda_h} c_target={inst.c_target:.17g} "
          f"objective(x_star)={inst.objective(inst.x_star):.6g}")
    return EXIT_OK


def _load(args) -> LassoInstance:
    if not args.instance:
        raise ConfigError("--instance is required", ["instance"])
    return load_instance(args.instance)


def _apply_manifest(args) -> None:
    data = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    for key, value in data.get("config", {}).items():
        if key in SOLVER_OPTIONS and getattr(args, key, None) is None:
            setattr(args, key, value)
    if not args.instance and data.get("instance"):
        args.instance = data["instance"]


def cmd_solve(args) -> int:
    if args.manifest:
        _apply_manifest(args)
    inst = _load(args)
    opts = effective_options(args, inst)
    seeds = seed_list(opts)
    reports = run_solve(inst, opts, seeds, restarts=args.restarts, theory=args.theory,
                        constants=args.constants, k_override=args.K if args.theory else None)
    out = output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    for seed, rep in zip(seeds, reports):
        write_trace(rep, out / f"trace_seed{seed}.csv")
    rows = _summary_rows(inst, reports, seeds)
    _write_rows(out / "summary.csv", rows)
    digest = write_manifest(out, "solve", opts, seeds, args.instance,
                            {"restarts": args.restarts, "theory": args.theory})
    _print_stats(rows)
    print(f"outputs in {out} (manifest {digest[:12]})")
    return EXIT_OK


def budget_iterations(budget: int, n: int, n0: int) -> int:
    """Iterations whose oracle count ``2 n0 + 4 n (K - 1)`` is closest to ``budget``."""
    if budget < 2 * n0:
        raise ConfigError("budget is smaller than the first batch", ["budget"])
    return int(round((budget - 2 * n0) / (4 * n))) + 1


def parse_q_grid(text) -> List[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad q grid {text!r}", ["qs"]) from exc


def parse_eta_map(text, qs) -> Dict[float, float]:
    """``"0.01"`` for every q, or ``"1.2:0.01,2.0:3e-4"`` per q."""
    if text is None:
        return {}
    if ":" not in text:
        return {q: float(text) for q in qs}
    out = {}
    for part in text.split(","):
        q, eta = part.split(":")
        out[float(q)] = float(eta)
    return out


def run_sweep(inst: LassoInstance, opts: dict, qs, budget: int, seeds,
              eta_by_q: Optional[Dict[float, float]] = None):
    """Solve for each ``q`` at the same oracle budget; returns ``{q: [reports]}``."""
    n0 = opts["n0"] or opts["n"]
    K = budget_iterations(budget, opts["n"], n0)
    results = {}
    for q in qs:
        local = dict(opts, q=q, K=K)
        if eta_by_q and q in eta_by_q:
            local["eta"] = eta_by_q[q]
        results[q] = run_solve(inst, local, seeds)
    return results


def write_wide(path: Path, results, seeds) -> None:
    """One row per iteration; per q the seed-mean objective, violation and oracle calls."""
    qs = list(results)
    header = ["k"]
    for q in qs:
        header += [f"f_q{q:g}", f"viol_2_q{q:g}", f"oracle_calls_q{q:g}"]
    length = min(len(r.trace) for reps in results.values() for r in reps)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(length):
            row = [i]
            for q in qs:
                reps = results[q]
                row += [_fmt(np.mean([r.trace[i].f for r in reps])),
                        _fmt(np.mean([r.trace[i].viol_2 for r in reps])),
                        reps[0].trace[i].oracle_calls]
            w.writerow(row)


def cmd_sweep_q(args) -> int:
    inst = _load(args)
    opts = effective_options(args, inst)
    seeds = seed_list(opts)
    qs = parse_q_grid(args.qs)
    for q in qs:
        if not (1.0 < q <= 2.0):
            raise ConfigError(f"q must lie in (1, 2], got {q}", ["qs"])
    budget = args.budget if args.budget is not None else \
        2 * (opts["n0"] or opts["n"]) + 4 * opts["n"] * (opts["K"] - 1)
    results = run_sweep(inst, opts, qs, budget, seeds, parse_eta_map(args.eta_by_q, qs))
    out = output_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for q, reps in results.items():
        for seed, rep in zip(seeds, reps):
            write_trace(rep, out / f"trace_q{q:g}_seed{seed}.csv")
        rows += _summary_rows(inst, reps, seeds, label=q)
        _print_stats(_summary_rows(inst, reps, seeds), label=f"q={q:g} ")
    _write_rows(out / "summary.csv", rows)
    write_wide(out / "sweep.csv", results, seeds)
    digest = write_manifest(out, "sweep-q", opts, seeds, args.instance,
                            {"qs": qs, "budget": budget, "eta_by_q": args.eta_by_q})
    print(f"outputs in {out} (manifest {digest[:12]})")
    return EXIT_OK


def predicted_sp(kind: str, d: int, p: float) -> float:
    return smoothing_moments(DirectionDistribution(kind, d), p).sp


def cmd_verify_sp(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    print("dist,d,p,estimate,predicted,rel_err")
    for kind in args.dists.split(","):
        for d in (int(t) for t in args.ds.split(",")):
            for p in (float(t) for t in args.ps.split(",")):
                if kind != "rademacher" and p != 2.0:
                    continue  # closed form known only for p = 2
                dist = DirectionDistribution(kind, d)
                est = estimate_sp(dist, p, args.trials, rng)
                pred = predicted_sp(kind, d, p)
                rel = abs(est - pred) / pred
                worst = max(worst, rel)
                print(f"{kind},{d},{p:g},{est:.6g},{pred:.6g},{rel:.4f}")
    print(f"max relative error {worst:.4f}")
    return EXIT_OK


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instance", help="instance directory written by 'generate'")
    p.add_argument("--config", help="flat key=value file of solver options")
    p.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT_DIR} or ./bregalm_out)")
    p.add_argument("--q", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--mu-schedule", dest="mu_schedule", choices=("fixed", "geometric"))
    p.add_argument("--mu-cap", dest="mu_cap", type=float)
    p.add_argument("--mu-growth", dest="mu_growth", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--dist", choices=("rademacher", "gaussian", "sphere"))
    p.add_argument("--row-batch", dest="row_batch", type=int)
    p.add_argument("--output-rule", dest="output_rule", choices=("uniform", "best_kkt"))
    p.add_argument("--per-sample-directions", dest="per_sample_directions",
                   action="store_const", const=True)
    p.add_argument("--unscaled", action="store_const", const=True,
                   help="use the raw 0.5||x||_q^2 generator")
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--seed-start", dest="seed_start", type=int)
    p.add_argument("--epsilon", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bregalm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a constrained Lasso instance")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--lambda", dest="lambda_h", type=float, default=0.1)
    g.add_argument("--sparsity", type=float, default=0.05)
    g.add_argument("--noise-std", dest="noise_std", type=float, default=0.01)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="instance directory")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run the solver over a seed list")
    _add_solver_flags(s)
    s.add_argument("--restarts", action="store_true")
    s.add_argument("--theory", action="store_true",
                   help="derive parameters from --constants and --epsilon")
    s.add_argument("--constants", help="key=value file of problem constants")
    s.add_argument("--manifest", help="rerun with the configuration echoed in a manifest")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep-q", help="compare q values at a matched oracle budget")
    _add_solver_flags(w)
    w.add_argument("--qs", default=",".join(str(q) for q in DEFAULT_Q_GRID))
    w.add_argument("--budget", type=int, help="oracle calls per run (default from --K)")
    w.add_argument("--eta-by-q", dest="eta_by_q",
                   help="step per q, e.g. '1.2:0.01,2.0:3e-4'")
    w.set_defaults(func=cmd_sweep_q)

    v = sub.add_parser("verify-sp", help="Monte-Carlo check of S_p constants")
    v.add_argument("--dists", default="rademacher,gaussian,sphere")
    v.add_argument("--ds", default="4,16,64")
    v.add_argument("--ps", default="2,4,8")
    v.add_argument("--trials", type=int, default=100_000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_sp)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, EstimationError, StageError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BregalmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
