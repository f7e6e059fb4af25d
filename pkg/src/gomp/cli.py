"""Command-line interface: ``gomp simulate | select | cv | bench``.

Every JSON output embeds the tool version, the run configuration, the seed
and a fingerprint of the configuration. Wall-clock timings and the thread
count go to a separate ``timing.json`` so that the main outputs are
byte-identical across repeated runs and thread counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datamodel import BINARY, CONTINUOUS, SURVIVAL, Dataset, Schema, load_csv, load_schema, standardize
from .errors import GompError, IngestionError, NumericalError, UsageError
from .evaluation import (
    GOMP,
    LASSO,
    CvConfig,
    default_rule_grid,
    refit_selection,
    run_cv,
    selection_quality,
    sign_permutation_test,
    write_prediction_matrix,
)
from .lasso import lasso_path, match_support_size
from .models import DEFAULT_FAMILY, check_compatible
from .pursuit import fingerprint, gomp_path, omp_classic
from .simgen import LATENT_THRESHOLD, LOGISTIC_LINK, SimSpec, generate, write_simulation
from .stopping import RESIDUAL_NORM, RULE_KINDS, StoppingRule, default_grid

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

SWEEP_SIZES = tuple(range(100, 1001, 100))
OMP_CLASSIC = "omp-classic"
BOTH = "both"


@dataclass
class RunConfig:
    """Everything that determines a run's results.

    Thread count and output directory are left out so that outputs do not
    depend on them.
    """

    command: str
    input: str | None = None
    schema: str | None = None
    inline_schema: dict | None = None
    outcome_kind: str | None = None
    method: str = GOMP
    family: str | None = None
    residuals: str | None = None
    stop_rule: str | None = None
    stop_grid: list | None = None
    lambda_count: int = 100
    folds: int | None = None
    stratify: bool = True
    reregularize: bool = True
    bbc_iters: int = 1000
    seed: int | None = None
    simulation: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _thread_count(flag) -> int:
    if flag is not None:
        value = flag
    elif os.environ.get("GOMP_THREADS"):
        try:
            value = int(os.environ["GOMP_THREADS"])
        except ValueError:
            raise UsageError("GOMP_THREADS must be an integer") from None
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise UsageError("thread count must be >= 1")
    return value


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _envelope(cfg: RunConfig, payload: dict) -> dict:
    conf = cfg.to_dict()
    return {
        "tool": "gomp",
        "version": __version__,
        "run_config": conf,
        "seed": cfg.seed,
        "config_fingerprint": fingerprint(conf),
        **payload,
    }


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _grid_values(text):
    try:
        return [float(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--stop-grid expects comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _data_args(p):
    p.add_argument("--input", required=True, help="CSV file (comma-separated, header first)")
    p.add_argument("--schema", help="JSON sidecar mapping column names to roles")
    p.add_argument("--outcome", help="outcome column (inline schema)")
    p.add_argument("--time", help="survival time column (inline schema)")
    p.add_argument("--event", help="event indicator column (inline schema)")
    p.add_argument("--categorical", type=_csv_list, default=[], help="categorical feature columns")
    p.add_argument("--ignore", type=_csv_list, default=[], help="columns to skip")
    p.add_argument("--outcome-kind", choices=[CONTINUOUS, BINARY, SURVIVAL])


def _model_args(p, methods):
    p.add_argument("--method", choices=methods, default=methods[0])
    p.add_argument("--family")
    p.add_argument("--residuals")
    p.add_argument("--stop-rule", choices=RULE_KINDS)
    p.add_argument("--stop-grid", type=_grid_values, help="comma-separated rule values")
    p.add_argument("--lambda-count", type=int, default=100)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", default=".")


def _cv_args(p, seed_required=True):
    p.add_argument("--folds", type=int, help="default 10, or 8 for survival outcomes")
    p.add_argument("--stratify", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--reregularize", action=argparse.BooleanOptionalAction, default=True,
                   help="LASSO re-fit of each gOMP selection over 10 penalty values")
    p.add_argument("--bbc-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, required=seed_required)


def _sim_args(p):
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=2000)
    p.add_argument("--n-true", type=int, default=10)
    p.add_argument("--snr", type=float, default=32.5)
    p.add_argument("--categorical-fraction", type=float, default=0.0)
    p.add_argument("--binary-mode", choices=[LOGISTIC_LINK, LATENT_THRESHOLD], default=LOGISTIC_LINK)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gomp", description="Generalized OMP feature selection with a LASSO baseline.")
    parser.add_argument("--version", action="version", version=f"gomp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write synthetic datasets with a known support")
    _sim_args(p)
    p.add_argument("--outcome-kind", choices=[CONTINUOUS, BINARY], default=CONTINUOUS)
    p.add_argument("--sweep", action="store_true", help="one dataset per n in 100..1000 step 100")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=".")

    p = sub.add_parser("select", help="run a selection method on a whole dataset")
    _data_args(p)
    _model_args(p, [GOMP, OMP_CLASSIC, LASSO, BOTH])
    p.add_argument("--seed", type=int)

    p = sub.add_parser("cv", help="cross-validate a method and bias-correct the estimate")
    _data_args(p)
    _model_args(p, [GOMP, LASSO, BOTH])
    _cv_args(p)

    p = sub.add_parser("bench", help="compare gOMP and LASSO across simulated datasets")
    _sim_args(p)
    p.add_argument("--outcome-kind", choices=[CONTINUOUS, BINARY], default=CONTINUOUS)
    p.add_argument("--sweep", action="store_true", help="sample sizes 100..1000 step 100")
    p.add_argument("--n-values", type=_int_list, help="sample sizes to sweep")
    p.add_argument("--p-values", type=_int_list, help="feature counts to sweep (instead of sizes)")
    p.add_argument("--repeats", type=int, default=1, help="datasets per sweep point")
    _model_args(p, [BOTH])
    _cv_args(p)
    return parser


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _schema(args) -> tuple[Schema, dict | None]:
    if args.schema:
        if args.outcome or args.time or args.event:
            raise UsageError("give either --schema or inline outcome flags, not both")
        schema = load_schema(args.schema)
        if args.outcome_kind and args.outcome_kind != SURVIVAL:
            schema = Schema(schema.roles, args.outcome_kind, schema.default_role)
        return schema, None
    roles = {}
    if args.outcome:
        roles[args.outcome] = "outcome"
    if args.time:
        roles[args.time] = "time"
    if args.event:
        roles[args.event] = "event"
    if not roles:
        raise UsageError("no schema: pass --schema or --outcome / --time and --event")
    for c in args.categorical:
        roles[c] = "feature-categorical"
    for c in args.ignore:
        roles[c] = "ignore"
    kind = args.outcome_kind if args.outcome_kind != SURVIVAL else None
    schema = Schema(roles, kind)
    return schema, schema.to_json()


def _load(args) -> tuple[Dataset, dict | None]:
    schema, inline = _schema(args)
    d = load_csv(args.input, schema)
    if args.outcome_kind and d.outcome.kind != args.outcome_kind:
        raise UsageError(f"--outcome-kind {args.outcome_kind} but the schema gives a {d.outcome.kind} outcome")
    return d, inline


def _family(args, d: Dataset) -> str:
    family = args.family or DEFAULT_FAMILY[d.outcome.kind]
    check_compatible(family, d.outcome.kind, args.residuals)
    return family


def _rule_grid(args, family: str) -> list[StoppingRule]:
    if args.stop_rule is None and args.stop_grid is None:
        return list(default_rule_grid(family))
    kind = args.stop_rule or default_rule_grid(family)[0].kind
    if args.stop_grid is None:
        return default_grid(kind)
    return [StoppingRule(kind, v) for v in args.stop_grid]


def _base_config(args, command, inline=None) -> RunConfig:
    return RunConfig(
        command=command,
        input=getattr(args, "input", None),
        schema=getattr(args, "schema", None),
        inline_schema=inline,
        outcome_kind=getattr(args, "outcome_kind", None),
        method=args.method,
        family=args.family,
        residuals=args.residuals,
        stop_rule=args.stop_rule,
        stop_grid=args.stop_grid,
        lambda_count=args.lambda_count,
        folds=getattr(args, "folds", None),
        stratify=getattr(args, "stratify", True),
        reregularize=getattr(args, "reregularize", True),
        bbc_iters=getattr(args, "bbc_iters", 0),
        seed=getattr(args, "seed", None),
    )


def _write_timing(out: Path, threads: int, timings: dict) -> None:
    _write_json(out / "timing.json", {"threads": threads, "seconds": timings})


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> dict:
    out = Path(args.out)
    sizes = SWEEP_SIZES if args.sweep else (args.n,)
    sim = {
        "n": list(sizes),
        "p": args.p,
        "n_true": args.n_true,
        "snr": args.snr,
        "outcome_kind": args.outcome_kind,
        "categorical_fraction": args.categorical_fraction,
        "binary_mode": args.binary_mode,
    }
    cfg = RunConfig(command="simulate", seed=args.seed, outcome_kind=args.outcome_kind, simulation=sim)
    files = []
    for i, n in enumerate(sizes):
        spec = SimSpec(
            n=n,
            p=args.p,
            n_true=args.n_true,
            snr=args.snr,
            outcome_kind=args.outcome_kind,
            categorical_fraction=args.categorical_fraction,
            binary_mode=args.binary_mode,
            seed=int(np.random.SeedSequence([args.seed, i]).generate_state(1)[0]) if args.sweep else args.seed,
        )
        d, truth = generate(spec)
        stem = f"sim_n{n}" if args.sweep else "sim"
        # names relative to --out keep the manifest independent of where it was written
        files.append({k: Path(v).name for k, v in write_simulation(d, truth, out, stem).items()})
    manifest = _envelope(cfg, {"datasets": files})
    _write_json(out / "simulate.json", manifest)
    return manifest


def cmd_select(args) -> dict:
    d, inline = _load(args)
    threads = _thread_count(args.threads)
    cfg = _base_config(args, "select", inline)
    out = Path(args.out)
    ds, record = standardize(d)
    payload = {"n": d.n, "p": d.p, "feature_names": list(d.names), "excluded_constant": record.excluded}
    timings = {}
    if args.method in (GOMP, BOTH):
        family = _family(args, d)
        grid = _rule_grid(args, family)
        t0 = time.perf_counter()
        results = gomp_path(ds, family, args.residuals, grid, workers=threads)
        timings["gomp"] = time.perf_counter() - t0
        payload["gomp"] = [r.to_dict() for r in results]
    if args.method == OMP_CLASSIC:
        if args.stop_rule not in (None, RESIDUAL_NORM):
            raise UsageError("omp-classic stops on the residual norm only")
        grid = args.stop_grid or [r.value for r in default_grid(RESIDUAL_NORM)]
        t0 = time.perf_counter()
        payload["omp_classic"] = [omp_classic(d, eps).to_dict() for eps in grid]
        timings["omp_classic"] = time.perf_counter() - t0
    if args.method in (LASSO, BOTH):
        t0 = time.perf_counter()
        path = lasso_path(ds, count=args.lambda_count)
        timings["lasso"] = time.perf_counter() - t0
        payload["lasso"] = path.to_dict()
    result = _envelope(cfg, payload)
    _write_json(out / "select.json", result)
    _write_timing(out, threads, timings)
    return result


def _cv_configs(args, d: Dataset):
    family = _family(args, d)
    grid = tuple(_rule_grid(args, family))
    methods = [GOMP, LASSO] if args.method == BOTH else [args.method]
    out = {}
    for m in methods:
        out[m] = CvConfig(
            method=m,
            family=family,
            residual_kind=args.residuals,
            rule_grid=grid if m == GOMP else (),
            reregularize=args.reregularize,
            lambda_count=args.lambda_count,
        )
    return out


def _folds(args, d: Dataset) -> int:
    if args.folds is not None:
        return args.folds
    return 8 if d.outcome.kind == SURVIVAL else 10


def cmd_cv(args) -> dict:
    d, inline = _load(args)
    threads = _thread_count(args.threads)
    cfg = _base_config(args, "cv", inline)
    k = _folds(args, d)
    cfg.folds = k
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"n": d.n, "p": d.p, "reports": {}}
    timings = {}
    for method, config in _cv_configs(args, d).items():
        t0 = time.perf_counter()
        report = run_cv(d, config, k, args.seed, args.stratify, args.bbc_iters, threads)
        timings[method] = time.perf_counter() - t0
        payload["reports"][method] = report.to_dict()
        write_prediction_matrix(report, out / f"predictions_{method}.csv")
    result = _envelope(cfg, payload)
    _write_json(out / "cv.json", result)
    _write_timing(out, threads, timings)
    return result


def _bench_points(args):
    if args.p_values:
        return [("p", args.n, p) for p in args.p_values]
    sizes = args.n_values or (SWEEP_SIZES if args.sweep else [args.n])
    return [("n", n, args.p) for n in sizes]


def cmd_bench(args) -> dict:
    threads = _thread_count(args.threads)
    cfg = _base_config(args, "bench")
    cfg.simulation = {
        "points": [[kind, n, p] for kind, n, p in _bench_points(args)],
        "repeats": args.repeats,
        "n_true": args.n_true,
        "snr": args.snr,
        "outcome_kind": args.outcome_kind,
        "categorical_fraction": args.categorical_fraction,
        "binary_mode": args.binary_mode,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, datasets, timing_rows = [], [], []
    unit = 0
    for kind, n, p in _bench_points(args):
        for rep in range(args.repeats):
            seed = int(np.random.SeedSequence([args.seed, unit]).generate_state(1)[0])
            unit += 1
            spec = SimSpec(
                n=n,
                p=p,
                n_true=args.n_true,
                snr=args.snr,
                outcome_kind=args.outcome_kind,
                categorical_fraction=args.categorical_fraction,
                binary_mode=args.binary_mode,
                seed=seed,
            )
            d, truth = generate(spec)
            k = args.folds or 10
            configs = _cv_configs(args, d)
            entry = {"dataset": unit - 1, "sweep": kind, "n": n, "p": p, "repeat": rep, "seed": seed}
            times = {}
            for method, config in configs.items():
                t0 = time.perf_counter()
                report = run_cv(d, config, k, seed, args.stratify, args.bbc_iters, threads)
                selected = refit_selection(d, report, threads)
                times[method] = time.perf_counter() - t0
                q = selection_quality(selected, truth.support)
                entry[method] = {
                    "selected": selected,
                    "size": len(selected),
                    "tpr": q.tpr,
                    "fdr": q.fdr,
                    "metric": report.metric,
                    "naive_best_metric": report.naive_best_metric,
                    "bbc_metric": report.bbc_metric,
                }
            # LASSO* : the full-data path point with about as many features as gOMP
            ds, _ = standardize(d)
            path = lasso_path(ds, count=args.lambda_count)
            idx = match_support_size(path, entry[GOMP]["size"])
            star = path.support(idx)
            q = selection_quality(star, truth.support)
            entry["lasso_star"] = {"selected": star, "size": len(star), "tpr": q.tpr, "fdr": q.fdr, "lambda_index": idx}
            datasets.append(entry)
            timing_rows.append({"dataset": entry["dataset"], **times, "speedup_gomp_vs_lasso": _ratio(times)})
            for method in (GOMP, LASSO, "lasso_star"):
                for quantity in ("size", "tpr", "fdr", "naive_best_metric", "bbc_metric"):
                    if quantity in entry[method]:
                        rows.append([entry["dataset"], kind, n, p, rep, method, quantity, entry[method][quantity]])

    def diffs(key):
        return np.array([e[GOMP][key] - e[LASSO][key] for e in datasets], dtype=float)

    tests = {}
    for key in ("bbc_metric", "fdr", "tpr"):
        dv = diffs(key)
        if np.all(np.isfinite(dv)):
            tests[key] = {
                "mean_difference_gomp_minus_lasso": float(dv.mean()),
                "p_value": sign_permutation_test(dv, seed=args.seed),
            }
    payload = {"datasets": datasets, "sign_permutation_tests": tests}
    result = _envelope(cfg, payload)
    _write_json(out / "bench.json", result)
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "sweep", "n", "p", "repeat", "method", "quantity", "value"])
        for r in rows:
            w.writerow(r[:-1] + [repr(float(r[-1]))])
    _write_timing(out, threads, {"per_dataset": timing_rows})
    return result


def _ratio(times):
    if times.get(GOMP, 0) > 0 and LASSO in times:
        return times[LASSO] / times[GOMP]
    return None


COMMANDS = {"simulate": cmd_simulate, "select": cmd_select, "cv": cmd_cv, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gomp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestionError as exc:
        print(f"gomp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"gomp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"gomp: i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GompError as exc:
        print(f"gomp: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
