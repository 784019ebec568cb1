"""Command-line interface.

Exit codes: 0 success, 1 failed checks or sweep cells, 2 invalid input,
3 precision or capability limits, 4 I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from . import closed_form as cf
from .availability import avail_distribution
from .errors import CapabilityError, NumericalCheckError, TraceIOError, ValidationError
from .params import DEFAULT_ETA, GammaMode, ModelParams, validate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAPABILITY, EXIT_IO = 0, 1, 2, 3, 4
JOBS_ENV = "SELFSUSTAIN_JOBS"
SWEEP_COLUMNS = ("B", "lambda_per_s", "mu", "gamma", "rho", "N", "A", "trunc_error")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw is None:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise _UsageError(f"{JOBS_ENV} must be a positive integer, got {raw!r}")
    if jobs < 1:
        raise _UsageError(f"{JOBS_ENV} must be a positive integer, got {raw!r}")
    return jobs


def _gamma(text: str):
    t = text.strip().lower()
    if t in ("inf", "mu"):
        return t
    try:
        g = float(t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"gamma must be 'inf', 'mu' or a positive rate, got {text!r}")
    if not g > 0:
        raise argparse.ArgumentTypeError("gamma rate must be > 0")
    return g


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _float_list(text: str) -> List[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def _int_list(text: str) -> List[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list is empty")
    return vals


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _json_value(x):
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x) or math.isinf(x):
            return _fmt(x)
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_json_value(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    return x


def _emit(text: str, output: Optional[str]) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
        return
    try:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise TraceIOError(output, exc.strerror or str(exc)) from exc


def _add_lambda(p: argparse.ArgumentParser, many: bool) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    kind = _float_list if many else float
    g.add_argument("--lambda", dest="lam", type=kind, help="arrival rate in peers per second")
    g.add_argument("--lambda-per-min", dest="lam_min", type=kind, help="arrival rate in peers per minute")


def _lambda_per_s(args):
    if args.lam is not None:
        return args.lam
    if isinstance(args.lam_min, list):
        return [x / 60.0 for x in args.lam_min]
    return args.lam_min / 60.0


def _gamma_label(g) -> str:
    return g if isinstance(g, str) else _fmt(float(g))


# -- sustain -------------------------------------------------------------


def sustain_report(B: int, lam: float, mu: float, gamma, eta: float = DEFAULT_ETA) -> dict:
    """Everything ``sustain`` prints, straight from library calls."""
    params = ModelParams(B, lam, mu, gamma)
    load = validate(params)
    dist = avail_distribution(params, eta)
    mode = params.gamma_mode
    report = {
        "B": B,
        "lambda_per_s": lam,
        "mu": mu,
        "gamma": _gamma_label(gamma),
        "rho": load.rho,
        "N": dist.N,
        "A": dist.A,
        "trunc_error": dist.trunc_error,
    }
    if dist.probs is not None:
        report["E_V"] = dist.mean
    if mode is GammaMode.EQUAL_MU:
        report["E_V_closed"] = cf.mean_available(B, load.rho, mode)
        b = cf.bonferroni_bounds(B, load.rho)
        report["bonferroni_lower"] = b.lower
        report["bonferroni_upper"] = b.upper
        if B <= cf.B_STABLE:
            report["A_closed"] = cf.self_sust_closed_seeded(B, load.rho)
    elif mode is GammaMode.INFINITE:
        report["E_V_closed"] = cf.mean_available(B, load.rho, mode)
        report["block_unavail_prob"] = cf.block_unavail_prob(B, load.rho, mode)
    return report


def _render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_json_value(report), indent=2) + "\n"
    width = max(len(k) for k in report)
    return "".join(f"{k:<{width}}  {_fmt(v)}\n" for k, v in report.items())


def cmd_sustain(args) -> int:
    report = sustain_report(args.blocks, _lambda_per_s(args), args.mu, args.gamma, args.eta)
    _emit(_render(report, args.format), args.output)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------


def _sweep_cell(cell):
    B, lam, mu, gamma, eta = cell
    try:
        r = sustain_report(B, lam, mu, gamma, eta)
        return {k: r[k] for k in SWEEP_COLUMNS}, None
    except (ValidationError, CapabilityError, NumericalCheckError) as exc:
        row = {"B": B, "lambda_per_s": lam, "mu": mu, "gamma": _gamma_label(gamma)}
        row.update(rho=math.nan, N=-1, A=math.nan, trunc_error=math.nan)
        return row, f"B={B} lambda={lam!r}: {exc}"


def sweep_rows(blocks: Sequence[int], lams: Sequence[float], mu: float, gamma, eta: float, jobs: int = 1):
    """Rows in grid order (B outer, lambda inner) plus failure notes."""
    cells = [(B, lam, mu, gamma, eta) for B in blocks for lam in lams]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    return [r for r, _ in results], [e for _, e in results if e]


def render_table(rows: List[dict], columns: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{c: _json_value(r[c]) for c in columns} for r in rows], indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    rows, failures = sweep_rows(args.blocks, _lambda_per_s(args), args.mu, args.gamma, args.eta, args.jobs)
    _emit(render_table(rows, SWEEP_COLUMNS, args.format), args.output)
    for note in failures:
        print(f"sweep: cell failed, {note}", file=sys.stderr)
    if failures:
        print(f"sweep: {len(failures)} of {len(rows)} cells failed", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -- minload -------------------------------------------------------------


def cmd_minload(args) -> int:
    if not 0.0 < args.target < 1.0:
        raise _UsageError("--target must lie strictly between 0 and 1")
    res = cf.min_load(args.blocks, args.target, cf.LoadMode(args.mode), args.eta)
    report = {"B": args.blocks, "target": args.target, "mode": args.mode, "rho": res.rho, "coverage": res.coverage}
    if args.mode == "exact":
        report["achieved"] = res.achieved
    _emit(_render(report, args.format), args.output)
    return EXIT_OK


# -- simulate ------------------------------------------------------------

SIM_COLUMNS = (
    "replication",
    "self_sustainability",
    "stderr",
    "mean_peers",
    "replica_mean",
    "cv_below_0.8",
    "first_block_p",
    "last_block_p",
    "first_pair_p",
)


def simulate_rows(config, replications: int, seed: int, jobs: int = 1) -> List[dict]:
    from .swarm import pool, run_replications
    from .swarm.analysis import uniformity_from_hists

    runs = run_replications(config, replications, seed, jobs)
    rows = []
    for r, m in enumerate(runs, 1):
        u = uniformity_from_hists(m.first_block_hist, m.last_block_hist, m.first_pair_hist, [seed, r])
        rows.append(
            {
                "replication": str(r),
                "self_sustainability": m.self_sustainability,
                "stderr": math.nan,
                "mean_peers": m.mean_peers,
                "replica_mean": float(np.mean(m.replica_mean)) if m.replica_mean.size else math.nan,
                "cv_below_0.8": float(np.mean(m.cv_series < 0.8)) if m.cv_series.size else math.nan,
                "first_block_p": u.first_block_p,
                "last_block_p": u.last_block_p,
                "first_pair_p": u.first_pair_p,
            }
        )
    pooled = pool(runs, seed)
    rows.append({"replication": "pooled", **pooled.summary()})
    return rows


def cmd_simulate(args) -> int:
    from .swarm import load_config

    try:
        config = load_config(args.config)
    except TraceIOError as exc:
        raise _UsageError(f"cannot read configuration: {exc}") from exc
    rows = simulate_rows(config, args.replications, args.seed, args.jobs)
    _emit(render_table(rows, SIM_COLUMNS, args.format), args.output)
    return EXIT_OK


# -- validate ------------------------------------------------------------


def cmd_validate(args) -> int:
    from . import validation

    checks = validation.run(args.level, jobs=args.jobs, log=lambda c: print(c.line(), flush=True))
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)} of {len(checks)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser(jobs_default: int = 1) -> argparse.ArgumentParser:
    parser = _Parser(prog="selfsustain", description="Self-sustainability of peer-to-peer swarms.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, formats=("text", "json")):
        p.add_argument("--format", choices=formats, default=formats[0])
        p.add_argument("--output", "-o", help="write here instead of stdout")

    p = sub.add_parser("sustain", help="self-sustainability at one operating point")
    p.add_argument("--blocks", type=_positive_int, required=True)
    _add_lambda(p, many=False)
    p.add_argument("--mu", type=float, required=True, help="block download rate in blocks per second")
    p.add_argument("--gamma", type=_gamma, default="inf", help="seed departure rate: inf, mu or a rate")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA, help="Poisson truncation tolerance")
    common(p)
    p.set_defaults(func=cmd_sustain)

    p = sub.add_parser("sweep", help="self-sustainability over a grid of block counts and arrival rates")
    p.add_argument("--blocks", type=_int_list, required=True, help="comma-separated block counts")
    _add_lambda(p, many=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--gamma", type=_gamma, default="inf")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    p.add_argument("--jobs", type=_positive_int, default=jobs_default)
    common(p, ("csv", "json"))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("minload", help="smallest load reaching a target self-sustainability")
    p.add_argument("--blocks", type=_positive_int, required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--mode", choices=("approx", "exact"), default="approx")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA)
    common(p)
    p.set_defaults(func=cmd_minload)

    p = sub.add_parser("simulate", help="replicated swarm simulations from a JSON configuration")
    p.add_argument("config", help="JSON document with simulator settings")
    p.add_argument("--replications", "-r", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=_positive_int, default=jobs_default)
    common(p, ("csv", "json"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="cross-check the engines against each other")
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--jobs", type=_positive_int, default=jobs_default)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        parser = build_parser(_default_jobs())
        args = parser.parse_args(argv)
        if getattr(args, "seed", 0) < 0:
            raise _UsageError("--seed must be >= 0")
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except TraceIOError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CapabilityError as exc:
        print(f"not supported: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except NumericalCheckError as exc:
        print(f"numerical check failed: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
