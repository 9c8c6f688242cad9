"""Command-line interface: ``rcvsub {fit,simulate,bench}``.

A ``--config FILE`` of ``key = value`` lines supplies defaults; flags given
on the command line always win.  Exit codes: 2 usage/configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import CsvSchema, load_csv
from .errors import ConfigError, DataError, NumericalError, RcvError
from .models import ModelSpec
from .pipeline import RcvConfig, rcv_estimate
from .sampler import SamplerConfig
from .scad import ScadConfig
from .simulate import SimDesign, metrics_rows, run_bench, run_replications

log = logging.getLogger("rcvsub")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
FLOAT_FORMAT = "%.17g"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {s!r}")


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _int_list(s: str) -> list[int]:
    try:
        vals = [int(t) for t in str(s).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return vals


def _methods(s: str) -> list[str]:
    vals = [t.strip().lower() for t in str(s).split(",") if t.strip()]
    if not vals or any(v not in ("osp", "unif") for v in vals):
        raise argparse.ArgumentTypeError("methods must be a comma-separated subset of osp,unif")
    return vals


def parse_beta(spec: str | None, family: str, p: int) -> tuple | None:
    """``None``/``default`` keeps the family's default signal; otherwise a comma
    list whose items may be ``value*count`` (zero-padded to ``p``)."""
    if spec is None or str(spec).strip().lower() == "default":
        return None
    vals: list[float] = []
    for item in str(spec).split(","):
        item = item.strip()
        if not item:
            continue
        if "*" in item:
            v, k = item.split("*", 1)
            vals.extend([float(v)] * int(k))
        else:
            vals.append(float(item))
    if len(vals) > p:
        raise ConfigError(f"beta has {len(vals)} entries but p = {p}")
    return tuple(vals + [0.0] * (p - len(vals)))


def read_config(path: str | Path) -> list[str]:
    """Translate a ``key = value`` file into flag tokens."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    tokens = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        tokens += ["--" + key.replace("_", "-"), value]
    return tokens


def merge_argv(argv: list[str]) -> list[str]:
    """Pull out ``--config`` and place the file's flags right after the
    subcommand, so explicit flags (parsed later) override them."""
    argv = list(argv)
    cfg = None
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a path")
            cfg = argv[i + 1]
            i += 2
            continue
        if a.startswith("--config="):
            cfg = a.split("=", 1)[1]
            i += 1
            continue
        out.append(a)
        i += 1
    if cfg is None:
        return out
    file_tokens = read_config(cfg)
    for k, a in enumerate(out):
        if a in ("fit", "simulate", "bench"):
            return out[:k + 1] + file_tokens + out[k + 1:]
    return out + file_tokens


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rcvsub", description="Refitted cross-validation subsampling estimator.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=_positive, default=None,
                        help="worker threads (default: RCV_THREADS or all cores)")
        sp.add_argument("--r01", type=_positive, default=None, help="selection pilot size")
        sp.add_argument("--r02", type=_positive, default=None, help="probability pilot size")
        sp.add_argument("--delta", type=float, default=0.1)
        sp.add_argument("--level", type=float, default=0.95)
        sp.add_argument("--scad-a", type=float, default=3.7)
        sp.add_argument("--selector", choices=("ebic", "bic"), default="ebic")
        sp.add_argument("--plots", type=_bool, default=True, help="write PNG figures")
        sp.add_argument("-v", "--verbose", action="store_true")

    f = sub.add_parser("fit", help="estimate all coefficients of a CSV dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--model", required=True, choices=("linear", "logistic", "cox"))
    f.add_argument("--response")
    f.add_argument("--time")
    f.add_argument("--status")
    f.add_argument("--r", type=_positive, required=True)
    f.add_argument("--sampler", choices=("osp", "unif"), default="osp")
    f.add_argument("--intercept", type=_bool, default=False)
    f.add_argument("--out", default="rcv_results.csv")
    common(f)

    s = sub.add_parser("simulate", help="Monte Carlo replications of a synthetic design")
    s.add_argument("--model", required=True, choices=("linear", "logistic", "cox"))
    s.add_argument("--case", type=int, choices=(1, 2), default=1)
    s.add_argument("--n", type=_positive, default=100_000)
    s.add_argument("--p", type=_positive, default=100)
    s.add_argument("--r", type=_int_list, default=[500], help="one size or a comma list")
    s.add_argument("--reps", type=_positive, default=300)
    s.add_argument("--methods", type=_methods, default=["osp", "unif"])
    s.add_argument("--beta", default=None, help="e.g. '1,0.8' or '0.5*20'")
    s.add_argument("--censor-rate", type=float, default=0.3)
    s.add_argument("--fix-x", type=_bool, default=False)
    s.add_argument("--out", default="sim_metrics.csv")
    common(s)

    b = sub.add_parser("bench", help="timing against full-data fits")
    b.add_argument("--model", required=True, choices=("linear", "logistic", "cox"))
    b.add_argument("--case", type=int, choices=(1, 2), default=1)
    b.add_argument("--n", type=_positive, required=True)
    b.add_argument("--p", type=_positive, required=True)
    b.add_argument("--r", type=_positive, default=500)
    b.add_argument("--reps", type=_positive, default=10)
    b.add_argument("--include-full", type=_bool, default=True)
    b.add_argument("--include-full-scad", type=_bool, default=False)
    b.add_argument("--full-scad-selector", choices=("cv", "ebic", "bic"), default="cv",
                   help="lambda rule of the full-data SCAD comparator")
    b.add_argument("--beta", default=None)
    b.add_argument("--out", default="bench.csv")
    common(b)
    return p


def _rcv_config(args, model: ModelSpec, kind: str, r: int) -> RcvConfig:
    sampler = SamplerConfig(kind=kind, delta=args.delta, r=r, r01=args.r01, r02=args.r02)
    scad = ScadConfig(a=args.scad_a, selector=args.selector)
    return RcvConfig(model=model, sampler=sampler, scad=scad, level=args.level,
                     seed=args.seed, threads=args.threads)


def _write_csv(df: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _sibling(path: Path, suffix: str, ext: str = ".png") -> Path:
    return path.with_name(f"{path.stem}_{suffix}{ext}")


def cmd_fit(args) -> int:
    model = ModelSpec(args.model, intercept=args.intercept)
    if model.family == "cox":
        if not (args.time and args.status):
            raise UsageError("cox fits need --time and --status")
    elif not args.response:
        raise UsageError(f"{model.family} fits need --response")
    schema = CsvSchema(response=args.response, time=args.time, status=args.status)
    data = load_csv(args.data, schema, model)
    cfg = _rcv_config(args, model, args.sampler, args.r)
    res = rcv_estimate(data, cfg)
    rows = [{"name": c.name, "j": c.j + 1, "beta1": c.beta1, "beta2": c.beta2,
             "beta_hat": c.beta_hat, "se1": c.sigma1, "se2": c.sigma2, "se": c.sigma_hat,
             "ci_lo": c.ci_lo, "ci_hi": c.ci_hi, "selected1": int(c.selected_fold1),
             "selected2": int(c.selected_fold2), "status": c.status} for c in res.coefs]
    out = Path(args.out)
    df = pd.DataFrame(rows)
    _write_csv(df, out)
    if res.degraded:
        print("warning: one fold failed in variable selection; single-fold estimates reported",
              file=sys.stderr)
    print(f"{len(rows)} coefficients written to {out}")
    preview = df.head(5)[["name", "beta_hat", "se", "ci_lo", "ci_hi"]]
    print(preview.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if args.plots:
        from .plotting import plot_intervals
        plot_intervals(res.coefs, _sibling(out, "ci"))
    return 0


def cmd_simulate(args) -> int:
    beta = parse_beta(args.beta, args.model, args.p)
    design = SimDesign(args.model, args.case, n=args.n, p=args.p, reps=args.reps,
                       beta_true=beta, censor_rate=args.censor_rate, seed=args.seed,
                       fix_x=args.fix_x)
    cfg = _rcv_config(args, ModelSpec(args.model), args.methods[0], args.r[0])
    results = run_replications(design, cfg, args.methods, r_values=args.r,
                               progress=lambda k: log.info("replication %d done", k + 1))
    out = Path(args.out)
    _write_csv(pd.DataFrame(metrics_rows(design, results)), out)
    metrics = [m for k, m in results.items() if isinstance(k, tuple)]
    summary = [{"model": design.family, "case": design.case, "method": m.method, "r": m.r,
                "ase": m.ase, "n_success": m.n_success, "n_failed": m.n_failed,
                "censoring_rate": results.get("censoring", np.nan),
                "c0": results.get("c0", np.nan)} for m in metrics]
    _write_csv(pd.DataFrame(summary), _sibling(out, "summary", ".csv"))
    timings = [{"method": m.method, "r": m.r, "mean_time": m.mean_runtime} for m in metrics]
    _write_csv(pd.DataFrame(timings), _sibling(out, "timings", ".csv"))
    for s in summary:
        print(f"{s['method'].upper():5s} r={s['r']:<6d} ASE={s['ase']:.5f} "
              f"({s['n_success']} ok, {s['n_failed']} failed)")
    if design.family == "cox":
        print(f"censoring rate {results['censoring']:.4f} (c0 = {results['c0']:.4f})")
    if args.plots:
        from .plotting import plot_ase, plot_ssd_ese
        plot_ase(summary, _sibling(out, "ase"))
        plot_ssd_ese(metrics, _sibling(out, "ssd_ese"))
    return 0


def cmd_bench(args) -> int:
    beta = parse_beta(args.beta, args.model, args.p)
    design = SimDesign(args.model, args.case, n=args.n, p=args.p, reps=1, beta_true=beta,
                       seed=args.seed)
    cfg = _rcv_config(args, ModelSpec(args.model), "osp", args.r)
    res = run_bench(design, cfg, reps=args.reps, include_full=args.include_full,
                    include_full_scad=args.include_full_scad,
                    full_scad=replace(cfg.scad, selector=args.full_scad_selector))
    if not res:
        raise UsageError("nothing to benchmark: n too small for subsampling and no full fit")
    out = Path(args.out)
    names = list(res)
    _write_csv(pd.DataFrame([{"method": m, "reps": res[m]["reps"],
                              "msd_beta1": res[m]["msd_beta1"]} for m in names]), out)
    trows = [{"method": m, "mean_time": res[m]["mean_time"]} for m in names]
    _write_csv(pd.DataFrame(trows), _sibling(out, "timings", ".csv"))
    for m in names:
        print(f"{m:10s} mean time {res[m]['mean_time']:9.4f} s   MSD(beta1) {res[m]['msd_beta1']:.6g}")
    if args.plots:
        from .plotting import plot_times
        plot_times(trows, _sibling(out, "timings"))
    return 0


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(merge_argv(argv))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads is not None:
        os.environ["RCV_THREADS"] = str(args.threads)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, RcvError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
