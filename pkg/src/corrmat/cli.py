"""Command line front end: ``corrmat {predict,validate-kernel,sample,run,report}``.

Exit codes: 0 ok, 2 bad input, 3 theta <= 0, 4 invalid kernel, 5 verdict
failure, 6 solver failure budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

from . import kernel as kmod
from . import theory
from .montecarlo import (RECORD_COLUMNS, FailureBudgetExceeded, RepRecord, RunConfig,
                         op_norm_quantiles, qq_table, run_experiment, summarize)
from .sampler import RngStream, SamplerError, draw, dump_sample

EXIT_OK, EXIT_INPUT, EXIT_THETA, EXIT_INVALID, EXIT_VERDICT, EXIT_SOLVER = 0, 2, 3, 4, 5, 6

CONFIG_KEYS = {"theta", "kernel", "sizes", "replications", "seed", "sampler", "eig_tol", "level"}
REQUIRED_KEYS = {"theta", "kernel", "sizes", "replications"}


class ConfigError(ValueError):
    pass


def _number(cfg, key, kind=float):
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {val!r}")
    if kind is int:
        if isinstance(val, float) and not val.is_integer():
            raise ConfigError(f"'{key}' must be an integer, got {val!r}")
        return int(val)
    return float(val)


def parse_config(raw) -> tuple[RunConfig, dict]:
    """Strict parse of a run config; returns it with the defaults materialized."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    missing = REQUIRED_KEYS - set(raw)
    if missing:
        raise ConfigError(f"missing config key(s): {', '.join(sorted(missing))}")
    theta = _number(raw, "theta")
    try:
        params = kmod.params_from_spec(raw["kernel"], theta)
    except kmod.KernelError as exc:
        raise ConfigError(str(exc)) from None
    sizes = raw["sizes"]
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError("'sizes' must be a nonempty list")
    sizes = [_number({"size": s}, "size", int) for s in sizes]
    echoed = {
        "theta": theta,
        "kernel": raw["kernel"],
        "sizes": sizes,
        "replications": _number(raw, "replications", int),
        "seed": _number(raw, "seed", int) if "seed" in raw else 0,
        "sampler": raw.get("sampler", "ma" if params.ma is not None else "circulant"),
        "eig_tol": _number(raw, "eig_tol") if "eig_tol" in raw else 1e-10,
        "level": _number(raw, "level") if "level" in raw else 0.005,
    }
    try:
        config = RunConfig(params, sizes, echoed["replications"], echoed["seed"],
                           echoed["sampler"], echoed["eig_tol"], echoed["level"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return config, echoed


def load_config(path) -> tuple[RunConfig, dict]:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(raw)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    return f"{x:.17g}"


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in RECORD_COLUMNS])
    return buf.getvalue()


def read_records_csv(path) -> list[RepRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_COLUMNS:
            raise ConfigError(f"unexpected CSV columns {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(RepRecord(
                n=int(row["n"]), rep_index=int(row["rep_index"]), seed=int(row["seed"]),
                **{c: float(row[c]) for c in RECORD_COLUMNS[3:-2]},
                eig_iterations=int(row["eig_iterations"]), failed=row["failed"] == "1"))
    return out


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _json(obj) -> str:
    return json.dumps(_finite(obj), indent=2, allow_nan=False) + "\n"


def _table_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def write_reports(outdir: Path, records, summary, config: RunConfig, echoed: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    write_atomic(outdir / "records.csv", records_csv(records))
    summary = {"config": echoed, **summary}
    write_atomic(outdir / "summary.json", _json(summary))
    write_atomic(outdir / "qq.csv",
                 _table_csv(qq_table(records, config.params), ["n", "theoretical", "empirical"]))
    q = op_norm_quantiles(records)
    rows = [{"n": n, **vals} for n, vals in q.items()]
    write_atomic(outdir / "op_norm_quantiles.csv", _table_csv(rows, ["n", "q50", "q90", "q99"]))


# --- subcommands -------------------------------------------------------------

def cmd_predict(args) -> int:
    if not (math.isfinite(args.theta) and args.theta > 0):
        print(f"error: theta must be > 0, got {args.theta}", file=sys.stderr)
        return EXIT_THETA
    try:
        kern = kmod.kernel_from_spec(kmod.load_kernel_spec(args.kernel))
    except (OSError, kmod.KernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    pred = theory.predict(kern, args.theta, args.n)
    out = {**pred.to_dict(),
           "exact_var_quad": theory.exact_var_quad(kern, args.n),
           "exact_mean_w2": theory.exact_mean_w2(kern, args.n)}
    sys.stdout.write(_json(out))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        kern = kmod.kernel_from_spec(kmod.load_kernel_spec(args.kernel))
        size = args.embed_size or kmod.default_embed_size(kern)
        report = kmod.validate_kernel(kern, size)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    sys.stdout.write(_json(report.to_dict()))
    return EXIT_OK if report.valid else EXIT_INVALID


def cmd_sample(args) -> int:
    try:
        config, _ = load_config(args.config)
        sample = draw(config.params, args.n, RngStream(config.seed, args.n, args.rep),
                      args.sampler or config.sampler)
    except (ConfigError, SamplerError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.out:
        buf = io.StringIO()
        dump_sample(sample, buf)
        write_atomic(Path(args.out), buf.getvalue())
    else:
        dump_sample(sample, sys.stdout)
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        config, echoed = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        records, summary = run_experiment(config)
    except FailureBudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SamplerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    write_reports(Path(args.out), records, summary, config, echoed)
    _print_verdicts(summary)
    return EXIT_OK if summary["passed"] else EXIT_VERDICT


def cmd_report(args) -> int:
    try:
        config, echoed = load_config(args.config)
        records = read_records_csv(args.records)
    except (ConfigError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    summary = summarize(records, config)
    if args.out:
        write_reports(Path(args.out), records, summary, config, echoed)
    else:
        sys.stdout.write(_json({"config": echoed, **summary}))
    return EXIT_OK if summary["passed"] else EXIT_VERDICT


def _print_verdicts(summary) -> None:
    for s in summary["sizes"]:
        for v in s["verdicts"]:
            mark = "PASS" if v["passed"] else "FAIL"
            print(f"{mark} n={s['n']} {v['name']}: observed={v['observed']} "
                  f"expected={v['expected']} tol={v['tolerance']}", file=sys.stderr)
    for v in summary["run_verdicts"]:
        mark = "PASS" if v["passed"] else "FAIL"
        print(f"{mark} {v['name']}: observed={v['observed']}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="corrmat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("predict", help="print alpha, sigma2 and exact finite-n moments")
    sp.add_argument("kernel", help="kernel JSON file")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("validate-kernel", help="check the torus spectrum of a kernel")
    sp.add_argument("kernel")
    sp.add_argument("--embed-size", type=int, default=None)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("sample", help="dump one field sample as text")
    sp.add_argument("config")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--rep", type=int, default=0)
    sp.add_argument("--sampler", choices=["ma", "cholesky", "circulant"], default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("run", help="run the Monte Carlo experiment")
    sp.add_argument("config")
    sp.add_argument("--out", default="corrmat-out")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="recompute the summary from a records CSV")
    sp.add_argument("config")
    sp.add_argument("records")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
