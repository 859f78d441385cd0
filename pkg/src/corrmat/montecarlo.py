"""Seeded Monte Carlo replications of ``lambda_1(A_N) - 2 N theta`` and their summary."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import stats, theory
from .kernel import FieldParams, default_embed_size, validate_kernel
from .matrix import (EIG_TOL, EigenSolverError, build_a, build_w, largest_eigenvalue,
                     operator_norm_result, quad_ones, quad_ones_sq)
from .sampler import CHOLESKY_CAP, SAMPLERS, RngStream, SamplerError, draw

log = logging.getLogger(__name__)

FAILURE_BUDGET = 0.01
DEFAULT_LEVEL = 0.005
TIGHTNESS_RATIO = 1.5
REMAINDER_FRACTION = 0.1


class FailureBudgetExceeded(RuntimeError):
    def __init__(self, msg, records):
        super().__init__(msg)
        self.records = records


@dataclass
class RunConfig:
    params: FieldParams
    sizes: list[int]
    replications: int
    seed: int = 0
    sampler: str = "ma"
    eig_tol: float = EIG_TOL
    level: float = DEFAULT_LEVEL

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("replications must be >= 2")
        if not self.sizes or any(int(n) < 1 for n in self.sizes):
            raise ValueError("sizes must be a nonempty list of positive integers")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.sampler == "ma" and self.params.ma is None:
            raise ValueError("sampler 'ma' requires an MA-specified kernel")
        if self.sampler == "cholesky" and max(self.sizes) > CHOLESKY_CAP:
            raise ValueError(f"sampler 'cholesky' requires all sizes <= {CHOLESKY_CAP}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.eig_tol > 0:
            raise ValueError("eig_tol must be > 0")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")


@dataclass
class RepRecord:
    n: int
    rep_index: int
    seed: int
    lambda1: float = math.nan
    centered: float = math.nan
    quad_w: float = math.nan
    quad_w2: float = math.nan
    op_norm: float = math.nan
    term1: float = math.nan
    term2: float = math.nan
    remainder: float = math.nan
    eig_iterations: int = 0
    failed: bool = False


RECORD_COLUMNS = [f.name for f in fields(RepRecord)]


def worker_count() -> int:
    env = os.environ.get("CORRMAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def replicate(config: RunConfig, n: int, rep: int) -> RepRecord:
    """One replication: sample, build ``A`` and ``W``, solve, decompose."""
    stream = RngStream(config.seed, n, rep)
    theta = config.params.theta
    sample = draw(config.params, n, stream, config.sampler)
    a = build_a(sample)
    w = build_w(sample)
    v0 = stream.start_vector(n)
    rec = RepRecord(n, rep, stream.seed)
    try:
        top = largest_eigenvalue(a, tol=config.eig_tol, v0=v0)
        norm, norm_iters = operator_norm_result(w, tol=config.eig_tol, v0=v0)
    except EigenSolverError as exc:
        log.warning("n=%d rep=%d: %s", n, rep, exc)
        rec.failed = True
        return rec
    lam = top.lam
    rec.lambda1 = lam
    rec.centered = lam - 2 * n * theta
    rec.quad_w = quad_ones(w)
    rec.quad_w2 = quad_ones_sq(w)
    rec.op_norm = norm
    rec.term1 = 2 * theta * rec.quad_w / lam
    rec.term2 = 2 * theta * rec.quad_w2 / lam**2
    rec.remainder = rec.centered - rec.term1 - rec.term2
    rec.eig_iterations = top.iterations + norm_iters
    return rec


def check_kernel(params: FieldParams) -> None:
    """Explicit tables must embed with a nonnegative spectrum before sampling."""
    if params.ma is not None:
        return
    report = validate_kernel(params.kernel, default_embed_size(params.kernel))
    if not report.valid:
        raise SamplerError(
            f"kernel is not a valid covariance (min spectral value {report.min_spectral:.3e})")


def run_records(config: RunConfig, workers: int | None = None) -> list[RepRecord]:
    check_kernel(config.params)
    tasks = [(n, r) for n in config.sizes for r in range(config.replications)]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        records = [replicate(config, n, r) for n, r in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda t: replicate(config, *t), tasks))
    records.sort(key=lambda r: (r.n, r.rep_index))
    failed = sum(r.failed for r in records)
    if failed > FAILURE_BUDGET * len(records):
        raise FailureBudgetExceeded(
            f"{failed} of {len(records)} replications failed to converge", records)
    return records


def run_experiment(config: RunConfig, workers: int | None = None):
    records = run_records(config, workers)
    return records, summarize(records, config)


# --- summary -----------------------------------------------------------------

def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def verdict(name, observed, expected, tolerance, passed) -> dict:
    return {"name": name, "observed": _clean(observed), "expected": _clean(expected),
            "tolerance": tolerance, "passed": bool(passed)}


def op_norm_quantiles(records) -> dict[int, dict[str, float]]:
    """Per-size 50/90/99% quantiles of ``||W|| / sqrt(n)``."""
    out = {}
    for n in sorted({r.n for r in records}):
        vals = [r.op_norm / math.sqrt(n) for r in records if r.n == n and not r.failed]
        if vals:
            out[n] = stats.quantiles(vals)
    return out


def op_norm_tightness(table: dict[int, dict[str, float]], min_n: int = 100):
    sizes = [n for n in table if n >= min_n]
    if len(sizes) < 2:
        return None
    lo, hi = min(sizes), max(sizes)
    top, base = table[hi]["q99"], table[lo]["q99"]
    ratio = top / base if base > 0 else (0.0 if top == 0 else math.inf)
    return verdict(f"op_norm_tightness_q99_n{hi}_vs_n{lo}", ratio, 1.0, TIGHTNESS_RATIO,
                   ratio <= TIGHTNESS_RATIO)


def mean_tolerance(pred: theory.Predictions, theta: float, n: int, m: int) -> float:
    """``3 sqrt(sigma2 / M)`` plus an ``(alpha^2 + sigma2) / (n theta)`` bias allowance."""
    return 3 * math.sqrt(pred.sigma2 / m) + (pred.alpha**2 + pred.sigma2) / (n * theta)


def summarize_size(recs: list[RepRecord], params: FieldParams, eig_tol: float,
                   level: float) -> dict:
    ok = [r for r in recs if not r.failed]
    n = recs[0].n
    m = len(ok)
    kernel, theta = params.kernel, params.theta
    pred = theory.predict(kernel, theta, n)
    out: dict = {"n": n, "replications": len(recs), "failed": len(recs) - m,
                 "predictions": pred.to_dict()}
    verdicts = []
    if m < 2:
        out["verdicts"] = verdicts
        return out

    centered = np.array([r.centered for r in ok])
    mom = stats.moments(centered)
    out["centered"] = mom.to_dict()
    if not pred.degenerate:
        tol = mean_tolerance(pred, theta, n, m)
        verdicts.append(verdict("mean_centered", mom.mean, pred.alpha, tol,
                                abs(mom.mean - pred.alpha) <= tol))
        rel = 5 * math.sqrt(2 / (m - 1))
        verdicts.append(verdict("variance_centered", mom.variance, pred.sigma2,
                                rel * pred.sigma2,
                                abs(mom.variance - pred.sigma2) <= rel * pred.sigma2))
        if m >= 100:
            ks = stats.ks_test(centered, pred.alpha, pred.sigma2)
            out["ks"] = ks.to_dict()
            verdicts.append(verdict("ks_normal", ks.p_value, None, level, ks.p_value > level))

    var_exact = theory.exact_var_quad(kernel, n)
    qw = stats.moments([r.quad_w for r in ok])
    rel = 5 * math.sqrt(2 / m)
    out["quad_w"] = {"empirical_var": qw.variance, "exact_var": var_exact}
    if var_exact > 0:
        ratio = qw.variance / var_exact
        verdicts.append(verdict("var_quad_w_ratio", ratio, 1.0, rel, abs(ratio - 1) <= rel))

    mean_exact = theory.exact_mean_w2(kernel, n)
    qw2 = stats.moments([r.quad_w2 for r in ok])
    out["quad_w2"] = {"empirical_mean": qw2.mean, "mean_se": qw2.mean_se,
                      "exact_mean": mean_exact, "limit_over_n2": 2 * pred.alpha * theta}
    verdicts.append(verdict("mean_quad_w2", qw2.mean, mean_exact, 5 * qw2.mean_se,
                            abs(qw2.mean - mean_exact) <= 5 * qw2.mean_se))

    rem = float(np.median([abs(r.remainder) for r in ok]))
    out["median_abs_remainder"] = rem
    if n >= 400 and not pred.degenerate:
        bound = REMAINDER_FRACTION * math.sqrt(pred.sigma2)
        verdicts.append(verdict("median_abs_remainder", rem, 0.0, bound, rem < bound))

    # |lambda_1 - 2 n theta| <= ||W||  and  lambda_1 >= 1'A1 / n
    bad_norm = bad_rayleigh = 0
    for r in ok:
        slack = 2 * eig_tol * max(r.op_norm, abs(r.lambda1))
        bad_norm += abs(r.centered) > r.op_norm + slack
        bad_rayleigh += r.centered < r.quad_w / n - slack
    verdicts.append(verdict("rank_one_norm_bound_violations", bad_norm, 0, 0, bad_norm == 0))
    verdicts.append(verdict("rayleigh_bound_violations", bad_rayleigh, 0, 0, bad_rayleigh == 0))

    out["op_norm_over_sqrt_n"] = stats.quantiles([r.op_norm / math.sqrt(n) for r in ok])
    out["verdicts"] = verdicts
    return out


def summarize(records: list[RepRecord], config: RunConfig) -> dict:
    params = config.params
    sizes = sorted({r.n for r in records})
    per_size = [summarize_size([r for r in records if r.n == n], params,
                               config.eig_tol, config.level) for n in sizes]
    run_verdicts = []
    tight = op_norm_tightness(op_norm_quantiles(records))
    if tight is not None:
        run_verdicts.append(tight)
    pred = theory.predict(params.kernel, params.theta, 1)
    if pred.degenerate and len(sizes) >= 2:
        variances = [s["centered"]["variance"] for s in per_size if "centered" in s]
        dec = all(b < a for a, b in zip(variances, variances[1:]))
        run_verdicts.append(verdict("degenerate_variance_decreasing", variances, None, None, dec))
    passed = all(v["passed"] for s in per_size for v in s["verdicts"]) and \
        all(v["passed"] for v in run_verdicts)
    return {
        "failed_replications": sum(r.failed for r in records),
        "sizes": per_size,
        "run_verdicts": run_verdicts,
        "passed": passed,
    }


def qq_table(records: list[RepRecord], params: FieldParams) -> list[dict]:
    """Q-Q pairs of the centered statistic against ``N(alpha, sigma2)`` per size."""
    rows = []
    for n in sorted({r.n for r in records}):
        pred = theory.predict(params.kernel, params.theta, n)
        vals = [r.centered for r in records if r.n == n and not r.failed]
        if pred.sigma2 <= 0 or len(vals) < 2:
            continue
        for t, e in stats.qq_points(vals, pred.alpha, pred.sigma2):
            rows.append({"n": n, "theoretical": t, "empirical": e})
    return rows


def record_dict(r: RepRecord) -> dict:
    return asdict(r)
