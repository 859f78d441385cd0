"""Exact samplers for the stationary Gaussian field ``Z_ij``, ``1 <= i, j <= n``.

Three routes are provided: a direct moving-average convolution, a dense
Cholesky reference sampler, and circulant embedding on a 2D torus.  All of them
are pure functions of ``(params, n, stream)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernel import TOL_PSD, FieldParams, Kernel, embed_on_torus

log = logging.getLogger(__name__)

CHOLESKY_CAP = 48
CHOLESKY_JITTER = 1e-12

SAMPLERS = ("ma", "cholesky", "circulant")


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(master_seed, n, rep_index)``.

    Streams are derived through :class:`numpy.random.SeedSequence` and drive a
    Philox generator, so every replication is reproducible on its own.
    """

    master_seed: int
    n: int
    rep_index: int

    def _seq(self, purpose: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=(self.n, self.rep_index, purpose))

    @property
    def seed(self) -> int:
        """64-bit stream key used for the field draw."""
        return int(self._seq(0).generate_state(1, np.uint64)[0])

    def generator(self, purpose: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self._seq(purpose)))

    def start_vector(self, size: int) -> np.ndarray:
        """Unit start vector for the eigensolver, independent of the field draw."""
        x = self.generator(1).standard_normal(size)
        return x / np.linalg.norm(x)


@dataclass
class FieldSample:
    n: int
    theta: float
    values: np.ndarray
    seed: int | None = None

    @property
    def centered(self) -> np.ndarray:
        return self.values - self.theta


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator(0)
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _stream_seed(rng):
    return rng.seed if isinstance(rng, RngStream) else None


def sample_ma(params: FieldParams, n: int, rng) -> FieldSample:
    """``Z_ij = theta + sum_{s,t} a(s,t) xi_{i+s, j+t}`` with iid standard normal ``xi``."""
    if params.ma is None:
        raise SamplerError("MA sampler requires MA-specified kernel")
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = _as_generator(rng)
    smin, smax, tmin, tmax = params.ma.box
    xi = gen.standard_normal((n + smax - smin, n + tmax - tmin))
    z = np.zeros((n, n))
    for s, t, a in params.ma.coeffs:
        z += a * xi[s - smin:s - smin + n, t - tmin:t - tmin + n]
    z += params.theta
    return FieldSample(n, params.theta, z, _stream_seed(rng))


def bttb_covariance(kernel: Kernel, n: int) -> np.ndarray:
    """Covariance of the flattened window: entry ``((i,j),(k,l)) = R(i-k, j-l)``."""
    idx = np.arange(n)
    du = idx[:, None, None, None] - idx[None, None, :, None]
    dv = idx[None, :, None, None] - idx[None, None, None, :]
    du = np.broadcast_to(du, (n, n, n, n))
    dv = np.broadcast_to(dv, (n, n, n, n))
    cov = np.zeros((n, n, n, n))
    for u, v, r in kernel.entries:
        cov[(du == u) & (dv == v)] = r
    return cov.reshape(n * n, n * n)


@lru_cache(maxsize=32)
def _cholesky_factor(kernel: Kernel, n: int) -> np.ndarray:
    cov = bttb_covariance(kernel, n)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    cov[np.diag_indices_from(cov)] += CHOLESKY_JITTER * kernel.origin_value
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SamplerError(f"kernel not positive semidefinite at size {n}") from None


def sample_cholesky(params: FieldParams, n: int, rng) -> FieldSample:
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > CHOLESKY_CAP:
        raise SamplerError(f"cholesky sampler is capped at n={CHOLESKY_CAP}, got {n}")
    factor = _cholesky_factor(params.kernel, n)
    xi = _as_generator(rng).standard_normal(n * n)
    z = (factor @ xi).reshape(n, n) + params.theta
    return FieldSample(n, params.theta, z, _stream_seed(rng))


def embedding_period(n: int, radius: int) -> int:
    """Smallest power of two >= 2 (n + radius)."""
    return 1 << max(0, math.ceil(math.log2(2 * (n + radius))))


@lru_cache(maxsize=64)
def embedding_spectrum(kernel: Kernel, n: int) -> np.ndarray:
    """Square roots of the (clamped) torus spectrum, scaled for synthesis."""
    m = embedding_period(n, kernel.radius)
    lam = np.fft.fft2(embed_on_torus(kernel, m)).real
    lo = lam.min()
    tol = TOL_PSD * kernel.abs_sum
    if lo < -tol:
        raise SamplerError(f"circulant embedding failed: min spectral value {lo:.3e} < -{tol:.1e}")
    neg = int((lam < 0).sum())
    if neg:
        log.info("circulant embedding: clamped %d negative spectral values (min %.3e)", neg, lo)
    np.maximum(lam, 0.0, out=lam)
    return np.sqrt(lam) / m


def sample_circulant(params: FieldParams, n: int, rng) -> FieldSample:
    if n < 1:
        raise ValueError("n must be >= 1")
    weights = embedding_spectrum(params.kernel, n)
    m = weights.shape[0]
    gen = _as_generator(rng)
    eps = gen.standard_normal((2, m, m))
    field = np.fft.fft2(weights * (eps[0] + 1j * eps[1]))
    z = field.real[:n, :n] + params.theta
    return FieldSample(n, params.theta, z, _stream_seed(rng))


def draw(params: FieldParams, n: int, rng, sampler: str = "ma") -> FieldSample:
    if sampler == "ma":
        return sample_ma(params, n, rng)
    if sampler == "cholesky":
        return sample_cholesky(params, n, rng)
    if sampler == "circulant":
        return sample_circulant(params, n, rng)
    raise ValueError(f"unknown sampler {sampler!r}")


def dump_sample(sample: FieldSample, fh, seed=None) -> None:
    """Write the grid as text: a header line, then one row per line (17 sig. digits)."""
    seed = sample.seed if seed is None else seed
    fh.write(f"# n={sample.n} theta={sample.theta!r} seed={seed}\n")
    for row in sample.values:
        fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_sample_dump(fh) -> FieldSample:
    header = fh.readline().strip()
    if not header.startswith("#"):
        raise ValueError("missing sample header")
    meta = dict(item.split("=", 1) for item in header[1:].split())
    rows = [[float(x) for x in line.split()] for line in fh if line.strip()]
    values = np.array(rows, dtype=float)
    n = int(meta["n"])
    if values.shape != (n, n):
        raise ValueError(f"expected {n}x{n} grid, got {values.shape}")
    seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
    return FieldSample(n, float(meta["theta"]), values, seed)
