"""Stationary covariance kernels on the integer lattice Z^2.

Kernels are finite tables ``R(u, v) = Cov(Z_00, Z_uv)``.  The preferred way to
build one is from a moving-average filter, which is positive semidefinite by
construction; explicit tables must go through :func:`validate_kernel` before
they are used for sampling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

Lag = tuple[int, int]

# relative tolerance on the embedded spectrum, scaled by abs_sum
TOL_PSD = 1e-9


class KernelError(ValueError):
    """Raised for malformed filters, tables or kernel files."""


def _check_finite(lag, value):
    if not math.isfinite(value):
        raise KernelError(f"non-finite value {value!r} at lag {lag}")


def _normalize_entries(values: Mapping[Lag, float]) -> tuple[tuple[int, int, float], ...]:
    out = []
    for lag, value in values.items():
        u, v = (int(lag[0]), int(lag[1]))
        if (u, v) != tuple(lag):
            raise KernelError(f"lag {lag!r} is not an integer pair")
        value = float(value)
        _check_finite((u, v), value)
        out.append((u, v, value))
    return tuple(sorted(out))


@dataclass(frozen=True)
class MAFilter:
    """Moving-average filter ``a(s, t)`` with finite support."""

    coeffs: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if not self.coeffs:
            raise KernelError("empty MA filter")
        if all(c[2] == 0.0 for c in self.coeffs):
            raise KernelError("MA filter has no nonzero coefficient")
        for s, t, a in self.coeffs:
            _check_finite((s, t), a)

    @classmethod
    def from_dict(cls, coeffs: Mapping[Lag, float]) -> "MAFilter":
        if not coeffs:
            raise KernelError("empty MA filter")
        return cls(_normalize_entries(coeffs))

    @property
    def as_dict(self) -> dict[Lag, float]:
        return {(s, t): a for s, t, a in self.coeffs}

    @property
    def box(self) -> tuple[int, int, int, int]:
        s = [c[0] for c in self.coeffs]
        t = [c[1] for c in self.coeffs]
        return min(s), max(s), min(t), max(t)

    @property
    def coeff_sum(self) -> float:
        return math.fsum(c[2] for c in self.coeffs)


@dataclass(frozen=True)
class Kernel:
    """Finite covariance table, symmetric under ``(u, v) -> (-u, -v)``.

    ``entries`` is a sorted tuple of ``(u, v, R(u, v))``; the origin is always
    present.  Instances are immutable and hashable.
    """

    entries: tuple[tuple[int, int, float], ...]

    @cached_property
    def as_dict(self) -> dict[Lag, float]:
        return {(u, v): r for u, v, r in self.entries}

    def __getitem__(self, lag: Lag) -> float:
        return self.as_dict.get((lag[0], lag[1]), 0.0)

    @cached_property
    def lags(self) -> np.ndarray:
        return np.array([(u, v) for u, v, _ in self.entries], dtype=np.int64).reshape(-1, 2)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([r for _, _, r in self.entries], dtype=float)

    @property
    def box(self) -> tuple[int, int, int, int]:
        lags = self.lags
        return (int(lags[:, 0].min()), int(lags[:, 0].max()),
                int(lags[:, 1].min()), int(lags[:, 1].max()))

    @property
    def radius(self) -> int:
        """Largest |u| or |v| over the support."""
        return int(np.abs(self.lags).max())

    @cached_property
    def abs_sum(self) -> float:
        return math.fsum(abs(r) for _, _, r in self.entries)

    @cached_property
    def total_sum(self) -> float:
        return math.fsum(r for _, _, r in self.entries)

    @property
    def origin_value(self) -> float:
        return self[(0, 0)]


@dataclass(frozen=True)
class FieldParams:
    theta: float
    kernel: Kernel
    ma: MAFilter | None = field(default=None)

    def __post_init__(self):
        if not (math.isfinite(self.theta) and self.theta > 0):
            raise KernelError(f"theta must be > 0, got {self.theta!r}")


@dataclass(frozen=True)
class ValidityReport:
    embed_size: int
    min_spectral: float
    max_spectral: float
    tol: float
    valid: bool

    def to_dict(self) -> dict:
        return {
            "embed_size": self.embed_size,
            "min_spectral": self.min_spectral,
            "max_spectral": self.max_spectral,
            "tol": self.tol,
            "valid": self.valid,
        }


def _make_kernel(values: dict[Lag, float]) -> Kernel:
    values.setdefault((0, 0), 0.0)
    entries = _normalize_entries(values)
    kernel = Kernel(entries)
    if kernel.origin_value < 0:
        raise KernelError(f"R(0,0) must be >= 0, got {kernel.origin_value}")
    return kernel


def kernel_from_ma(filt: MAFilter) -> Kernel:
    """Kernel ``R(u, v) = sum_{s,t} a(s,t) a(s+u, t+v)`` of a moving average."""
    if not filt.coeffs:
        raise KernelError("empty MA filter")
    products: dict[Lag, list[float]] = {}
    for s, t, a in filt.coeffs:
        for s2, t2, a2 in filt.coeffs:
            products.setdefault((s2 - s, t2 - t), []).append(a * a2)
    # fsum of the same multiset of products keeps R(u,v) == R(-u,-v) bit-exact
    values = {lag: math.fsum(p) for lag, p in products.items()}
    values = {lag: r for lag, r in values.items() if r != 0.0 or lag == (0, 0)}
    return _make_kernel(values)


def kernel_explicit(values: Mapping[Lag, float]) -> Kernel:
    """Kernel from an explicit table; paired entries must match exactly."""
    table = {}
    for lag, r in values.items():
        r = float(r)
        _check_finite(lag, r)
        table[(int(lag[0]), int(lag[1]))] = r
    if not table:
        raise KernelError("empty kernel table")
    for (u, v), r in table.items():
        mate = table.get((-u, -v))
        if mate is None:
            raise KernelError(f"asymmetric kernel: lag ({u},{v}) has no ({-u},{-v}) mate")
        if mate != r:
            raise KernelError(
                f"asymmetric kernel: R({u},{v})={r!r} but R({-u},{-v})={mate!r}")
    return _make_kernel(table)


def wigner_kernel(eta2: float = 1.0) -> Kernel:
    """Independent entries: ``R(0,0) = eta2 / 2`` and zero elsewhere."""
    return kernel_explicit({(0, 0): eta2 / 2})


def wigner_params(theta: float, eta2: float = 1.0) -> FieldParams:
    """Wigner field parameters; the attached MA filter is the scalar sqrt(eta2/2)."""
    return FieldParams(theta, wigner_kernel(eta2), MAFilter(((0, 0, math.sqrt(eta2 / 2)),)))


def ma_params(theta: float, coeffs: Mapping[Lag, float]) -> FieldParams:
    filt = MAFilter.from_dict(coeffs)
    return FieldParams(theta, kernel_from_ma(filt), filt)


def embed_on_torus(kernel: Kernel, size: int) -> np.ndarray:
    """Wrap the kernel onto a ``size x size`` torus (lags taken mod size)."""
    c = np.zeros((size, size))
    lags = kernel.lags % size
    np.add.at(c, (lags[:, 0], lags[:, 1]), kernel.weights)
    return c


def _is_pow2(m: int) -> bool:
    return m >= 1 and m & (m - 1) == 0


def validate_kernel(kernel: Kernel, embed_size: int) -> ValidityReport:
    """Check that the torus embedding of ``kernel`` has a nonnegative spectrum."""
    if not _is_pow2(embed_size) or embed_size < 2 * kernel.radius + 2:
        raise ValueError(
            f"embed_size must be a power of two >= {2 * kernel.radius + 2}, got {embed_size}")
    spec = np.fft.fft2(embed_on_torus(kernel, embed_size)).real
    tol = TOL_PSD * kernel.abs_sum
    lo = float(spec.min())
    return ValidityReport(embed_size, lo, float(spec.max()), tol, lo >= -tol)


def default_embed_size(kernel: Kernel, minimum: int = 64) -> int:
    m = minimum
    while m < 2 * kernel.radius + 2:
        m *= 2
    return m


def truncate_kernel(kernel: Kernel, eps: float) -> Kernel:
    """Drop the smallest symmetric pairs while the removed |R| mass stays <= eps.

    The origin entry is never dropped.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    table = dict(kernel.as_dict)
    pairs = []
    for u, v, r in kernel.entries:
        if (u, v) == (0, 0) or (u, v) < (-u, -v):
            continue
        mass = abs(r) + (abs(table[(-u, -v)]) if (u, v) != (-u, -v) else 0.0)
        pairs.append((mass, (u, v)))
    pairs.sort()
    removed = 0.0
    for mass, (u, v) in pairs:
        if removed + mass > eps:
            break
        removed += mass
        del table[(u, v)]
        table.pop((-u, -v), None)
    if len(table) == len(kernel.entries):
        return kernel
    return Kernel(_normalize_entries(table))


# --- JSON schema -------------------------------------------------------------

def _parse_coeffs(raw) -> dict[Lag, float]:
    if not isinstance(raw, list):
        raise KernelError("'coeffs' must be a list of [s, t, value] triples")
    out: dict[Lag, float] = {}
    for item in raw:
        if not (isinstance(item, (list, tuple)) and len(item) == 3):
            raise KernelError(f"bad coefficient entry {item!r}")
        s, t, val = item
        if not (isinstance(s, int) and isinstance(t, int)) or isinstance(s, bool) or isinstance(t, bool):
            raise KernelError(f"lag indices must be integers: {item!r}")
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise KernelError(f"coefficient must be a number: {item!r}")
        if (s, t) in out:
            raise KernelError(f"duplicate lag ({s},{t})")
        out[(s, t)] = float(val)
    return out


def params_from_spec(spec: Mapping, theta: float) -> FieldParams:
    """Build :class:`FieldParams` from a kernel JSON object."""
    if not isinstance(spec, Mapping):
        raise KernelError("kernel spec must be a JSON object")
    kind = spec.get("type")
    if kind in ("ma", "explicit"):
        extra = set(spec) - {"type", "coeffs"}
        if extra:
            raise KernelError(f"unknown kernel key(s): {sorted(extra)}")
        coeffs = _parse_coeffs(spec.get("coeffs"))
        if kind == "ma":
            return ma_params(theta, coeffs)
        return FieldParams(theta, kernel_explicit(coeffs))
    if kind == "wigner":
        extra = set(spec) - {"type", "eta2"}
        if extra:
            raise KernelError(f"unknown kernel key(s): {sorted(extra)}")
        eta2 = spec.get("eta2", 1.0)
        if not isinstance(eta2, (int, float)) or isinstance(eta2, bool) or not eta2 > 0:
            raise KernelError(f"eta2 must be a positive number, got {eta2!r}")
        return wigner_params(theta, float(eta2))
    raise KernelError(f"unknown kernel type {kind!r}")


def kernel_from_spec(spec: Mapping) -> Kernel:
    # theta is irrelevant for the kernel itself
    return params_from_spec(spec, 1.0).kernel


def load_kernel_spec(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise KernelError(f"{path}: invalid JSON ({exc})") from None


def kernel_to_spec(kernel: Kernel) -> dict:
    return {"type": "explicit", "coeffs": [[u, v, r] for u, v, r in kernel.entries]}


def filter_to_spec(filt: MAFilter) -> dict:
    return {"type": "ma", "coeffs": [[s, t, a] for s, t, a in filt.coeffs]}
