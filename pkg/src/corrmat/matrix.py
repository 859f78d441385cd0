"""Build ``A_N`` and ``W_N`` from a field sample; quadratic forms and extremal spectra.

Matrices are plain symmetric ``numpy`` arrays.  Extremal eigenvalues come from a
Lanczos iteration with full reorthogonalization and thick restarts; a dense
solver is used as fallback for small matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampler import FieldSample

DENSE_CAP = 256
EIG_TOL = 1e-10
MAX_BASIS = 200
KEEP = 12
CHECK_EVERY = 8


class EigenSolverError(RuntimeError):
    """Lanczos did not converge; carries the best iterate."""

    def __init__(self, msg, results: dict):
        super().__init__(msg)
        self.results = results


@dataclass
class EigResult:
    lam: float
    vector: np.ndarray
    residual: float
    iterations: int
    converged: bool = True


def build_a(sample: FieldSample) -> np.ndarray:
    z = sample.values
    return z + z.T


def build_w(sample: FieldSample) -> np.ndarray:
    x = sample.values - sample.theta
    return x + x.T


def quad_ones(m: np.ndarray) -> float:
    return float(m.sum())


def quad_ones_sq(m: np.ndarray) -> float:
    """``1' M^2 1 = ||M 1||^2`` for symmetric ``M``."""
    r = m.sum(axis=1)
    return float(r @ r)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    # first coordinate above round-off level is made positive
    big = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max()) if v.size else []
    if len(big) and v[big[0]] < 0:
        v = -v
    return v


def _orthogonalize(w, basis):
    # two passes of classical Gram-Schmidt
    for _ in range(2):
        w = w - basis @ (basis.T @ w)
    return w


def lanczos_extremes(m: np.ndarray, *, ends=("max",), tol: float = EIG_TOL,
                     max_iter: int | None = None, v0: np.ndarray | None = None,
                     max_basis: int = MAX_BASIS, keep: int = KEEP,
                     rng=None) -> dict[str, EigResult]:
    """Extremal eigenpairs of symmetric ``m`` from one Krylov space.

    ``ends`` selects ``"max"`` and/or ``"min"``.  A pair is accepted once
    ``||m y - theta y|| <= tol * est``, where ``est`` is the largest Ritz value
    magnitude seen so far.  The basis is thick-restarted at ``max_basis``
    vectors, keeping ``keep`` Ritz vectors next to each requested end.
    """
    n = m.shape[0]
    if n < 1:
        raise ValueError("empty matrix")
    if tol <= 0:
        raise ValueError("tol must be > 0")
    max_iter = 10 * n if max_iter is None else max_iter
    max_basis = max(2, min(max_basis, n))
    rng = np.random.default_rng(0) if rng is None else rng
    if v0 is None:
        v0 = rng.standard_normal(n)

    V = np.zeros((n, max_basis))
    AV = np.zeros((n, max_basis))
    H = np.zeros((max_basis, max_basis))
    k = 0
    iters = 0
    q = np.asarray(v0, dtype=float)

    def ritz(k):
        theta, S = np.linalg.eigh(H[:k, :k])
        est = float(np.abs(theta).max())
        out = {}
        for end in ends:
            j = k - 1 if end == "max" else 0
            y = V[:, :k] @ S[:, j]
            r = AV[:, :k] @ S[:, j] - theta[j] * y
            out[end] = (float(theta[j]), y, float(np.linalg.norm(r)))
        done = all(res <= tol * est for _, _, res in out.values())
        return theta, S, out, done

    while True:
        q0 = np.linalg.norm(q)
        q = _orthogonalize(q, V[:, :k])
        nq = np.linalg.norm(q)
        if k == 0 and nq == 0.0:
            q = rng.standard_normal(n)
            nq = np.linalg.norm(q)
        elif k and nq <= 1e-10 * q0:
            # invariant subspace: its Ritz pairs are exact
            theta, S, out, done = ritz(k)
            if done:
                return _finish(out, iters, True)
            q = _orthogonalize(rng.standard_normal(n), V[:, :k])
            nq = np.linalg.norm(q)
        V[:, k] = q / nq
        AV[:, k] = m @ V[:, k]
        iters += 1
        H[:k + 1, k] = V[:, :k + 1].T @ AV[:, k]
        H[k, :k] = H[:k, k]
        k += 1

        if k % CHECK_EVERY == 0 or k == max_basis or iters >= max_iter:
            theta, S, out, done = ritz(k)
            # a basis spanning the whole space leaves round-off residuals only
            if done or k == n:
                return _finish(out, iters, True)
            if iters >= max_iter:
                res = _finish(out, iters, False)
                worst = max(r.residual for r in res.values())
                raise EigenSolverError(
                    f"Lanczos did not converge in {iters} iterations (residual {worst:.3e})", res)
            if k == max_basis:
                # thick restart around the requested ends
                cols = set()
                if "max" in ends:
                    cols.update(range(max(k - keep, 0), k))
                if "min" in ends:
                    cols.update(range(0, min(keep, k)))
                S_keep = S[:, sorted(cols)]
                # continue from the residual of the least converged pair
                end = max(out, key=lambda e: out[e][2])
                j = k - 1 if end == "max" else 0
                q = AV[:, :k] @ S[:, j] - theta[j] * (V[:, :k] @ S[:, j])
                Vn = V[:, :k] @ S_keep
                AVn = AV[:, :k] @ S_keep
                k = Vn.shape[1]
                V[:, :k] = Vn
                AV[:, :k] = AVn
                H[:] = 0.0
                Hk = Vn.T @ AVn
                H[:k, :k] = 0.5 * (Hk + Hk.T)
                continue
        q = AV[:, k - 1].copy()


def _finish(out, iters, converged) -> dict[str, EigResult]:
    res = {}
    for end, (lam, y, r) in out.items():
        y = y / np.linalg.norm(y)
        res[end] = EigResult(lam, _fix_sign(y), r, iters, converged)
    return res


def _dense(m: np.ndarray, end: str) -> EigResult:
    w, U = np.linalg.eigh(m)
    j = -1 if end == "max" else 0
    v = _fix_sign(U[:, j])
    r = float(np.linalg.norm(m @ v - w[j] * v))
    return EigResult(float(w[j]), v, r, 0)


def largest_eigenvalue(m: np.ndarray, tol: float = EIG_TOL, max_iter: int | None = None,
                       v0: np.ndarray | None = None, dense_cap: int = DENSE_CAP) -> EigResult:
    """Algebraically largest eigenpair of a symmetric matrix."""
    try:
        return lanczos_extremes(m, ends=("max",), tol=tol, max_iter=max_iter, v0=v0)["max"]
    except EigenSolverError:
        if m.shape[0] <= dense_cap:
            return _dense(m, "max")
        raise


def operator_norm(m: np.ndarray, tol: float = EIG_TOL, max_iter: int | None = None,
                  v0: np.ndarray | None = None, dense_cap: int = DENSE_CAP) -> float:
    """``max(lambda_max(m), lambda_max(-m))``; both ends come from one Krylov space."""
    return operator_norm_result(m, tol, max_iter, v0, dense_cap)[0]


def operator_norm_result(m, tol=EIG_TOL, max_iter=None, v0=None, dense_cap=DENSE_CAP):
    """Operator norm plus the total iteration count."""
    try:
        res = lanczos_extremes(m, ends=("max", "min"), tol=tol, max_iter=max_iter, v0=v0)
        hi, lo = res["max"], res["min"]
    except EigenSolverError:
        if m.shape[0] > dense_cap:
            raise
        hi, lo = _dense(m, "max"), _dense(m, "min")
    return max(hi.lam, -lo.lam, 0.0), hi.iterations
