"""Thin SVD through the Gram matrix and a cyclic Jacobi eigensolver.

For an ``n x m`` matrix with ``n >> m`` only the ``m x m`` Gram matrix is
diagonalized; left singular vectors are recovered as ``u_i = X v_i / s_i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, DegenerateInputError, ShapeMismatchError

MAX_SWEEPS = 50
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray  # n x r
    sigma: np.ndarray  # r, descending
    V: np.ndarray  # m x r
    rank: int  # number of singular values above RANK_RTOL * sigma_1

    @property
    def spectral_gap(self) -> float:
        if len(self.sigma) < 2:
            return 1.0
        if self.sigma[0] == 0:
            return 0.0
        return float((self.sigma[0] - self.sigma[1]) / self.sigma[0])

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


def gram(x: np.ndarray) -> np.ndarray:
    """``X^T X``: inner products between all pairs of columns."""
    x = np.asarray(x, dtype=np.float64)
    g = x.T @ x
    return 0.5 * (g + g.T)


def jacobi_eigh(s: np.ndarray, tol: float = 1e-12, max_sweeps: int = MAX_SWEEPS):
    """Eigen-decomposition of a symmetric matrix by cyclic-by-rows Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * ||S||_F``. Returns eigenvalues in descending order and the matching
    orthonormal eigenvectors as columns.
    """
    a = np.array(s, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    norm = np.linalg.norm(a)
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(norm, 1.0)):
        raise ConfigError("matrix is not symmetric")
    n = a.shape[0]
    q = np.eye(n)
    threshold = tol * norm

    def off_norm():
        return np.linalg.norm(a - np.diag(np.diag(a)))

    sweeps = 0
    while off_norm() > threshold:
        if sweeps == max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if apr == 0.0:
                    continue
                app, arr = a[p, p], a[r, r]
                theta = (arr - app) / (2.0 * apr)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                # A <- J^T A J on rows/cols p, r
                ap = a[:, p].copy()
                ar = a[:, r]
                a[:, p] = c * ap - sn * ar
                a[:, r] = sn * ap + c * ar
                ap = a[p, :].copy()
                ar = a[r, :]
                a[p, :] = c * ap - sn * ar
                a[r, :] = sn * ap + c * ar
                a[p, r] = a[r, p] = 0.0
                qp = q[:, p].copy()
                qr = q[:, r]
                q[:, p] = c * qp - sn * qr
                q[:, r] = sn * qp + c * qr
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], q[:, order]


def _complete_basis(u: np.ndarray, good: int) -> np.ndarray:
    """Replace columns ``good:`` of ``u`` with an orthonormal complement of the first ``good``."""
    n, r = u.shape
    if good == r:
        return u
    basis = u[:, :good]
    filled = [basis[:, i] for i in range(good)]
    for e in np.eye(n):
        if len(filled) == r:
            break
        v = e.copy()
        for _ in range(2):
            for b in filled:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            filled.append(v / nv)
    return np.column_stack(filled)


def svd_via_gram(x: np.ndarray) -> SvdResult:
    """Thin SVD of ``x`` (n x m, n >= m is the intended use).

    ``sigma_i`` is taken as ``||X v_i||``, which equals ``sqrt(lambda_i)`` but
    stays accurate for tiny values where the squared Gram eigenvalue has
    already lost every digit. Columns whose singular value is at most
    ``1e-10 * sigma_1`` are outside ``rank``; their left vectors are an
    arbitrary orthonormal completion.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("svd_via_gram needs a 2D matrix")
    _, v = jacobi_eigh(gram(x))
    r = min(x.shape)
    w = x @ v
    sigma = np.linalg.norm(w, axis=0)
    order = np.argsort(-sigma, kind="stable")[:r]
    sigma, v, w = sigma[order], v[:, order], w[:, order]
    rank = int(np.sum(sigma > RANK_RTOL * sigma[0])) if sigma[0] > 0 else 0
    u = np.zeros((x.shape[0], r))
    if rank:
        u[:, :rank] = w[:, :rank] / sigma[:rank]
        # small sigma_i amplify rounding in X v_i; two modified Gram-Schmidt
        # passes restore orthogonality without touching the leading direction
        for _ in range(2):
            for i in range(1, rank):
                for j in range(i):
                    u[:, i] -= (u[:, j] @ u[:, i]) * u[:, j]
                u[:, i] /= np.linalg.norm(u[:, i])
    u = _complete_basis(u, rank)
    return SvdResult(u, sigma, v, rank)


def truncate(svd: SvdResult, r: int) -> np.ndarray:
    """Best rank-``r`` approximation ``sum_{i<=r} s_i u_i v_i^T``."""
    if not 1 <= r <= max(svd.rank, 1):
        raise ConfigError(f"rank {r} outside [1, {svd.rank}]")
    return (svd.U[:, :r] * svd.sigma[:r]) @ svd.V[:, :r].T


def rank1_column(svd: SvdResult, k: int) -> np.ndarray:
    """Column ``k`` of the rank-1 truncation: ``s_1 * v_1[k] * u_1``."""
    if not 0 <= k < svd.V.shape[0]:
        raise IndexError(f"column {k} out of range")
    return svd.sigma[0] * svd.V[k, 0] * svd.U[:, 0]


def canonical_sign(u: np.ndarray) -> np.ndarray:
    """Flip ``u`` so its entries sum positive; a zero sum defers to the first nonzero entry."""
    u = np.asarray(u, dtype=np.float64)
    if not np.any(u):
        raise DegenerateInputError("cannot fix the sign of a zero vector")
    total = u.sum()
    if abs(total) <= 1e-12 * max(np.abs(u).sum(), 1.0):
        first = u[np.flatnonzero(u)[0]]
        return u if first > 0 else -u
    return u if total > 0 else -u


def pearson(a, b) -> float:
    """Product-moment correlation of two equally long, non-constant vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ShapeMismatchError("pearson needs two vectors of equal length >= 2")
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = da @ da, db @ db
    if saa == 0 or sbb == 0:
        raise DegenerateInputError("correlation of a constant vector is undefined")
    return float(np.clip((da @ db) / np.sqrt(saa * sbb), -1.0, 1.0))
