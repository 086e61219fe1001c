"""Priors, likelihoods and conjugate updates for the linear-Gaussian IBP.

Everything here is a pure function of its arguments plus an explicit
``numpy.random.Generator``. Probabilities are handled in the log domain.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)


def harmonic(n: int) -> float:
    """Return H_n = sum_{i=1}^n 1/i."""
    if n < 0:
        raise ValueError("harmonic number needs n >= 0")
    return float(np.sum(1.0 / np.arange(1, n + 1))) if n else 0.0


def as_binary(Z, n_rows: int | None = None) -> np.ndarray:
    """Coerce ``Z`` to an ``(N, K)`` int8 array and check it is binary.

    ``Z`` may be a :class:`FeatureMatrix`, an array, or an empty sequence
    (in which case ``n_rows`` gives N).
    """
    if isinstance(Z, FeatureMatrix):
        return Z.values
    arr = np.asarray(Z)
    if arr.size == 0:
        if n_rows is None:
            n_rows = arr.shape[0] if arr.ndim == 2 else 0
        return np.zeros((n_rows, 0), dtype=np.int8)
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-d, got shape {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("feature matrix entries must be 0 or 1")
    return arr.astype(np.int8, copy=False)


class FeatureMatrix:
    """Binary N x K assignment matrix with cached column counts ``m_k``."""

    def __init__(self, values, n_rows: int | None = None):
        self.values = np.array(as_binary(values, n_rows), dtype=np.int8)
        self.counts = self.values.sum(axis=0, dtype=np.int64)

    @classmethod
    def empty(cls, n_rows: int) -> "FeatureMatrix":
        return cls(np.zeros((n_rows, 0), dtype=np.int8))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self) -> str:
        return f"FeatureMatrix(n_rows={self.n_rows}, n_features={self.n_features})"

    def set(self, n: int, k: int, value: int) -> None:
        old = self.values[n, k]
        if old != value:
            self.values[n, k] = value
            self.counts[k] += int(value) - int(old)

    def append_columns(self, cols: np.ndarray) -> None:
        cols = as_binary(cols, self.n_rows)
        self.values = np.hstack([self.values, cols])
        self.counts = np.concatenate([self.counts, cols.sum(axis=0, dtype=np.int64)])

    def keep_columns(self, keep) -> None:
        keep = np.asarray(keep, dtype=np.int64)
        self.values = self.values[:, keep]
        self.counts = self.counts[keep]

    def prune(self) -> np.ndarray:
        """Drop all-zero columns; return the indices that were kept."""
        keep = np.flatnonzero(self.counts > 0)
        self.keep_columns(keep)
        return keep

    def check(self) -> None:
        assert np.array_equal(self.counts, self.values.sum(axis=0))


@dataclasses.dataclass(frozen=True)
class HyperParams:
    alpha: float = 1.0
    sigma_x: float = 0.5
    sigma_a: float = 1.0
    # Gamma(shape, rate) prior on alpha
    alpha_prior: tuple[float, float] = (1.0, 1.0)
    variance_step: float = 0.1
    resample_alpha: bool = True
    resample_sigma_x: bool = False
    resample_sigma_a: bool = False

    def __post_init__(self):
        for name in ("alpha", "sigma_x", "sigma_a", "variance_step"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        a, b = self.alpha_prior
        if a <= 0 or b <= 0:
            raise ValueError("alpha_prior shape and rate must be positive")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# IBP prior
# ---------------------------------------------------------------------------

def sample_ibp_restaurant(n_rows: int, alpha: float, rng: np.random.Generator) -> FeatureMatrix:
    """Draw Z from the IBP prior by the sequential restaurant scheme.

    Row ``n`` (1-based) takes existing dish ``k`` with probability m_k/n and
    then Poisson(alpha/n) new dishes. Columns are returned in creation order.
    """
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    rows = []
    counts = np.zeros(0, dtype=np.int64)
    for n in range(1, n_rows + 1):
        old = rng.random(counts.size) < counts / n
        k_new = rng.poisson(alpha / n)
        row = np.concatenate([old, np.ones(k_new, dtype=bool)])
        counts = np.concatenate([counts, np.zeros(k_new, dtype=np.int64)]) + row
        rows.append(row)
    Z = np.zeros((n_rows, counts.size), dtype=np.int8)
    for n, row in enumerate(rows):
        Z[n, : row.size] = row
    return FeatureMatrix(Z)


def _column_terms(counts: np.ndarray, n_rows: int) -> float:
    # sum_k log[(N - m_k)! (m_k - 1)! / N!]
    return float(np.sum(special.gammaln(n_rows - counts + 1)
                        + special.gammaln(counts)
                        - special.gammaln(n_rows + 1)))


def birth_rows(Z) -> np.ndarray:
    """Index of the first active row of each column (-1 for empty columns)."""
    Z = as_binary(Z)
    if Z.shape[1] == 0:
        return np.zeros(0, dtype=np.int64)
    active = Z.any(axis=0)
    return np.where(active, Z.argmax(axis=0), -1).astype(np.int64)


def log_ibp_prior_from_counts(counts, births, n_rows: int, alpha: float) -> float:
    """Restaurant path log-probability from column counts and birth rows.

    ``births[k]`` is the 0-based row at which column ``k`` first appears.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    counts = np.asarray(counts, dtype=np.int64)
    births = np.asarray(births, dtype=np.int64)
    if np.any(counts <= 0):
        raise ValueError("all-zero column has no restaurant realization")
    k_plus = counts.size
    per_row = np.bincount(births, minlength=n_rows) if k_plus else np.zeros(n_rows)
    return (k_plus * math.log(alpha)
            - alpha * harmonic(n_rows)
            - float(np.sum(special.gammaln(per_row + 1)))
            + _column_terms(counts, n_rows))


def log_ibp_prior(Z, alpha: float, n_rows: int | None = None) -> float:
    """Log-probability that the restaurant process generates exactly ``Z``.

    Columns are matched to the customer that first took them; the k_n dishes
    born in row ``n`` carry the Poisson 1/k_n! factor. This is a path
    probability, so it changes under row permutations that move births
    between rows (see :func:`log_ibp_class_prior` for the invariant form).
    """
    Z = as_binary(Z, n_rows)
    counts = Z.sum(axis=0, dtype=np.int64)
    return log_ibp_prior_from_counts(counts, birth_rows(Z), Z.shape[0], alpha)


def log_ibp_class_prior(Z, alpha: float, n_rows: int | None = None) -> float:
    """Log-probability of the left-ordered equivalence class of ``Z``.

    Depends only on the column histories, so it is invariant under both row
    and column permutations.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    Z = as_binary(Z, n_rows)
    n = Z.shape[0]
    counts = Z.sum(axis=0, dtype=np.int64)
    if np.any(counts <= 0):
        raise ValueError("all-zero column has no restaurant realization")
    if Z.shape[1]:
        _, multiplicity = np.unique(Z.T, axis=0, return_counts=True)
    else:
        multiplicity = np.zeros(0)
    return (counts.size * math.log(alpha)
            - alpha * harmonic(n)
            - float(np.sum(special.gammaln(multiplicity + 1)))
            + _column_terms(counts, n))


def log_finite_prior(Z, alpha: float, n_rows: int | None = None) -> float:
    """log P(Z) under K-column beta-Bernoulli with pi integrated out."""
    Z = as_binary(Z, n_rows)
    return log_finite_prior_from_counts(Z.sum(axis=0), Z.shape[0], alpha)


def log_finite_prior_from_counts(counts, n_rows: int, alpha: float) -> float:
    m = np.asarray(counts, dtype=float)
    if m.size == 0:
        return 0.0
    a = alpha / m.size
    return float(np.sum(special.betaln(a + m, n_rows - m + 1) - special.betaln(a, 1.0)))


def sample_finite_beta_bernoulli(n_rows: int, K: int, alpha: float,
                                 rng: np.random.Generator) -> tuple[np.ndarray, FeatureMatrix]:
    """pi_k ~ Beta(alpha/K, 1), Z_nk ~ Bernoulli(pi_k), all independent."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive; Beta(0, 1) is undefined")
    if n_rows < 0:
        raise ValueError("n_rows must be >= 0")
    pi = rng.beta(alpha / K, 1.0, size=K)
    Z = (rng.random((n_rows, K)) < pi).astype(np.int8)
    return pi, FeatureMatrix(Z, n_rows)


# ---------------------------------------------------------------------------
# Likelihoods
# ---------------------------------------------------------------------------

def _check_dims(X: np.ndarray, Z: np.ndarray, A: np.ndarray | None = None) -> None:
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    if Z.shape[0] != X.shape[0]:
        raise ValueError(f"Z has {Z.shape[0]} rows, X has {X.shape[0]}")
    if A is not None and (A.shape[0] != Z.shape[1] or A.shape[1] != X.shape[1]):
        raise ValueError(f"A has shape {A.shape}, expected ({Z.shape[1]}, {X.shape[1]})")


def gaussian_loglik_from_rss(rss: float, n_entries: int, sigma_x: float) -> float:
    return -0.5 * n_entries * LOG_2PI - n_entries * math.log(sigma_x) - rss / (2.0 * sigma_x**2)


def log_lik_full(X, Z, A, sigma_x: float) -> float:
    """sum_{n,d} log Normal(X_nd; (ZA)_nd, sigma_x^2)."""
    X = np.asarray(X, dtype=float)
    Z = as_binary(Z, X.shape[0])
    A = np.asarray(A, dtype=float).reshape(Z.shape[1], -1) if Z.shape[1] else np.zeros((0, X.shape[1]))
    _check_dims(X, Z, A)
    resid = X - Z @ A
    return gaussian_loglik_from_rss(float(np.sum(resid * resid)), X.size, sigma_x)


def spd_cholesky(M: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying once with a small diagonal jitter."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        k = M.shape[0]
        jitter = 1e-10 * np.trace(M) / k
        return np.linalg.cholesky(M + jitter * np.eye(k))


def collapsed_log_lik_from_stats(ZtZ: np.ndarray, ZtX: np.ndarray, trXtX: float,
                                 n_rows: int, n_cols: int,
                                 sigma_x: float, sigma_a: float) -> float:
    """Collapsed marginal log-likelihood from the sufficient statistics.

    With M = Z'Z + (sigma_x/sigma_a)^2 I,
    log p(X|Z) = -ND/2 log 2pi - (N-K)D log sx - KD log sa - D/2 log|M|
                 - (tr X'X - tr(X'Z M^-1 Z'X)) / (2 sx^2).
    """
    N, D = n_rows, n_cols
    K = ZtZ.shape[0]
    const = -0.5 * N * D * LOG_2PI
    if K == 0:
        return const - N * D * math.log(sigma_x) - trXtX / (2.0 * sigma_x**2)
    M = ZtZ + (sigma_x / sigma_a) ** 2 * np.eye(K)
    L = spd_cholesky(M)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    W = np.linalg.solve(L, ZtX)
    quad = trXtX - float(np.sum(W * W))
    return (const - (N - K) * D * math.log(sigma_x) - K * D * math.log(sigma_a)
            - 0.5 * D * logdet - quad / (2.0 * sigma_x**2))


def collapsed_log_lik(X, Z, sigma_x: float, sigma_a: float) -> float:
    """log of the integral of P(X|Z,A) P(A) over A, A_k ~ Normal(0, sigma_a^2 I)."""
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite entries")
    Z = as_binary(Z, X.shape[0]).astype(float)
    _check_dims(X, Z)
    return collapsed_log_lik_from_stats(Z.T @ Z, Z.T @ X, float(np.sum(X * X)),
                                        X.shape[0], X.shape[1], sigma_x, sigma_a)


# ---------------------------------------------------------------------------
# Conjugate updates
# ---------------------------------------------------------------------------

def posterior_loadings_from_stats(ZtZ, ZtX, sigma_x: float, sigma_a: float):
    K = ZtZ.shape[0]
    if K == 0:
        raise ValueError("no features: nothing to sample")
    M = ZtZ + (sigma_x / sigma_a) ** 2 * np.eye(K)
    L = spd_cholesky(M)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, ZtX))
    Linv = np.linalg.solve(L, np.eye(K))
    cov = sigma_x**2 * (Linv.T @ Linv)
    return mean, 0.5 * (cov + cov.T)


def posterior_loadings(X, Z, sigma_x: float, sigma_a: float):
    """Gaussian posterior of A given X, Z.

    Returns ``(mean, cov)`` where ``mean`` is K x D and every column of A
    shares the K x K covariance ``cov``.
    """
    X = np.asarray(X, dtype=float)
    Z = as_binary(Z, X.shape[0]).astype(float)
    _check_dims(X, Z)
    return posterior_loadings_from_stats(Z.T @ Z, Z.T @ X, sigma_x, sigma_a)


def sample_loadings(posterior, rng: np.random.Generator) -> np.ndarray:
    """Draw A with each column ~ Normal(mean column, cov)."""
    mean, cov = posterior
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("posterior covariance is not positive definite") from exc
    return mean + L @ rng.standard_normal(mean.shape)


def sample_pi(counts, n_rows: int, rng: np.random.Generator, prior_shape: float = 0.0) -> np.ndarray:
    """pi_k ~ Beta(prior_shape + m_k, 1 + N - m_k).

    ``prior_shape`` is 0 for the infinite model (instantiated features only)
    and alpha/K for the finite beta-Bernoulli model.
    """
    m = np.asarray(counts, dtype=float)
    if np.any(m > n_rows):
        raise ValueError("feature count exceeds number of rows")
    a = prior_shape + m
    if np.any(a <= 0):
        raise ValueError("m_k = 0 feature must be pruned before sampling pi")
    pi = rng.beta(a, 1.0 + n_rows - m)
    # Beta draws can round to exactly 0 or 1 in float64
    tiny = np.finfo(float).tiny
    return np.clip(pi, tiny, 1.0 - np.finfo(float).epsneg)


def sample_alpha(k_plus: int, n_total: int, prior: tuple[float, float],
                 rng: np.random.Generator) -> float:
    """alpha | K+ ~ Gamma(a + K+, b + H_N) (shape, rate)."""
    if k_plus < 0 or n_total < 1:
        raise ValueError("need k_plus >= 0 and n_total >= 1")
    a, b = prior
    return float(rng.gamma(a + k_plus, 1.0 / (b + harmonic(n_total))))


def mh_acceptance_prob(log_target_new: float, log_target_old: float) -> float:
    diff = log_target_new - log_target_old
    return 1.0 if diff >= 0 else math.exp(diff)


def _log_sigma_step(log_sigma: float, log_target, step: float, rng: np.random.Generator) -> float:
    # random walk on log sigma; log-uniform prior cancels the Jacobian
    proposal = log_sigma + step * rng.standard_normal()
    accept = mh_acceptance_prob(log_target(proposal), log_target(log_sigma))
    return proposal if rng.random() < accept else log_sigma


def sample_variances_from_stats(rss: float, n_entries: int, A: np.ndarray,
                                hyper: HyperParams, rng: np.random.Generator):
    """One MH move each on log sigma_x and log sigma_a.

    ``rss`` is ||X - ZA||^2 over ``n_entries`` data entries.
    """
    sx, sa = hyper.sigma_x, hyper.sigma_a
    if hyper.resample_sigma_x:
        def target_x(u):
            return -n_entries * u - rss * math.exp(-2.0 * u) / 2.0
        sx = math.exp(_log_sigma_step(math.log(sx), target_x, hyper.variance_step, rng))
    if hyper.resample_sigma_a and A.size:
        ssa = float(np.sum(A * A))

        def target_a(u):
            return -A.size * u - ssa * math.exp(-2.0 * u) / 2.0
        sa = math.exp(_log_sigma_step(math.log(sa), target_a, hyper.variance_step, rng))
    return sx, sa


def sample_variances(X, Z, A, hyper: HyperParams, rng: np.random.Generator):
    X = np.asarray(X, dtype=float)
    Z = as_binary(Z, X.shape[0])
    A = np.asarray(A, dtype=float).reshape(Z.shape[1], X.shape[1])
    resid = X - Z @ A
    return sample_variances_from_stats(float(np.sum(resid * resid)), X.size, A, hyper, rng)
