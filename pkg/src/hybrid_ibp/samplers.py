"""Gibbs-style samplers for the linear-Gaussian IBP.

Three kernels live here:

* :func:`uncollapsed_row_sweep` resamples instantiated features given
  explicit loadings ``A`` and inclusion probabilities ``pi``;
* :func:`collapsed_tail_sweep` resamples the locally born tail features
  with their loadings integrated out, including the Metropolis-Hastings
  birth move in :func:`propose_new_features`;
* :func:`collapsed_reference_sweep` is the fully collapsed single-machine
  baseline.

:class:`HybridSampler`, :class:`CollapsedSampler` and
:class:`UncollapsedSampler` wrap these kernels as whole-chain samplers on a
single machine.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import expit

from . import model
from .model import FeatureMatrix, HyperParams


@dataclasses.dataclass
class RowContext:
    """A block of data rows with their instantiated assignments.

    ``residual`` caches ``x - z @ A`` and is updated incrementally on flips.
    A single row is a block of one.
    """

    x: np.ndarray
    z: np.ndarray
    residual: np.ndarray

    @classmethod
    def from_rows(cls, x, z, A) -> "RowContext":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.array(model.as_binary(z, x.shape[0]), dtype=np.int8)
        ctx = cls(x, z, np.empty_like(x))
        ctx.refresh(A)
        return ctx

    def refresh(self, A) -> None:
        A = np.asarray(A, dtype=float)
        if self.z.shape[1]:
            self.residual = self.x - self.z @ A
        else:
            self.residual = self.x.copy()

    def max_residual_drift(self, A) -> float:
        expected = self.x - self.z @ A if self.z.shape[1] else self.x
        return float(np.max(np.abs(expected - self.residual), initial=0.0))


def _prior_logit(pi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(pi) - np.log1p(-pi)


def uncollapsed_row_sweep(ctx: RowContext, A, pi, sigma_x: float,
                          rng: np.random.Generator, rows=None) -> RowContext:
    """Resample every instantiated Z_nk of the block, features in order.

    P(Z_nk = 1 | ...) is proportional to pi_k * N(x_n; z_n A, sigma_x^2 I).
    Rows are conditionally independent given (A, pi), so each feature is
    updated for all rows of the block at once. ``rows`` restricts the update
    to a subset (boolean mask or index array).
    """
    A = np.asarray(A, dtype=float)
    pi = np.asarray(pi, dtype=float)
    K = A.shape[0]
    if not (pi.shape[0] == K == ctx.z.shape[1]):
        raise ValueError(f"|pi|={pi.shape[0]}, rows(A)={K}, z has {ctx.z.shape[1]} columns")
    if K == 0:
        return ctx
    if rows is None:
        R, Z = ctx.residual, ctx.z
    else:
        R, Z = ctx.residual[rows], ctx.z[rows]
    n = R.shape[0]
    if n == 0:
        return ctx
    logit0 = _prior_logit(pi)
    sq = np.einsum("kd,kd->k", A, A)
    inv2s2 = 1.0 / (2.0 * sigma_x**2)
    for k in range(K):
        a = A[k]
        old = Z[:, k].astype(float)
        # r0 = residual with Z_nk = 0; log-lik(1) - log-lik(0) = (2 r0.a - |a|^2) / 2s^2
        r0a = R @ a + old * sq[k]
        p_one = expit(logit0[k] + (2.0 * r0a - sq[k]) * inv2s2)
        new = rng.random(n) < p_one
        R += np.outer(old - new, a)
        Z[:, k] = new
    if rows is not None:
        ctx.residual[rows] = R
        ctx.z[rows] = Z
    return ctx


def inclusion_prob(log_odds: float) -> float:
    return float(expit(log_odds))


def collapsed_inclusion_prob(m_minus: int, n_total: int, ll1: float, ll0: float,
                             finite_k: int | None = None, alpha: float | None = None) -> float:
    """P(Z_nk = 1) from the collapsed prior weight and two marginal log-liks.

    In the infinite model the weight is m_{-n,k}/N; with a finite ``K`` it
    is (m_{-n,k} + alpha/K) / (N + alpha/K).
    """
    if finite_k is None:
        w = m_minus / n_total
    else:
        a = alpha / finite_k
        w = (m_minus + a) / (n_total + a)
    if w <= 0.0:
        return 0.0
    if w >= 1.0:
        return 1.0
    return inclusion_prob(math.log(w) - math.log1p(-w) + ll1 - ll0)


class TailState:
    """Collapsed feature block: columns whose loadings are integrated out.

    Holds the binary columns, their counts and birth rows, and, once bound to
    a residual matrix ``E`` via :meth:`bind`, the sufficient statistics
    Z'Z, Z'E and tr(E'E) so that single-entry changes cost O(K^2 + KD).
    """

    def __init__(self, z: np.ndarray, births: np.ndarray | None = None):
        self.z = np.array(z, dtype=np.int8).reshape(z.shape[0], -1)
        self.counts = self.z.sum(axis=0, dtype=np.int64)
        if births is None:
            births = model.birth_rows(self.z)
        self.births = np.asarray(births, dtype=np.int64).copy()
        self.E = None
        self.last_acceptance = None

    @classmethod
    def empty(cls, n_rows: int) -> "TailState":
        return cls(np.zeros((n_rows, 0), dtype=np.int8))

    @property
    def n_rows(self) -> int:
        return self.z.shape[0]

    @property
    def n_features(self) -> int:
        return self.z.shape[1]

    def active_rows(self) -> np.ndarray:
        return self.z.any(axis=1)

    def bind(self, E: np.ndarray) -> "TailState":
        self.E = np.array(E, dtype=float)
        zf = self.z.astype(float)
        self.ZtZ = zf.T @ zf
        self.ZtE = zf.T @ self.E
        self.trEE = float(np.sum(self.E * self.E))
        return self

    def loglik(self, sigma_x: float, sigma_a: float) -> float:
        return model.collapsed_log_lik_from_stats(self.ZtZ, self.ZtE, self.trEE,
                                                  self.E.shape[0], self.E.shape[1],
                                                  sigma_x, sigma_a)

    def set_row(self, n: int, z_new: np.ndarray) -> None:
        z_old = self.z[n].astype(float)
        z_new = np.asarray(z_new, dtype=float)
        self.ZtZ += np.outer(z_new, z_new) - np.outer(z_old, z_old)
        self.ZtE += np.outer(z_new - z_old, self.E[n])
        self.counts += (z_new - z_old).astype(np.int64)
        self.z[n] = z_new

    def set_residual_row(self, n: int, e_new: np.ndarray) -> None:
        e_old = self.E[n]
        self.ZtE += np.outer(self.z[n].astype(float), e_new - e_old)
        self.trEE += float(e_new @ e_new - e_old @ e_old)
        self.E[n] = e_new

    def remove(self, drop) -> None:
        keep = np.ones(self.n_features, dtype=bool)
        keep[drop] = False
        self.z = self.z[:, keep]
        self.counts = self.counts[keep]
        self.births = self.births[keep]
        if self.E is not None:
            self.ZtZ = self.ZtZ[keep][:, keep]
            self.ZtE = self.ZtE[keep]

    def prune(self) -> None:
        dead = np.flatnonzero(self.counts == 0)
        if dead.size:
            self.remove(dead)

    def add_singletons(self, n: int, k_new: int) -> None:
        """Append ``k_new`` columns active only in row ``n``."""
        if k_new == 0:
            return
        cols = np.zeros((self.n_rows, k_new), dtype=np.int8)
        cols[n] = 1
        if self.E is not None:
            self.ZtZ, self.ZtE = self._stats_with_singletons(
                np.ones(self.n_features, dtype=bool), n, k_new)
        self.z = np.hstack([self.z, cols])
        self.counts = np.concatenate([self.counts, np.ones(k_new, dtype=np.int64)])
        self.births = np.concatenate([self.births, np.full(k_new, n, dtype=np.int64)])

    def _stats_with_singletons(self, keep: np.ndarray, n: int, k_new: int):
        # Z'Z and Z'E after keeping the ``keep`` mask of columns and appending
        # k_new columns active only in row n
        zk = self.z[n, keep].astype(float)
        K = zk.size
        ZtZ = np.empty((K + k_new, K + k_new))
        ZtZ[:K, :K] = self.ZtZ[keep][:, keep]
        ZtZ[:K, K:] = zk[:, None]
        ZtZ[K:, :K] = zk[None, :]
        ZtZ[K:, K:] = 1.0
        ZtE = np.empty((K + k_new, self.E.shape[1]))
        ZtE[:K] = self.ZtE[keep]
        ZtE[K:] = self.E[n]
        return ZtZ, ZtE

    def check(self, atol: float = 1e-8) -> None:
        assert np.array_equal(self.counts, self.z.sum(axis=0))
        if self.E is not None:
            zf = self.z.astype(float)
            assert np.allclose(self.ZtZ, zf.T @ zf, atol=atol)
            assert np.allclose(self.ZtE, zf.T @ self.E, atol=atol)


def propose_new_features(n: int, tail: TailState, alpha: float, n_total: int,
                         hyper: HyperParams, rng: np.random.Generator,
                         k_new: int | None = None) -> TailState:
    """MH move replacing row ``n``'s singleton features with fresh ones.

    K_new ~ Poisson(alpha / N) new columns active only in row ``n`` replace
    the columns currently held by row ``n`` alone. The proposal is the prior,
    so the acceptance probability is the collapsed likelihood ratio. The
    acceptance probability is left in ``tail.last_acceptance``.
    """
    if k_new is None:
        k_new = int(rng.poisson(alpha / n_total)) if alpha > 0 else 0
    singles = (tail.counts == 1) & (tail.z[n] == 1)
    if k_new == 0 and not singles.any():
        tail.last_acceptance = 1.0
        return tail
    sx, sa = hyper.sigma_x, hyper.sigma_a
    ll_cur = tail.loglik(sx, sa)
    ZtZ, ZtE = tail._stats_with_singletons(~singles, n, k_new)
    ll_new = model.collapsed_log_lik_from_stats(ZtZ, ZtE, tail.trEE, tail.E.shape[0],
                                                tail.E.shape[1], sx, sa)
    accept = model.mh_acceptance_prob(ll_new, ll_cur)
    tail.last_acceptance = accept
    if rng.random() < accept:
        tail.remove(np.flatnonzero(singles))
        tail.add_singletons(n, k_new)
    return tail


def _collapsed_row_gibbs(n: int, tail: TailState, n_total: int, hyper: HyperParams,
                         rng: np.random.Generator, finite_k: int | None, alpha: float) -> None:
    sx, sa = hyper.sigma_x, hyper.sigma_a
    for k in range(tail.n_features):
        m_minus = int(tail.counts[k] - tail.z[n, k])
        # singletons are left to the birth/death move
        if finite_k is None and m_minus == 0:
            continue
        row = tail.z[n].copy()
        row[k] = 0
        tail.set_row(n, row)
        ll0 = tail.loglik(sx, sa)
        row[k] = 1
        tail.set_row(n, row)
        ll1 = tail.loglik(sx, sa)
        p_one = collapsed_inclusion_prob(m_minus, n_total, ll1, ll0, finite_k, alpha)
        if rng.random() >= p_one:
            row[k] = 0
            tail.set_row(n, row)


def _collapsed_pass(tail: TailState, n_total: int, alpha: float, hyper: HyperParams,
                    rng: np.random.Generator, births: bool, finite_k: int | None) -> TailState:
    for n in range(tail.n_rows):
        if tail.n_features:
            _collapsed_row_gibbs(n, tail, n_total, hyper, rng, finite_k, alpha)
            if finite_k is None:
                tail.prune()
        if births:
            propose_new_features(n, tail, alpha, n_total, hyper, rng)
    return tail


def collapsed_tail_sweep(X_shard, Z_plus, A_plus, tail: TailState, hyper: HyperParams,
                         n_total: int, rng: np.random.Generator, *, is_tail_worker: bool = True,
                         births: bool = True) -> TailState:
    """One collapsed sweep over the tail features of the designated shard.

    The tail is collapsed against the residual ``X_shard - Z_plus @ A_plus``;
    tail counts are shard-local while the prior weight uses the global
    ``n_total``. Each row's Gibbs pass is followed by a birth proposal.
    """
    if not is_tail_worker:
        raise RuntimeError("collapsed_tail_sweep called on a shard that is not p'")
    X_shard = np.asarray(X_shard, dtype=float)
    Z_plus = model.as_binary(Z_plus, X_shard.shape[0])
    E = X_shard - Z_plus @ A_plus if Z_plus.shape[1] else X_shard
    tail.bind(E)
    return _collapsed_pass(tail, n_total, hyper.alpha, hyper, rng, births, None)


def tail_row_update(n: int, ctx: RowContext, A, pi, tail: TailState, hyper: HyperParams,
                    rng: np.random.Generator) -> None:
    """Resample row ``n``'s instantiated features when it also holds tail features.

    The tail loadings are integrated out, so the likelihood of each choice is
    the collapsed marginal of the shard residual. ``tail`` must be bound to
    ``ctx.residual``.
    """
    A = np.asarray(A, dtype=float)
    logit0 = _prior_logit(np.asarray(pi, dtype=float))
    sx, sa = hyper.sigma_x, hyper.sigma_a
    for k in range(A.shape[0]):
        e0 = ctx.residual[n] + ctx.z[n, k] * A[k]
        e1 = e0 - A[k]
        tail.set_residual_row(n, e0)
        ll0 = tail.loglik(sx, sa)
        tail.set_residual_row(n, e1)
        ll1 = tail.loglik(sx, sa)
        new = rng.random() < inclusion_prob(logit0[k] + ll1 - ll0)
        e = e1 if new else e0
        tail.set_residual_row(n, e)
        ctx.residual[n] = e
        ctx.z[n, k] = new


def hybrid_instantiated_sweep(ctx: RowContext, A, pi, tail: TailState, hyper: HyperParams,
                              rng: np.random.Generator) -> None:
    """Uncollapsed sweep of the instantiated block, aware of any tail features.

    Rows without tail features are independent of the tail and take the
    vectorised path; the few rows holding tail features are updated one at a
    time against the collapsed residual likelihood.
    """
    if tail.n_features == 0 or np.asarray(A).shape[0] == 0:
        uncollapsed_row_sweep(ctx, A, pi, hyper.sigma_x, rng)
        return
    busy = tail.active_rows()
    uncollapsed_row_sweep(ctx, A, pi, hyper.sigma_x, rng, rows=~busy)
    tail.bind(ctx.residual)
    for n in np.flatnonzero(busy):
        tail_row_update(int(n), ctx, A, pi, tail, hyper, rng)


def collapsed_reference_sweep(X, Z, alpha: float, hyper: HyperParams, rng: np.random.Generator,
                              finite_k: int | None = None) -> FeatureMatrix:
    """One sweep of the fully collapsed Gibbs sampler on all of ``X``.

    With ``finite_k`` set the model is the K-column beta-Bernoulli: no births,
    no pruning, and prior weight (m_{-n,k} + alpha/K) / (N + alpha/K).
    """
    X = np.asarray(X, dtype=float)
    Z = model.as_binary(Z, X.shape[0])
    if finite_k is not None and Z.shape[1] != finite_k:
        raise ValueError(f"finite model expects {finite_k} columns, got {Z.shape[1]}")
    state = TailState(Z).bind(X)
    _collapsed_pass(state, X.shape[0], alpha, hyper, rng, births=finite_k is None,
                    finite_k=finite_k)
    if finite_k is None:
        state.prune()
    return FeatureMatrix(state.z)


# ---------------------------------------------------------------------------
# Whole-chain single-machine samplers
# ---------------------------------------------------------------------------

def _train_joint(X, Z, A, hyper: HyperParams, finite_k: int | None) -> float:
    ll = model.log_lik_full(X, Z, A, hyper.sigma_x)
    if finite_k is not None:
        return ll + model.log_finite_prior(Z, hyper.alpha)
    return ll + model.log_ibp_prior(Z, hyper.alpha, n_rows=X.shape[0])


class HybridSampler:
    """Single-machine hybrid sampler: one processor that always holds the tail.

    Row-by-row instantiated updates, a collapsed tail sweep with births, and
    a parameter step computed directly from the full ``Z`` after each block
    of ``sub_iterations`` sweeps.
    """

    def __init__(self, X, hyper: HyperParams, sub_iterations: int = 5,
                 rng: np.random.Generator | None = None, finite_k: int | None = None):
        self.X = np.asarray(X, dtype=float)
        self.hyper = hyper
        self.L = sub_iterations
        self.rng = rng if rng is not None else np.random.default_rng()
        self.finite_k = finite_k
        N, D = self.X.shape
        if finite_k is None:
            self.Z = FeatureMatrix.empty(N)
            self.A = np.zeros((0, D))
            self.pi = np.zeros(0)
        else:
            self.Z = FeatureMatrix(np.zeros((N, finite_k), dtype=np.int8))
            self.A = hyper.sigma_a * self.rng.standard_normal((finite_k, D))
            self.pi = self.rng.beta(hyper.alpha / finite_k, 1.0, size=finite_k)
        self.tail = TailState.empty(N)

    def sweep(self) -> None:
        ctx = RowContext.from_rows(self.X, self.Z.values, self.A)
        if self.tail.n_features:
            self.tail.bind(ctx.residual)
        busy = self.tail.active_rows()
        for n in range(self.X.shape[0]):
            if busy[n] and self.A.shape[0]:
                tail_row_update(n, ctx, self.A, self.pi, self.tail, self.hyper, self.rng)
            else:
                row = RowContext(ctx.x[n:n + 1], ctx.z[n:n + 1], ctx.residual[n:n + 1])
                uncollapsed_row_sweep(row, self.A, self.pi, self.hyper.sigma_x, self.rng)
        self.Z = FeatureMatrix(ctx.z)
        if self.finite_k is None:
            collapsed_tail_sweep(self.X, self.Z.values, self.A, self.tail, self.hyper,
                                 self.X.shape[0], self.rng)

    def update_parameters(self) -> None:
        hyper, rng, N = self.hyper, self.rng, self.X.shape[0]
        if self.tail.n_features:
            self.Z.append_columns(self.tail.z)
        self.tail = TailState.empty(N)
        if self.finite_k is None:
            self.Z.prune()
        K = self.Z.n_features
        if K:
            post = model.posterior_loadings(self.X, self.Z.values, hyper.sigma_x, hyper.sigma_a)
            self.A = model.sample_loadings(post, rng)
        else:
            self.A = np.zeros((0, self.X.shape[1]))
        prior_shape = 0.0 if self.finite_k is None else hyper.alpha / self.finite_k
        self.pi = model.sample_pi(self.Z.counts, N, rng, prior_shape) if K else np.zeros(0)
        if hyper.resample_alpha and self.finite_k is None:
            hyper = hyper.replace(alpha=model.sample_alpha(K, N, hyper.alpha_prior, rng))
        sx, sa = model.sample_variances(self.X, self.Z.values, self.A, hyper, rng)
        self.hyper = hyper.replace(sigma_x=sx, sigma_a=sa)

    def step(self) -> float:
        """One global iteration; returns the train joint log P(X, Z)."""
        for _ in range(self.L):
            self.sweep()
        self.update_parameters()
        return self.train_joint()

    def train_joint(self) -> float:
        return _train_joint(self.X, self.Z.values, self.A, self.hyper, self.finite_k)


class CollapsedSampler:
    """Fully collapsed Gibbs baseline with optional hyperparameter moves."""

    def __init__(self, X, hyper: HyperParams, rng: np.random.Generator | None = None,
                 finite_k: int | None = None, Z=None):
        self.X = np.asarray(X, dtype=float)
        self.hyper = hyper
        self.rng = rng if rng is not None else np.random.default_rng()
        self.finite_k = finite_k
        N = self.X.shape[0]
        if Z is not None:
            self.Z = FeatureMatrix(Z)
        elif finite_k is not None:
            self.Z = FeatureMatrix(np.zeros((N, finite_k), dtype=np.int8))
        else:
            self.Z = FeatureMatrix.empty(N)
        self.A = np.zeros((self.Z.n_features, self.X.shape[1]))
        self.pi = np.zeros(self.Z.n_features)

    def step(self) -> float:
        hyper, rng, N = self.hyper, self.rng, self.X.shape[0]
        self.Z = collapsed_reference_sweep(self.X, self.Z, hyper.alpha, hyper, rng, self.finite_k)
        K = self.Z.n_features
        if hyper.resample_alpha and self.finite_k is None:
            hyper = hyper.replace(alpha=model.sample_alpha(K, N, hyper.alpha_prior, rng))
        # point draws of A and pi for reporting and held-out evaluation
        if K:
            post = model.posterior_loadings(self.X, self.Z.values, hyper.sigma_x, hyper.sigma_a)
            self.A = model.sample_loadings(post, rng)
            prior_shape = 0.0 if self.finite_k is None else hyper.alpha / self.finite_k
            self.pi = model.sample_pi(self.Z.counts, N, rng, prior_shape)
        else:
            self.A = np.zeros((0, self.X.shape[1]))
            self.pi = np.zeros(0)
        sx, sa = model.sample_variances(self.X, self.Z.values, self.A, hyper, rng)
        self.hyper = hyper.replace(sigma_x=sx, sigma_a=sa)
        return _train_joint(self.X, self.Z.values, self.A, self.hyper, self.finite_k)


class UncollapsedSampler:
    """Uncollapsed baseline: explicit loadings for every feature.

    Existing features use the collapsed-pi weight m_{-n,k}/N; singletons are
    replaced by Poisson(alpha/N) new features whose loadings are drawn from
    the prior, accepted on the row likelihood ratio. This is the move that
    mixes poorly in high dimension.
    """

    def __init__(self, X, hyper: HyperParams, rng: np.random.Generator | None = None):
        self.X = np.asarray(X, dtype=float)
        self.hyper = hyper
        self.rng = rng if rng is not None else np.random.default_rng()
        N, D = self.X.shape
        self.Z = FeatureMatrix.empty(N)
        self.A = np.zeros((0, D))
        self.pi = np.zeros(0)

    def _row(self, n: int, z: np.ndarray, A: np.ndarray, counts: np.ndarray):
        hyper, rng, N = self.hyper, self.rng, self.X.shape[0]
        inv2s2 = 1.0 / (2.0 * hyper.sigma_x**2)
        r = self.X[n] - z[n] @ A
        for k in range(A.shape[0]):
            m_minus = counts[k] - z[n, k]
            if m_minus == 0:
                continue
            r0 = r + z[n, k] * A[k]
            r1 = r0 - A[k]
            ll_diff = (r0 @ r0 - r1 @ r1) * inv2s2
            new = rng.random() < collapsed_inclusion_prob(m_minus, N, ll_diff, 0.0)
            counts[k] += int(new) - int(z[n, k])
            z[n, k] = new
            r = r1 if new else r0
        k_new = int(rng.poisson(hyper.alpha / N))
        singles = np.flatnonzero((counts == 1) & (z[n] == 1))
        if k_new == 0 and singles.size == 0:
            return z, A, counts
        A_new = hyper.sigma_a * rng.standard_normal((k_new, A.shape[1]))
        r_prop = r + z[n, singles] @ A[singles] - A_new.sum(axis=0)
        accept = model.mh_acceptance_prob(-(r_prop @ r_prop) * inv2s2, -(r @ r) * inv2s2)
        if rng.random() < accept:
            keep = np.setdiff1d(np.arange(A.shape[0]), singles)
            col = np.zeros((z.shape[0], k_new), dtype=np.int8)
            col[n] = 1
            z = np.hstack([z[:, keep], col])
            A = np.vstack([A[keep], A_new])
            counts = np.concatenate([counts[keep], np.ones(k_new, dtype=np.int64)])
        return z, A, counts

    def step(self) -> float:
        hyper, rng, N = self.hyper, self.rng, self.X.shape[0]
        z, A, counts = self.Z.values.copy(), self.A.copy(), self.Z.counts.copy()
        for n in range(N):
            z, A, counts = self._row(n, z, A, counts)
        self.Z = FeatureMatrix(z)
        self.Z.prune()
        K = self.Z.n_features
        if hyper.resample_alpha:
            hyper = hyper.replace(alpha=model.sample_alpha(K, N, hyper.alpha_prior, rng))
        if K:
            post = model.posterior_loadings(self.X, self.Z.values, hyper.sigma_x, hyper.sigma_a)
            self.A = model.sample_loadings(post, rng)
            self.pi = model.sample_pi(self.Z.counts, N, rng)
        else:
            self.A = np.zeros((0, self.X.shape[1]))
            self.pi = np.zeros(0)
        sx, sa = model.sample_variances(self.X, self.Z.values, self.A, hyper, rng)
        self.hyper = hyper.replace(sigma_x=sx, sigma_a=sa)
        return _train_joint(self.X, self.Z.values, self.A, self.hyper, None)
