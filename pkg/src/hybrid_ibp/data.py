"""Synthetic "Cambridge" benchmark data, dataset files and held-out scoring."""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

import numpy as np

from . import model
from .samplers import RowContext, uncollapsed_row_sweep

IMAGE_SHAPE = (6, 6)
TEST_FRACTION = 0.1
HELDOUT_PROTOCOL = "gibbs-impute z | (A, pi) point draw; score log N(x|zA) + sum log Bern(z|pi)"


def load_templates() -> np.ndarray:
    """The four 6x6 binary templates, flattened to a 4 x 36 array."""
    text = resources.files(__package__).joinpath("fixtures/cambridge_templates.txt").read_text()
    blocks, current = [], []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                blocks.append(current)
            current = []
            continue
        current.append([int(c) for c in line])
    if current:
        blocks.append(current)
    return np.array(blocks, dtype=float).reshape(len(blocks), -1)


@dataclasses.dataclass
class Dataset:
    X: np.ndarray
    Z_true: np.ndarray | None = None
    A_true: np.ndarray | None = None
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def n_test(self) -> int:
        return int(round(TEST_FRACTION * self.X.shape[0]))

    @property
    def X_train(self) -> np.ndarray:
        return self.X[: self.X.shape[0] - self.n_test]

    @property
    def X_test(self) -> np.ndarray:
        return self.X[self.X.shape[0] - self.n_test:]


def generate_cambridge(n_rows: int, noise: float = 0.5, feature_prob: float = 0.5,
                       rng: np.random.Generator | None = None, seed: int | None = None) -> Dataset:
    """Rows are sums of random subsets of the four templates plus Gaussian noise.

    Each template is switched on independently with ``feature_prob``; rows
    that come out empty are redrawn, so every row shows at least one feature.
    """
    if n_rows < 1:
        raise ValueError("n_rows must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    A = load_templates()
    K = A.shape[0]
    Z = (rng.random((n_rows, K)) < feature_prob).astype(np.int8)
    empty = ~Z.any(axis=1)
    while empty.any():
        Z[empty] = rng.random((int(empty.sum()), K)) < feature_prob
        empty = ~Z.any(axis=1)
    X = Z @ A + noise * rng.standard_normal((n_rows, A.shape[1]))
    meta = {"seed": seed, "noise": noise, "n_rows": n_rows, "d": A.shape[1], "n_features": K}
    return Dataset(X=X, Z_true=Z, A_true=A, meta=meta)


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta")


def _truth_path(path: Path) -> Path:
    return path.with_name(path.stem + ".z.csv")


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    np.savetxt(path, ds.X, delimiter=",", fmt="%.17g")
    with open(_meta_path(path), "w") as fh:
        for key in ("seed", "noise", "n_rows", "d", "n_features"):
            fh.write(f"{key}={ds.meta.get(key)}\n")
    if ds.Z_true is not None:
        np.savetxt(_truth_path(path), ds.Z_true, delimiter=",", fmt="%d")


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    X = np.loadtxt(path, delimiter=",", ndmin=2)
    meta = {}
    if _meta_path(path).exists():
        for line in _meta_path(path).read_text().splitlines():
            if "=" in line:
                key, value = line.split("=", 1)
                meta[key.strip()] = value.strip()
    Z = None
    if _truth_path(path).exists():
        Z = np.loadtxt(_truth_path(path), delimiter=",", ndmin=2).astype(np.int8)
    A = load_templates() if meta.get("n_features") == "4" and X.shape[1] == 36 else None
    return Dataset(X=X, Z_true=Z, A_true=A, meta=meta)


def heldout_joint_loglik(X_test, A, pi, hyper: model.HyperParams, passes: int = 10,
                         rng: np.random.Generator | None = None, return_z: bool = False):
    """Joint log P(X_test, Z_test) with Z_test imputed by Gibbs given (A, pi).

    Each row's z starts at independent Bernoulli(pi) draws and gets
    ``passes`` uncollapsed sweeps; the score is
    sum_n [log N(x_n | z_n A, sigma_x^2 I) + sum_k log Bernoulli(z_nk | pi_k)].
    """
    if rng is None:
        rng = np.random.default_rng()
    X_test = np.asarray(X_test, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, X_test.shape[1])
    pi = np.asarray(pi, dtype=float)
    K = A.shape[0]
    z = (rng.random((X_test.shape[0], K)) < pi).astype(np.int8)
    ctx = RowContext.from_rows(X_test, z, A)
    for _ in range(passes):
        uncollapsed_row_sweep(ctx, A, pi, hyper.sigma_x, rng)
    ll = model.log_lik_full(X_test, ctx.z, A, hyper.sigma_x)
    if K:
        ll += float(np.sum(ctx.z * np.log(pi) + (1 - ctx.z) * np.log1p(-pi)))
    return (ll, ctx.z) if return_z else ll
