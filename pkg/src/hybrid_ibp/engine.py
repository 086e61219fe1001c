"""Master/worker runtime for the hybrid sampler.

Data rows are split into contiguous shards, one per worker. In every global
step each worker runs ``L`` sub-iterations of uncollapsed updates over the
K+ instantiated features; the single designated worker p' also runs the
collapsed tail sweep, which is where new features are born. Workers then
send a :class:`~hybrid_ibp.messages.SyncMessage` to the master, which
promotes the tail, prunes dead features, resamples (A, pi, alpha, sigma) and
broadcasts the new global state together with the next p'.

Workers and master exchange only encoded messages. Two schedulers drive the
exchange: :class:`SerialScheduler` runs every worker in-process, one after
another; :class:`ProcessScheduler` runs workers 2..P in child processes while
worker 1 shares the master's process.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import multiprocessing as mp
import struct
import time
import traceback

import numpy as np

from . import model
from .data import heldout_joint_loglik
from .messages import (BroadcastMessage, ProtocolError, SyncMessage, decode_broadcast,
                       decode_sync, digest, encode_broadcast, encode_sync)
from .model import HyperParams
from .samplers import (RowContext, TailState, collapsed_tail_sweep,
                       hybrid_instantiated_sweep)
from .trace import TraceRecord

log = logging.getLogger(__name__)

MASTER_STREAM = 0x4D415354
EVAL_STREAM = 0x4556414C


class EngineError(RuntimeError):
    """A worker failed; the run is aborted."""


def worker_rng(seed: int, p: int) -> np.random.Generator:
    return np.random.default_rng([seed, p])


@dataclasses.dataclass
class EngineConfig:
    processors: int = 1
    sub_iterations: int = 5
    seed: int = 0
    hyper: HyperParams = dataclasses.field(default_factory=HyperParams)
    # fixed-K beta-Bernoulli model: no births, no pruning
    finite_k: int | None = None
    heldout_passes: int = 10


class WorkerShard:
    """One worker's rows of X and Z, its tail features and its RNG stream."""

    def __init__(self, shard_id: int, row_offset: int, x: np.ndarray, n_total: int,
                 rng: np.random.Generator, n_features: int = 0, finite_k: int | None = None):
        self.shard_id = shard_id
        self.row_offset = row_offset
        self.x = np.array(x, dtype=float)
        self.n_total = n_total
        self.rng = rng
        self.finite_k = finite_k
        n = self.x.shape[0]
        self.ctx = RowContext(self.x, np.zeros((n, n_features), dtype=np.int8), self.x.copy())
        self.tail = TailState.empty(n)
        self.xtx = float(np.sum(self.x * self.x))
        self.iteration = 0
        self.A = np.zeros((n_features, self.x.shape[1]))
        self.pi = np.zeros(n_features)
        self.hyper: HyperParams | None = None
        self.p_prime: int | None = None
        self.row_updates = np.zeros(n, dtype=np.int64)
        self.received: list[str] = []

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def rows(self) -> range:
        return range(self.row_offset, self.row_offset + self.n_rows)

    @property
    def is_tail_worker(self) -> bool:
        return self.p_prime == self.shard_id

    def apply(self, msg: BroadcastMessage) -> None:
        if msg.iteration != self.iteration:
            raise ProtocolError(f"shard {self.shard_id}: stale broadcast for iteration "
                                f"{msg.iteration}, expected {self.iteration}")
        if self.tail.n_features and self.tail.n_features != msg.n_promoted:
            raise ProtocolError(f"shard {self.shard_id}: {self.tail.n_features} tail features, "
                                f"broadcast promotes {msg.n_promoted}")
        if self.tail.n_features:
            promoted = self.tail.z
        else:
            promoted = np.zeros((self.n_rows, msg.n_promoted), dtype=np.int8)
        z = np.hstack([self.ctx.z, promoted])[:, msg.keep]
        if z.shape[1] != msg.k_plus:
            raise ProtocolError(f"shard {self.shard_id}: {z.shape[1]} columns after keep, "
                                f"broadcast says K+={msg.k_plus}")
        self.A, self.pi, self.hyper, self.p_prime = msg.A, msg.pi, msg.hyper, msg.p_prime
        self.ctx = RowContext.from_rows(self.x, z, self.A)
        self.tail = TailState.empty(self.n_rows)

    def summary(self, rows_updated: int) -> SyncMessage:
        zc = np.hstack([self.ctx.z, self.tail.z]).astype(float)
        ll = model.gaussian_loglik_from_rss(float(np.sum(self.ctx.residual**2)), self.x.size,
                                            self.hyper.sigma_x)
        return SyncMessage(
            shard_id=self.shard_id, iteration=self.iteration, n_rows=self.n_rows,
            row_offset=self.row_offset, counts=self.ctx.z.sum(axis=0, dtype=np.int64),
            k_tail=self.tail.n_features, tail_block=self.tail.z.astype(np.uint8),
            ztz=zc.T @ zc, ztx=zc.T @ self.x, xtx=self.xtx,
            first_active=model.birth_rows(zc.astype(np.int8)), loglik=ll,
            rows_updated=rows_updated,
        )

    def global_columns(self) -> np.ndarray:
        """This shard's rows of the combined (instantiated + tail) Z."""
        return np.hstack([self.ctx.z, self.tail.z])


def worker_step(shard: WorkerShard, broadcast: BroadcastMessage, L: int) -> SyncMessage:
    """Apply ``broadcast`` then run ``L`` sub-iterations on ``shard``."""
    shard.apply(broadcast)
    births = shard.finite_k is None
    rows_updated = 0
    for _ in range(L):
        hybrid_instantiated_sweep(shard.ctx, shard.A, shard.pi, shard.tail, shard.hyper,
                                  shard.rng)
        shard.ctx.refresh(shard.A)
        shard.row_updates += 1
        rows_updated += shard.n_rows
        if shard.is_tail_worker and births:
            collapsed_tail_sweep(shard.x, shard.ctx.z, shard.A, shard.tail, shard.hyper,
                                 shard.n_total, shard.rng)
    msg = shard.summary(rows_updated)
    shard.iteration += 1
    return msg


def shard_sizes(n_rows: int, P: int) -> list[int]:
    if P < 1 or P > n_rows:
        raise ValueError(f"need 1 <= P <= N, got P={P}, N={n_rows}")
    base, extra = divmod(n_rows, P)
    return [base + (p < extra) for p in range(P)]


def shard_data(X, P: int, seed: int = 0, finite_k: int | None = None) -> list[WorkerShard]:
    """Split rows of ``X`` into ``P`` contiguous, balanced shards."""
    X = np.asarray(X, dtype=float)
    shards, offset = [], 0
    n0 = finite_k or 0
    for p, size in enumerate(shard_sizes(X.shape[0], P)):
        shards.append(WorkerShard(p, offset, X[offset:offset + size], X.shape[0],
                                  worker_rng(seed, p), n0, finite_k))
        offset += size
    return shards


@dataclasses.dataclass
class MasterState:
    n_total: int
    n_cols: int
    P: int
    hyper: HyperParams
    rng: np.random.Generator
    finite_k: int | None = None
    iteration: int = 0
    k_plus: int = 0
    A: np.ndarray | None = None
    pi: np.ndarray | None = None
    counts: np.ndarray | None = None
    p_prime: int = 0
    train_joint_ll: float = math.nan

    def __post_init__(self):
        if self.A is None:
            self.A = np.zeros((0, self.n_cols))
            self.pi = np.zeros(0)
            self.counts = np.zeros(0, dtype=np.int64)

    def initial_broadcast(self) -> BroadcastMessage:
        K = self.finite_k or 0
        if K:
            self.A = self.hyper.sigma_a * self.rng.standard_normal((K, self.n_cols))
            self.pi = self.rng.beta(self.hyper.alpha / K, 1.0, size=K)
            self.counts = np.zeros(K, dtype=np.int64)
        self.k_plus = K
        self.p_prime = int(self.rng.integers(self.P))
        return BroadcastMessage(iteration=self.iteration, k_plus=K,
                                keep=np.arange(K, dtype=np.int64), n_promoted=0,
                                A=self.A, pi=self.pi, hyper=self.hyper, p_prime=self.p_prime)


def _validate(messages: list[SyncMessage], state: MasterState) -> None:
    ids = sorted(m.shard_id for m in messages)
    if ids != list(range(state.P)):
        raise ProtocolError(f"expected one message from each of {state.P} workers, got ids {ids}")
    for m in messages:
        if m.iteration != state.iteration:
            raise ProtocolError(f"shard {m.shard_id} reports iteration {m.iteration}, "
                                f"master is at {state.iteration}")
        if m.counts.shape[0] != state.k_plus:
            raise ProtocolError(f"shard {m.shard_id} reports {m.counts.shape[0]} counts, K+={state.k_plus}")
        if np.any(m.counts > m.n_rows) or np.any(m.counts < 0):
            raise ProtocolError(f"shard {m.shard_id}: local count exceeds shard size")
        if m.k_tail and m.shard_id != state.p_prime:
            raise ProtocolError(f"shard {m.shard_id} has tail features but p'={state.p_prime}")


def master_sync(messages: list[SyncMessage], state: MasterState) -> BroadcastMessage:
    """Combine worker summaries, resample global parameters, pick the next p'."""
    _validate(messages, state)
    messages = sorted(messages, key=lambda m: m.shard_id)
    tail_msg = messages[state.p_prime]
    Kp, Ks = state.k_plus, tail_msg.k_tail
    Kc = Kp + Ks
    D = state.n_cols
    ZtZ = np.zeros((Kc, Kc))
    ZtX = np.zeros((Kc, D))
    xtx = 0.0
    counts = np.zeros(Kc, dtype=np.int64)
    births = np.full(Kc, -1, dtype=np.int64)
    for m in messages:
        k = m.ztz.shape[0]
        ZtZ[:k, :k] += m.ztz
        ZtX[:k] += m.ztx
        xtx += m.xtx
        counts[:Kp] += m.counts
        first = m.first_active
        local = np.where(first >= 0, first + m.row_offset, -1)
        unset = (births[:k] < 0) & (local >= 0)
        births[:k][unset] = local[unset]
    if Ks:
        counts[Kp:] = tail_msg.tail_block.sum(axis=0)

    if state.finite_k is None:
        keep = np.flatnonzero(counts > 0)
    else:
        keep = np.arange(Kc)
    ZtZ, ZtX = ZtZ[np.ix_(keep, keep)], ZtX[keep]
    counts, births = counts[keep], births[keep]
    K = keep.size
    N = state.n_total
    hyper, rng = state.hyper, state.rng

    if K:
        A = model.sample_loadings(
            model.posterior_loadings_from_stats(ZtZ, ZtX, hyper.sigma_x, hyper.sigma_a), rng)
        prior_shape = 0.0 if state.finite_k is None else hyper.alpha / state.finite_k
        pi = model.sample_pi(counts, N, rng, prior_shape)
    else:
        A, pi = np.zeros((0, D)), np.zeros(0)
    if hyper.resample_alpha and state.finite_k is None:
        hyper = hyper.replace(alpha=model.sample_alpha(K, N, hyper.alpha_prior, rng))
    rss = xtx - 2.0 * float(np.sum(A * ZtX)) + float(np.sum(A * (ZtZ @ A)))
    sx, sa = model.sample_variances_from_stats(rss, N * D, A, hyper, rng)
    hyper = hyper.replace(sigma_x=sx, sigma_a=sa)
    p_next = int(rng.integers(state.P))

    ll = model.gaussian_loglik_from_rss(rss, N * D, hyper.sigma_x)
    if state.finite_k is None:
        prior = model.log_ibp_prior_from_counts(counts, births, N, hyper.alpha)
    else:
        prior = model.log_finite_prior_from_counts(counts, N, hyper.alpha)
    state.train_joint_ll = ll + prior
    state.iteration += 1
    state.k_plus, state.A, state.pi, state.counts = K, A, pi, counts
    state.hyper, state.p_prime = hyper, p_next
    return BroadcastMessage(iteration=state.iteration, k_plus=K, keep=keep.astype(np.int64),
                            n_promoted=Ks, A=A, pi=pi, hyper=hyper, p_prime=p_next)


# ---------------------------------------------------------------------------
# Schedulers
# ---------------------------------------------------------------------------

def _run_local(shard: WorkerShard, payload: bytes, L: int) -> bytes:
    shard.received.append(digest(payload))
    return encode_sync(worker_step(shard, decode_broadcast(payload), L))


class SerialScheduler:
    """Runs every worker in the calling process, in shard order."""

    def __init__(self, shards: list[WorkerShard]):
        self.shards = shards

    def exchange(self, payload: bytes, L: int) -> list[bytes]:
        return [_run_local(shard, payload, L) for shard in self.shards]

    def gather(self) -> list[np.ndarray]:
        return [s.global_columns() for s in self.shards]

    def digests(self) -> list[list[str]]:
        return [list(s.received) for s in self.shards]

    def close(self) -> None:
        pass


_CMD_STEP, _CMD_GATHER, _CMD_DIGESTS, _CMD_QUIT = b"S", b"G", b"H", b"Q"


def _worker_main(conn, shard: WorkerShard) -> None:
    while True:
        frame = conn.recv_bytes()
        cmd = frame[:1]
        try:
            if cmd == _CMD_STEP:
                (L,) = struct.unpack_from("<I", frame, 1)
                conn.send_bytes(b"K" + _run_local(shard, frame[5:], L))
            elif cmd == _CMD_GATHER:
                z = np.ascontiguousarray(shard.global_columns(), dtype=np.uint8)
                conn.send_bytes(b"K" + struct.pack("<QQ", *z.shape) + z.tobytes())
            elif cmd == _CMD_DIGESTS:
                conn.send_bytes(b"K" + "\n".join(shard.received).encode())
            else:
                conn.close()
                return
        except Exception:
            conn.send_bytes(b"E" + traceback.format_exc().encode())


class ProcessScheduler:
    """Workers 2..P run in forked child processes; worker 1 runs with the master.

    All children step concurrently; the exchange returns once every worker
    has replied (a barrier per global step).
    """

    def __init__(self, shards: list[WorkerShard]):
        ctx = mp.get_context("fork")
        self.local = shards[0]
        self.conns, self.procs = [], []
        for shard in shards[1:]:
            parent, child = ctx.Pipe()
            proc = ctx.Process(target=_worker_main, args=(child, shard), daemon=True)
            proc.start()
            child.close()
            self.conns.append(parent)
            self.procs.append(proc)

    def _recv(self, i: int) -> bytes:
        try:
            frame = self.conns[i].recv_bytes()
        except (EOFError, OSError) as exc:
            raise EngineError(f"worker {i + 1} died: {exc}") from exc
        if frame[:1] != b"K":
            raise EngineError(f"worker {i + 1} failed:\n{frame[1:].decode()}")
        return frame[1:]

    def exchange(self, payload: bytes, L: int) -> list[bytes]:
        frame = _CMD_STEP + struct.pack("<I", L) + payload
        for conn in self.conns:
            conn.send_bytes(frame)
        out = [_run_local(self.local, payload, L)]
        out.extend(self._recv(i) for i in range(len(self.conns)))
        return out

    def gather(self) -> list[np.ndarray]:
        out = [self.local.global_columns()]
        for i, conn in enumerate(self.conns):
            conn.send_bytes(_CMD_GATHER)
            buf = self._recv(i)
            n, k = struct.unpack_from("<QQ", buf, 0)
            out.append(np.frombuffer(buf[16:], dtype=np.uint8).reshape(n, k).astype(np.int8))
        return out

    def digests(self) -> list[list[str]]:
        out = [list(self.local.received)]
        for i, conn in enumerate(self.conns):
            conn.send_bytes(_CMD_DIGESTS)
            text = self._recv(i).decode()
            out.append(text.split("\n") if text else [])
        return out

    def close(self) -> None:
        for conn in self.conns:
            try:
                conn.send_bytes(_CMD_QUIT)
            except OSError:
                pass
            conn.close()
        for proc in self.procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()
        self.conns, self.procs = [], []


SCHEDULERS = {"serial": SerialScheduler, "process": ProcessScheduler}


class HybridEngine:
    """Drives shards and master through global iterations and records a trace."""

    def __init__(self, X_train, config: EngineConfig, X_test=None, scheduler: str = "serial"):
        self.X = np.asarray(X_train, dtype=float)
        self.X_test = None if X_test is None else np.asarray(X_test, dtype=float)
        self.config = config
        seed = config.seed
        self.shards = shard_data(self.X, config.processors, seed, config.finite_k)
        self.master = MasterState(self.X.shape[0], self.X.shape[1], config.processors,
                                  config.hyper, np.random.default_rng([seed, MASTER_STREAM]),
                                  config.finite_k)
        self.eval_rng = np.random.default_rng([seed, EVAL_STREAM])
        self.broadcast = self.master.initial_broadcast()
        self.scheduler = SCHEDULERS[scheduler](self.shards)
        self._t0 = None

    def step(self) -> TraceRecord:
        if self._t0 is None:
            self._t0 = time.perf_counter()
        payloads = self.scheduler.exchange(encode_broadcast(self.broadcast),
                                           self.config.sub_iterations)
        messages = [decode_sync(p) for p in payloads]
        self.broadcast = master_sync(messages, self.master)
        m = self.master
        heldout = math.nan
        if self.X_test is not None and self.X_test.shape[0]:
            heldout = heldout_joint_loglik(self.X_test, m.A, m.pi, m.hyper,
                                           self.config.heldout_passes, self.eval_rng)
        wall = round(time.perf_counter() - self._t0, 6)
        return TraceRecord(iter=m.iteration, wall_s=wall, k_plus=m.k_plus, alpha=m.hyper.alpha,
                           sigma_x=m.hyper.sigma_x, sigma_a=m.hyper.sigma_a,
                           train_joint_ll=m.train_joint_ll, heldout_joint_ll=heldout,
                           p_prime=m.p_prime)

    def run(self, iterations: int, writer=None, callback=None) -> list[TraceRecord]:
        records = []
        for _ in range(iterations):
            rec = self.step()
            records.append(rec)
            if writer is not None:
                writer.write(rec)
            if callback is not None:
                callback(self, rec)
            log.debug("iter %d K+=%d train=%.2f", rec.iter, rec.k_plus, rec.train_joint_ll)
        return records

    def gather_z(self) -> np.ndarray:
        """Global Z assembled from the shards (debug only; bypasses the protocol).

        Columns are the instantiated features followed by p's tail, which is
        zero on every other shard's rows.
        """
        return assemble_z(self.scheduler.gather())

    def close(self) -> None:
        self.scheduler.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def assemble_z(blocks: list[np.ndarray]) -> np.ndarray:
    width = max(b.shape[1] for b in blocks)
    return np.vstack([np.pad(b, ((0, 0), (0, width - b.shape[1]))) for b in blocks])


def run_hybrid(X_train, config: EngineConfig, iterations: int, X_test=None,
               scheduler: str = "serial", writer=None) -> list[TraceRecord]:
    with HybridEngine(X_train, config, X_test, scheduler) as engine:
        return engine.run(iterations, writer)
