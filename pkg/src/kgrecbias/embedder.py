"""Skip-gram with negative sampling over walk corpora, plus cosine similarity."""

from __future__ import annotations

import logging
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .walker import WalkCorpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainParams:
    dimension: int = 200
    window: int = 5
    epochs: int = 5
    negative: int = 5
    alpha: float = 0.025
    min_alpha: float = 1e-4
    seed: int = 1
    min_count: int = 1
    sample: float = 0.0  # frequency subsampling threshold; 0 disables
    deterministic: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("dimension", "window", "epochs", "negative", "min_count", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not 0 <= self.min_alpha <= self.alpha:
            raise ValueError("min_alpha must lie in [0, alpha]")
        if self.sample < 0:
            raise ValueError("sample must be >= 0")


class Vocabulary:
    """Retained corpus tokens ordered by descending frequency (ties by corpus token id)."""

    def __init__(self, token_ids: np.ndarray, counts: np.ndarray, labels: Sequence[str], min_count: int, corpus_size: int):
        self.token_ids = np.asarray(token_ids, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.labels = tuple(labels)
        self.min_count = min_count
        # corpus token id -> vocabulary index, -1 where filtered out
        self.lookup = np.full(corpus_size, -1, dtype=np.int64)
        self.lookup[self.token_ids] = np.arange(len(self.token_ids))
        weights = self.counts.astype(np.float64) ** 0.75
        self.probs = weights / weights.sum()
        self.cumulative = np.cumsum(self.probs)
        self.cumulative[-1] = 1.0
        self._index = {tok: i for i, tok in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index[token]

    def count(self, token: str) -> int:
        return int(self.counts[self._index[token]])

    def as_dict(self) -> dict[str, int]:
        return dict(zip(self.labels, self.counts.tolist()))

    def sample_negatives(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw vocabulary indices from the unigram^0.75 distribution."""
        return np.searchsorted(self.cumulative, rng.random(size), side="right").clip(max=len(self) - 1)


def build_vocab(c: WalkCorpus, min_count: int = 1) -> Vocabulary:
    if len(c.tokens) == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = np.bincount(c.tokens, minlength=len(c.labels))
    keep = np.flatnonzero(counts >= min_count)
    if len(keep) == 0:
        raise ValueError(f"no token reaches min_count={min_count}")
    order = np.lexsort((keep, -counts[keep]))
    keep = keep[order]
    return Vocabulary(keep, counts[keep], [c.labels[t] for t in keep], min_count, len(c.labels))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_loss_and_grad(v, u_pos, u_neg):
    """Loss ``-log s(u_pos.v) - sum log s(-u_neg.v)`` and its gradients.

    Returns ``(loss, grad_v, grad_u_pos, grad_u_neg)``; ``u_neg`` has one
    row per negative sample.
    """
    u_neg = np.atleast_2d(u_neg) if len(u_neg) else np.zeros((0, len(v)), dtype=v.dtype)
    pos = u_pos @ v
    neg = u_neg @ v
    loss = -_log_sigmoid(pos) - np.sum(_log_sigmoid(-neg))
    g_pos = _sigmoid(pos) - 1.0
    g_neg = _sigmoid(neg)
    grad_v = g_pos * u_pos + g_neg @ u_neg
    return float(loss), grad_v, g_pos * v, np.outer(g_neg, v)


def sgns_step(center: int, context: int, negatives, lr: float, w_in: np.ndarray, w_out: np.ndarray) -> float:
    """One in-place SGD step on a (center, context) pair; returns the pre-update loss."""
    negatives = np.asarray(negatives, dtype=np.int64)
    v = w_in[center].copy()
    loss, grad_v, grad_pos, grad_neg = sgns_loss_and_grad(v, w_out[context].copy(), w_out[negatives].copy())
    w_in[center] -= lr * grad_v
    w_out[context] -= lr * grad_pos
    if len(negatives):
        np.subtract.at(w_out, negatives, lr * grad_neg)
    return loss


@numba.njit(cache=True)
def _lcg_next(state):
    return state * np.uint64(25214903917) + np.uint64(11)


@numba.njit(cache=True)
def _lcg_uniform(state):
    return (state >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _draw_negatives_lcg(cumulative, state, n):
    out = np.empty(n, dtype=np.int64)
    last = len(cumulative) - 1
    for k in range(n):
        state = _lcg_next(state)
        j = np.searchsorted(cumulative, _lcg_uniform(state), side="right")
        out[k] = min(j, last)
    return out, state


def draw_negatives_lcg(cumulative: np.ndarray, seed: int, n: int) -> np.ndarray:
    """Negative draws exactly as the training kernel makes them (for testing the sampler)."""
    out, _ = _draw_negatives_lcg(np.asarray(cumulative, dtype=np.float64), np.uint64(seed), n)
    return out


@numba.njit(cache=True)
def _log_sig(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@numba.njit(cache=True)
def _sig(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _train_pass(tokens, offsets, walk_ids, w_in, w_out, cumulative, keep_prob,
                window, negative, alpha, min_alpha, done, total, state):
    """One pass over ``walk_ids``; returns (loss sum, pairs, processed centers, rng state)."""
    dim = w_in.shape[1]
    grad_v = np.zeros(dim, dtype=np.float64)
    v = np.zeros(dim, dtype=np.float64)
    targets = np.empty(negative + 1, dtype=np.int64)
    coeffs = np.empty(negative + 1, dtype=np.float64)
    buf = np.empty(offsets.shape[0], dtype=np.int64)
    loss_sum = 0.0
    pairs = 0
    last = len(cumulative) - 1
    for w in walk_ids:
        lo = offsets[w]
        hi = offsets[w + 1]
        n = 0
        if buf.shape[0] < hi - lo:
            buf = np.empty(hi - lo, dtype=np.int64)
        for p in range(lo, hi):
            t = tokens[p]
            if keep_prob[t] < 1.0:
                state = _lcg_next(state)
                if _lcg_uniform(state) >= keep_prob[t]:
                    continue
            buf[n] = t
            n += 1
        for i in range(n):
            lr = alpha - (alpha - min_alpha) * (done / total)
            if lr < min_alpha:
                lr = min_alpha
            done += 1
            center = buf[i]
            j0 = max(0, i - window)
            j1 = min(n, i + window + 1)
            for j in range(j0, j1):
                if j == i:
                    continue
                ctx = buf[j]
                targets[0] = ctx
                k = 1
                for _ in range(negative):
                    state = _lcg_next(state)
                    neg = np.searchsorted(cumulative, _lcg_uniform(state), side="right")
                    if neg > last:
                        neg = last
                    if neg == ctx:
                        continue
                    targets[k] = neg
                    k += 1
                for d in range(dim):
                    v[d] = w_in[center, d]
                    grad_v[d] = 0.0
                for q in range(k):
                    t = targets[q]
                    dot = 0.0
                    for d in range(dim):
                        dot += w_out[t, d] * v[d]
                    if q == 0:
                        loss_sum -= _log_sig(dot)
                        coeffs[q] = _sig(dot) - 1.0
                    else:
                        loss_sum -= _log_sig(-dot)
                        coeffs[q] = _sig(dot)
                    for d in range(dim):
                        grad_v[d] += coeffs[q] * w_out[t, d]
                for q in range(k):
                    t = targets[q]
                    g = lr * coeffs[q]
                    for d in range(dim):
                        w_out[t, d] -= g * v[d]
                for d in range(dim):
                    w_in[center, d] -= lr * grad_v[d]
                pairs += 1
    return loss_sum, pairs, done, state


class EmbeddingSpace:
    """Token -> vector table. Vectors are float32, one row per vocabulary token."""

    def __init__(self, tokens: Sequence[str], vectors: np.ndarray, name: str = "", params: dict | None = None,
                 loss_history: Sequence[float] = ()):
        self.tokens = tuple(tokens)
        self.vectors = np.asarray(vectors, dtype=np.float32)
        if self.vectors.shape[0] != len(self.tokens):
            raise ValueError("vector count does not match token count")
        self.name = name
        self.params = params or {}
        self.loss_history = list(loss_history)
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self._index[token]]

    def similarity(self, a: str, b: str) -> float:
        return cosine(self.vector(a), self.vector(b))

    def save(self, path) -> None:
        """Word-vector text format: header ``count dim``, then ``token c1 .. cdim`` (9 significant digits)."""
        fmt = " ".join(["%.9g"] * self.dimension)
        lines = [f"{len(self)} {self.dimension}\n"]
        for tok, row in zip(self.tokens, self.vectors.astype(np.float64)):
            lines.append(f"{tok} {fmt % tuple(row)}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path, name: str = "") -> "EmbeddingSpace":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: bad header")
            count, dim = int(header[0]), int(header[1])
            tokens, rows = [], np.empty((count, dim), dtype=np.float32)
            for i, line in enumerate(fh):
                parts = line.rstrip("\n").split(" ")
                if i >= count or len(parts) != dim + 1:
                    raise ValueError(f"{path}: line {i + 2}: malformed vector row")
                tokens.append(parts[0])
                rows[i] = np.array(parts[1:], dtype=np.float64)
        if len(tokens) != count:
            raise ValueError(f"{path}: expected {count} vectors, found {len(tokens)}")
        return cls(tokens, rows, name)


def _keep_probabilities(vocab: Vocabulary, sample: float) -> np.ndarray:
    if sample <= 0:
        return np.ones(len(vocab))
    total = vocab.counts.sum()
    f = vocab.counts / total
    return np.minimum(1.0, (np.sqrt(f / sample) + 1.0) * sample / f)


def train(c: WalkCorpus, p: TrainParams = TrainParams(), vocab: Vocabulary | None = None) -> EmbeddingSpace:
    """Train SGNS vectors over every walk; deterministic mode is bit-reproducible per seed."""
    if vocab is None:
        vocab = build_vocab(c, p.min_count)
    mapped = vocab.lookup[c.tokens]
    kept = mapped >= 0
    running = np.concatenate([[0], np.cumsum(kept)])
    lengths = running[c.offsets[1:]] - running[c.offsets[:-1]]
    tokens = mapped[kept]
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])

    rng = np.random.default_rng(p.seed)
    w_in = ((rng.random((len(vocab), p.dimension)) - 0.5) / p.dimension).astype(np.float32)
    w_out = np.zeros((len(vocab), p.dimension), dtype=np.float32)
    keep_prob = _keep_probabilities(vocab, p.sample)
    total = max(1, int(len(tokens)) * p.epochs)
    cumulative = vocab.cumulative
    history = []

    if p.deterministic or p.workers == 1:
        state = np.uint64(p.seed * 2 + 1)
        done = 0
        walk_ids = np.arange(len(lengths), dtype=np.int64)
        for epoch in range(p.epochs):
            loss, pairs, done, state = _train_pass(tokens, offsets, walk_ids, w_in, w_out, cumulative, keep_prob,
                                                   p.window, p.negative, p.alpha, p.min_alpha, done, total, state)
            state = np.uint64(state)
            history.append(loss / max(pairs, 1))
            logger.debug("epoch %d: mean pair loss %.6f over %d pairs", epoch, history[-1], pairs)
    else:
        history = _train_relaxed(tokens, offsets, w_in, w_out, cumulative, keep_prob, p, total)

    params = asdict(p)
    return EmbeddingSpace(vocab.labels, w_in, c.name, params, history)


def _train_relaxed(tokens, offsets, w_in, w_out, cumulative, keep_prob, p: TrainParams, total):
    """Lock-free parallel passes: workers share the weight tables and race on updates."""
    parts = np.array_split(np.arange(len(offsets) - 1, dtype=np.int64), p.workers)
    history = []
    done = [0] * p.workers
    states = [np.uint64(p.seed * 2 + 1 + 2 * k) for k in range(p.workers)]
    lock = threading.Lock()
    for _ in range(p.epochs):
        totals = [0.0, 0]

        def work(k):
            # each worker sees 1/workers of the data; scale its progress to the global schedule
            loss, pairs, d, s = _train_pass(tokens, offsets, parts[k], w_in, w_out, cumulative, keep_prob,
                                            p.window, p.negative, p.alpha, p.min_alpha,
                                            done[k], max(1, total // p.workers), states[k])
            done[k], states[k] = d, np.uint64(s)
            with lock:
                totals[0] += loss
                totals[1] += pairs

        threads = [threading.Thread(target=work, args=(k,)) for k in range(p.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        history.append(totals[0] / max(totals[1], 1))
    return history


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0 or nb == 0:
        raise ValueError("cosine undefined for a zero-norm vector")
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))
