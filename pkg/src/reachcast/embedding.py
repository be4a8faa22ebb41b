"""Node embeddings from biased second-order random walks.

Walks follow out-edges only.  The first hop is uniform over out-neighbors;
later hops weight each candidate x by 1/p when x is the previous node, 1
when x is an out-neighbor of the previous node, and 1/q otherwise, trading
off breadth-first against depth-first exploration.  Walks feed a skip-gram
model trained with negative sampling: gradient ascent on

    log sigmoid(e_center . c_context)
        + sum_k log sigmoid(-e_center . c_negative_k)

with negatives drawn from corpus node frequencies raised to the 0.75 power.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._accel import NUMBA_ENABLED, hot
from ._rng import as_seed, derive_master, stream64_array, uniform64
from .errors import FormatError, ParameterError, TrainingError
from .graphs import DirectedGraph

_SALT_SHUFFLE = 101
_SALT_WALKS = 102
_SALT_INIT = 103
_SALT_NEGATIVES = 104

MIN_LR_FRACTION = 1e-4


@dataclass(frozen=True)
class WalkConfig:
    """Walk and training hyperparameters."""

    dimensions: int = 128
    walk_length: int = 20
    window: int = 5
    walks_per_node: int = 10
    return_param: float = 1.0
    inout_param: float = 1.0
    epochs: int = 5
    initial_learning_rate: float = 0.025
    negatives_per_positive: int = 5
    seed: int = 0
    training_mode: str = "deterministic"

    def __post_init__(self):
        for name in ("dimensions", "walk_length", "window", "walks_per_node",
                     "epochs", "negatives_per_positive"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.return_param <= 0 or self.inout_param <= 0:
            raise ParameterError("return_param and inout_param must be > 0")
        if self.initial_learning_rate <= 0:
            raise ParameterError("initial_learning_rate must be > 0")
        if self.window > self.walk_length:
            raise ParameterError("window must not exceed walk_length")
        if self.training_mode not in ("deterministic", "fast"):
            raise ParameterError("training_mode must be 'deterministic' or 'fast'")

    def with_seed(self, seed: int) -> "WalkConfig":
        return replace(self, seed=seed)


@dataclass
class EmbeddingMatrix:
    """Learned input vectors, one row per node.

    `context` holds the companion output vectors; it exists only during and
    right after training and is never serialized.
    """

    vectors: np.ndarray
    labels: list[str] = field(default_factory=list)
    context: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ParameterError("vectors must be a 2-d matrix")
        if not self.labels:
            self.labels = [str(i) for i in range(self.vectors.shape[0])]
        if len(self.labels) != self.vectors.shape[0]:
            raise ParameterError("one label per row required")

    @property
    def node_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimensions(self) -> int:
        return self.vectors.shape[1]


class WalkCorpus:
    """Walk sequences in canonical order plus flat views for training."""

    def __init__(self, walks: list[np.ndarray], node_count: int):
        self.walks = walks
        self.node_count = int(node_count)
        lengths = np.array([w.shape[0] for w in walks], dtype=np.int64)
        self.offsets = np.zeros(len(walks) + 1, dtype=np.int64)
        np.cumsum(lengths, out=self.offsets[1:])
        self.tokens = (np.concatenate(walks).astype(np.int32) if walks
                       else np.zeros(0, dtype=np.int32))

    def __len__(self) -> int:
        return len(self.walks)

    @property
    def total_tokens(self) -> int:
        return int(self.offsets[-1])

    def node_frequencies(self) -> np.ndarray:
        return np.bincount(self.tokens, minlength=self.node_count).astype(np.int64)


# ---------------------------------------------------------------------------
# walk kernel

@hot(cache=True, nogil=True)
def _walk_loop(indptr, indices, start, stream, max_len, inv_p, inv_q, out):
    out[0] = start
    cur = start
    prev = -1
    length = 1
    for step in range(1, max_len):
        lo = indptr[cur]
        hi = indptr[cur + 1]
        deg = hi - lo
        if deg == 0:
            break
        u = uniform64(stream, step)
        if prev < 0:
            k = int(u * deg)
            if k >= deg:
                k = deg - 1
            nxt = indices[lo + k]
        else:
            plo = indptr[prev]
            phi = indptr[prev + 1]
            total = 0.0
            for j in range(lo, hi):
                total += _alpha(indices, plo, phi, indices[j], prev, inv_p, inv_q)
            target = u * total
            run = 0.0
            nxt = indices[hi - 1]
            for j in range(lo, hi):
                run += _alpha(indices, plo, phi, indices[j], prev, inv_p, inv_q)
                if run > target:
                    nxt = indices[j]
                    break
        out[length] = nxt
        length += 1
        prev = cur
        cur = nxt
    return length


@hot(cache=True, nogil=True)
def _alpha(indices, plo, phi, x, prev, inv_p, inv_q):
    # bias weight of candidate x given previous node: 1/p if returning,
    # 1 if x is an out-neighbor of prev, 1/q otherwise
    if x == prev:
        return inv_p
    a = plo
    b = phi
    while a < b:
        mid = (a + b) >> 1
        if indices[mid] < x:
            a = mid + 1
        else:
            b = mid
    if a < phi and indices[a] == x:
        return 1.0
    return inv_q


def generate_walks(graph: DirectedGraph, cfg: WalkConfig, seed=None,
                   workers: int = 1) -> WalkCorpus:
    """Generate walks_per_node walks from every node.

    One walk-generation epoch visits every node once in a per-epoch
    shuffled order; each walk draws from a stream derived from (seed,
    epoch, start node), so results do not depend on the worker count.
    """
    master = cfg.seed if seed is None else seed
    n = graph.node_count
    inv_p = 1.0 / cfg.return_param
    inv_q = 1.0 / cfg.inout_param
    walk_master = as_seed(derive_master(master, _SALT_WALKS))
    walks: list[np.ndarray] = []
    for epoch in range(cfg.walks_per_node):
        shuffle_rng = np.random.default_rng(derive_master(master, _SALT_SHUFFLE, epoch))
        order = shuffle_rng.permutation(n).astype(np.int64)
        streams = stream64_array(walk_master, np.full(n, epoch, dtype=np.int64), order)

        def _run(span):
            lo, hi = span
            out = []
            buf = np.empty(cfg.walk_length, dtype=np.int32)
            with np.errstate(over="ignore"):
                for i in range(lo, hi):
                    length = _walk_loop(graph.out_indptr, graph.out_indices,
                                        int(order[i]), streams[i], cfg.walk_length,
                                        inv_p, inv_q, buf)
                    out.append(buf[:length].copy())
            return out

        if workers <= 1 or n < 2:
            walks.extend(_run((0, n)))
        else:
            bounds = np.linspace(0, n, workers + 1, dtype=np.int64)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for part in pool.map(_run, zip(bounds[:-1], bounds[1:])):
                    walks.extend(part)
    return WalkCorpus(walks, n)


# ---------------------------------------------------------------------------
# skip-gram with negative sampling

@hot(cache=True, nogil=True)
def _sigmoid(x):
    if x > 36.0:
        return 1.0
    if x < -36.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


@hot(cache=True, nogil=True)
def _sgns_walk_loop(tokens, emb, ctx, noise_cdf, window, k_neg, lr0,
                    step_base, total_steps, stream, grad):
    n_nodes = noise_cdf.shape[0]
    length = tokens.shape[0]
    draw = 0
    for i in range(length):
        lr = lr0 * (1.0 - (step_base + i) / total_steps)
        floor = lr0 * MIN_LR_FRACTION
        if lr < floor:
            lr = floor
        wi = tokens[i]
        evec = emb[wi]
        lo = i - window
        if lo < 0:
            lo = 0
        hi = i + window
        if hi > length - 1:
            hi = length - 1
        for j in range(lo, hi + 1):
            if j == i:
                continue
            grad[:] = 0.0
            cvec = ctx[tokens[j]]
            g = (1.0 - _sigmoid(np.dot(evec, cvec))) * lr
            grad += g * cvec
            cvec += g * evec
            for _ in range(k_neg):
                u = uniform64(stream, draw)
                draw += 1
                a = 0
                b = n_nodes
                while a < b:
                    mid = (a + b) >> 1
                    if noise_cdf[mid] <= u:
                        a = mid + 1
                    else:
                        b = mid
                nvec = ctx[a]
                g = -_sigmoid(np.dot(evec, nvec)) * lr
                grad += g * nvec
                nvec += g * evec
            evec += grad


if NUMBA_ENABLED:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _sgns_epoch_parallel(tokens, offsets, emb, ctx, noise_cdf, window,
                             k_neg, lr0, epoch_base, total_steps, streams):
        for w in prange(offsets.shape[0] - 1):
            grad = np.empty(emb.shape[1], dtype=np.float64)
            _sgns_walk_loop(tokens[offsets[w]:offsets[w + 1]], emb, ctx,
                            noise_cdf, window, k_neg, lr0,
                            epoch_base + offsets[w], total_steps,
                            streams[w], grad)


def train_skipgram(corpus: WalkCorpus, cfg: WalkConfig, seed=None) -> EmbeddingMatrix:
    """Train skip-gram with negative sampling over the walk corpus.

    The learning rate decays linearly from the configured initial value to
    1e-4 of it over all (epoch, token) steps.  In deterministic mode (the
    default) walks are processed in canonical order by a single worker;
    fast mode updates from multiple walks concurrently and is not
    reproducible, but negative draws stay keyed to (epoch, walk), so both
    modes sample the same noise.
    """
    master = cfg.seed if seed is None else seed
    if corpus.total_tokens == 0:
        raise TrainingError("cannot train on an empty walk corpus")
    n, d = corpus.node_count, cfg.dimensions
    init_rng = np.random.default_rng(derive_master(master, _SALT_INIT))
    emb = (init_rng.random((n, d)) - 0.5) / d
    ctx = np.zeros((n, d), dtype=np.float64)

    freq = corpus.node_frequencies().astype(np.float64)
    weights = freq ** 0.75
    noise_cdf = np.cumsum(weights / weights.sum())
    noise_cdf[-1] = 1.0

    total_tokens = corpus.total_tokens
    total_steps = float(cfg.epochs * total_tokens)
    sgns_master = as_seed(derive_master(master, _SALT_NEGATIVES))
    n_walks = len(corpus)
    use_parallel = cfg.training_mode == "fast" and NUMBA_ENABLED

    grad = np.empty(d, dtype=np.float64)
    with np.errstate(over="ignore"):
        for epoch in range(cfg.epochs):
            streams = stream64_array(sgns_master,
                                     np.full(n_walks, epoch, dtype=np.int64),
                                     np.arange(n_walks, dtype=np.int64))
            epoch_base = epoch * total_tokens
            if use_parallel:
                _sgns_epoch_parallel(corpus.tokens, corpus.offsets, emb, ctx,
                                     noise_cdf, cfg.window,
                                     cfg.negatives_per_positive,
                                     cfg.initial_learning_rate,
                                     epoch_base, total_steps, streams)
            else:
                for w in range(n_walks):
                    lo, hi = corpus.offsets[w], corpus.offsets[w + 1]
                    _sgns_walk_loop(corpus.tokens[lo:hi], emb, ctx, noise_cdf,
                                    cfg.window, cfg.negatives_per_positive,
                                    cfg.initial_learning_rate,
                                    epoch_base + int(lo), total_steps,
                                    streams[w], grad)
    return EmbeddingMatrix(vectors=emb, context=ctx)


def embed_graph(graph: DirectedGraph, cfg: WalkConfig, seed=None,
                workers: int = 1) -> EmbeddingMatrix:
    """Walks plus training, with the graph's external labels attached."""
    corpus = generate_walks(graph, cfg, seed=seed, workers=workers)
    emb = train_skipgram(corpus, cfg, seed=seed)
    emb.labels = list(graph.labels)
    return emb


# ---------------------------------------------------------------------------
# objective helpers (evaluation and gradient verification)

def sgns_objective(emb: np.ndarray, ctx: np.ndarray, corpus: WalkCorpus,
                   window: int, k_neg: int, noise_probs: np.ndarray) -> float:
    """Mean per-pair objective with the exact expectation over negatives.

    Deterministic (no sampling), so before/after comparisons are exact.
    """
    logsig_neg = _log_sigmoid(-emb @ ctx.T)
    neg_term = logsig_neg @ noise_probs
    total = 0.0
    pairs = 0
    for walk in corpus.walks:
        length = walk.shape[0]
        for i in range(length):
            lo, hi = max(0, i - window), min(length - 1, i + window)
            for j in range(lo, hi + 1):
                if j == i:
                    continue
                x = float(emb[walk[i]] @ ctx[walk[j]])
                total += _log_sigmoid_scalar(x) + k_neg * float(neg_term[walk[i]])
                pairs += 1
    if pairs == 0:
        raise TrainingError("corpus yields no training pairs")
    return total / pairs


def sgns_pair_objective(e: np.ndarray, c_pos: np.ndarray,
                        c_negs: np.ndarray) -> float:
    """Objective of one (center, context) pair with fixed negatives."""
    val = _log_sigmoid_scalar(float(e @ c_pos))
    for k in range(c_negs.shape[0]):
        val += _log_sigmoid_scalar(-float(e @ c_negs[k]))
    return val


def sgns_pair_gradients(e: np.ndarray, c_pos: np.ndarray, c_negs: np.ndarray):
    """Analytic gradients of sgns_pair_objective w.r.t. all vectors."""
    sig_pos = 1.0 / (1.0 + np.exp(-float(e @ c_pos)))
    ge = (1.0 - sig_pos) * c_pos
    gc_pos = (1.0 - sig_pos) * e
    gc_negs = np.empty_like(c_negs)
    for k in range(c_negs.shape[0]):
        sig_k = 1.0 / (1.0 + np.exp(-float(e @ c_negs[k])))
        ge = ge - sig_k * c_negs[k]
        gc_negs[k] = -sig_k * e
    return ge, gc_pos, gc_negs


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _log_sigmoid_scalar(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


# ---------------------------------------------------------------------------
# text format

def save_embeddings(emb: EmbeddingMatrix, target) -> None:
    """First line `<node_count> <dimensions>`, then one labeled row per node."""
    close = False
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        handle = open(target, "w", encoding="utf-8")
        close = True
    else:
        handle = target
    try:
        handle.write(f"{emb.node_count} {emb.dimensions}\n")
        for i in range(emb.node_count):
            row = " ".join(f"{x:.9g}" for x in emb.vectors[i])
            handle.write(f"{emb.labels[i]} {row}\n")
    finally:
        if close:
            handle.close()


def load_embeddings(source) -> EmbeddingMatrix:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    if not lines:
        raise FormatError("empty embedding file")
    head = lines[0].split()
    if len(head) != 2:
        raise FormatError(f"bad embedding header: {lines[0]!r}")
    try:
        n, d = int(head[0]), int(head[1])
    except ValueError as exc:
        raise FormatError(f"bad embedding header: {lines[0]!r}") from exc
    labels: list[str] = []
    vectors = np.empty((n, d), dtype=np.float64)
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise FormatError(f"expected {n} embedding rows, found {len(rows)}")
    for i, line in enumerate(rows):
        fields = line.split()
        if len(fields) != d + 1:
            raise FormatError(f"row {i + 2}: expected {d + 1} fields, got {len(fields)}")
        labels.append(fields[0])
        vectors[i] = [float(x) for x in fields[1:]]
    return EmbeddingMatrix(vectors=vectors, labels=labels)
