"""Independent Cascade Model simulation.

A cascade starts from a single seed node; every node activated at time t
makes one activation attempt on each still-inactive out-neighbor at time
t+1, succeeding with the edge's activation probability, until a step
activates nobody.

The attempt on edge e of a cascade draws its uniform from position e of
the cascade's counter-based stream.  Each edge is attempted at most once
per cascade, so one position per edge suffices, and the realized cascade
is exactly a breadth-first traversal of the "live" edges (those whose draw
falls below the edge probability).  Consequences used elsewhere: results
never depend on attempt evaluation order or worker count, both kernel
backends agree bit for bit, and re-running with higher probabilities under
the same seed can only grow the activated set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._accel import NUMBA_ENABLED, hot
from ._rng import as_seed, stream64, stream64_array, uniform64, uniform64_array
from .errors import ConsistencyError, ParameterError, ParseError
from .graphs import DirectedGraph

CASCADE_HEADER = "#reachcast-cascades v1"

# chunk buffers hold chunk_size * node_count int32 entries
_CHUNK_BUDGET = 8_000_000


@dataclass(frozen=True)
class ActivationProbabilities:
    """Per-edge activation probabilities aligned with DirectedGraph.edges."""

    p: np.ndarray
    max_p: float

    def __post_init__(self):
        if not 0.0 <= self.max_p <= 1.0:
            raise ParameterError(f"max_p must lie in [0, 1], got {self.max_p}")
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1:
            raise ParameterError("p must be one-dimensional")
        if p.size and (p.min() < 0.0 or p.max() > self.max_p):
            raise ParameterError("edge probabilities must lie in [0, max_p]")
        object.__setattr__(self, "p", p)

    def check_aligned(self, graph: DirectedGraph) -> None:
        if self.p.shape[0] != graph.edge_count:
            raise ConsistencyError(
                f"probabilities cover {self.p.shape[0]} edges, graph has {graph.edge_count}")


@dataclass(frozen=True)
class Cascade:
    """One realized diffusion: (timestep, newly-activated set) pairs."""

    seed: int
    steps: tuple

    def nodes(self) -> set[int]:
        out: set[int] = set()
        for _, group in self.steps:
            out |= group
        return out

    def __len__(self) -> int:
        return sum(len(group) for _, group in self.steps)


class CascadeSet:
    """A collection of cascades stored as flat arrays.

    Per cascade, activated nodes are laid out sorted by (timestep, node
    index); `offsets` delimits cascades within the flat arrays.  Cascade
    objects are materialized on demand.
    """

    def __init__(self, seeds: np.ndarray, offsets: np.ndarray, nodes: np.ndarray,
                 steps: np.ndarray, r_nominal: int, node_count: int, edge_count: int):
        self.seeds = np.asarray(seeds, dtype=np.int32)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.nodes = np.asarray(nodes, dtype=np.int32)
        self.steps = np.asarray(steps, dtype=np.int32)
        self.r_nominal = int(r_nominal)
        self.node_count = int(node_count)
        self.edge_count = int(edge_count)
        if self.r_nominal < 1:
            raise ParameterError("r_nominal must be >= 1")
        if self.nodes.size and self.nodes.max() >= self.node_count:
            raise ConsistencyError("cascade references node outside fingerprint")

    @property
    def fingerprint(self) -> tuple[int, int]:
        return (self.node_count, self.edge_count)

    def __len__(self) -> int:
        return self.seeds.shape[0]

    def __getitem__(self, i: int) -> Cascade:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return _cascade_from_flat(self.nodes[lo:hi], self.steps[lo:hi])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def cascades(self) -> list[Cascade]:
        return list(self)

    def per_seed_counts(self) -> np.ndarray:
        """Number of cascades initiated from each node."""
        return np.bincount(self.seeds, minlength=self.node_count).astype(np.int64)

    @classmethod
    def from_cascades(cls, cascades, r_nominal: int, node_count: int,
                      edge_count: int) -> "CascadeSet":
        seeds, sizes, nodes, steps = [], [], [], []
        for c in cascades:
            seeds.append(c.seed)
            size = 0
            for t, group in c.steps:
                for v in sorted(group):
                    nodes.append(v)
                    steps.append(t)
                    size += 1
            sizes.append(size)
        offsets = np.zeros(len(seeds) + 1, dtype=np.int64)
        np.cumsum(sizes, out=offsets[1:])
        return cls(np.asarray(seeds, dtype=np.int32), offsets,
                   np.asarray(nodes, dtype=np.int32), np.asarray(steps, dtype=np.int32),
                   r_nominal, node_count, edge_count)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CascadeSet)
                and self.r_nominal == other.r_nominal
                and self.fingerprint == other.fingerprint
                and np.array_equal(self.seeds, other.seeds)
                and np.array_equal(self.offsets, other.offsets)
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.steps, other.steps))


def _cascade_from_flat(nodes: np.ndarray, steps: np.ndarray) -> Cascade:
    groups: list[tuple[int, frozenset]] = []
    i = 0
    while i < nodes.shape[0]:
        t = int(steps[i])
        j = i
        while j < nodes.shape[0] and steps[j] == t:
            j += 1
        groups.append((t, frozenset(int(v) for v in nodes[i:j])))
        i = j
    return Cascade(seed=int(nodes[0]) if nodes.size else -1, steps=tuple(groups))


def assign_probabilities(graph: DirectedGraph, max_p: float, seed) -> ActivationProbabilities:
    """Draw one activation probability per edge, uniform on [0, max_p)."""
    if not 0.0 <= max_p <= 1.0:
        raise ParameterError(f"max_p must lie in [0, 1], got {max_p}")
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.0, max_p, size=graph.edge_count) if max_p > 0 else np.zeros(graph.edge_count)
    return ActivationProbabilities(p=p, max_p=max_p)


# ---------------------------------------------------------------------------
# simulation kernels

@hot(cache=True, nogil=True)
def _simulate_chunk_loop(indptr, indices, edge_p, seeds, streams, stamp,
                         frontier, nxt, nodes_out, steps_out, sizes_out):
    pos = 0
    for c in range(seeds.shape[0]):
        seed = seeds[c]
        stream = streams[c]
        nodes_out[pos] = seed
        steps_out[pos] = 0
        stamp[seed] = 1
        size = 1
        frontier[0] = seed
        fsize = 1
        t = 0
        while fsize > 0:
            nsize = 0
            for fi in range(fsize):
                u = frontier[fi]
                for k in range(indptr[u], indptr[u + 1]):
                    v = indices[k]
                    if stamp[v] == 1:
                        continue
                    if uniform64(stream, k) < edge_p[k]:
                        stamp[v] = 1
                        nxt[nsize] = v
                        nsize += 1
            if nsize == 0:
                break
            t += 1
            sub = nxt[:nsize]
            sub.sort()
            for i in range(nsize):
                nodes_out[pos + size + i] = sub[i]
                steps_out[pos + size + i] = t
                frontier[i] = sub[i]
            size += nsize
            fsize = nsize
        for i in range(size):
            stamp[nodes_out[pos + i]] = 0
        sizes_out[c] = size
        pos += size
    return pos


def _np_simulate_one(indptr, indices, edge_p, seed, stream, n):
    """Vectorized frontier expansion; draws the same per-edge uniforms as
    the loop kernel, so it realizes the identical cascade."""
    visited = np.zeros(n, dtype=bool)
    visited[seed] = True
    nodes = [np.array([seed], dtype=np.int32)]
    steps = [np.zeros(1, dtype=np.int32)]
    frontier = np.array([seed], dtype=np.int64)
    t = 0
    while frontier.size:
        starts = indptr[frontier]
        counts = indptr[frontier + 1] - starts
        total = int(counts.sum())
        if total == 0:
            break
        within = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
        eidx = np.repeat(starts, counts) + within
        targets = indices[eidx]
        live = ~visited[targets]
        eidx, targets = eidx[live], targets[live]
        hits = uniform64_array(stream, eidx) < edge_p[eidx]
        new = np.unique(targets[hits])
        if new.size == 0:
            break
        t += 1
        visited[new] = True
        nodes.append(new.astype(np.int32))
        steps.append(np.full(new.size, t, dtype=np.int32))
        frontier = new.astype(np.int64)
    return np.concatenate(nodes), np.concatenate(steps)


def _simulate_range(graph, edge_p, seeds, streams):
    """Simulate a contiguous batch of cascades, returning flat arrays."""
    n = graph.node_count
    indptr, indices = graph.out_indptr, graph.out_indices
    if NUMBA_ENABLED:
        chunk = max(1, min(8192, _CHUNK_BUDGET // max(n, 1)))
        seeds32 = seeds.astype(np.int32)
        stamp = np.zeros(n, dtype=np.int64)
        frontier = np.empty(n, dtype=np.int32)
        nxt = np.empty(n, dtype=np.int32)
        node_parts, step_parts, size_parts = [], [], []
        for lo in range(0, seeds.shape[0], chunk):
            hi = min(lo + chunk, seeds.shape[0])
            cap = (hi - lo) * max(n, 1)
            nodes_buf = np.empty(cap, dtype=np.int32)
            steps_buf = np.empty(cap, dtype=np.int32)
            sizes = np.empty(hi - lo, dtype=np.int64)
            used = _simulate_chunk_loop(indptr, indices, edge_p, seeds32[lo:hi],
                                        streams[lo:hi], stamp, frontier, nxt,
                                        nodes_buf, steps_buf, sizes)
            node_parts.append(nodes_buf[:used].copy())
            step_parts.append(steps_buf[:used].copy())
            size_parts.append(sizes)
        sizes = np.concatenate(size_parts) if size_parts else np.zeros(0, dtype=np.int64)
        return np.concatenate(node_parts), np.concatenate(step_parts), sizes
    with np.errstate(over="ignore"):
        node_parts, step_parts = [], []
        sizes = np.empty(seeds.shape[0], dtype=np.int64)
        for i in range(seeds.shape[0]):
            nd, st = _np_simulate_one(indptr, indices, edge_p, int(seeds[i]),
                                      np.uint64(streams[i]), n)
            node_parts.append(nd)
            step_parts.append(st)
            sizes[i] = nd.shape[0]
        empty = np.zeros(0, dtype=np.int32)
        return (np.concatenate(node_parts) if node_parts else empty,
                np.concatenate(step_parts) if step_parts else empty,
                sizes)


def run_icm(graph: DirectedGraph, probs: ActivationProbabilities, seed: int,
            stream) -> Cascade:
    """Simulate one cascade from `seed`, drawing from the given rng stream."""
    probs.check_aligned(graph)
    graph._check_node(seed)
    seeds = np.asarray([seed], dtype=np.int64)
    streams = np.asarray([as_seed(stream)], dtype=np.uint64)
    nodes, steps, _ = _simulate_range(graph, probs.p, seeds, streams)
    return _cascade_from_flat(nodes, steps)


def generate_cascade_set(graph: DirectedGraph, probs: ActivationProbabilities,
                         r: int, seed, workers: int = 1) -> CascadeSet:
    """Run r cascades from every node.

    Cascades are ordered (seed node ascending, replicate ascending); the
    draw stream of each cascade is derived from (seed, node, replicate), so
    the result is identical for any worker count.
    """
    if r < 1:
        raise ParameterError(f"r must be >= 1, got {r}")
    probs.check_aligned(graph)
    n = graph.node_count
    master = as_seed(seed)
    task_nodes = np.repeat(np.arange(n, dtype=np.int64), r)
    task_reps = np.tile(np.arange(r, dtype=np.int64), n)
    streams = stream64_array(master, task_nodes, task_reps)

    if workers <= 1 or task_nodes.shape[0] < 2:
        nodes, steps, sizes = _simulate_range(graph, probs.p, task_nodes, streams)
    else:
        bounds = np.linspace(0, task_nodes.shape[0], workers + 1, dtype=np.int64)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda b: _simulate_range(graph, probs.p,
                                          task_nodes[b[0]:b[1]], streams[b[0]:b[1]]),
                zip(bounds[:-1], bounds[1:])))
        nodes = np.concatenate([p[0] for p in parts])
        steps = np.concatenate([p[1] for p in parts])
        sizes = np.concatenate([p[2] for p in parts])

    offsets = np.zeros(task_nodes.shape[0] + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return CascadeSet(task_nodes.astype(np.int32), offsets, nodes, steps,
                      r_nominal=r, node_count=n, edge_count=graph.edge_count)


def sample_portion(cs: CascadeSet, fraction: float, seed) -> CascadeSet:
    """Sample floor(fraction * len) cascades uniformly without replacement.

    Selected cascades keep their original relative order; per-seed counts
    will generally differ across seeds.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    k = int(np.floor(fraction * len(cs)))
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cs), size=k, replace=False))
    return subset_cascades(cs, idx)


def subset_cascades(cs: CascadeSet, idx: np.ndarray) -> CascadeSet:
    """New CascadeSet holding the cascades at the given positions."""
    idx = np.asarray(idx, dtype=np.int64)
    sizes = cs.offsets[idx + 1] - cs.offsets[idx]
    offsets = np.zeros(idx.shape[0] + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    nodes = np.empty(int(offsets[-1]), dtype=np.int32)
    steps = np.empty(int(offsets[-1]), dtype=np.int32)
    for j, i in enumerate(idx):
        lo, hi = cs.offsets[i], cs.offsets[i + 1]
        nodes[offsets[j]:offsets[j + 1]] = cs.nodes[lo:hi]
        steps[offsets[j]:offsets[j + 1]] = cs.steps[lo:hi]
    return CascadeSet(cs.seeds[idx], offsets, nodes, steps,
                      cs.r_nominal, cs.node_count, cs.edge_count)


def concat_cascade_sets(a: CascadeSet, b: CascadeSet) -> CascadeSet:
    if a.fingerprint != b.fingerprint:
        raise ConsistencyError("cascade sets come from different graphs")
    offsets = np.concatenate([a.offsets, a.offsets[-1] + b.offsets[1:]])
    return CascadeSet(np.concatenate([a.seeds, b.seeds]), offsets,
                      np.concatenate([a.nodes, b.nodes]),
                      np.concatenate([a.steps, b.steps]),
                      a.r_nominal, a.node_count, a.edge_count)


def validate_cascade(cascade: Cascade, graph: DirectedGraph | None = None) -> None:
    """Raise ConsistencyError when a cascade violates the model invariants."""
    if not cascade.steps:
        raise ConsistencyError("cascade has no steps")
    t0, group0 = cascade.steps[0]
    if t0 != 0 or group0 != frozenset({cascade.seed}):
        raise ConsistencyError("step 0 must contain exactly the seed")
    seen: set[int] = set()
    prev_group: frozenset = frozenset()
    for i, (t, group) in enumerate(cascade.steps):
        if t != i:
            raise ConsistencyError("timesteps must start at 0 and be consecutive")
        if not group:
            raise ConsistencyError("activated sets must be non-empty")
        if group & seen:
            raise ConsistencyError("a node was activated twice")
        if graph is not None and i > 0:
            for v in group:
                parents = set(int(x) for x in graph.in_neighbors(v))
                if not (parents & prev_group):
                    raise ConsistencyError(
                        f"node {v} activated at t={t} without an active in-neighbor at t={t - 1}")
        seen |= group
        prev_group = group


def stream_for(master_seed, seed_node: int, replicate: int) -> np.uint64:
    """Draw stream id used by generate_cascade_set for (seed_node, replicate)."""
    with np.errstate(over="ignore"):
        return stream64(as_seed(master_seed), np.uint64(seed_node), np.uint64(replicate))


# ---------------------------------------------------------------------------
# cascade file format

def save_cascades(cs: CascadeSet, graph: DirectedGraph, target) -> None:
    """Write one cascade per line using external node labels."""
    close = False
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        handle = open(target, "w", encoding="utf-8")
        close = True
    else:
        handle = target
    try:
        handle.write(f"{CASCADE_HEADER} r={cs.r_nominal} nodes={cs.node_count} "
                     f"edges={cs.edge_count}\n")
        labels = graph.labels
        for i in range(len(cs)):
            lo, hi = cs.offsets[i], cs.offsets[i + 1]
            nodes = cs.nodes[lo:hi]
            steps = cs.steps[lo:hi]
            parts = [str(i), labels[nodes[0]]]
            j = 0
            while j < nodes.shape[0]:
                t = steps[j]
                k = j
                while k < nodes.shape[0] and steps[k] == t:
                    k += 1
                parts.append(f"t{t}:" + ",".join(labels[v] for v in nodes[j:k]))
                j = k
            handle.write("\t".join(parts) + "\n")
    finally:
        if close:
            handle.close()


def load_cascades(source, graph: DirectedGraph) -> CascadeSet:
    """Read a cascade file and validate it against the graph."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    if not lines or not lines[0].startswith(CASCADE_HEADER):
        raise ParseError("missing cascade header")
    header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    try:
        r_nominal = int(header["r"])
        n, m = int(header["nodes"]), int(header["edges"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad cascade header: {lines[0]!r}") from exc
    if (n, m) != (graph.node_count, graph.edge_count):
        raise ConsistencyError(
            f"cascade file fingerprint ({n}, {m}) does not match graph "
            f"({graph.node_count}, {graph.edge_count})")

    seeds, sizes, nodes, steps = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise ParseError(f"line {lineno}: expected id, seed and steps")
        seed_label = fields[1]
        if seed_label not in graph.label_index:
            raise ParseError(f"line {lineno}: unknown seed label {seed_label!r}")
        seed = graph.label_index[seed_label]
        groups: list[list[int]] = []
        for si, field in enumerate(fields[2:]):
            tag, _, payload = field.partition(":")
            if tag != f"t{si}" or not payload:
                raise ParseError(f"line {lineno}: malformed step field {field!r}")
            group = []
            for lab in payload.split(","):
                if lab not in graph.label_index:
                    raise ParseError(f"line {lineno}: unknown node label {lab!r}")
                group.append(graph.label_index[lab])
            groups.append(sorted(group))
        if groups[0] != [seed]:
            raise ParseError(f"line {lineno}: first step must contain exactly the seed")
        seeds.append(seed)
        size = 0
        for si, group in enumerate(groups):
            for v in group:
                nodes.append(v)
                steps.append(si)
                size += 1
        sizes.append(size)
    offsets = np.zeros(len(seeds) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return CascadeSet(np.asarray(seeds, dtype=np.int32), offsets,
                      np.asarray(nodes, dtype=np.int32),
                      np.asarray(steps, dtype=np.int32),
                      r_nominal, n, m)
