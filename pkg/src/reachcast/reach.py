"""Reach-probability matrices estimated from cascade sets.

The estimator counts, per cascade, one occurrence of every activated node
against the cascade's seed, then divides by the nominal replicate count r
(for complete cascade sets) or by the per-seed cascade count (for sampled
portions).  An exact enumeration oracle over tiny graphs and the MAE
metric over all ordered node pairs live here too.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._accel import NUMBA_ENABLED, hot
from .errors import ConsistencyError, DimensionError, ParameterError, ParseError
from .graphs import DirectedGraph
from .icm import ActivationProbabilities, CascadeSet

REACH_HEADER = "#reachcast-reach v1"
REACH_MODES = ("actual", "label", "predicted")

DIVISOR_NOMINAL = "nominal_r"
DIVISOR_PER_SEED = "per_seed_count"

BRUTE_FORCE_EDGE_LIMIT = 22


class ReachMatrix:
    """Sparse |V| x |V| matrix of reach probabilities, keyed by seed row.

    Rows are CSR-like: `row_ptr` delimits each seed's (sorted column,
    value) entries.  Absent entries mean probability zero.  `seed_counts`
    records how many cascades backed each row (zero for rows estimated
    from no data, e.g. seeds missing from a sampled portion).
    """

    def __init__(self, node_count: int, row_ptr: np.ndarray, cols: np.ndarray,
                 vals: np.ndarray, seed_counts: np.ndarray):
        self.node_count = int(node_count)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int32)
        self.vals = np.asarray(vals, dtype=np.float64)
        self.seed_counts = np.asarray(seed_counts, dtype=np.int64)
        if self.row_ptr.shape[0] != self.node_count + 1:
            raise DimensionError("row_ptr length must be node_count + 1")
        if self.seed_counts.shape[0] != self.node_count:
            raise DimensionError("seed_counts length must equal node_count")
        if self.vals.size and (self.vals.min() < 0.0 or self.vals.max() > 1.0):
            raise ParameterError("reach probabilities must lie in [0, 1]")

    @property
    def entry_count(self) -> int:
        return self.cols.shape[0]

    def row(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[u], self.row_ptr[u + 1]
        return self.cols[lo:hi], self.vals[lo:hi]

    def value(self, u: int, v: int) -> float:
        cols, vals = self.row(u)
        k = np.searchsorted(cols, v)
        if k < cols.shape[0] and cols[k] == v:
            return float(vals[k])
        return 0.0

    def dense_row(self, u: int, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = np.zeros(self.node_count, dtype=np.float64)
        cols, vals = self.row(u)
        out[cols] = vals
        return out

    def entries(self):
        """Yield (src, dst, value) for every stored entry, row-major."""
        for u in range(self.node_count):
            cols, vals = self.row(u)
            for c, v in zip(cols, vals):
                yield int(u), int(c), float(v)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ReachMatrix)
                and self.node_count == other.node_count
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.cols, other.cols)
                and np.array_equal(self.vals, other.vals)
                and np.array_equal(self.seed_counts, other.seed_counts))

    @classmethod
    def from_triples(cls, node_count: int, triples, seed_counts=None) -> "ReachMatrix":
        """Build from an iterable of (src, dst, value); zero values dropped."""
        items = sorted((int(u), int(v), float(x)) for u, v, x in triples if x != 0.0)
        rows = np.array([t[0] for t in items], dtype=np.int64)
        cols = np.array([t[1] for t in items], dtype=np.int32)
        vals = np.array([t[2] for t in items], dtype=np.float64)
        row_ptr = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=node_count), out=row_ptr[1:])
        if seed_counts is None:
            seed_counts = np.zeros(node_count, dtype=np.int64)
        return cls(node_count, row_ptr, cols, vals, seed_counts)

    @classmethod
    def from_dense(cls, dense: np.ndarray, seed_counts=None) -> "ReachMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        n = dense.shape[0]
        rows, cols = np.nonzero(dense)
        return cls.from_triples(n, zip(rows, cols, dense[rows, cols]), seed_counts)


# ---------------------------------------------------------------------------
# counting kernels

@hot(cache=True, nogil=True)
def _count_rows_loop(order, bounds, offsets, nodes_flat, scratch, touched,
                     out_cols, out_cnts, row_ptr):
    pos = 0
    n = row_ptr.shape[0] - 1
    for u in range(n):
        row_ptr[u] = pos
        ntouch = 0
        for g in range(bounds[u], bounds[u + 1]):
            ci = order[g]
            for j in range(offsets[ci], offsets[ci + 1]):
                w = nodes_flat[j]
                if scratch[w] == 0:
                    touched[ntouch] = w
                    ntouch += 1
                scratch[w] += 1
        sub = touched[:ntouch]
        sub.sort()
        for i in range(ntouch):
            w = sub[i]
            out_cols[pos] = w
            out_cnts[pos] = scratch[w]
            scratch[w] = 0
            pos += 1
    row_ptr[n] = pos
    return pos


def _count_rows(cs: CascadeSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSR occurrence counts: row u holds, per node w, the number of
    cascades seeded at u in which w appears."""
    n = cs.node_count
    order = np.argsort(cs.seeds, kind="stable").astype(np.int64)
    bounds = np.searchsorted(cs.seeds[order], np.arange(n + 1)).astype(np.int64)
    if NUMBA_ENABLED:
        cap = max(1, cs.nodes.shape[0])
        out_cols = np.empty(cap, dtype=np.int32)
        out_cnts = np.empty(cap, dtype=np.int64)
        row_ptr = np.zeros(n + 1, dtype=np.int64)
        scratch = np.zeros(n, dtype=np.int64)
        touched = np.empty(n, dtype=np.int32)
        used = _count_rows_loop(order, bounds, cs.offsets, cs.nodes, scratch,
                                touched, out_cols, out_cnts, row_ptr)
        return row_ptr, out_cols[:used].copy(), out_cnts[:used].copy()
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    cols_parts: list[np.ndarray] = []
    cnts_parts: list[np.ndarray] = []
    pos = 0
    for u in range(n):
        row_ptr[u] = pos
        group = order[bounds[u]:bounds[u + 1]]
        if group.size:
            occ = np.concatenate([cs.nodes[cs.offsets[i]:cs.offsets[i + 1]] for i in group])
            counts = np.bincount(occ, minlength=n)
            nz = np.flatnonzero(counts)
            cols_parts.append(nz.astype(np.int32))
            cnts_parts.append(counts[nz].astype(np.int64))
            pos += nz.shape[0]
    row_ptr[n] = pos
    empty_c = np.zeros(0, dtype=np.int32)
    empty_n = np.zeros(0, dtype=np.int64)
    return (row_ptr,
            np.concatenate(cols_parts) if cols_parts else empty_c,
            np.concatenate(cnts_parts) if cnts_parts else empty_n)


def estimate_reach(cs: CascadeSet, divisor_mode: str = DIVISOR_NOMINAL,
                   workers: int = 1) -> ReachMatrix:
    """Estimate reach probabilities from a cascade set.

    divisor_mode selects the denominator of each row: the nominal
    replicate count r (valid for complete cascade sets) or the per-seed
    cascade count (for sampled portions).  Seeds with no cascades yield
    empty rows.
    """
    if divisor_mode not in (DIVISOR_NOMINAL, DIVISOR_PER_SEED):
        raise ParameterError(f"unknown divisor_mode {divisor_mode!r}")
    n_u = cs.per_seed_counts()
    if divisor_mode == DIVISOR_NOMINAL and np.any(n_u > cs.r_nominal):
        raise ConsistencyError(
            "per-seed cascade count exceeds nominal r; did this set come from a merge?")
    if workers > 1 and len(cs) > 1:
        row_ptr, cols, cnts = _count_rows_parallel(cs, workers)
    else:
        row_ptr, cols, cnts = _count_rows(cs)
    vals = np.zeros(cnts.shape[0], dtype=np.float64)
    for u in range(cs.node_count):
        lo, hi = row_ptr[u], row_ptr[u + 1]
        if hi > lo:
            div = cs.r_nominal if divisor_mode == DIVISOR_NOMINAL else n_u[u]
            vals[lo:hi] = cnts[lo:hi] / float(div)
    return ReachMatrix(cs.node_count, row_ptr, cols, vals, n_u)


def _count_rows_parallel(cs: CascadeSet, workers: int):
    """Count over cascade partitions and merge additively (same totals as
    a single pass, in any partition arrangement)."""
    from .icm import subset_cascades

    bounds = np.linspace(0, len(cs), workers + 1, dtype=np.int64)
    parts = [subset_cascades(cs, np.arange(lo, hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_count_rows, parts))
    n = cs.node_count
    dense_cols: list[np.ndarray] = []
    dense_cnts: list[np.ndarray] = []
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    pos = 0
    merge = np.zeros(n, dtype=np.int64)
    for u in range(n):
        row_ptr[u] = pos
        touched: list[np.ndarray] = []
        for rp, cc, cn in results:
            lo, hi = rp[u], rp[u + 1]
            if hi > lo:
                merge[cc[lo:hi]] += cn[lo:hi]
                touched.append(cc[lo:hi])
        if touched:
            nz = np.unique(np.concatenate(touched))
            dense_cols.append(nz.astype(np.int32))
            dense_cnts.append(merge[nz].copy())
            merge[nz] = 0
            pos += nz.shape[0]
    row_ptr[n] = pos
    empty_c = np.zeros(0, dtype=np.int32)
    empty_n = np.zeros(0, dtype=np.int64)
    return (row_ptr,
            np.concatenate(dense_cols) if dense_cols else empty_c,
            np.concatenate(dense_cnts) if dense_cnts else empty_n)


# ---------------------------------------------------------------------------
# exact oracle

@hot(cache=True, nogil=True)
def _brute_reach_loop(src, dst, p, u, n):
    m = src.shape[0]
    out = np.zeros(n, dtype=np.float64)
    reached = np.zeros(n, dtype=np.uint8)
    for mask in range(1 << m):
        prob = 1.0
        for e in range(m):
            if (mask >> e) & 1:
                prob *= p[e]
            else:
                prob *= 1.0 - p[e]
        if prob == 0.0:
            continue
        for i in range(n):
            reached[i] = 0
        reached[u] = 1
        changed = True
        while changed:
            changed = False
            for e in range(m):
                if (mask >> e) & 1 and reached[src[e]] == 1 and reached[dst[e]] == 0:
                    reached[dst[e]] = 1
                    changed = True
        for v in range(n):
            if reached[v] == 1:
                out[v] += prob
    return out


def exact_reach_bruteforce(graph: DirectedGraph, probs: ActivationProbabilities,
                           u: int) -> np.ndarray:
    """Exact reach probabilities from u by enumerating all edge subsets.

    Uses the live-edge identity: the cascade from u reaches v with the
    probability that v is reachable from u when each edge is independently
    present with its activation probability.  Exponential in |E|; refuses
    graphs with more than 22 edges.
    """
    if graph.edge_count > BRUTE_FORCE_EDGE_LIMIT:
        raise ParameterError(
            f"brute force enumeration limited to {BRUTE_FORCE_EDGE_LIMIT} edges, "
            f"graph has {graph.edge_count}")
    probs.check_aligned(graph)
    graph._check_node(u)
    src = graph.edges[:, 0].astype(np.int64)
    dst = graph.edges[:, 1].astype(np.int64)
    out = _brute_reach_loop(src, dst, probs.p, int(u), graph.node_count)
    out[u] = 1.0
    return out


# ---------------------------------------------------------------------------
# metric

def mae(predicted: ReachMatrix, actual: ReachMatrix) -> float:
    """Mean absolute error over all ordered node pairs (u, v), u != v."""
    if predicted.node_count != actual.node_count:
        raise DimensionError(
            f"node counts differ: {predicted.node_count} vs {actual.node_count}")
    n = predicted.node_count
    if n < 2:
        return 0.0
    diff = np.zeros(n, dtype=np.float64)
    acc = 0.0
    for u in range(n):
        pc, pv = predicted.row(u)
        ac, av = actual.row(u)
        diff[pc] += pv
        diff[ac] -= av
        acc += float(np.abs(diff).sum()) - abs(float(diff[u]))
        diff[pc] = 0.0
        diff[ac] = 0.0
    return acc / (n * (n - 1))


# ---------------------------------------------------------------------------
# reach matrix file format

def save_reach(matrix: ReachMatrix, labels: list[str], target, mode: str) -> None:
    """Write nonzero entries as `src TAB dst TAB probability` lines."""
    if mode not in REACH_MODES:
        raise ParameterError(f"mode must be one of {REACH_MODES}, got {mode!r}")
    close = False
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        handle = open(target, "w", encoding="utf-8")
        close = True
    else:
        handle = target
    try:
        handle.write(f"{REACH_HEADER} nodes={matrix.node_count} mode={mode}\n")
        for u, v, x in matrix.entries():
            handle.write(f"{labels[u]}\t{labels[v]}\t{x:.10g}\n")
        handle.write("#counts\n")
        for u in range(matrix.node_count):
            if matrix.seed_counts[u] > 0:
                handle.write(f"{labels[u]}\t{matrix.seed_counts[u]}\n")
    finally:
        if close:
            handle.close()


def load_reach(source, label_index: dict[str, int], node_count: int) -> ReachMatrix:
    """Read a reach matrix file, mapping labels through `label_index`."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    header_n, _ = parse_reach_header(lines[0] if lines else "")
    if header_n != node_count:
        raise ConsistencyError(f"file covers {header_n} nodes, expected {node_count}")
    triples = []
    seed_counts = np.zeros(node_count, dtype=np.int64)
    in_counts = False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.strip() == "#counts":
            in_counts = True
            continue
        fields = line.split("\t")
        try:
            if in_counts:
                seed_counts[label_index[fields[0]]] = int(fields[1])
            else:
                triples.append((label_index[fields[0]], label_index[fields[1]],
                                float(fields[2])))
        except (KeyError, IndexError, ValueError) as exc:
            raise ParseError(f"line {lineno}: {line!r}") from exc
    return ReachMatrix.from_triples(node_count, triples, seed_counts)


def parse_reach_header(line: str) -> tuple[int, str]:
    if not line.startswith(REACH_HEADER):
        raise ParseError("missing reach matrix header")
    header = dict(tok.split("=", 1) for tok in line.split()[2:])
    try:
        n = int(header["nodes"])
        mode = header["mode"]
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad reach header: {line!r}") from exc
    if mode not in REACH_MODES:
        raise ParseError(f"unknown reach mode {mode!r}")
    return n, mode


def read_reach_entries(source) -> tuple[int, str, dict[tuple[str, str], float]]:
    """Read a reach file into label-keyed entries (no graph required)."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    n, mode = parse_reach_header(lines[0] if lines else "")
    entries: dict[tuple[str, str], float] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.strip() == "#counts":
            break
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(f"line {lineno}: expected 3 fields")
        entries[(fields[0], fields[1])] = float(fields[2])
    return n, mode, entries


def mae_from_files(predicted_source, actual_source) -> float:
    """MAE between two reach files sharing a node universe."""
    n_p, _, pred = read_reach_entries(predicted_source)
    n_a, _, act = read_reach_entries(actual_source)
    if n_p != n_a:
        raise DimensionError(f"node counts differ: {n_p} vs {n_a}")
    if n_p < 2:
        return 0.0
    acc = 0.0
    for key in pred.keys() | act.keys():
        if key[0] == key[1]:
            continue
        acc += abs(pred.get(key, 0.0) - act.get(key, 0.0))
    return acc / (n_p * (n_p - 1))
