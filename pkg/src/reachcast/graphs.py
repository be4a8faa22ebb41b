"""Directed graph representation and edge-list ingestion.

Graphs are immutable after construction: edges live in a canonical
(src, dst)-sorted array and adjacency is kept in CSR form for both
directions.  External node labels map to dense indices assigned in
first-appearance order, which makes runs reproducible from the same file.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ParseError

COMMENT_PREFIXES = ("#", "%")


@dataclass(frozen=True)
class IngestReport:
    """Counts of lines dropped while parsing an edge list."""

    comment_lines: int = 0
    blank_lines: int = 0
    self_loops: int = 0
    duplicate_edges: int = 0


class DirectedGraph:
    """Immutable directed graph over dense node indices [0, node_count).

    Self-loops and duplicate edges are rejected at construction; neighbor
    lists are sorted ascending so traversal order is deterministic.
    """

    def __init__(self, node_count: int, edges: Iterable[tuple[int, int]],
                 labels: list[str] | None = None,
                 ingest_report: IngestReport | None = None):
        edge_arr = np.asarray(sorted(set(map(tuple, edges))), dtype=np.int64)
        if edge_arr.size == 0:
            edge_arr = edge_arr.reshape(0, 2)
        if edge_arr.size and (edge_arr.min() < 0 or edge_arr.max() >= node_count):
            raise IndexError("edge endpoint outside [0, node_count)")
        if edge_arr.size and np.any(edge_arr[:, 0] == edge_arr[:, 1]):
            raise ValueError("self-loops are not representable")
        self.node_count = int(node_count)
        self.edges = edge_arr.astype(np.int32)
        self.labels = list(labels) if labels is not None else [str(i) for i in range(node_count)]
        if len(self.labels) != self.node_count:
            raise ValueError("label list length must equal node_count")
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        if len(self.label_index) != self.node_count:
            raise ValueError("labels must be unique")
        self.ingest_report = ingest_report or IngestReport()
        self.out_indptr, self.out_indices = _csr(self.edges[:, 0], self.edges[:, 1], self.node_count)
        self.in_indptr, self.in_indices = _csr(self.edges[:, 1], self.edges[:, 0], self.node_count)

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def out_neighbors(self, u: int) -> np.ndarray:
        """Out-neighbors of u, sorted ascending."""
        self._check_node(u)
        return self.out_indices[self.out_indptr[u]:self.out_indptr[u + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        """In-neighbors of v, sorted ascending."""
        self._check_node(v)
        return self.in_indices[self.in_indptr[v]:self.in_indptr[v + 1]]

    def out_degree(self, u: int) -> int:
        self._check_node(u)
        return int(self.out_indptr[u + 1] - self.out_indptr[u])

    def _check_node(self, u: int) -> None:
        if not 0 <= int(u) < self.node_count:
            raise IndexError(f"node index {u} out of range [0, {self.node_count})")

    def edge_index(self, u: int, v: int) -> int:
        """Position of edge (u, v) in self.edges, or -1 when absent."""
        lo, hi = self.out_indptr[u], self.out_indptr[u + 1]
        k = lo + np.searchsorted(self.out_indices[lo:hi], v)
        if k < hi and self.out_indices[k] == v:
            return int(k)
        return -1

    def __eq__(self, other) -> bool:
        return (isinstance(other, DirectedGraph)
                and self.node_count == other.node_count
                and self.labels == other.labels
                and np.array_equal(self.edges, other.edges))

    def __repr__(self) -> str:
        return f"DirectedGraph(nodes={self.node_count}, edges={self.edge_count})"


def _csr(src: np.ndarray, dst: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # edges arrive sorted by (src, dst), so per-row indices come out sorted
    order = np.lexsort((dst, src))
    counts = np.bincount(src[order], minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr, dst[order].astype(np.int32)


def load_edge_list(source, delimiter_mode: str = "auto") -> DirectedGraph:
    """Parse a plain-text edge list into a DirectedGraph.

    Each non-comment line must start with two tokens (source label, target
    label); extra trailing columns are ignored.  Lines starting with '#' or
    '%' are comments.  Dense indices follow first appearance order of the
    labels; duplicate edges and self-loops are dropped and counted in the
    returned graph's ingest_report.

    `source` may be a path, a file object, or a string of text.
    """
    if delimiter_mode not in ("auto", "whitespace", "comma"):
        raise ParseError(f"unknown delimiter_mode {delimiter_mode!r}")
    lines = _read_lines(source)

    labels: list[str] = []
    index: dict[str, int] = {}
    edge_set: set[tuple[int, int]] = set()
    comments = blanks = loops = dups = 0
    mode = delimiter_mode

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            blanks += 1
            continue
        if line.startswith(COMMENT_PREFIXES):
            comments += 1
            continue
        if mode == "auto":
            mode = "comma" if "," in line else "whitespace"
        tokens = [t for t in (line.split(",") if mode == "comma" else line.split())]
        tokens = [t.strip() for t in tokens if t.strip()]
        if len(tokens) < 2:
            raise ParseError(f"line {lineno}: expected at least 2 tokens, got {len(tokens)}")
        a, b = tokens[0], tokens[1]
        for lab in (a, b):
            if lab not in index:
                index[lab] = len(labels)
                labels.append(lab)
        u, v = index[a], index[b]
        if u == v:
            loops += 1
            continue
        if (u, v) in edge_set:
            dups += 1
            continue
        edge_set.add((u, v))

    report = IngestReport(comment_lines=comments, blank_lines=blanks,
                          self_loops=loops, duplicate_edges=dups)
    return DirectedGraph(len(labels), edge_set, labels=labels, ingest_report=report)


def save_edge_list(graph: DirectedGraph, target) -> None:
    """Write the graph as a two-column whitespace-delimited edge list."""
    close = False
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        handle = open(target, "w", encoding="utf-8")
        close = True
    else:
        handle = target
    try:
        for u, v in graph.edges:
            handle.write(f"{graph.labels[u]} {graph.labels[v]}\n")
    finally:
        if close:
            handle.close()


def _read_lines(source) -> list[str]:
    if isinstance(source, bytes):
        return source.decode("utf-8").splitlines()
    if isinstance(source, str) and ("\n" in source or source == ""):
        return source.splitlines()
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return data.splitlines()
    raise ParseError(f"unsupported edge list source {type(source)!r}")
