"""Link features for ordered node pairs and regression datasets.

The link feature of the ordered pair (src, dst) is the source embedding
concatenated with the destination embedding.  A full dataset holds one row
per ordered pair (u, v), u != v, in canonical (u ascending, v ascending)
order; zero-label rows can optionally be thinned.  Feature vectors are
materialized on demand from the embedding matrix, so a million-row dataset
costs little more than its pair indices and targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingMatrix
from .errors import DimensionError, FormatError, ParameterError
from .reach import ReachMatrix

DATASET_HEADER = "#reachcast-dataset v1"


@dataclass(frozen=True)
class LinkFeature:
    src: int
    dst: int
    vector: np.ndarray
    label: float | None = None


class Dataset:
    """Ordered link-feature rows with probability targets.

    Rows are either backed by an embedding matrix (features built per
    batch) or by a dense feature array (as loaded from disk); both expose
    the same canonical row sequence.
    """

    def __init__(self, pairs: np.ndarray, targets: np.ndarray,
                 emb_vectors: np.ndarray | None = None,
                 dense_features: np.ndarray | None = None,
                 node_labels: list[str] | None = None,
                 provenance: dict | None = None):
        self.pairs = np.asarray(pairs, dtype=np.int32)
        self.targets = np.asarray(targets, dtype=np.float64)
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2:
            raise DimensionError("pairs must be an (m, 2) array")
        if self.targets.shape[0] != self.pairs.shape[0]:
            raise DimensionError("one target per pair required")
        if self.targets.size and (self.targets.min() < 0.0 or self.targets.max() > 1.0):
            raise ParameterError("targets must lie in [0, 1]")
        if np.any(self.pairs[:, 0] == self.pairs[:, 1]):
            raise ParameterError("datasets must not contain (u, u) rows")
        if (emb_vectors is None) == (dense_features is None):
            raise ParameterError("exactly one of emb_vectors/dense_features required")
        self._emb = emb_vectors
        self._dense = dense_features
        self.node_labels = node_labels
        self.provenance = provenance or {}

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def feature_dim(self) -> int:
        if self._dense is not None:
            return self._dense.shape[1]
        return 2 * self._emb.shape[1]

    def features(self, idx: np.ndarray | None = None) -> np.ndarray:
        """Feature rows for the given positions (all rows when omitted)."""
        if idx is None:
            idx = np.arange(len(self))
        if self._dense is not None:
            return self._dense[idx]
        return np.hstack([self._emb[self.pairs[idx, 0]],
                          self._emb[self.pairs[idx, 1]]])

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.features(idx), self.targets[idx]

    def row(self, i: int) -> LinkFeature:
        return LinkFeature(src=int(self.pairs[i, 0]), dst=int(self.pairs[i, 1]),
                           vector=self.features(np.array([i]))[0],
                           label=float(self.targets[i]))


def link_embedding(emb: EmbeddingMatrix, src: int, dst: int) -> np.ndarray:
    """Concatenated [e_src || e_dst] feature for an ordered pair."""
    if src == dst:
        raise ParameterError("link features are defined for distinct nodes only")
    n = emb.node_count
    if not (0 <= src < n and 0 <= dst < n):
        raise IndexError(f"node index out of range [0, {n})")
    return np.concatenate([emb.vectors[src], emb.vectors[dst]])


def all_pairs(n: int) -> np.ndarray:
    """All ordered pairs (u, v), u != v, in canonical order."""
    src = np.repeat(np.arange(n, dtype=np.int32), n - 1)
    dst = np.empty((n, n - 1), dtype=np.int32)
    base = np.arange(n, dtype=np.int32)
    for u in range(n):
        dst[u, :u] = base[:u]
        dst[u, u:] = base[u + 1:]
    return np.column_stack([src, dst.reshape(-1)])


def build_dataset(emb: EmbeddingMatrix, labels: ReachMatrix,
                  zero_keep_fraction: float = 1.0, seed=0) -> Dataset:
    """One row per ordered pair with the reach probability as target.

    Absent matrix entries read as 0.  With zero_keep_fraction < 1, rows
    whose target is exactly 0 are independently kept with that probability
    (positive rows always survive); 1.0 keeps the full |V|(|V|-1) table.
    """
    if not 0.0 < zero_keep_fraction <= 1.0:
        raise ParameterError("zero_keep_fraction must lie in (0, 1]")
    n = emb.node_count
    if labels.node_count != n:
        raise DimensionError(
            f"embedding covers {n} nodes, labels cover {labels.node_count}")
    pairs = all_pairs(n)
    targets = np.empty(pairs.shape[0], dtype=np.float64)
    row_buf = np.zeros(n, dtype=np.float64)
    pos = 0
    for u in range(n):
        labels.dense_row(u, out=row_buf)
        targets[pos:pos + u] = row_buf[:u]
        targets[pos + u:pos + n - 1] = row_buf[u + 1:]
        cols, _ = labels.row(u)
        row_buf[cols] = 0.0
        pos += n - 1
    if zero_keep_fraction < 1.0:
        rng = np.random.default_rng(seed)
        keep = (targets != 0.0) | (rng.random(targets.shape[0]) < zero_keep_fraction)
        pairs, targets = pairs[keep], targets[keep]
    provenance = {
        "node_count": n,
        "dimensions": emb.dimensions,
        "label_entries": labels.entry_count,
        "zero_keep_fraction": zero_keep_fraction,
        "seed": int(seed),
    }
    return Dataset(pairs, targets, emb_vectors=emb.vectors,
                   node_labels=list(emb.labels), provenance=provenance)


# ---------------------------------------------------------------------------
# dataset file format

def save_dataset(ds: Dataset, target, chunk: int = 8192) -> None:
    """Materialize the dataset as text; large datasets get large files."""
    node_labels = ds.node_labels
    if node_labels is None:
        raise ParameterError("dataset carries no node labels to serialize with")
    close = False
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        handle = open(target, "w", encoding="utf-8")
        close = True
    else:
        handle = target
    try:
        handle.write(f"{DATASET_HEADER} dim={ds.feature_dim} rows={len(ds)}\n")
        for lo in range(0, len(ds), chunk):
            idx = np.arange(lo, min(lo + chunk, len(ds)))
            feats = ds.features(idx)
            for k, i in enumerate(idx):
                u, v = ds.pairs[i]
                vec = ",".join(f"{x:.9g}" for x in feats[k])
                handle.write(f"{node_labels[u]}\t{node_labels[v]}\t"
                             f"{ds.targets[i]:.10g}\t{vec}\n")
    finally:
        if close:
            handle.close()


def load_dataset(source) -> Dataset:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    if not lines or not lines[0].startswith(DATASET_HEADER):
        raise FormatError("missing dataset header")
    header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    try:
        dim, rows = int(header["dim"]), int(header["rows"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad dataset header: {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise FormatError(f"expected {rows} rows, found {len(body)}")
    index: dict[str, int] = {}
    node_labels: list[str] = []
    pairs = np.empty((rows, 2), dtype=np.int32)
    targets = np.empty(rows, dtype=np.float64)
    feats = np.empty((rows, dim), dtype=np.float64)
    for i, line in enumerate(body):
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"row {i + 2}: expected 4 tab-separated fields")
        for lab in fields[:2]:
            if lab not in index:
                index[lab] = len(node_labels)
                node_labels.append(lab)
        vec = fields[3].split(",")
        if len(vec) != dim:
            raise FormatError(f"row {i + 2}: expected {dim} features, got {len(vec)}")
        pairs[i] = (index[fields[0]], index[fields[1]])
        targets[i] = float(fields[2])
        feats[i] = [float(x) for x in vec]
    return Dataset(pairs, targets, dense_features=feats, node_labels=node_labels)
