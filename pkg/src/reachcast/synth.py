"""Synthetic directed graphs for experiments and benchmarks.

Real cascade datasets are deliberately not bundled; this generator
produces directed scale-free graphs with tunable density so the full
experiment pipeline can run self-contained at comparable scale.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .graphs import DirectedGraph


def scale_free_directed(n: int, out_per_node: int = 13, in_per_node: int = 12,
                        seed=0) -> DirectedGraph:
    """Directed preferential-attachment graph on n nodes.

    Each arriving node sends `out_per_node` edges to existing nodes chosen
    proportionally to in-degree + 1, and receives `in_per_node` edges from
    existing nodes chosen proportionally to out-degree + 1, yielding
    heavy-tailed in- and out-degree distributions at average total degree
    close to out_per_node + in_per_node.
    """
    if n < 2:
        raise ParameterError("need at least 2 nodes")
    if out_per_node < 1 or in_per_node < 1:
        raise ParameterError("edge counts per node must be >= 1")
    rng = np.random.default_rng(seed)
    core = min(n, max(out_per_node, in_per_node) + 1)
    edges = {(u, (u + 1) % core) for u in range(core)}
    in_deg = np.zeros(n, dtype=np.float64)
    out_deg = np.zeros(n, dtype=np.float64)
    for u, v in edges:
        out_deg[u] += 1
        in_deg[v] += 1
    for v in range(core, n):
        k_out = min(out_per_node, v)
        w = in_deg[:v] + 1.0
        targets = rng.choice(v, size=k_out, replace=False, p=w / w.sum())
        for t in targets:
            if (v, int(t)) not in edges:
                edges.add((v, int(t)))
                out_deg[v] += 1
                in_deg[t] += 1
        k_in = min(in_per_node, v)
        w = out_deg[:v] + 1.0
        sources = rng.choice(v, size=k_in, replace=False, p=w / w.sum())
        for s in sources:
            if (int(s), v) not in edges:
                edges.add((int(s), v))
                out_deg[s] += 1
                in_deg[v] += 1
    return DirectedGraph(n, edges)
