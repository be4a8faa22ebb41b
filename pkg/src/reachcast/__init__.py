"""Cascade simulation and reach-probability prediction on directed graphs.

Pipeline: load a directed graph, assign random edge activation
probabilities, simulate independent-cascade diffusions, estimate reach
probabilities from the cascade samples, learn node embeddings from biased
random walks, and train regressors that predict the reach probability of
any ordered node pair.
"""

from ._accel import NUMBA_ENABLED, backend_name
from .graphs import DirectedGraph, load_edge_list, save_edge_list
from .icm import (ActivationProbabilities, Cascade, CascadeSet,
                  assign_probabilities, generate_cascade_set, run_icm,
                  sample_portion)

__all__ = [
    "NUMBA_ENABLED",
    "backend_name",
    "DirectedGraph",
    "load_edge_list",
    "save_edge_list",
    "ActivationProbabilities",
    "Cascade",
    "CascadeSet",
    "assign_probabilities",
    "generate_cascade_set",
    "run_icm",
    "sample_portion",
]
