"""Experiment orchestration: the full benchmark-vs-model MAE grid.

For each (max_p, trial): assign edge probabilities, generate |V|*r
cascades, and estimate the actual reach matrix from the complete set.
For each portion: sample that fraction of cascades, estimate the label
matrix from the sample, and score the benchmark (label vs actual MAE);
then train each configured regressor on the label-derived dataset,
predict every ordered pair, and score it against the actual matrix.

Node embeddings depend only on graph structure, so they are computed once
per graph and shared by every cell.  Every stage persists its artifact
under the output directory and is skipped when the artifact already
exists, making runs resumable per cell.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ._rng import derive_master
from .embedding import (EmbeddingMatrix, WalkConfig, embed_graph,
                        load_embeddings, save_embeddings)
from .errors import ParameterError, ReachcastError
from .features import all_pairs, build_dataset
from .graphs import DirectedGraph, load_edge_list
from .icm import (generate_cascade_set, load_cascades, sample_portion,
                  save_cascades, subset_cascades)
from .models import GbrtModel, MlpModel, TrainConfig, train_gbrt, train_mlp
from .reach import (DIVISOR_NOMINAL, DIVISOR_PER_SEED, ReachMatrix,
                    estimate_reach, load_reach, mae, save_reach)

KNOWN_MODELS = ("mlp", "gbrt")

_SALT_EMBED = 10
_SALT_PROBS = 11
_SALT_CASCADES = 12
_SALT_PORTION = 13
_SALT_MODEL = 14

_PREDICT_CHUNK = 65536


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid definition plus per-stage hyperparameters."""

    graph: str
    max_p: tuple = (0.05, 0.1)
    r: int = 20
    portions: tuple = (0.10, 0.20, 0.40, 0.60)
    models: tuple = ("mlp", "gbrt")
    seed: int = 0
    out_dir: str = "reachcast-out"
    trials: int = 1
    nested_portions: bool = False
    zero_keep_fraction: float = 1.0
    workers: int = 1
    parallel_cells: int = 1
    walk: WalkConfig = field(default_factory=WalkConfig)
    mlp: TrainConfig = field(default_factory=TrainConfig)
    gbrt: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.r < 1:
            raise ParameterError("r must be >= 1")
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if not self.max_p or any(not 0 <= p <= 1 for p in self.max_p):
            raise ParameterError("max_p values must lie in [0, 1]")
        if not self.portions or any(not 0 < f <= 1 for f in self.portions):
            raise ParameterError("portions must lie in (0, 1]")
        for model in self.models:
            if model not in KNOWN_MODELS:
                raise ParameterError(f"unknown model {model!r}")
        if not 0 < self.zero_keep_fraction <= 1:
            raise ParameterError("zero_keep_fraction must lie in (0, 1]")


@dataclass
class ResultTable:
    """One row per (max_p, portion, trial) cell."""

    rows: list
    models: tuple

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r["max_p"], r["portion"], r["trial"]))

    @property
    def has_failures(self) -> bool:
        return any(r["status"] != "ok" for r in self.rows)

    def cell(self, max_p: float, portion: float, trial: int) -> dict:
        for r in self.rows:
            if (r["max_p"], r["portion"], r["trial"]) == (max_p, portion, trial):
                return r
        raise KeyError((max_p, portion, trial))


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Run or resume the full grid; failed cells are recorded, not raised."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph = load_edge_list(cfg.graph)
    t0 = time.perf_counter()
    emb = _ensure_embeddings(cfg, graph, out)
    embed_seconds = time.perf_counter() - t0

    units = [(mi, trial) for mi in range(len(cfg.max_p)) for trial in range(cfg.trials)]
    if cfg.parallel_cells > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallel_cells) as pool:
            row_groups = list(pool.map(
                lambda u: _run_unit(cfg, graph, emb, out, u[0], u[1], embed_seconds),
                units))
    else:
        row_groups = [_run_unit(cfg, graph, emb, out, mi, trial, embed_seconds)
                      for mi, trial in units]

    table = ResultTable(rows=[r for group in row_groups for r in group],
                        models=tuple(cfg.models))
    table.sort()
    (out / "results.tsv").write_text(render_table(table, "tsv"), encoding="utf-8")
    return table


def _ensure_embeddings(cfg: ExperimentConfig, graph: DirectedGraph,
                       out: Path) -> EmbeddingMatrix:
    path = out / "embeddings.txt"
    if path.exists():
        emb = load_embeddings(path)
        if emb.node_count == graph.node_count and emb.labels == graph.labels:
            return emb
    emb = embed_graph(graph, cfg.walk, seed=derive_master(cfg.seed, _SALT_EMBED),
                      workers=cfg.workers)
    save_embeddings(emb, path)
    return load_embeddings(path)  # train on exactly what later resumes will read


def _run_unit(cfg: ExperimentConfig, graph: DirectedGraph, emb: EmbeddingMatrix,
              out: Path, mp_idx: int, trial: int, embed_seconds: float) -> list:
    """All portions for one (max_p, trial): shared cascades and actual matrix."""
    max_p = cfg.max_p[mp_idx]
    unit_dir = out / f"maxp{max_p:g}_trial{trial}"
    unit_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    pending = [pi for pi in range(len(cfg.portions))
               if not (unit_dir / _portion_name(cfg.portions[pi]) / "result.json").exists()]
    cascades = actual = None
    timings: dict[str, float] = {"embed": embed_seconds}
    if pending:
        try:
            cascades, actual, unit_timings = _ensure_unit_inputs(cfg, graph, unit_dir,
                                                                 mp_idx, trial)
            timings.update(unit_timings)
        except ReachcastError as exc:
            for pi in pending:
                rows.append(_failed_row(cfg, mp_idx, trial, pi, str(exc)))
            pending = []

    for pi in range(len(cfg.portions)):
        cell_dir = unit_dir / _portion_name(cfg.portions[pi])
        result_path = cell_dir / "result.json"
        if result_path.exists():
            rows.append(json.loads(result_path.read_text(encoding="utf-8")))
            continue
        if pi not in pending:
            continue
        cell_dir.mkdir(parents=True, exist_ok=True)
        try:
            row = _run_cell(cfg, graph, emb, cascades, actual, cell_dir,
                            mp_idx, trial, pi, dict(timings))
        except ReachcastError as exc:
            row = _failed_row(cfg, mp_idx, trial, pi, str(exc))
        result_path.write_text(json.dumps(row) + "\n", encoding="utf-8")
        rows.append(row)
    return rows


def _ensure_unit_inputs(cfg, graph, unit_dir, mp_idx, trial):
    max_p = cfg.max_p[mp_idx]
    timings: dict[str, float] = {}
    casc_path = unit_dir / "cascades.txt"
    t0 = time.perf_counter()
    if casc_path.exists():
        cascades = load_cascades(casc_path, graph)
    else:
        from .icm import assign_probabilities

        probs = assign_probabilities(graph, max_p,
                                     derive_master(cfg.seed, _SALT_PROBS, mp_idx, trial))
        cascades = generate_cascade_set(graph, probs, cfg.r,
                                        derive_master(cfg.seed, _SALT_CASCADES, mp_idx, trial),
                                        workers=cfg.workers)
        save_cascades(cascades, graph, casc_path)
    timings["simulate"] = time.perf_counter() - t0

    actual_path = unit_dir / "actual.tsv"
    t0 = time.perf_counter()
    if actual_path.exists():
        actual = load_reach(actual_path, graph.label_index, graph.node_count)
    else:
        actual = estimate_reach(cascades, DIVISOR_NOMINAL, workers=cfg.workers)
        save_reach(actual, graph.labels, actual_path, "actual")
    timings["actual"] = time.perf_counter() - t0
    return cascades, actual, timings


def _run_cell(cfg, graph, emb, cascades, actual, cell_dir, mp_idx, trial, pi,
              timings) -> dict:
    portion = cfg.portions[pi]
    t0 = time.perf_counter()
    if cfg.nested_portions:
        perm = np.random.default_rng(
            derive_master(cfg.seed, _SALT_PORTION, mp_idx, trial)).permutation(len(cascades))
        k = int(np.floor(portion * len(cascades)))
        part = subset_cascades(cascades, np.sort(perm[:k]))
    else:
        part = sample_portion(cascades, portion,
                              derive_master(cfg.seed, _SALT_PORTION, mp_idx, trial, pi))
    timings["sample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    label_path = cell_dir / "label.tsv"
    label = estimate_reach(part, DIVISOR_PER_SEED, workers=cfg.workers)
    save_reach(label, graph.labels, label_path, "label")
    timings["label"] = time.perf_counter() - t0

    row = {
        "max_p": cfg.max_p[mp_idx],
        "portion": portion,
        "trial": trial,
        "status": "ok",
        "bm_mae": mae(label, actual),
    }
    for model_name in cfg.models:
        model_seed = derive_master(cfg.seed, _SALT_MODEL, mp_idx, trial, pi,
                                   KNOWN_MODELS.index(model_name))
        dataset = build_dataset(emb, label, cfg.zero_keep_fraction, seed=model_seed)
        t0 = time.perf_counter()
        if model_name == "mlp":
            model = train_mlp(dataset, cfg.mlp, seed=model_seed)
        else:
            model = train_gbrt(dataset, cfg.gbrt, seed=model_seed)
        timings[f"train_{model_name}"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        predicted = predict_all_pairs(model, emb)
        timings[f"predict_{model_name}"] = time.perf_counter() - t0
        row[f"{model_name}_mae"] = mae(predicted, actual)

        from .models import save_model

        save_model(model, cell_dir / f"{model_name}.model.json")
    row["timings"] = {k: round(v, 4) for k, v in timings.items()}
    return row


def _failed_row(cfg, mp_idx, trial, pi, message) -> dict:
    return {
        "max_p": cfg.max_p[mp_idx],
        "portion": cfg.portions[pi],
        "trial": trial,
        "status": "failed",
        "error": message,
    }


def _portion_name(portion: float) -> str:
    return f"portion{portion:g}"


def predict_all_pairs(model: MlpModel | GbrtModel, emb: EmbeddingMatrix) -> ReachMatrix:
    """Model predictions for every ordered pair, as a reach matrix."""
    n = emb.node_count
    pairs = all_pairs(n)
    vals = np.empty(pairs.shape[0], dtype=np.float64)
    for lo in range(0, pairs.shape[0], _PREDICT_CHUNK):
        hi = min(lo + _PREDICT_CHUNK, pairs.shape[0])
        feats = np.hstack([emb.vectors[pairs[lo:hi, 0]], emb.vectors[pairs[lo:hi, 1]]])
        vals[lo:hi] = model.predict(feats)
    row_ptr = np.arange(n + 1, dtype=np.int64) * (n - 1)
    return ReachMatrix(n, row_ptr, pairs[:, 1], vals,
                       np.zeros(n, dtype=np.int64))


# ---------------------------------------------------------------------------
# rendering

_TIMING_KEYS = ("simulate", "actual", "embed", "sample", "label")


def _columns(models: tuple) -> list[str]:
    cols = ["max_p", "portion", "trial", "status", "bm_mae"]
    cols += [f"{m}_mae" for m in models]
    cols += [f"t_{k}" for k in _TIMING_KEYS]
    for m in models:
        cols += [f"t_train_{m}", f"t_predict_{m}"]
    return cols


def _cell_text(row: dict, col: str) -> str:
    if col in ("max_p", "portion"):
        return f"{row[col]:g}"
    if col == "trial":
        return str(row[col])
    if col == "status":
        return row[col]
    if col.endswith("_mae"):
        val = row.get(col)
        return "NA" if val is None else f"{val:.4f}"
    if col.startswith("t_"):
        timings = row.get("timings", {})
        val = timings.get(col[2:])
        return "NA" if val is None else f"{val:.2f}"
    return "NA"


def render_table(table: ResultTable, format: str = "tsv") -> str:
    """Render every cell; MAE columns carry 4 decimal places."""
    if format not in ("tsv", "markdown"):
        raise ParameterError(f"unknown table format {format!r}")
    cols = _columns(table.models)
    grid = [[_cell_text(row, c) for c in cols] for row in table.rows]
    if format == "tsv":
        lines = ["\t".join(cols)] + ["\t".join(cells) for cells in grid]
        return "\n".join(lines) + "\n"
    lines = ["| " + " | ".join(cols) + " |",
             "|" + "|".join(" --- " for _ in cols) + "|"]
    lines += ["| " + " | ".join(cells) + " |" for cells in grid]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# flat key=value config files

_LIST_FIELDS = {"max_p", "portions", "models"}
_BOOL_FIELDS = {"nested_portions"}
_INT_FIELDS = {"r", "seed", "trials", "workers", "parallel_cells"}
_FLOAT_FIELDS = {"zero_keep_fraction"}


def load_experiment_config(source) -> ExperimentConfig:
    """Parse a flat `key = value` file mirroring ExperimentConfig fields.

    Sub-config fields use dotted keys (walk.dimensions, mlp.epochs,
    gbrt.n_trees, ...); list values are comma-separated.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        lines = source.read().splitlines()
    top: dict = {}
    sub: dict[str, dict] = {"walk": {}, "mlp": {}, "gbrt": {}}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if "." in key:
            prefix, _, name = key.partition(".")
            if prefix not in sub:
                raise ParameterError(f"config line {lineno}: unknown section {prefix!r}")
            sub[prefix][name] = value
        else:
            top[key] = value

    kwargs: dict = {}
    valid = {f.name for f in fields(ExperimentConfig)}
    for key, value in top.items():
        if key not in valid or key in ("walk", "mlp", "gbrt"):
            raise ParameterError(f"unknown config key {key!r}")
        if key in _LIST_FIELDS:
            items = [v.strip() for v in value.split(",") if v.strip()]
            kwargs[key] = tuple(items) if key == "models" else tuple(float(v) for v in items)
        elif key in _BOOL_FIELDS:
            kwargs[key] = value.lower() in ("1", "true", "yes", "on")
        elif key in _INT_FIELDS:
            kwargs[key] = int(value)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    kwargs["walk"] = _sub_config(WalkConfig, sub["walk"])
    kwargs["mlp"] = _sub_config(TrainConfig, sub["mlp"])
    kwargs["gbrt"] = _sub_config(TrainConfig, sub["gbrt"])
    if "graph" not in kwargs:
        raise ParameterError("config must set `graph`")
    return ExperimentConfig(**kwargs)


def _sub_config(cls, raw: dict):
    valid = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in valid:
            raise ParameterError(f"unknown config key {cls.__name__}.{key}")
        if key == "hidden_sizes":
            kwargs[key] = tuple(int(v) for v in value.split(",") if v.strip())
        elif key == "training_mode":
            kwargs[key] = value
        elif key in ("dimensions", "walk_length", "window", "walks_per_node",
                     "epochs", "negatives_per_positive", "seed", "batch_size",
                     "n_trees", "max_depth", "split_candidates"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return cls(**kwargs)
