"""Full model fit: alternating stages over rounds, prediction, JSON files.

One fit runs up to ``rounds`` rounds of main-effect boosting, pair
screening on the updated residuals, and interaction boosting, each stage
continuing from the predictions the previous one left behind. Fitting ends
early when a round accepts no tree in either stage.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .boosting import StageParams, StageResult, fit_interaction_stage, fit_main_stage
from .data import Dataset, Task
from .losses import init_offset
from .screening import PairRanking, filter_interactions
from .trees import (
    DesignCache,
    ModelBasedTree,
    NodeModel,
    SplineBasis,
    TreeNode,
    TreeParams,
    predict_tree,
)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid fitting configuration."""


class ModelFormatError(ValueError):
    """Unreadable or incompatible model file."""


def _default_alpha_grid() -> tuple[float, ...]:
    return tuple(float(np.exp(k)) for k in range(-8, 1))


@dataclass(frozen=True)
class FitConfig:
    """Fitting configuration; defaults follow the library's standard recipe.

    ``max_depth=None`` resolves to 2 for the continuous task and 1 for the
    binary task. ``filter_subsample`` caps the rows the pair screening sees;
    ``threads`` caps worker threads for candidate and pair loops.
    """

    max_iterations: int = 1000
    learning_rate: float = 0.2
    max_depth: int | None = None
    nknots: int = 5
    rounds: int = 5
    npairs: int = 10
    alpha_grid: tuple[float, ...] = field(default_factory=_default_alpha_grid)
    max_coef: float = 1.0
    patience: int = 10
    min_leaf: int = 20
    max_bins: int = 256
    filter_subsample: int = 1_000_000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must be in (0, 1]")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.npairs < 1:
            raise ConfigError("npairs must be >= 1")
        if self.nknots < 2:
            raise ConfigError("nknots must be >= 2")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ConfigError("min_leaf must be >= 1")
        if self.max_bins < 2:
            raise ConfigError("max_bins must be >= 2")
        if len(self.alpha_grid) < 1 or any(a < 0 for a in self.alpha_grid):
            raise ConfigError("alpha_grid must hold nonnegative values")
        if self.max_coef < 0:
            raise ConfigError("max_coef must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.filter_subsample < 1:
            raise ConfigError("filter_subsample must be >= 1")

    def resolved_depth(self, task: Task) -> int:
        if self.max_depth is not None:
            return self.max_depth
        return 2 if task is Task.CONTINUOUS else 1


@dataclass
class RoundResult:
    """One round: main stage, the screening it fed, interaction stage."""

    main: StageResult
    ranking: PairRanking | None
    interaction: StageResult


@dataclass
class FittedModel:
    """Fitted additive model with pairwise interaction trees.

    Predictions are ``offset`` plus the scaled sum of every retained tree,
    applied in fit order (rounds in order; mains before interactions within
    a round). ``bin_edges`` and ``knots`` describe the training-time
    discretization of every feature, keyed by feature index.
    """

    offset: float
    rounds: list[RoundResult]
    task: Task
    config: FitConfig
    feature_names: tuple[str, ...]
    target_name: str
    bin_edges: dict[int, np.ndarray]
    knots: dict[int, np.ndarray]

    def iter_trees(self):
        """Yield (round_index, stage, tree, scale) in prediction order."""
        for r, rnd in enumerate(self.rounds):
            for tree, scale in rnd.main.trees:
                yield r, "main", tree, scale
            for tree, scale in rnd.interaction.trees:
                yield r, "interaction", tree, scale


def fit_model(train: Dataset, valid: Dataset, config: FitConfig | None = None,
              target_name: str = "y", debug: bool = False) -> FittedModel:
    """Fit the boosted model on ``train`` with early stopping on ``valid``."""
    if config is None:
        config = FitConfig()
    if train.names != valid.names:
        raise ConfigError("train and valid must share the same columns")
    if train.task is not valid.task:
        raise ConfigError("train and valid must share the same task")
    task = train.task

    tree_params = TreeParams(
        max_depth=config.resolved_depth(task),
        min_leaf=config.min_leaf,
        alpha_grid=config.alpha_grid,
        max_coef=config.max_coef,
        max_bins=config.max_bins,
        nknots=config.nknots,
    )
    stage_params = StageParams(
        tree=tree_params,
        max_iterations=config.max_iterations,
        learning_rate=config.learning_rate,
        patience=config.patience,
        threads=config.threads,
        debug=debug,
    )
    cache = DesignCache(train, config.max_bins, static_weights=task is Task.CONTINUOUS)

    offset = init_offset(train.target, task)
    g_tr = np.full(train.n, offset, dtype=np.float64)
    g_va = np.full(valid.n, offset, dtype=np.float64)

    rounds: list[RoundResult] = []
    for r in range(config.rounds):
        main_res, g_tr, g_va = fit_main_stage(train, valid, g_tr, g_va, stage_params, cache)
        if train.p >= 2:
            ranking = filter_interactions(
                train,
                g_tr,
                config.npairs,
                tree_params,
                cache=cache,
                subsample=config.filter_subsample,
                seed=config.seed + 7919 * (r + 1),
                threads=config.threads,
            )
            combos = ranking.oriented
        else:
            ranking = None
            combos = []
        int_res, g_tr, g_va = fit_interaction_stage(
            train, valid, g_tr, g_va, combos, stage_params, cache
        )
        rounds.append(RoundResult(main=main_res, ranking=ranking, interaction=int_res))
        if main_res.stop_iterations == 0 and int_res.stop_iterations == 0:
            break

    p = train.p
    return FittedModel(
        offset=offset,
        rounds=rounds,
        task=task,
        config=config,
        feature_names=train.names,
        target_name=target_name,
        bin_edges={j: np.array(cache.bins(j).edges) for j in range(p)},
        knots={j: np.array(cache.basis(j, config.nknots).knots) for j in range(p)},
    )


def truncate_rounds(model: FittedModel, rounds: int) -> FittedModel:
    """Model restricted to its first ``rounds`` rounds (trees shared)."""
    if rounds < 1:
        raise ConfigError("rounds must be >= 1")
    return FittedModel(
        offset=model.offset,
        rounds=model.rounds[:rounds],
        task=model.task,
        config=model.config,
        feature_names=model.feature_names,
        target_name=model.target_name,
        bin_edges=model.bin_edges,
        knots=model.knots,
    )


def _column_map(model: FittedModel, ds: Dataset) -> dict[int, int]:
    used = set()
    for _, _, tree, _ in model.iter_trees():
        used.add(tree.model_var)
        used.add(tree.split_var)
    mapping = {}
    for j in sorted(used):
        mapping[j] = ds.index_of(model.feature_names[j])
    return mapping


def predict(model: FittedModel, ds: Dataset, kind: str = "link") -> np.ndarray:
    """Model predictions on a dataset; columns are matched by name.

    ``kind='link'`` returns the additive predictor; ``kind='prob'`` applies
    the logistic link (binary task only).
    """
    if kind not in ("link", "prob"):
        raise ConfigError(f"unknown prediction kind {kind!r}")
    if kind == "prob" and model.task is not Task.BINARY:
        raise ConfigError("probability predictions need a binary-task model")
    cmap = _column_map(model, ds)
    g = np.full(ds.n, model.offset, dtype=np.float64)
    for _, _, tree, scale in model.iter_trees():
        xm = ds.column(cmap[tree.model_var])
        xs = ds.column(cmap[tree.split_var])
        g = g + scale * predict_tree(tree, xm, xs)
    if kind == "prob":
        with np.errstate(over="ignore"):
            g = np.where(g >= 0, 1.0 / (1.0 + np.exp(-g)), np.exp(g) / (1.0 + np.exp(g)))
    return g


# ---------------------------------------------------------------------------
# serialization: canonical JSON, bit-exact round trips
# ---------------------------------------------------------------------------

def _node_to_list(node: TreeNode, out: list) -> None:
    if node.is_leaf:
        out.append(
            {
                "leaf": {
                    "alpha": float(node.model.alpha),
                    "coefficients": [float(v) for v in node.model.coefficients],
                }
            }
        )
    else:
        out.append({"threshold": float(node.threshold)})
        _node_to_list(node.left, out)
        _node_to_list(node.right, out)


def _node_from_list(items: list, pos: int) -> tuple[TreeNode, int]:
    entry = items[pos]
    if "leaf" in entry:
        leaf = entry["leaf"]
        model = NodeModel(
            coefficients=np.array(leaf["coefficients"], dtype=np.float64),
            alpha=float(leaf["alpha"]),
            df=math.nan,
            gcv=math.nan,
            sse=math.nan,
        )
        return TreeNode(model=model), pos + 1
    node = TreeNode(threshold=float(entry["threshold"]))
    node.left, pos = _node_from_list(items, pos + 1)
    node.right, pos = _node_from_list(items, pos)
    return node, pos


def _tree_depth(node: TreeNode) -> int:
    if node.is_leaf:
        return 0
    return 1 + max(_tree_depth(node.left), _tree_depth(node.right))


def model_to_dict(model: FittedModel) -> dict:
    """Plain-dict form of a fitted model (the model file's content)."""
    cfg = model.config
    features = []
    for j, name in enumerate(model.feature_names):
        features.append(
            {
                "name": name,
                "bin_edges": [float(v) for v in model.bin_edges[j]],
                "knots": [float(v) for v in model.knots[j]],
            }
        )
    trees = []
    for r, stage, tree, scale in model.iter_trees():
        nodes: list = []
        _node_to_list(tree.root, nodes)
        trees.append(
            {
                "round": r + 1,
                "stage": stage,
                "kind": "main" if tree.is_main else "interaction",
                "model_var": model.feature_names[tree.model_var],
                "split_var": model.feature_names[tree.split_var],
                "scale": float(scale),
                "nodes": nodes,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "task": model.task.value,
        "offset": float(model.offset),
        "target": model.target_name,
        "config": {
            "max_iterations": cfg.max_iterations,
            "learning_rate": cfg.learning_rate,
            "max_depth": cfg.max_depth,
            "nknots": cfg.nknots,
            "rounds": cfg.rounds,
            "npairs": cfg.npairs,
            "alpha_grid": [float(a) for a in cfg.alpha_grid],
            "max_coef": cfg.max_coef,
            "patience": cfg.patience,
            "min_leaf": cfg.min_leaf,
            "max_bins": cfg.max_bins,
            "filter_subsample": cfg.filter_subsample,
            "seed": cfg.seed,
            "threads": cfg.threads,
        },
        "features": features,
        "trees": trees,
    }


def model_from_dict(doc: dict) -> FittedModel:
    """Rebuild a fitted model from its dict form."""
    if not isinstance(doc, dict) or "schema_version" not in doc:
        raise ModelFormatError("not a model file: missing schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ModelFormatError(
            f"unsupported schema_version {doc['schema_version']!r}; "
            f"this build reads version {SCHEMA_VERSION}"
        )
    task = Task(doc["task"])
    cfg_doc = dict(doc["config"])
    cfg_doc["alpha_grid"] = tuple(cfg_doc["alpha_grid"])
    config = FitConfig(**cfg_doc)
    names = tuple(feat["name"] for feat in doc["features"])
    index = {name: j for j, name in enumerate(names)}
    bin_edges = {
        j: np.array(feat["bin_edges"], dtype=np.float64)
        for j, feat in enumerate(doc["features"])
    }
    knots = {
        j: np.array(feat["knots"], dtype=np.float64)
        for j, feat in enumerate(doc["features"])
    }

    n_rounds = max((t["round"] for t in doc["trees"]), default=1)
    rounds = [
        RoundResult(
            main=StageResult([], 0, []),
            ranking=None,
            interaction=StageResult([], 0, []),
        )
        for _ in range(n_rounds)
    ]
    for t in doc["trees"]:
        mv = index[t["model_var"]]
        sv = index[t["split_var"]]
        root, end = _node_from_list(t["nodes"], 0)
        if end != len(t["nodes"]):
            raise ModelFormatError("tree node list has trailing entries")
        basis = None
        if mv != sv and config.nknots > 2:
            basis = SplineBasis(knots[mv])
        tree = ModelBasedTree(
            model_var=mv,
            split_var=sv,
            root=root,
            basis=basis,
            depth=_tree_depth(root),
        )
        stage = rounds[t["round"] - 1].main if t["stage"] == "main" else rounds[
            t["round"] - 1
        ].interaction
        stage.trees.append((tree, float(t["scale"])))
    for rnd in rounds:
        rnd.main.stop_iterations = len(rnd.main.trees)
        rnd.interaction.stop_iterations = len(rnd.interaction.trees)
    return FittedModel(
        offset=float(doc["offset"]),
        rounds=rounds,
        task=task,
        config=config,
        feature_names=names,
        target_name=doc.get("target", "y"),
        bin_edges=bin_edges,
        knots=knots,
    )


def save_model(model: FittedModel, path: str | Path) -> None:
    """Write the canonical model file (sorted keys, round-trip floats)."""
    doc = model_to_dict(model)
    text = json.dumps(doc, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")


def load_model(path: str | Path) -> FittedModel:
    """Read a model file; parse errors carry the byte offset."""
    path = Path(path)
    if not path.exists():
        raise ModelFormatError(f"model file not found: {path}")
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(
            f"{path}: invalid JSON at byte offset {e.pos}: {e.msg}"
        ) from None
    return model_from_dict(doc)
