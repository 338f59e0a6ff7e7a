"""Quantile regression forest.

Trees are grown with scikit-learn's CART on the squared-error criterion summed
over all target columns. Each leaf keeps the row indices of the bootstrap
sample that reached it, so a prediction can pool the full target multisets.
Level-p predictions are weighted order statistics of the pooled values, each
value of tree b's leaf L weighted 1 / (B · |L|).
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from joblib import Parallel, delayed
from sklearn.tree import DecisionTreeRegressor

from hytemp.errors import InputError
from hytemp.quantiles import ORDER_EPS

if TYPE_CHECKING:
    from hytemp.models import TrainConfig

logger = logging.getLogger(__name__)

LEAF = -1
QUERY_CHUNK = 256


@dataclass(frozen=True)
class TreeStructure:
    """Split nodes and leaf row lists of one tree.

    Attributes:
        children_left: Left child per node, ``-1`` for leaves.
        children_right: Right child per node, ``-1`` for leaves.
        feature: Split feature per node.
        threshold: Split threshold per node; rows with ``x <= threshold`` go left.
        leaf_offsets: CSR offsets into ``leaf_rows`` per node (empty for split nodes).
        leaf_rows: Rows of the tree's target block, grouped by leaf.
        block: Index of the target block the rows refer to.
    """

    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    leaf_offsets: np.ndarray
    leaf_rows: np.ndarray
    block: int

    @property
    def node_count(self) -> int:
        return self.children_left.size

    def apply(self, x32: np.ndarray) -> np.ndarray:
        """Leaf node reached by every row of a float32 input matrix."""
        nodes = np.zeros(x32.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.children_left[nodes] != LEAF)
        while active.size:
            current = nodes[active]
            go_left = x32[active, self.feature[current]] <= self.threshold[current]
            nodes[active] = np.where(go_left, self.children_left[current], self.children_right[current])
            active = active[self.children_left[nodes[active]] != LEAF]
        return nodes

    def leaf_members(self, node: int) -> np.ndarray:
        """Target-block rows retained by a leaf (with bootstrap multiplicity)."""
        return self.leaf_rows[self.leaf_offsets[node] : self.leaf_offsets[node + 1]]


def _structure(tree: DecisionTreeRegressor, x32: np.ndarray, sample: np.ndarray, block: int) -> TreeStructure:
    inner = tree.tree_
    structure = TreeStructure(
        children_left=inner.children_left.astype(np.int32),
        children_right=inner.children_right.astype(np.int32),
        feature=np.where(inner.children_left == LEAF, 0, inner.feature).astype(np.int32),
        threshold=inner.threshold.astype(np.float64),
        leaf_offsets=np.zeros(inner.node_count + 1, dtype=np.int64),
        leaf_rows=np.empty(0, dtype=np.int32),
        block=block,
    )
    leaves = structure.apply(x32[sample])
    order = np.argsort(leaves, kind="stable")
    counts = np.bincount(leaves, minlength=inner.node_count)
    return dataclasses.replace(
        structure,
        leaf_offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
        leaf_rows=sample[order].astype(np.int32),
    )


@dataclass(frozen=True)
class QuantileForest:
    """Trees plus the target blocks their leaves refer to.

    Attributes:
        trees: All trees; prediction pools every one of them.
        blocks: (N_b, K) target matrices, one per fitting call.
        n_features: Input width D.
    """

    trees: tuple[TreeStructure, ...]
    blocks: tuple[np.ndarray, ...]
    n_features: int

    def __post_init__(self) -> None:
        if not self.trees:
            raise InputError("a forest needs at least one tree")
        widths = {b.shape[1] for b in self.blocks}
        if len(widths) != 1:
            raise InputError("target blocks disagree on the room count")
        for tree in self.trees:
            if not 0 <= tree.block < len(self.blocks):
                raise InputError(f"tree refers to missing target block {tree.block}")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_rooms(self) -> int:
        return self.blocks[0].shape[1]

    def check_inputs(self, x: np.ndarray) -> np.ndarray:
        data = np.asarray(x, dtype=float)
        if data.ndim != 2 or data.shape[1] != self.n_features:
            width = data.shape[-1] if data.ndim else 0
            raise InputError(f"input has {width} features, forest was trained on {self.n_features}")
        return data

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(N, B) leaf node of every query in every tree."""
        x32 = self.check_inputs(x).astype(np.float32)
        return np.column_stack([tree.apply(x32) for tree in self.trees])

    def _pooled(self, leaves: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Query index, target values and weights of all pooled leaf members."""
        queries, values, weights = [], [], []
        scale = 1.0 / self.n_trees
        for b, tree in enumerate(self.trees):
            starts = tree.leaf_offsets[leaves[:, b]]
            counts = tree.leaf_offsets[leaves[:, b] + 1] - starts
            total = int(counts.sum())
            query = np.repeat(np.arange(leaves.shape[0]), counts)
            within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
            rows = tree.leaf_rows[np.repeat(starts, counts) + within]
            queries.append(query)
            values.append(self.blocks[tree.block][rows])
            weights.append(np.repeat(scale / np.maximum(counts, 1), counts))
        return np.concatenate(queries), np.concatenate(values), np.concatenate(weights)

    def predict(self, x: np.ndarray, levels: Sequence[float] | np.ndarray) -> np.ndarray:
        """Weighted empirical quantiles of the pooled leaf values, shape (N, K, Q)."""
        data = self.check_inputs(x)
        levels = np.asarray(levels, dtype=float)
        out = np.empty((data.shape[0], self.n_rooms, levels.size))
        for start in range(0, data.shape[0], QUERY_CHUNK):
            chunk = slice(start, min(start + QUERY_CHUNK, data.shape[0]))
            leaves = self.apply(data[chunk])
            query, values, weights = self._pooled(leaves)
            n_query = leaves.shape[0]
            for k in range(self.n_rooms):
                order = np.lexsort((values[:, k], query))
                sorted_query = query[order]
                cumulative = np.cumsum(weights[order])
                ends = np.searchsorted(sorted_query, np.arange(n_query), side="right")
                starts = np.concatenate([[0], ends[:-1]])
                base = np.where(starts > 0, cumulative[np.maximum(starts - 1, 0)], 0.0)
                total = cumulative[ends - 1] - base
                targets = base[:, None] + (levels[None, :] - ORDER_EPS) * total[:, None]
                idx = np.searchsorted(cumulative, targets.ravel(), side="left").reshape(targets.shape)
                idx = np.clip(idx, starts[:, None], ends[:, None] - 1)
                out[chunk, k, :] = values[order, k][idx]
        return out

    def leaf_values(self, tree: int, node: int) -> np.ndarray:
        """(m, K) target values retained by one leaf."""
        structure = self.trees[tree]
        return self.blocks[structure.block][structure.leaf_members(node)]


def _grow_tree(
    x32: np.ndarray,
    split_targets: np.ndarray,
    sample: np.ndarray,
    seed: int,
    config: TrainConfig,
    block: int,
) -> TreeStructure:
    max_features = None if config.max_features >= 1.0 else config.max_features
    tree = DecisionTreeRegressor(
        criterion="squared_error",
        min_samples_split=config.min_samples_split,
        min_samples_leaf=config.min_samples_leaf,
        max_features=max_features,
        random_state=seed,
    )
    tree.fit(x32[sample], split_targets[sample])
    return _structure(tree, x32, sample, block)


def grow_trees(
    x: np.ndarray,
    split_targets: np.ndarray,
    n_trees: int,
    config: TrainConfig,
    rng: np.random.Generator,
    block: int,
) -> list[TreeStructure]:
    """Grow ``n_trees`` trees whose leaves refer to rows of target block ``block``.

    Bootstrap samples and tree seeds are drawn up front, so the result does
    not depend on the number of worker threads.
    """
    x32 = np.asarray(x, dtype=np.float32)
    n = x32.shape[0]
    if n < config.min_samples_split:
        raise InputError(f"forest needs at least {config.min_samples_split} rows, got {n}")
    samples = [
        np.sort(rng.integers(0, n, n)) if config.forest_bootstrap else np.arange(n)
        for _ in range(n_trees)
    ]
    seeds = rng.integers(0, 2**31 - 1, n_trees)
    return Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(_grow_tree)(x32, split_targets, samples[b], int(seeds[b]), config, block) for b in range(n_trees)
    )


def fit_forest(
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    extra_split_targets: np.ndarray | None = None,
) -> QuantileForest:
    """Grow a quantile forest on (x, y).

    Args:
        x: (N, D) inputs.
        y: (N, K) targets retained in the leaves.
        config: Tree count, split limits, bootstrap flag, seed and thread count.
        extra_split_targets: Optional (N, K') columns that only guide the splits.

    Raises:
        InputError: If there are fewer rows than ``min_samples_split``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] != x.shape[0]:
        raise InputError(f"targets have {y.shape[0] if y.ndim else 0} rows, inputs {x.shape[0]}")
    split_targets = y if extra_split_targets is None else np.column_stack([y, extra_split_targets])
    rng = np.random.default_rng(config.seed)
    trees = grow_trees(x, split_targets, config.n_trees, config, rng, block=0)
    logger.info(f"Grew {len(trees)} trees on {x.shape[0]} rows ({split_targets.shape[1]} split targets)")
    return QuantileForest(tuple(trees), (y,), x.shape[1])


def extend_forest(forest: QuantileForest, x: np.ndarray, y: np.ndarray, n_trees: int, config: TrainConfig) -> QuantileForest:
    """Keep every existing tree and add ``n_trees`` grown on (x, y)."""
    if n_trees == 0:
        return forest
    x = forest.check_inputs(x)
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape != (x.shape[0], forest.n_rooms):
        raise InputError(f"fine-tuning targets must be ({x.shape[0]}, {forest.n_rooms})")
    rng = np.random.default_rng([config.seed, forest.n_trees])
    trees = grow_trees(x, y, n_trees, config, rng, block=len(forest.blocks))
    logger.info(f"Added {n_trees} trees to a forest of {forest.n_trees}")
    return QuantileForest((*forest.trees, *trees), (*forest.blocks, y), forest.n_features)


def forest_to_arrays(forest: QuantileForest) -> dict[str, np.ndarray]:
    """Flatten a forest into named arrays for the pipeline container."""
    trees = forest.trees
    arrays = {
        "forest_node_counts": np.array([t.node_count for t in trees], dtype=np.int64),
        "forest_row_counts": np.array([t.leaf_rows.size for t in trees], dtype=np.int64),
        "forest_blocks_of_trees": np.array([t.block for t in trees], dtype=np.int64),
        "forest_children_left": np.concatenate([t.children_left for t in trees]),
        "forest_children_right": np.concatenate([t.children_right for t in trees]),
        "forest_feature": np.concatenate([t.feature for t in trees]),
        "forest_threshold": np.concatenate([t.threshold for t in trees]),
        "forest_leaf_offsets": np.concatenate([t.leaf_offsets for t in trees]),
        "forest_leaf_rows": np.concatenate([t.leaf_rows for t in trees]),
        "forest_n_features": np.array(forest.n_features),
        "forest_block_count": np.array(len(forest.blocks)),
    }
    for i, block in enumerate(forest.blocks):
        arrays[f"forest_block_{i}"] = block
    return arrays


def forest_from_arrays(arrays: dict[str, np.ndarray]) -> QuantileForest:
    """Inverse of ``forest_to_arrays``."""
    node_counts = arrays["forest_node_counts"]
    row_counts = arrays["forest_row_counts"]
    node_ends = np.cumsum(node_counts)
    offset_ends = np.cumsum(node_counts + 1)
    row_ends = np.cumsum(row_counts)
    trees = []
    for b in range(node_counts.size):
        nodes = slice(node_ends[b] - node_counts[b], node_ends[b])
        offsets = slice(offset_ends[b] - node_counts[b] - 1, offset_ends[b])
        rows = slice(row_ends[b] - row_counts[b], row_ends[b])
        trees.append(
            TreeStructure(
                children_left=arrays["forest_children_left"][nodes],
                children_right=arrays["forest_children_right"][nodes],
                feature=arrays["forest_feature"][nodes],
                threshold=arrays["forest_threshold"][nodes],
                leaf_offsets=arrays["forest_leaf_offsets"][offsets],
                leaf_rows=arrays["forest_leaf_rows"][rows],
                block=int(arrays["forest_blocks_of_trees"][b]),
            )
        )
    blocks = tuple(arrays[f"forest_block_{i}"] for i in range(int(arrays["forest_block_count"])))
    return QuantileForest(tuple(trees), blocks, int(arrays["forest_n_features"]))
