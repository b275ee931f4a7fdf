"""Random forest: bootstrap-sampled Gini trees with probability scores.

Randomness is SplitMix64 throughout. The per-tree stream derivation is:
the first `n_trees` outputs of SplitMix64(seed) become the tree seeds, and
tree t runs its own SplitMix64 stream from seeds[t] (bootstrap draws first,
then mtry feature draws per node in preorder). This makes training
deterministic, platform-independent, and parallelizable over trees.

Bootstrap draws index into a canonically sorted copy of the training set
(sorted by class then feature values), so the model is invariant to the
order in which examples are supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._kernels import build_tree, forest_scores, sm64_sequence, tree_votes
from .errors import SchemaMismatch, SingleClassTrainingSet, WristtapError
from .features import FeatureVector

GENERATOR_NAME = "splitmix64"


@dataclass(frozen=True)
class LabeledExample:
    """A feature vector with its binary class (True = positive)."""

    features: FeatureVector
    positive: bool


@dataclass(frozen=True)
class ForestModel:
    """A trained ensemble, stored as flat preorder node arrays.

    Node i is internal when feature[i] >= 0 (route <= threshold left,
    > threshold right) and a leaf otherwise, with pos_frac[i] the positive
    fraction of its training samples. tree_offsets[t] is the root index of
    tree t. importances are Gini importances normalized to sum 1 (or all
    zero when no tree made a split).
    """

    schema: tuple[str, ...]
    seed: int
    n_trees: int
    mtry: int
    max_depth: int | None
    min_split: int
    bootstrap: bool
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    pos_frac: np.ndarray
    counts: np.ndarray
    tree_offsets: np.ndarray
    importances: np.ndarray
    meta: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "pos_frac",
                     "counts", "tree_offsets", "importances"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if len(self.tree_offsets) != self.n_trees + 1:
            raise WristtapError("tree_offsets must have n_trees + 1 entries")
        if len(self.importances) != len(self.schema):
            raise WristtapError("importances must match the schema length")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    # lexsort keys: last is primary -> class first, then feature columns
    keys = np.vstack([X[:, ::-1].T, y.reshape(1, -1)])
    return np.lexsort(keys)


def train_forest_xy(X: np.ndarray, y: np.ndarray, schema: Sequence[str],
                    n_trees: int = 100, seed: int = 0, mtry: int | None = None,
                    max_depth: int | None = None, min_split: int = 2,
                    bootstrap: bool = True,
                    meta: tuple[tuple[str, str], ...] = ()) -> ForestModel:
    """Train from a feature matrix and a boolean/0-1 label vector."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int8)
    schema = tuple(schema)
    if X.ndim != 2 or X.shape[1] != len(schema):
        raise SchemaMismatch(f"matrix has {X.shape} columns, schema has {len(schema)}")
    if X.shape[0] != len(y):
        raise WristtapError("X and y lengths differ")
    if n_trees < 1:
        raise WristtapError("n_trees must be >= 1")
    if y.max(initial=0) == y.min(initial=0):
        raise SingleClassTrainingSet("training data needs both classes")

    order = _canonical_order(X, y)
    X = np.ascontiguousarray(X[order])
    y = np.ascontiguousarray(y[order])

    p = len(schema)
    if mtry is None:
        mtry = max(1, math.floor(math.sqrt(p)))
    if not (1 <= mtry <= p):
        raise WristtapError(f"mtry must be in [1, {p}]")
    depth_arg = -1 if max_depth is None else int(max_depth)

    seeds = sm64_sequence(np.uint64(seed & 0xFFFFFFFFFFFFFFFF), n_trees)
    parts = []
    imp_sum = np.zeros(p)
    for t in range(n_trees):
        arrs = build_tree(X, y, seeds[t], mtry, depth_arg, min_split, bootstrap)
        parts.append(arrs[:6])
        imp_sum += arrs[6]

    offsets = np.zeros(n_trees + 1, dtype=np.int64)
    for t, part in enumerate(parts):
        offsets[t + 1] = offsets[t] + len(part[0])
    shift = np.repeat(offsets[:-1], np.diff(offsets))

    feature = np.concatenate([p0 for p0, *_ in parts])
    internal = feature >= 0
    left = np.concatenate([part[2] for part in parts]).astype(np.int64)
    right = np.concatenate([part[3] for part in parts]).astype(np.int64)
    left[internal] += shift[internal]
    right[internal] += shift[internal]

    imp = imp_sum / n_trees
    total = imp.sum()
    if total > 0:
        imp = imp / total

    return ForestModel(
        schema=schema, seed=int(seed), n_trees=n_trees, mtry=int(mtry),
        max_depth=max_depth, min_split=min_split, bootstrap=bootstrap,
        feature=feature.astype(np.int32),
        threshold=np.concatenate([part[1] for part in parts]),
        left=left.astype(np.int32), right=right.astype(np.int32),
        pos_frac=np.concatenate([part[4] for part in parts]),
        counts=np.concatenate([part[5] for part in parts]),
        tree_offsets=offsets, importances=imp, meta=tuple(meta),
    )


def train_forest(examples: Sequence[LabeledExample], n_trees: int = 100,
                 seed: int = 0, mtry: int | None = None,
                 max_depth: int | None = None, min_split: int = 2,
                 bootstrap: bool = True) -> ForestModel:
    """Train on labeled feature vectors; all must share one schema."""
    if not examples:
        raise SingleClassTrainingSet("no training examples")
    schema = examples[0].features.names
    for ex in examples:
        if ex.features.names != schema:
            raise SchemaMismatch("training examples with mixed feature schemas")
    X = np.stack([ex.features.values for ex in examples])
    y = np.array([ex.positive for ex in examples])
    return train_forest_xy(X, y, schema, n_trees=n_trees, seed=seed, mtry=mtry,
                           max_depth=max_depth, min_split=min_split, bootstrap=bootstrap)


def _check_row(model: ForestModel, features) -> np.ndarray:
    if isinstance(features, FeatureVector):
        if features.names != model.schema:
            raise SchemaMismatch("feature vector schema differs from the model's")
        return features.values
    row = np.asarray(features, dtype=np.float64)
    if row.shape != (len(model.schema),):
        raise SchemaMismatch(f"expected {len(model.schema)} features, got {row.shape}")
    return row


def score(model: ForestModel, features) -> float:
    """Mean leaf positive-fraction over the model's trees, in [0, 1]."""
    row = np.ascontiguousarray(_check_row(model, features)).reshape(1, -1)
    return float(forest_scores(model.feature, model.threshold, model.left,
                               model.right, model.pos_frac, model.tree_offsets, row)[0])


def score_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Scores for each row of a feature matrix."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.schema):
        raise SchemaMismatch(f"matrix shape {X.shape} does not match schema")
    return forest_scores(model.feature, model.threshold, model.left,
                         model.right, model.pos_frac, model.tree_offsets, X)


def per_tree_scores(model: ForestModel, features) -> np.ndarray:
    """Leaf positive-fraction of each individual tree for one input."""
    row = np.ascontiguousarray(_check_row(model, features))
    return tree_votes(model.feature, model.threshold, model.left, model.right,
                      model.pos_frac, model.tree_offsets, row)


def top_features(model: ForestModel, k: int) -> list[tuple[str, float]]:
    """The k most important features, descending; ties break by schema order."""
    if k > len(model.schema):
        raise WristtapError(f"k={k} exceeds schema length {len(model.schema)}")
    order = np.argsort(-model.importances, kind="stable")[:k]
    return [(model.schema[i], float(model.importances[i])) for i in order]


FORMAT_TAG = "wristtap-forest"
FORMAT_VERSION = 1


def save_model(model: ForestModel, path) -> None:
    """Write a model as a self-describing, lossless text file."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{FORMAT_TAG} {FORMAT_VERSION}\n")
        fh.write(f"generator {GENERATOR_NAME}\n")
        fh.write(f"seed {model.seed}\n")
        fh.write(f"n_trees {model.n_trees}\n")
        fh.write(f"mtry {model.mtry}\n")
        fh.write(f"max_depth {'none' if model.max_depth is None else model.max_depth}\n")
        fh.write(f"min_split {model.min_split}\n")
        fh.write(f"bootstrap {int(model.bootstrap)}\n")
        for key, value in model.meta:
            fh.write(f"meta {key} {value}\n")
        fh.write(f"features {len(model.schema)}\n")
        for name in model.schema:
            fh.write(name + "\n")
        fh.write("importances " + " ".join(repr(v) for v in model.importances.tolist()) + "\n")
        for t in range(model.n_trees):
            lo, hi = model.tree_offsets[t], model.tree_offsets[t + 1]
            fh.write(f"tree {t} {hi - lo}\n")
            for i in range(lo, hi):
                if model.feature[i] >= 0:
                    fh.write(f"i {int(model.feature[i])} {float(model.threshold[i])!r} "
                             f"{int(model.left[i]) - lo} {int(model.right[i]) - lo} "
                             f"{int(model.counts[i])}\n")
                else:
                    fh.write(f"l {float(model.pos_frac[i])!r} {int(model.counts[i])}\n")
        fh.write("end\n")


def load_model(path) -> ForestModel:
    """Read a model written by save_model; the round trip is lossless."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def fail(i, why):
        raise WristtapError(f"{path}:{i + 1}: bad model file: {why}")

    if not lines or lines[0].split() != [FORMAT_TAG, str(FORMAT_VERSION)]:
        fail(0, f"expected header '{FORMAT_TAG} {FORMAT_VERSION}'")
    header: dict[str, str] = {}
    meta = []
    i = 1
    while i < len(lines) and not lines[i].startswith("features "):
        key, _, value = lines[i].partition(" ")
        if key == "meta":
            mk, _, mv = value.partition(" ")
            meta.append((mk, mv))
        else:
            header[key] = value
        i += 1
    if i == len(lines):
        fail(i - 1, "missing features section")
    n_features = int(lines[i].split()[1])
    schema = tuple(lines[i + 1: i + 1 + n_features])
    i += 1 + n_features
    if not lines[i].startswith("importances "):
        fail(i, "missing importances")
    importances = np.array([float(v) for v in lines[i].split()[1:]])
    i += 1

    n_trees = int(header["n_trees"])
    feats, thrs, lefts, rights, fracs, counts = [], [], [], [], [], []
    offsets = [0]
    for t in range(n_trees):
        parts = lines[i].split()
        if parts[:2] != ["tree", str(t)]:
            fail(i, f"expected tree {t}")
        n_nodes = int(parts[2])
        i += 1
        base = offsets[-1]
        for _ in range(n_nodes):
            tok = lines[i].split()
            if tok[0] == "i":
                feats.append(int(tok[1]))
                thrs.append(float(tok[2]))
                lefts.append(int(tok[3]) + base)
                rights.append(int(tok[4]) + base)
                fracs.append(0.0)
                counts.append(int(tok[5]))
            elif tok[0] == "l":
                feats.append(-1)
                thrs.append(0.0)
                lefts.append(-1)
                rights.append(-1)
                fracs.append(float(tok[1]))
                counts.append(int(tok[2]))
            else:
                fail(i, f"unknown node tag {tok[0]!r}")
            i += 1
        offsets.append(base + n_nodes)
    if i >= len(lines) or lines[i] != "end":
        fail(min(i, len(lines) - 1), "missing end marker")

    max_depth = None if header["max_depth"] == "none" else int(header["max_depth"])
    return ForestModel(
        schema=schema, seed=int(header["seed"]), n_trees=n_trees,
        mtry=int(header["mtry"]), max_depth=max_depth,
        min_split=int(header["min_split"]), bootstrap=bool(int(header["bootstrap"])),
        feature=np.array(feats, dtype=np.int32), threshold=np.array(thrs),
        left=np.array(lefts, dtype=np.int32), right=np.array(rights, dtype=np.int32),
        pos_frac=np.array(fracs), counts=np.array(counts, dtype=np.int32),
        tree_offsets=np.array(offsets, dtype=np.int64), importances=importances,
        meta=tuple(meta),
    )
