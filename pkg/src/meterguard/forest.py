"""CART decision trees and a bootstrap-aggregated forest of them.

Splits are axis-aligned comparisons ``value < threshold`` (strictly-less
goes left) chosen to maximize the decrease in Gini impurity. Candidate
thresholds are midpoints between consecutive distinct sorted values of
a feature; ties in decrease resolve toward the lower feature index,
then the lower threshold, so training is fully deterministic given its
RNG stream. Nodes stop splitting when pure, smaller than
min_samples_split, at max_depth, or when no split has positive decrease.

The hot path is compiled with numba. To keep per-node cost linear, each
feature's sort order is computed once for the whole matrix; every node
then stable-partitions the nine order lists instead of re-sorting. The
same midpoint/accumulation arithmetic is used by the compiled kernel
and the numpy :func:`best_split`, so both agree bitwise.

A forest draws one RNG substream per tree index, which makes every tree
independent of n_trees: growing a forest from 50 to 100 trees leaves
the first 50 unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence, TextIO

import numpy as np
from numba import njit

from .randomness import DOMAIN_TREE, substream
from .telemetry import (
    CLASS_COUNT,
    CLASS_NAMES,
    FEATURE_COUNT,
    FEATURE_NAMES,
    WorkloadClass,
)

MODEL_MAGIC = "meterguard-forest"
MODEL_VERSION = 1


class EmptyNode(Exception):
    """Class counts that describe no samples at all."""


class TooFewSamples(Exception):
    """Not enough rows for the requested operation."""


class VersionMismatch(Exception):
    """Model file written by an incompatible format version."""

    def __init__(self, found: str):
        super().__init__(
            f"model format version {found!r} is not supported "
            f"(this build reads version {MODEL_VERSION})"
        )
        self.found = found


class CorruptModel(Exception):
    """Model file that cannot be decoded; carries the byte offset."""

    def __init__(self, byte_offset: int, reason: str):
        super().__init__(f"byte {byte_offset}: {reason}")
        self.byte_offset = byte_offset
        self.reason = reason


def gini_impurity(counts: Sequence[int] | np.ndarray) -> float:
    """Gini impurity 1 - sum(p_c^2) of a class-count vector.

    Raises EmptyNode when the counts describe no samples and ValueError
    on negative entries. Accumulation runs in ascending class order;
    other implementations in this package mirror that order so results
    compare bitwise.
    """
    total = 0
    for c in counts:
        if c < 0:
            raise ValueError(f"negative class count {c}")
        total += int(c)
    if total == 0:
        raise EmptyNode("class counts sum to zero")
    acc = 0.0
    for c in counts:
        p = int(c) / total
        acc += p * p
    return 1.0 - acc


class Split(NamedTuple):
    feature: int
    threshold: float
    decrease: float


def best_split(
    features: np.ndarray,
    labels: np.ndarray,
    candidate_features: Iterable[int] | None = None,
    min_samples_leaf: int = 1,
) -> Split | None:
    """Exhaustively evaluate axis-aligned splits; return the best or None.

    Candidate thresholds are midpoints between consecutive distinct
    values of each candidate feature (ascending). The split maximizing
    the Gini decrease wins; exact ties go to the lower feature index,
    then the lower threshold. Returns None when no candidate has
    decrease > 0 or fewer than two rows are given.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("features must be (n, f) with labels of length n")
    n = X.shape[0]
    if n < 2:
        return None
    if candidate_features is None:
        candidate_features = range(X.shape[1])
    feats = list(candidate_features)
    if any(not 0 <= f < X.shape[1] for f in feats):
        raise ValueError("candidate feature index out of range")

    total = np.bincount(y, minlength=CLASS_COUNT).astype(np.float64)
    p = total / n
    g_parent = 1.0 - float((p * p).sum())
    onehot = np.zeros((n, CLASS_COUNT))
    onehot[np.arange(n), y] = 1.0

    best: Split | None = None
    for f in feats:
        vals = X[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        boundaries = np.nonzero(sv[:-1] < sv[1:])[0]
        if boundaries.size == 0:
            continue
        cum = onehot[order].cumsum(axis=0)
        nl = (boundaries + 1).astype(np.float64)
        nr = n - nl
        if min_samples_leaf > 1:
            ok = (nl >= min_samples_leaf) & (nr >= min_samples_leaf)
            boundaries = boundaries[ok]
            if boundaries.size == 0:
                continue
            nl, nr = nl[ok], nr[ok]
        lc = cum[boundaries]
        rc = total - lc
        pl = lc / nl[:, None]
        pr = rc / nr[:, None]
        gl = 1.0 - (pl * pl).sum(axis=1)
        gr = 1.0 - (pr * pr).sum(axis=1)
        dec = g_parent - (nl * gl + nr * gr) / n
        bi = int(np.argmax(dec))
        d = float(dec[bi])
        if d > 0.0 and (best is None or d > best.decrease):
            b = int(boundaries[bi])
            best = Split(int(f), float((sv[b] + sv[b + 1]) / 2.0), d)
    return best


# ---------------------------------------------------------------------------
# Parameters and tree structure


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    features_per_split: int | str = "all"

    def __post_init__(self) -> None:
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be None or >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        fps = self.features_per_split
        if isinstance(fps, str):
            if fps != "all":
                raise ValueError("features_per_split must be an int or 'all'")
        elif fps < 1:
            raise ValueError("features_per_split must be >= 1")


#: floor(sqrt(9)): features drawn per split in forests by default.
DEFAULT_FEATURES_PER_SPLIT = int(math.isqrt(FEATURE_COUNT))


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    bootstrap: bool = True
    tree: TreeParams = TreeParams(features_per_split=DEFAULT_FEATURES_PER_SPLIT)

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")


@dataclass(frozen=True)
class TreeNode:
    """One node of a fitted tree.

    Internal nodes carry (feature, threshold, decrease) and both
    children; leaves carry neither children nor split fields. Rows with
    value < threshold descend left. class_counts always reflects the
    training rows that reached the node.
    """

    class_counts: tuple[int, ...]
    feature: int | None = None
    threshold: float | None = None
    decrease: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def __post_init__(self) -> None:
        if sum(self.class_counts) <= 0:
            raise EmptyNode("node must describe at least one sample")
        if any(c < 0 for c in self.class_counts):
            raise ValueError("negative class count")
        if self.feature is None:
            if self.left is not None or self.right is not None:
                raise ValueError("leaf nodes cannot have children")
        else:
            if self.left is None or self.right is None:
                raise ValueError("split nodes need both children")
            if self.threshold is None or not math.isfinite(self.threshold):
                raise ValueError("split nodes need a finite threshold")
            if self.decrease < 0:
                raise ValueError("decrease cannot be negative")

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def n_samples(self) -> int:
        return sum(self.class_counts)

    @cached_property
    def prediction(self) -> WorkloadClass:
        """Majority class; ties resolve to the lowest ordinal."""
        counts = self.class_counts
        return WorkloadClass(max(range(len(counts)), key=lambda c: (counts[c], -c)))


def predict_tree(tree: TreeNode, vector: Sequence[float]) -> WorkloadClass:
    """Route one feature vector to a leaf and return its majority class."""
    node = tree
    while node.feature is not None:
        node = node.left if vector[node.feature] < node.threshold else node.right
    return node.prediction


# ---------------------------------------------------------------------------
# Compiled growth kernel


@njit(cache=True)
def _grow(X, y, sorted_ids, mult, n_rows, n_classes,
          features_per_split, max_depth, min_split, min_leaf, rng):
    """Grow one tree over the row multiset given by ``mult``.

    sorted_ids[f] holds all row ids ascending by feature f; each row
    participates mult[row] times (bootstrap draws). Returns flat node
    arrays in preorder, with feature == -1 marking leaves. Children of
    a node always have larger indices than the node itself.
    """
    n_all, n_feat = X.shape
    m0 = n_rows

    # Per-feature position lists over the multiset, kept partitioned as
    # the tree grows so no node ever re-sorts.
    pos = np.empty((n_feat, m0), dtype=np.int32)
    for f in range(n_feat):
        k = 0
        for i in range(n_all):
            r = sorted_ids[f, i]
            for _ in range(mult[r]):
                pos[f, k] = r
                k += 1
    tmp = np.empty(m0, dtype=np.int32)

    cap = 4096
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    decrease = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes), dtype=np.int64)

    root_counts = np.zeros(n_classes, dtype=np.int64)
    for i in range(m0):
        root_counts[y[pos[0, i]]] += 1

    scap = 512
    stack_s = np.empty(scap, dtype=np.int64)
    stack_e = np.empty(scap, dtype=np.int64)
    stack_d = np.empty(scap, dtype=np.int64)
    stack_n = np.empty(scap, dtype=np.int64)
    stack_c = np.empty((scap, n_classes), dtype=np.int64)
    stack_s[0] = 0
    stack_e[0] = m0
    stack_d[0] = 0
    stack_n[0] = 0
    stack_c[0] = root_counts
    sp = 1
    n_nodes = 1

    lc = np.zeros(n_classes, dtype=np.int64)
    best_lc = np.zeros(n_classes, dtype=np.int64)

    while sp > 0:
        sp -= 1
        s = stack_s[sp]
        e = stack_e[sp]
        depth = stack_d[sp]
        node = stack_n[sp]
        total = stack_c[sp].copy()
        m = e - s

        if n_nodes + 2 > cap:
            feature = np.concatenate((feature, np.full(cap, -1, dtype=np.int64)))
            threshold = np.concatenate((threshold, np.zeros(cap, dtype=np.float64)))
            decrease = np.concatenate((decrease, np.zeros(cap, dtype=np.float64)))
            left = np.concatenate((left, np.full(cap, -1, dtype=np.int64)))
            right = np.concatenate((right, np.full(cap, -1, dtype=np.int64)))
            counts = np.vstack((counts, np.zeros((cap, n_classes), dtype=np.int64)))
            cap *= 2
        counts[node] = total

        n_present = 0
        for c in range(n_classes):
            if total[c] > 0:
                n_present += 1
        if n_present <= 1 or m < min_split or (max_depth >= 0 and depth >= max_depth):
            continue

        acc = 0.0
        mf = float(m)
        for c in range(n_classes):
            p = total[c] / mf
            acc += p * p
        g_parent = 1.0 - acc

        if features_per_split >= n_feat:
            feats = np.arange(n_feat)
        else:
            perm = rng.permutation(n_feat)
            feats = np.sort(perm[:features_per_split])

        best_dec = 0.0
        best_feat = -1
        best_thr = 0.0
        for fi in range(feats.shape[0]):
            f = feats[fi]
            for c in range(n_classes):
                lc[c] = 0
            prev = X[pos[f, s], f]
            nl = 0
            for i in range(m - 1):
                r = pos[f, s + i]
                lc[y[r]] += 1
                nl += 1
                v_next = X[pos[f, s + i + 1], f]
                if v_next <= prev:
                    continue
                if nl >= min_leaf and (m - nl) >= min_leaf:
                    nlf = float(nl)
                    nrf = float(m - nl)
                    accl = 0.0
                    accr = 0.0
                    for c in range(n_classes):
                        pl = lc[c] / nlf
                        accl += pl * pl
                        pr = (total[c] - lc[c]) / nrf
                        accr += pr * pr
                    gl = 1.0 - accl
                    gr = 1.0 - accr
                    dec = g_parent - (nlf * gl + nrf * gr) / mf
                    if dec > best_dec:
                        best_dec = dec
                        best_feat = f
                        best_thr = (prev + v_next) / 2.0
                        for c in range(n_classes):
                            best_lc[c] = lc[c]
                prev = v_next
        if best_feat < 0 or best_dec <= 0.0:
            continue

        # Stable-partition every feature list on the chosen predicate.
        n_left = 0
        for f in range(n_feat):
            a = s
            b = 0
            for i in range(s, e):
                r = pos[f, i]
                if X[r, best_feat] < best_thr:
                    pos[f, a] = r
                    a += 1
                else:
                    tmp[b] = r
                    b += 1
            for i in range(b):
                pos[f, a + i] = tmp[i]
            n_left = a - s
        if n_left == 0 or n_left == m:
            # Midpoint rounded onto a boundary value; keep the node a leaf.
            continue

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = best_thr
        decrease[node] = best_dec
        left[node] = li
        right[node] = ri

        if sp + 2 > scap:
            stack_s = np.concatenate((stack_s, np.empty(scap, dtype=np.int64)))
            stack_e = np.concatenate((stack_e, np.empty(scap, dtype=np.int64)))
            stack_d = np.concatenate((stack_d, np.empty(scap, dtype=np.int64)))
            stack_n = np.concatenate((stack_n, np.empty(scap, dtype=np.int64)))
            stack_c = np.vstack((stack_c, np.empty((scap, n_classes), dtype=np.int64)))
            scap *= 2
        stack_s[sp] = s + n_left
        stack_e[sp] = e
        stack_d[sp] = depth + 1
        stack_n[sp] = ri
        for c in range(n_classes):
            stack_c[sp, c] = total[c] - best_lc[c]
        sp += 1
        stack_s[sp] = s
        stack_e[sp] = s + n_left
        stack_d[sp] = depth + 1
        stack_n[sp] = li
        for c in range(n_classes):
            stack_c[sp, c] = best_lc[c]
        sp += 1

    return (feature[:n_nodes], threshold[:n_nodes], decrease[:n_nodes],
            left[:n_nodes], right[:n_nodes], counts[:n_nodes])


@njit(cache=True)
def _route(feature, threshold, left, right, pred, X):
    """Predict class ordinals for every row of X on one flat tree."""
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = pred[node]
    return out


def _check_training_arrays(features, labels) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("features must be (n, f) with labels of length n")
    if X.shape[0] < 1:
        raise TooFewSamples("cannot fit on an empty dataset")
    if y.size and (y.min() < 0 or y.max() >= CLASS_COUNT):
        raise ValueError(f"labels must be ordinals in [0, {CLASS_COUNT})")
    return X, y


def _presort(X: np.ndarray) -> np.ndarray:
    sorted_ids = np.empty((X.shape[1], X.shape[0]), dtype=np.int64)
    for f in range(X.shape[1]):
        sorted_ids[f] = np.argsort(X[:, f], kind="stable")
    return sorted_ids


def _nodes_from_arrays(feature, threshold, decrease, left, right, counts) -> TreeNode:
    """Rebuild the TreeNode structure from flat arrays (children first)."""
    built: list[TreeNode | None] = [None] * feature.shape[0]
    for i in range(feature.shape[0] - 1, -1, -1):
        cts = tuple(int(c) for c in counts[i])
        if feature[i] < 0:
            built[i] = TreeNode(cts)
        else:
            built[i] = TreeNode(
                cts,
                feature=int(feature[i]),
                threshold=float(threshold[i]),
                decrease=float(decrease[i]),
                left=built[left[i]],
                right=built[right[i]],
            )
    root = built[0]
    assert root is not None
    return root


def _grow_to_node(X, y, sorted_ids, mult, params: TreeParams, rng) -> TreeNode:
    fps = params.features_per_split
    features_per_split = X.shape[1] if fps == "all" else int(fps)
    if features_per_split > X.shape[1]:
        raise ValueError(
            f"features_per_split={features_per_split} exceeds {X.shape[1]} features"
        )
    out = _grow(
        X, y, sorted_ids, mult, int(mult.sum()), CLASS_COUNT,
        features_per_split,
        -1 if params.max_depth is None else params.max_depth,
        params.min_samples_split, params.min_samples_leaf, rng,
    )
    return _nodes_from_arrays(*out)


def fit_tree(
    features: np.ndarray,
    labels: np.ndarray,
    params: TreeParams = TreeParams(),
    rng: int | np.random.Generator = 0,
) -> TreeNode:
    """Fit a single CART tree and return its root node.

    The RNG only matters when params.features_per_split restricts the
    candidate set; with "all" (the default) the fit is deterministic in
    the data alone.
    """
    X, y = _check_training_arrays(features, labels)
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    mult = np.ones(X.shape[0], dtype=np.int64)
    return _grow_to_node(X, y, _presort(X), mult, params, rng)


@dataclass(frozen=True)
class RandomForest:
    """A fitted forest: tree roots plus the recipe that built them."""

    trees: tuple[TreeNode, ...]
    params: ForestParams
    rng_seed: int

    def __post_init__(self) -> None:
        if len(self.trees) != self.params.n_trees:
            raise ValueError("tree count does not match params.n_trees")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def _flat(self) -> list[tuple[np.ndarray, ...]]:
        return [_flatten_tree(t) for t in self.trees]


def _flatten_tree(root: TreeNode) -> tuple[np.ndarray, ...]:
    """Preorder flat arrays (feature, threshold, left, right, pred, counts)."""
    order: list[TreeNode] = []
    stack = [root]
    while stack:
        nd = stack.pop()
        order.append(nd)
        if nd.feature is not None:
            stack.append(nd.right)  # popped second
            stack.append(nd.left)
    index = {id(nd): i for i, nd in enumerate(order)}
    n = len(order)
    feature = np.full(n, -1, dtype=np.int64)
    threshold = np.zeros(n, dtype=np.float64)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    pred = np.empty(n, dtype=np.int64)
    counts = np.zeros((n, CLASS_COUNT), dtype=np.int64)
    for i, nd in enumerate(order):
        pred[i] = int(nd.prediction)
        counts[i] = nd.class_counts
        if nd.feature is not None:
            feature[i] = nd.feature
            threshold[i] = nd.threshold
            left[i] = index[id(nd.left)]
            right[i] = index[id(nd.right)]
    return feature, threshold, left, right, pred, counts


def fit_forest(
    features: np.ndarray,
    labels: np.ndarray,
    params: ForestParams = ForestParams(),
    rng_seed: int = 0,
) -> RandomForest:
    """Fit a bootstrap-aggregated forest.

    Tree t draws everything it needs (bootstrap rows, then per-node
    feature subsets) from the substream (rng_seed, tree-domain, t), so
    results are reproducible and independent of n_trees.
    """
    X, y = _check_training_arrays(features, labels)
    sorted_ids = _presort(X)
    n = X.shape[0]
    ones = np.ones(n, dtype=np.int64)
    trees = []
    for t in range(params.n_trees):
        rng = substream(rng_seed, DOMAIN_TREE, t)
        if params.bootstrap:
            mult = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.int64)
        else:
            mult = ones
        trees.append(_grow_to_node(X, y, sorted_ids, mult, params.tree, rng))
    return RandomForest(tuple(trees), params, rng_seed)


def forest_votes(forest: RandomForest, features: np.ndarray) -> np.ndarray:
    """(n_rows, n_classes) matrix counting tree votes per class."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be 2-D")
    votes = np.zeros((X.shape[0], CLASS_COUNT), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for feature, threshold, left, right, pred, _counts in forest._flat:
        votes[rows, _route(feature, threshold, left, right, pred, X)] += 1
    return votes


def predict_forest(forest: RandomForest, features: np.ndarray) -> np.ndarray:
    """Majority-vote class ordinals; argmax breaks ties toward 0."""
    return np.argmax(forest_votes(forest, features), axis=1)


def feature_importance(forest: RandomForest) -> np.ndarray:
    """Mean decrease in impurity per feature, normalized to sum to 1.

    Each split contributes its Gini decrease weighted by the fraction
    of the tree's samples that reached it; per-tree totals are averaged
    over the forest. If nothing ever split, all features matter equally
    and the uniform vector is returned.
    """
    totals = np.zeros(FEATURE_COUNT, dtype=np.float64)
    for root in forest.trees:
        n_root = root.n_samples
        stack = [root]
        while stack:
            nd = stack.pop()
            if nd.feature is None:
                continue
            totals[nd.feature] += (nd.n_samples / n_root) * nd.decrease
            stack.append(nd.left)
            stack.append(nd.right)
    totals /= forest.n_trees
    s = totals.sum()
    if s <= 0.0:
        return np.full(FEATURE_COUNT, 1.0 / FEATURE_COUNT)
    return totals / s


def dump_tree(tree: TreeNode, max_depth: int | None = None) -> str:
    """Human-readable rendering of a tree's top levels.

    Internal nodes print the split; children are indented underneath,
    the < branch first. Subtrees below max_depth collapse to one line.
    """
    lines: list[str] = []
    stack: list[tuple[TreeNode, int, str]] = [(tree, 0, "")]
    while stack:
        nd, depth, tag = stack.pop()
        pad = "    " * depth + tag
        if nd.feature is None:
            cts = "/".join(str(c) for c in nd.class_counts)
            lines.append(f"{pad}leaf {nd.prediction.name}  [{cts}]")
        elif max_depth is not None and depth >= max_depth:
            lines.append(f"{pad}... [n={nd.n_samples}]")
        else:
            lines.append(
                f"{pad}{FEATURE_NAMES[nd.feature]} < {nd.threshold:g}"
                f"  [n={nd.n_samples} gain={nd.decrease:.6f}]"
            )
            stack.append((nd.right, depth + 1, ">=: "))
            stack.append((nd.left, depth + 1, "<: "))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Model file format (text, version 1)
#
#   meterguard-forest 1
#   features <comma-joined names>
#   classes <comma-joined names>
#   params n_trees=.. bootstrap=.. features_per_split=.. max_depth=..
#          min_samples_split=.. min_samples_leaf=.. seed=..   (one line)
#   tree 0
#   I <feature> <threshold> <decrease> <c0> .. <c4>
#   L <c0> .. <c4>
#   ...
#   end
#
# Nodes appear in preorder; an I line is followed by its complete left
# subtree, then its right. Floats are written with repr() and parse back
# bit-identically.


def save_model(forest: RandomForest, stream: TextIO) -> None:
    p = forest.params
    stream.write(f"{MODEL_MAGIC} {MODEL_VERSION}\n")
    stream.write("features " + ",".join(FEATURE_NAMES) + "\n")
    stream.write("classes " + ",".join(CLASS_NAMES) + "\n")
    md = p.tree.max_depth
    stream.write(
        "params "
        f"n_trees={p.n_trees} "
        f"bootstrap={'true' if p.bootstrap else 'false'} "
        f"features_per_split={p.tree.features_per_split} "
        f"max_depth={'none' if md is None else md} "
        f"min_samples_split={p.tree.min_samples_split} "
        f"min_samples_leaf={p.tree.min_samples_leaf} "
        f"seed={forest.rng_seed}\n"
    )
    for t, root in enumerate(forest.trees):
        stream.write(f"tree {t}\n")
        stack = [root]
        while stack:
            nd = stack.pop()
            cts = " ".join(str(c) for c in nd.class_counts)
            if nd.feature is None:
                stream.write(f"L {cts}\n")
            else:
                stream.write(
                    f"I {nd.feature} {nd.threshold!r} {nd.decrease!r} {cts}\n"
                )
                stack.append(nd.right)
                stack.append(nd.left)
    stream.write("end\n")


class _LineReader:
    """Sequential line access that remembers each line's byte offset."""

    def __init__(self, text: str):
        self.lines = text.split("\n")
        self.offsets = []
        pos = 0
        for line in self.lines:
            self.offsets.append(pos)
            pos += len(line.encode("utf-8")) + 1
        self.i = 0
        self.current = 0

    @property
    def offset(self) -> int:
        """Byte offset of the line most recently returned by next()."""
        return self.current

    def next(self, what: str) -> str:
        while self.i < len(self.lines):
            line = self.lines[self.i]
            self.current = self.offsets[self.i]
            self.i += 1
            if line:
                return line
        self.current = self.offsets[-1]
        raise CorruptModel(self.current, f"unexpected end of file, expected {what}")


def _parse_counts(parts: list[str], reader: _LineReader) -> tuple[int, ...]:
    if len(parts) != CLASS_COUNT:
        raise CorruptModel(
            reader.offset, f"expected {CLASS_COUNT} class counts, got {len(parts)}"
        )
    try:
        counts = tuple(int(c) for c in parts)
    except ValueError:
        raise CorruptModel(reader.offset, "class counts must be integers")
    if any(c < 0 for c in counts) or sum(counts) == 0:
        raise CorruptModel(reader.offset, "class counts must be >= 0, not all zero")
    return counts


def _read_tree(reader: _LineReader) -> TreeNode:
    """Reconstruct one tree from its preorder node lines.

    Subtree sizes come from a backward scan (each L closes one subtree,
    each I merges the two most recent), then children resolve by index:
    left = i + 1, right = i + 1 + size(left).
    """
    raw: list[tuple] = []
    opens = 0
    leaves = 0
    while True:
        line = reader.next("a node line or 'tree'/'end'")
        parts = line.split()
        if parts[0] == "L":
            raw.append(("L", _parse_counts(parts[1:], reader)))
            leaves += 1
        elif parts[0] == "I":
            if len(parts) != 4 + CLASS_COUNT:
                raise CorruptModel(reader.offset, "malformed internal node line")
            try:
                f = int(parts[1])
                thr = float(parts[2])
                dec = float(parts[3])
            except ValueError:
                raise CorruptModel(reader.offset, "malformed internal node line")
            if not 0 <= f < FEATURE_COUNT:
                raise CorruptModel(reader.offset, f"feature index {f} out of range")
            raw.append(("I", f, thr, dec, _parse_counts(parts[4:], reader)))
            opens += 1
        else:
            reader.i -= 1  # not a node line; caller inspects it
            break
        # A preorder encoding is complete when leaves == splits + 1.
        if leaves == opens + 1:
            break
    if not raw:
        raise CorruptModel(reader.offset, "tree with no nodes")

    sizes = [0] * len(raw)
    stack: list[int] = []
    for i in range(len(raw) - 1, -1, -1):
        if raw[i][0] == "L":
            sizes[i] = 1
        else:
            if len(stack) < 2:
                raise CorruptModel(reader.offset, "truncated tree structure")
            s_left = stack.pop()
            s_right = stack.pop()
            sizes[i] = 1 + s_left + s_right
        stack.append(sizes[i])
    if len(stack) != 1 or sizes[0] != len(raw):
        raise CorruptModel(reader.offset, "inconsistent tree structure")

    built: list[TreeNode | None] = [None] * len(raw)
    for i in range(len(raw) - 1, -1, -1):
        rec = raw[i]
        try:
            if rec[0] == "L":
                built[i] = TreeNode(rec[1])
            else:
                li = i + 1
                ri = i + 1 + sizes[li]
                built[i] = TreeNode(
                    rec[4], feature=rec[1], threshold=rec[2],
                    decrease=rec[3], left=built[li], right=built[ri],
                )
        except (EmptyNode, ValueError) as err:
            raise CorruptModel(reader.offset, f"invalid node: {err}")
    root = built[0]
    assert root is not None
    return root


def load_model(stream: TextIO) -> RandomForest:
    """Read a model file; raises VersionMismatch or CorruptModel."""
    reader = _LineReader(stream.read())

    line = reader.next("header")
    parts = line.split()
    if len(parts) != 2 or parts[0] != MODEL_MAGIC:
        raise CorruptModel(0, f"not a {MODEL_MAGIC} file")
    if parts[1] != str(MODEL_VERSION):
        raise VersionMismatch(parts[1])

    line = reader.next("features line")
    if not line.startswith("features "):
        raise CorruptModel(reader.offset, "expected features line")
    if tuple(line[len("features "):].split(",")) != FEATURE_NAMES:
        raise CorruptModel(
            reader.offset, "model was built for a different feature set"
        )

    line = reader.next("classes line")
    if not line.startswith("classes "):
        raise CorruptModel(reader.offset, "expected classes line")
    if tuple(line[len("classes "):].split(",")) != CLASS_NAMES:
        raise CorruptModel(reader.offset, "model was built for different classes")

    line = reader.next("params line")
    if not line.startswith("params "):
        raise CorruptModel(reader.offset, "expected params line")
    kv: dict[str, str] = {}
    for item in line[len("params "):].split():
        key, sep, value = item.partition("=")
        if not sep:
            raise CorruptModel(reader.offset, f"malformed params entry {item!r}")
        kv[key] = value
    expected = {"n_trees", "bootstrap", "features_per_split", "max_depth",
                "min_samples_split", "min_samples_leaf", "seed"}
    if set(kv) != expected:
        raise CorruptModel(reader.offset, "params line has wrong keys")
    try:
        fps: int | str = kv["features_per_split"]
        if fps != "all":
            fps = int(fps)
        params = ForestParams(
            n_trees=int(kv["n_trees"]),
            bootstrap={"true": True, "false": False}[kv["bootstrap"]],
            tree=TreeParams(
                max_depth=None if kv["max_depth"] == "none" else int(kv["max_depth"]),
                min_samples_split=int(kv["min_samples_split"]),
                min_samples_leaf=int(kv["min_samples_leaf"]),
                features_per_split=fps,
            ),
        )
        seed = int(kv["seed"])
    except (KeyError, ValueError) as err:
        raise CorruptModel(reader.offset, f"bad params line: {err}")

    trees: list[TreeNode] = []
    for t in range(params.n_trees):
        line = reader.next(f"'tree {t}'")
        if line != f"tree {t}":
            raise CorruptModel(reader.offset, f"expected 'tree {t}', got {line!r}")
        trees.append(_read_tree(reader))

    line = reader.next("'end'")
    if line != "end":
        raise CorruptModel(reader.offset, f"expected 'end', got {line!r}")
    while reader.i < len(reader.lines):
        if reader.lines[reader.i]:
            raise CorruptModel(
                reader.offsets[reader.i], "trailing content after 'end'"
            )
        reader.i += 1

    return RandomForest(tuple(trees), params, seed)
