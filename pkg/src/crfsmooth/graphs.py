"""Graph data model, dataset directory format, synthetic data, Hamming distance.

A graph is an undirected, unweighted, simple graph over ``n`` nodes with a
dense real feature matrix and one class label per node. The adjacency is
stored as a sorted edge set (pairs ``i < j``); the dense normalized matrix is
materialized only inside :func:`normalize_adjacency` and the GCN engine.

Dataset directory layout::

    meta.json      {"num_nodes": n, "num_features": D, "num_classes": C}
    edges.csv      one "src,dst" pair per line, 0-indexed, no header
    features.csv   n rows of D comma-separated decimals
    labels.csv     n rows of one integer
    splits.json    {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, ValidationError

_DATASET_FILES = ("meta.json", "edges.csv", "features.csv", "labels.csv", "splits.json")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with node features and labels.

    Attributes
    ----------
    num_nodes : int
        Node count n.
    edges : np.ndarray
        Sorted (m, 2) int64 array of undirected edges with i < j. Symmetry
        and an empty diagonal are implied by this representation.
    features : np.ndarray
        Dense (n, D) float64 feature matrix, all entries finite.
    labels : np.ndarray
        (n,) int64 class indices in {0..num_classes-1}.
    num_classes : int
        Class count C.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.num_nodes
        if n < 0:
            raise ValidationError("num_nodes must be >= 0")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be >= 1")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ValidationError(f"features must have {n} rows, got shape {feats.shape}")
        if labels.shape[0] != n:
            raise ValidationError(f"labels must have {n} entries, got {labels.shape[0]}")
        if not np.isfinite(feats).all():
            raise ValidationError("features contain non-finite entries")
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValidationError("label out of range")
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValidationError("edge endpoint out of range")
            if (edges[:, 0] >= edges[:, 1]).any():
                raise ValidationError("edges must satisfy i < j (no self-loops)")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            if (np.diff(_encode_pairs(edges, n)) == 0).any():
                raise ValidationError("duplicate edge")
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @cached_property
    def structure_digest(self) -> str:
        """Content hash of (n, edge set); keys the normalized-adjacency cache."""
        h = hashlib.sha256()
        h.update(str(self.num_nodes).encode())
        h.update(self.edges.tobytes())
        return h.hexdigest()

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        if self.num_edges:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def with_features(self, features: np.ndarray) -> "Graph":
        """Same structure and labels, new feature matrix."""
        return Graph(self.num_nodes, self.edges, features, self.labels, self.num_classes)

    def with_edges(self, edges: np.ndarray) -> "Graph":
        """Same features and labels, new edge set."""
        return Graph(self.num_nodes, edges, self.features, self.labels, self.num_classes)


@dataclass(frozen=True)
class DatasetSplits:
    """Disjoint train/val/test node index lists."""

    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        for name in ("train_idx", "val_idx", "test_idx"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            object.__setattr__(self, name, _frozen(arr))
        if self.train_idx.size == 0:
            raise ValidationError("train_idx must be non-empty")
        allidx = np.concatenate([self.train_idx, self.val_idx, self.test_idx])
        if allidx.size and allidx.min() < 0:
            raise ValidationError("split index out of range")
        if np.unique(allidx).size != allidx.size:
            raise ValidationError("splits are not pairwise disjoint")

    def validate_for(self, num_nodes: int) -> None:
        for name in ("train_idx", "val_idx", "test_idx"):
            arr = getattr(self, name)
            if arr.size and arr.max() >= num_nodes:
                raise ValidationError(f"{name} contains index >= num_nodes")


def _encode_pairs(pairs: np.ndarray, n: int) -> np.ndarray:
    """Map (i, j) with i < j to unique int64 keys i*n + j, sorted order preserved."""
    return pairs[:, 0] * np.int64(n) + pairs[:, 1]


def _decode_pairs(keys: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((keys.size, 2), dtype=np.int64)
    out[:, 0] = keys // n
    out[:, 1] = keys % n
    return out


def hamming_distance(a: Graph, b: Graph) -> int:
    """Number of upper-triangular adjacency positions (i <= j) where a and b differ.

    Diagonals are empty for both graphs, so the count reduces to the size of
    the symmetric difference of the two edge sets.
    """
    if a.num_nodes != b.num_nodes:
        raise ValidationError("node-count mismatch")
    n = a.num_nodes
    ka = _encode_pairs(a.edges, n)
    kb = _encode_pairs(b.edges, n)
    return int(np.setxor1d(ka, kb, assume_unique=True).size)


def normalize_adjacency(graph: Graph) -> np.ndarray:
    """Dense symmetric renormalized adjacency D^{-1/2} (A + I) D^{-1/2}.

    Self-loops are added before computing degrees, so every degree is
    positive and every entry lands in [0, 1].
    """
    n = graph.num_nodes
    a = np.zeros((n, n), dtype=np.float64)
    if graph.num_edges:
        a[graph.edges[:, 0], graph.edges[:, 1]] = 1.0
        a[graph.edges[:, 1], graph.edges[:, 0]] = 1.0
    a[np.diag_indices(n)] = 1.0
    inv_sqrt = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def normalized_adjacency_csr(graph: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSR arrays (indptr, indices, weights) of the renormalized adjacency.

    Same matrix as :func:`normalize_adjacency` without materializing n x n;
    this is what the GCN engine feeds to the spmm kernel.
    """
    n = graph.num_nodes
    e = graph.edges
    rows = np.concatenate([e[:, 0], e[:, 1], np.arange(n, dtype=np.int64)])
    cols = np.concatenate([e[:, 1], e[:, 0], np.arange(n, dtype=np.int64)])
    inv_sqrt = 1.0 / np.sqrt(graph.degrees() + 1.0)
    weights = inv_sqrt[rows] * inv_sqrt[cols]
    order = np.lexsort((cols, rows))
    rows, cols, weights = rows[order], cols[order], weights[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return indptr, cols, weights


def generate_synthetic(seed: int, num_nodes: int, num_classes: int, p_in: float,
                       p_out: float, feature_dim: int, class_shift: float,
                       ) -> tuple[Graph, DatasetSplits]:
    """Stochastic block model with class-shifted Gaussian features.

    Nodes are assigned to ``num_classes`` (near-)equal blocks; an edge joins
    two nodes with probability ``p_in`` inside a block and ``p_out`` across
    blocks. Node features are N(class_shift * e_class, I) in R^feature_dim,
    using the one-hot direction e_{class mod feature_dim}. Splits are
    10%/10%/80% train/val/test from a seeded shuffle. Fully determined by
    ``seed``.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValidationError("require 0 <= p_out <= p_in <= 1")
    if num_classes > num_nodes:
        raise ValidationError("num_classes > num_nodes")
    if feature_dim < 1:
        raise ValidationError("feature_dim must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    labels = np.sort(np.arange(num_nodes, dtype=np.int64) % num_classes)

    iu, ju = np.triu_indices(num_nodes, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < p
    edges = np.column_stack([iu[keep], ju[keep]])

    means = np.zeros((num_nodes, feature_dim))
    means[np.arange(num_nodes), labels % feature_dim] = class_shift
    features = means + rng.standard_normal((num_nodes, feature_dim))

    graph = Graph(num_nodes, edges, features, labels, num_classes)

    perm = rng.permutation(num_nodes)
    n_train = max(1, num_nodes // 10)
    n_val = max(1, num_nodes // 10)
    splits = DatasetSplits(perm[:n_train], perm[n_train:n_train + n_val],
                           perm[n_train + n_val:])
    return graph, splits


def homophily(graph: Graph) -> float:
    """Fraction of edges joining same-label endpoints."""
    if graph.num_edges == 0:
        return 0.0
    same = graph.labels[graph.edges[:, 0]] == graph.labels[graph.edges[:, 1]]
    return float(same.mean())


def _format_float(x: float) -> str:
    # repr gives the shortest decimal that round-trips the double exactly
    return repr(float(x))


def save_dataset(graph: Graph, splits: DatasetSplits, path: str | Path) -> None:
    """Write the dataset directory format. Byte-identical for identical inputs."""
    if graph.num_nodes == 0:
        raise ValidationError("empty dataset rejected")
    splits.validate_for(graph.num_nodes)
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"num_nodes": graph.num_nodes, "num_features": graph.feature_dim,
            "num_classes": graph.num_classes}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    with (out / "edges.csv").open("w") as f:
        for i, j in graph.edges:
            f.write(f"{i},{j}\n")
    with (out / "features.csv").open("w") as f:
        for row in graph.features:
            f.write(",".join(_format_float(x) for x in row) + "\n")
    with (out / "labels.csv").open("w") as f:
        for y in graph.labels:
            f.write(f"{y}\n")
    splits_obj = {"train": splits.train_idx.tolist(), "val": splits.val_idx.tolist(),
                  "test": splits.test_idx.tolist()}
    (out / "splits.json").write_text(json.dumps(splits_obj, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> tuple[Graph, DatasetSplits]:
    """Read and validate a dataset directory.

    The edge list is symmetrized: each line is canonicalized to (min, max).
    Duplicates after symmetrization (including a pair listed both ways) and
    self-loops are rejected. Every malformed row is reported with its file
    and line number.
    """
    root = Path(path)
    for name in _DATASET_FILES:
        if not (root / name).exists():
            raise DatasetFormatError(f"missing file {name}", str(root))

    meta_path = root / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON: {exc}", str(meta_path)) from exc
    for key in ("num_nodes", "num_features", "num_classes"):
        if not isinstance(meta.get(key), int):
            raise DatasetFormatError(f"meta.json missing integer field {key!r}", str(meta_path))
    n, dim, num_classes = meta["num_nodes"], meta["num_features"], meta["num_classes"]

    edges_path = root / "edges.csv"
    seen: dict[int, int] = {}
    pairs = []
    for lineno, raw in enumerate(edges_path.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split(",")
        try:
            src, dst = int(parts[0]), int(parts[1])
        except (ValueError, IndexError) as exc:
            raise DatasetFormatError("malformed edge row", str(edges_path), lineno) from exc
        if not (0 <= src < n and 0 <= dst < n):
            raise DatasetFormatError("edge endpoint out of range", str(edges_path), lineno)
        if src == dst:
            raise DatasetFormatError("self-loop not allowed", str(edges_path), lineno)
        i, j = (src, dst) if src < dst else (dst, src)
        key = i * n + j
        if key in seen:
            raise DatasetFormatError(
                f"duplicate edge after symmetrization (first at line {seen[key]})",
                str(edges_path), lineno)
        seen[key] = lineno
        pairs.append((i, j))
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)

    feats_path = root / "features.csv"
    rows = []
    for lineno, raw in enumerate(feats_path.read_text().splitlines(), start=1):
        parts = raw.split(",")
        if len(parts) != dim:
            raise DatasetFormatError(f"expected {dim} features, got {len(parts)}",
                                     str(feats_path), lineno)
        try:
            row = [float(v) for v in parts]
        except ValueError as exc:
            raise DatasetFormatError("malformed feature value", str(feats_path), lineno) from exc
        if not all(np.isfinite(row)):
            raise DatasetFormatError("non-finite feature", str(feats_path), lineno)
        rows.append(row)
    if len(rows) != n:
        raise DatasetFormatError(f"expected {n} feature rows, got {len(rows)}", str(feats_path))
    features = np.array(rows, dtype=np.float64).reshape(n, dim)

    labels_path = root / "labels.csv"
    labels = []
    for lineno, raw in enumerate(labels_path.read_text().splitlines(), start=1):
        try:
            y = int(raw.strip())
        except ValueError as exc:
            raise DatasetFormatError("malformed label", str(labels_path), lineno) from exc
        if not (0 <= y < num_classes):
            raise DatasetFormatError("label out of range", str(labels_path), lineno)
        labels.append(y)
    if len(labels) != n:
        raise DatasetFormatError(f"expected {n} labels, got {len(labels)}", str(labels_path))

    splits_path = root / "splits.json"
    try:
        splits_obj = json.loads(splits_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"invalid JSON: {exc}", str(splits_path)) from exc
    for key in ("train", "val", "test"):
        if not isinstance(splits_obj.get(key), list):
            raise DatasetFormatError(f"splits.json missing list field {key!r}", str(splits_path))
    try:
        splits = DatasetSplits(np.array(splits_obj["train"], dtype=np.int64),
                               np.array(splits_obj["val"], dtype=np.int64),
                               np.array(splits_obj["test"], dtype=np.int64))
        splits.validate_for(n)
        graph = Graph(n, edges, features, np.array(labels, dtype=np.int64), num_classes)
    except ValidationError as exc:
        raise DatasetFormatError(str(exc), str(root)) from exc
    return graph, splits
