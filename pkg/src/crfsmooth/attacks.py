"""Adversarial input generation: Gaussian feature noise, PGD on features,
and the DICE structural attack (delete intra-class, insert inter-class edges).

All attacks are evasion attacks: they perturb the input graph, never the
model. Each is a pure function of (inputs, seed) and preserves node count,
feature dimensionality, labels, adjacency symmetry, and the empty diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gcn import GcnParameters, loss_and_gradients
from .graphs import Graph, _decode_pairs, _encode_pairs


@dataclass(frozen=True)
class GaussianNoise:
    """X + psi * Z with Z iid standard normal."""

    psi: float

    def __post_init__(self):
        if self.psi < 0:
            raise ValidationError("psi must be >= 0")


@dataclass(frozen=True)
class PgdFeature:
    """Sign-gradient ascent on the target cross-entropy inside an Linf ball
    of radius rate * (max(X) - min(X))."""

    rate: float
    steps: int = 40

    def __post_init__(self):
        if not (0.0 <= self.rate <= 1.0):
            raise ValidationError("rate must be in [0, 1]")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")


@dataclass(frozen=True)
class DiceStructure:
    """Flip floor(rate * m) edges: delete same-label, insert different-label."""

    rate: float

    def __post_init__(self):
        if not (0.0 <= self.rate <= 1.0):
            raise ValidationError("rate must be in [0, 1]")


AttackKind = GaussianNoise | PgdFeature | DiceStructure


@dataclass(frozen=True)
class AttackBudget:
    kind: AttackKind
    seed: int = 0

    @classmethod
    def from_json(cls, obj: dict) -> "AttackBudget":
        obj = dict(obj)
        kind_name = obj.pop("kind", None)
        seed = int(obj.pop("seed", 0))
        try:
            if kind_name == "gaussian":
                kind = GaussianNoise(psi=float(obj.pop("psi")))
            elif kind_name == "pgd":
                kind = PgdFeature(rate=float(obj.pop("rate")), steps=int(obj.pop("steps", 40)))
            elif kind_name == "dice":
                kind = DiceStructure(rate=float(obj.pop("rate")))
            else:
                raise ValidationError(
                    f"kind must be one of ['gaussian', 'pgd', 'dice'], got {kind_name!r}")
        except KeyError as exc:
            raise ValidationError(f"attack budget missing field {exc}") from exc
        if obj:
            raise ValidationError(f"unknown attack budget fields {sorted(obj)}")
        return cls(kind=kind, seed=seed)

    def to_json(self) -> dict:
        k = self.kind
        if isinstance(k, GaussianNoise):
            return {"kind": "gaussian", "psi": k.psi, "seed": self.seed}
        if isinstance(k, PgdFeature):
            return {"kind": "pgd", "rate": k.rate, "steps": k.steps, "seed": self.seed}
        return {"kind": "dice", "rate": k.rate, "seed": self.seed}

    def with_seed(self, seed: int) -> "AttackBudget":
        return AttackBudget(self.kind, seed)


@dataclass(frozen=True)
class AttackResult:
    perturbed: Graph
    summary: dict


def gaussian_feature_attack(rng: np.random.Generator, graph: Graph,
                            psi: float) -> AttackResult:
    if psi < 0:
        raise ValidationError("psi must be >= 0")
    noise = psi * rng.standard_normal(graph.features.shape)
    perturbed = graph.with_features(graph.features + noise)
    return AttackResult(perturbed, {
        "feature_linf": float(np.abs(noise).max()) if noise.size else 0.0,
        "feature_l2": float(np.linalg.norm(noise)),
    })


def pgd_feature_attack(graph: Graph, params: GcnParameters, rate: float, steps: int,
                       target_idx: np.ndarray, seed: int = 0) -> AttackResult:
    """Iterated sign-gradient ascent on the mean cross-entropy over target_idx.

    Step size 2.5 * eps / steps, projected onto the Linf ball of radius
    eps = rate * (max(X) - min(X)) after every step. The ascent starts at X
    and is deterministic; ``seed`` only tags the result for provenance.
    """
    if not (0.0 <= rate <= 1.0):
        raise ValidationError("rate must be in [0, 1]")
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    x0 = graph.features
    eps = rate * float(x0.max() - x0.min()) if x0.size else 0.0
    if steps == 0 or eps == 0.0:
        return AttackResult(graph, {"feature_linf": 0.0, "feature_l2": 0.0, "epsilon": eps})
    alpha = 2.5 * eps / steps
    x = x0.copy()
    for _ in range(steps):
        _, _, _, grad_x = loss_and_gradients(params, graph.with_features(x), target_idx)
        if not np.isfinite(grad_x).all():
            raise ValidationError("non-finite gradient in PGD")
        x = x + alpha * np.sign(grad_x)
        x = x0 + np.clip(x - x0, -eps, eps)
    delta = x - x0
    return AttackResult(graph.with_features(x), {
        "feature_linf": float(np.abs(delta).max()),
        "feature_l2": float(np.linalg.norm(delta)),
        "epsilon": eps,
    })


def dice_structural_attack(rng: np.random.Generator, graph: Graph,
                           rate: float) -> AttackResult:
    """Flip exactly floor(rate * m) adjacency positions, black-box style.

    The budget splits into ceil(b/2) deletions of same-label edges and
    floor(b/2) insertions of different-label non-edges, both uniform without
    replacement; when one pool runs short the remainder moves to the other.
    Needs labels, never the model.
    """
    if not (0.0 <= rate <= 1.0):
        raise ValidationError("rate must be in [0, 1]")
    n = graph.num_nodes
    labels = graph.labels
    budget = int(math.floor(rate * graph.num_edges))
    if budget == 0:
        return AttackResult(graph, {"edges_deleted": 0, "edges_inserted": 0, "budget": 0})

    intra_mask = labels[graph.edges[:, 0]] == labels[graph.edges[:, 1]]
    intra_edges = graph.edges[intra_mask]
    class_sizes = np.bincount(labels, minlength=graph.num_classes)
    diff_pairs = (n * n - int(np.sum(class_sizes.astype(np.int64) ** 2))) // 2
    inter_edge_count = graph.num_edges - int(intra_edges.shape[0])
    insert_pool = diff_pairs - inter_edge_count

    num_delete = math.ceil(budget / 2)
    num_insert = budget - num_delete
    if intra_edges.shape[0] < num_delete:
        num_delete = int(intra_edges.shape[0])
        num_insert = budget - num_delete
    if insert_pool < num_insert:
        num_insert = insert_pool
        num_delete = budget - num_insert
    if num_delete > intra_edges.shape[0]:
        raise ValidationError("budget exceeds available modifications of both types")

    delete_rows = rng.choice(intra_edges.shape[0], size=num_delete, replace=False) \
        if num_delete else np.empty(0, dtype=np.int64)
    deleted = intra_edges[np.sort(delete_rows)]

    existing = set(_encode_pairs(graph.edges, n).tolist())
    inserted_keys: list[int] = []
    chosen: set[int] = set()
    attempts = 0
    max_attempts = 200 * max(num_insert, 1)
    while len(inserted_keys) < num_insert and attempts < max_attempts:
        attempts += 1
        u, v = int(rng.integers(0, n)), int(rng.integers(0, n))
        if u == v or labels[u] == labels[v]:
            continue
        i, j = (u, v) if u < v else (v, u)
        key = i * n + j
        if key in existing or key in chosen:
            continue
        chosen.add(key)
        inserted_keys.append(key)
    if len(inserted_keys) < num_insert:
        # rejection stalled (tiny pool): enumerate the remaining candidates
        iu, ju = np.triu_indices(n, k=1)
        cand = iu * np.int64(n) + ju
        ok = (labels[iu] != labels[ju]) & ~np.isin(cand, np.fromiter(
            existing | chosen, dtype=np.int64, count=len(existing) + len(chosen)))
        remaining = cand[ok]
        extra = rng.choice(remaining.size, size=num_insert - len(inserted_keys),
                           replace=False)
        inserted_keys.extend(int(k) for k in remaining[extra])

    delete_keys = _encode_pairs(deleted, n)
    new_keys = np.setdiff1d(_encode_pairs(graph.edges, n), delete_keys, assume_unique=True)
    new_keys = np.union1d(new_keys, np.array(sorted(inserted_keys), dtype=np.int64))
    perturbed = graph.with_edges(_decode_pairs(new_keys, n))
    return AttackResult(perturbed, {
        "edges_deleted": int(num_delete),
        "edges_inserted": int(num_insert),
        "budget": budget,
    })


def run_attack(budget: AttackBudget, graph: Graph,
               params: GcnParameters | None = None,
               target_idx: np.ndarray | None = None) -> AttackResult:
    """Dispatch on the budget kind; PGD additionally needs a model and targets."""
    kind = budget.kind
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(budget.seed)))
    if isinstance(kind, GaussianNoise):
        return gaussian_feature_attack(rng, graph, kind.psi)
    if isinstance(kind, PgdFeature):
        if params is None or target_idx is None:
            raise ValidationError("pgd attack requires a trained checkpoint and target nodes")
        return pgd_feature_attack(graph, params, kind.rate, kind.steps, target_idx,
                                  seed=budget.seed)
    return dice_structural_attack(rng, graph, kind.rate)
