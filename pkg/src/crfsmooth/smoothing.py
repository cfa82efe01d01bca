"""Mean-field smoothing of model predictions over sampled input neighborhoods.

The smoothed prediction for an input ``a`` is a convex combination of the
model's own output ``Y_a`` and the smoothed outputs of ``L`` sampled
neighbors ``b`` weighted by input similarities ``g_ab``:

    Y'_a = (sigma * Y_a + (1 - sigma) * sum_b g_ab * Y'_b)
           / (sigma + (1 - sigma) * sum_b g_ab)

Applied for ``K`` rounds of coordinate ascent, realized as a depth-K
resampling tree: each tree node draws fresh neighbors and recurses, for
(L^(K+1) - 1) / (L - 1) model calls in total. ``sigma = 0`` with ``K = 1``
and unit weights reduces to plain randomized smoothing (input-noise
averaging); ``sigma = 1`` returns the model output untouched.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ValidationError
from .graphs import Graph
from .sampling import (
    FeatureSampleConfig,
    NeighborSample,
    StructuralSampleConfig,
    branch_generator,
    cosine_similarity,
    prior_similarity,
    sample_feature_neighbor,
    sample_structural_neighbor,
)

__all__ = [
    "SimilarityMode", "CrfConfig", "SmoothingDiagnostics", "cosine_similarity",
    "prior_similarity", "update_rule", "smooth_predictions", "model_call_count",
]

ModelFn = Callable[[Graph], np.ndarray]


class SimilarityMode(Enum):
    """How neighbor weights g_ab are computed.

    COSINE pairs with feature-ball sampling, PRIOR (the binomial shell
    weight) with structural sampling, UNIFORM (g identically 1) with either.
    """

    COSINE = "cosine"
    PRIOR = "prior"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class CrfConfig:
    """Everything one smoothing run needs.

    ``structural`` / ``feature`` select the sampler; COSINE requires the
    feature config, PRIOR the structural config, UNIFORM exactly one of the
    two.
    """

    sigma: float
    num_samples: int
    num_iterations: int
    mode: SimilarityMode
    structural: StructuralSampleConfig | None = None
    feature: FeatureSampleConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.sigma <= 1.0):
            raise ValidationError("sigma must be in [0, 1]")
        if self.num_samples < 1:
            raise ValidationError("num_samples must be >= 1")
        if self.num_iterations < 0:
            raise ValidationError("num_iterations must be >= 0")
        if self.sigma == 0.0 and self.num_iterations < 1:
            raise ValidationError("sigma = 0 requires num_iterations >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.mode is SimilarityMode.COSINE and self.feature is None:
            raise ValidationError("cosine mode requires a feature sampling config")
        if self.mode is SimilarityMode.PRIOR and self.structural is None:
            raise ValidationError("prior mode requires a structural sampling config")
        if self.mode is SimilarityMode.UNIFORM and \
                (self.structural is None) == (self.feature is None):
            raise ValidationError("uniform mode requires exactly one sampling config")

    @classmethod
    def from_json(cls, obj: dict | str | Path) -> "CrfConfig":
        """Parse the config schema; the "randomized-smoothing" preset expands
        to sigma=0, one iteration, uniform weights."""
        if not isinstance(obj, dict):
            path = Path(obj)
            try:
                obj = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON in {path}: {exc}") from exc
        obj = dict(obj)
        if obj.pop("preset", None) == "randomized-smoothing":
            obj.setdefault("sigma", 0.0)
            obj.setdefault("num_iterations", 1)
            obj.setdefault("mode", "uniform")
        known = {"sigma", "num_samples", "num_iterations", "mode", "p_r",
                 "feature_radius", "seed"}
        for key in obj:
            if key not in known:
                raise ValidationError(f"unknown crf config field {key!r}")
        try:
            mode = SimilarityMode(obj.get("mode", ""))
        except ValueError:
            raise ValidationError(
                f"mode must be one of {[m.value for m in SimilarityMode]}, "
                f"got {obj.get('mode')!r}") from None
        for field in ("sigma", "num_samples", "num_iterations"):
            if field not in obj:
                raise ValidationError(f"crf config missing field {field!r}")
        structural = StructuralSampleConfig(obj["p_r"]) if "p_r" in obj else None
        feature = FeatureSampleConfig(obj["feature_radius"]) if "feature_radius" in obj else None
        return cls(sigma=float(obj["sigma"]), num_samples=int(obj["num_samples"]),
                   num_iterations=int(obj["num_iterations"]), mode=mode,
                   structural=structural, feature=feature, seed=int(obj.get("seed", 0)))

    def to_json(self) -> dict:
        out = {"sigma": self.sigma, "num_samples": self.num_samples,
               "num_iterations": self.num_iterations, "mode": self.mode.value,
               "seed": self.seed}
        if self.structural is not None:
            out["p_r"] = self.structural.p_r
        if self.feature is not None:
            out["feature_radius"] = self.feature.radius
        return out

    def with_seed(self, seed: int) -> "CrfConfig":
        return replace(self, seed=seed)


@dataclass
class SmoothingDiagnostics:
    """Optional per-run capture: raw (unclamped) similarities and call count."""

    raw_similarities: list[float]
    model_calls: int = 0

    @classmethod
    def empty(cls) -> "SmoothingDiagnostics":
        return cls(raw_similarities=[])


def update_rule(sigma: float, base: np.ndarray, neighbor_weights: list[float],
                neighbor_predictions: list[np.ndarray]) -> np.ndarray:
    """One mean-field coordinate update.

    (sigma * base + (1-sigma) * sum_i g_i * pred_i)
        / (sigma + (1-sigma) * sum_i g_i)

    A convex combination row by row, so row-stochastic inputs give a
    row-stochastic output. sigma = 1 reproduces ``base`` bit-exactly.
    """
    if len(neighbor_weights) != len(neighbor_predictions):
        raise ValidationError("weights and predictions must have equal length")
    base = np.asarray(base, dtype=np.float64)
    weight_sum = 0.0
    acc = np.zeros_like(base)
    for g, pred in zip(neighbor_weights, neighbor_predictions):
        if not (math.isfinite(g) and g >= 0.0):
            raise ValidationError("neighbor weights must be finite and >= 0")
        pred = np.asarray(pred, dtype=np.float64)
        if pred.shape != base.shape:
            raise ValidationError("neighbor prediction shape mismatch")
        acc += g * pred
        weight_sum += g
    denom = sigma + (1.0 - sigma) * weight_sum
    if denom <= 0.0:
        raise ValidationError("degenerate weights: sigma and all similarities are 0")
    return (sigma * base + (1.0 - sigma) * acc) / denom


def model_call_count(num_samples: int, num_iterations: int) -> int:
    """Exact model invocations of the depth-K tree: (L^(K+1) - 1) / (L - 1)."""
    if num_samples < 1:
        raise ValidationError("num_samples must be >= 1")
    if num_iterations < 0:
        raise ValidationError("num_iterations must be >= 0")
    if num_samples == 1:
        count = num_iterations + 1
    else:
        count = (num_samples ** (num_iterations + 1) - 1) // (num_samples - 1)
    if count > 2 ** 62:
        raise OverflowError(f"model call count {count} exceeds 2^62")
    return count


def smooth_predictions(model: ModelFn, graph: Graph, config: CrfConfig,
                       max_workers: int = 1,
                       diagnostics: SmoothingDiagnostics | None = None) -> np.ndarray:
    """Depth-K sampled coordinate ascent around ``graph``.

    Each recursion level draws ``num_samples`` fresh neighbors per node,
    computes their smoothed predictions one level shallower, and combines
    them with the node's own model output through :func:`update_rule`.
    Deterministic in ``config.seed``: every branch derives its generator
    from (seed, path). ``max_workers > 1`` evaluates the top-level branches
    in a thread pool; the model must be pure.
    """
    model_call_count(config.num_samples, config.num_iterations)  # overflow guard
    structural_radius = None
    if _sampler_is_structural(config):
        structural_radius = config.structural.radius_for(graph.num_edges)

    def draw(rng: np.random.Generator, g: Graph) -> NeighborSample:
        if structural_radius is not None:
            return sample_structural_neighbor(rng, g, config.structural,
                                              radius=structural_radius)
        return sample_feature_neighbor(rng, g, config.feature)

    def branch(g: Graph, depth: int, path: tuple[int, ...]) -> tuple[float, np.ndarray]:
        sample = draw(branch_generator(config.seed, path), g)
        if diagnostics is not None:
            raw = sample.similarity
            if config.mode is SimilarityMode.COSINE:
                # samples carry the clamped weight; keep the signed cosine too
                raw = cosine_similarity(g.features, sample.graph.features)
            diagnostics.raw_similarities.append(raw)
        weight = 1.0 if config.mode is SimilarityMode.UNIFORM else sample.similarity
        return weight, recurse(sample.graph, depth - 1, path)

    def recurse(g: Graph, depth: int, path: tuple[int, ...]) -> np.ndarray:
        base = model(g)
        if diagnostics is not None:
            diagnostics.model_calls += 1
        if depth == 0:
            return base
        indices = range(config.num_samples)
        if not path and max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                results = list(pool.map(lambda i: branch(g, depth, (i,)), indices))
        else:
            results = [branch(g, depth, path + (i,)) for i in indices]
        weights = [w for w, _ in results]
        preds = [p for _, p in results]
        return update_rule(config.sigma, base, weights, preds)

    return recurse(graph, config.num_iterations, ())


def _sampler_is_structural(config: CrfConfig) -> bool:
    if config.mode is SimilarityMode.PRIOR:
        return True
    if config.mode is SimilarityMode.COSINE:
        return False
    return config.structural is not None
