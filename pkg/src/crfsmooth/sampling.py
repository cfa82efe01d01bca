"""Random neighbors of an input inside a radius ball, plus ball-size bounds.

Structural neighbors live in the Hamming ball of radius ``r`` around the
adjacency matrix: a distance ``d`` is drawn from Binomial(r, 1/2) (stratified
over the distance shells), then ``d`` distinct off-diagonal positions are
toggled. Feature neighbors come from the uniform distribution on the L2 ball
of radius ``r`` in flattened feature space.

Also here: exact log-binomial evaluation, the entropy lower bound on the
Hamming-ball size, and an exhaustive ball-count oracle for small graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .graphs import Graph, _decode_pairs, _encode_pairs


def branch_generator(seed: int, path: tuple[int, ...] = ()) -> np.random.Generator:
    """Generator derived from (root seed, tree path); independent per branch.

    The smoother hands each recursion branch the generator for its own path,
    so sampled neighborhoods do not depend on evaluation order or worker
    count.
    """
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class StructuralSampleConfig:
    """Hamming-ball sampling with radius r = floor(p_r * num_edges)."""

    p_r: float

    def __post_init__(self):
        if not (0.0 < self.p_r <= 1.0):
            raise ValidationError("p_r must be in (0, 1]")

    def radius_for(self, num_edges: int) -> int:
        return int(math.floor(self.p_r * num_edges))


@dataclass(frozen=True)
class FeatureSampleConfig:
    """L2 ball of the given radius over the flattened feature matrix."""

    radius: float

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValidationError("feature radius must be finite and positive")


@dataclass(frozen=True)
class NeighborSample:
    """A perturbed input, its distance to the original, and its weight."""

    graph: Graph
    distance: float
    similarity: float

    def __post_init__(self):
        if not (math.isfinite(self.similarity) and self.similarity >= 0):
            raise ValidationError("similarity must be finite and >= 0")


def sample_distance(rng: np.random.Generator, r: int) -> int:
    """Draw a perturbation distance d ~ Binomial(r, 1/2), the shell weights
    p(d) = C(r, d) / 2^r of the stratified scheme."""
    if r < 0:
        raise ValidationError("radius must be >= 0")
    return int(rng.binomial(r, 0.5))


def _sample_distinct(rng: np.random.Generator, total: int, count: int) -> np.ndarray:
    """count distinct uniform draws from range(total), by rejection."""
    picked: set[int] = set()
    while len(picked) < count:
        for v in rng.integers(0, total, size=count - len(picked)):
            picked.add(int(v))
    return np.fromiter(picked, dtype=np.int64, count=count)

def _pair_offsets(n: int) -> np.ndarray:
    i = np.arange(n - 1, dtype=np.int64)
    return i * (n - 1) - i * (i - 1) // 2


def sample_structural_neighbor(rng: np.random.Generator, graph: Graph,
                               config: StructuralSampleConfig,
                               radius: int | None = None) -> NeighborSample:
    """Toggle d ~ Binomial(r, 1/2) distinct off-diagonal positions.

    The smoother resolves the radius once from the original graph and passes
    it down the recursion, so deeper samples use the same ball as the root;
    standalone calls derive it from this graph's edge count. The returned
    similarity is the shell prior C(r, d) / 2^r.
    """
    n = graph.num_nodes
    total = n * (n - 1) // 2
    r = config.radius_for(graph.num_edges) if radius is None else int(radius)
    if r > total:
        raise ValidationError(f"radius {r} exceeds {total} available off-diagonal positions")
    d = sample_distance(rng, r)
    if d == 0:
        return NeighborSample(graph, 0.0, prior_similarity(r, 0))
    flat = _sample_distinct(rng, total, d)
    offsets = _pair_offsets(n)
    i = np.searchsorted(offsets, flat, side="right") - 1
    j = flat - offsets[i] + i + 1
    flips = np.column_stack([i, j]).astype(np.int64)
    new_keys = np.setxor1d(_encode_pairs(graph.edges, n),
                           _encode_pairs(flips[np.lexsort((j, i))], n),
                           assume_unique=True)
    perturbed = graph.with_edges(_decode_pairs(new_keys, n))
    return NeighborSample(perturbed, float(d), prior_similarity(r, d))


def sample_feature_neighbor(rng: np.random.Generator, graph: Graph,
                            config: FeatureSampleConfig) -> NeighborSample:
    """Add a perturbation drawn uniformly from the L2 ball of radius r.

    Uniform direction times magnitude r * u^(1/(n*D)), the radial density of
    the uniform ball distribution. The similarity is the cosine between the
    flattened original and perturbed features, clamped to be non-negative.
    """
    n, dim = graph.features.shape
    size = n * dim
    direction = rng.standard_normal(size)
    norm = float(np.linalg.norm(direction))
    while norm == 0.0:  # measure-zero; retry keeps the draw well-defined
        direction = rng.standard_normal(size)
        norm = float(np.linalg.norm(direction))
    magnitude = config.radius * float(rng.random()) ** (1.0 / size)
    delta = (direction / norm * magnitude).reshape(n, dim)
    perturbed = graph.with_features(graph.features + delta)
    raw = cosine_similarity(graph.features, perturbed.features)
    return NeighborSample(perturbed, float(np.linalg.norm(delta)), max(raw, 0.0))


def cosine_similarity(x: np.ndarray, x_tilde: np.ndarray) -> float:
    """Cosine of the flattened feature matrices, clamped to [-1, 1].

    Returns 0 when either matrix is all-zero.
    """
    x = np.asarray(x, dtype=np.float64)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x.shape != x_tilde.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {x_tilde.shape}")
    na = float(np.linalg.norm(x))
    nb = float(np.linalg.norm(x_tilde))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(float(np.vdot(x, x_tilde)) / (na * nb), -1.0, 1.0))


def log_binomial_coefficient(n: int, k: int) -> float:
    """log C(n, k) via lgamma; exact to ~1e-14 relative after exponentiation."""
    if k < 0 or k > n:
        raise ValidationError(f"require 0 <= k <= n, got n={n}, k={k}")
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def prior_similarity(r: int, d: int) -> float:
    """Shell weight C(r, d) / 2^r of the stratified structural sampler.

    Evaluated in log space; underflow saturates to 0 for huge r.
    """
    if d > r:
        raise ValidationError(f"require d <= r, got d={d}, r={r}")
    log_p = log_binomial_coefficient(r, d) - r * math.log(2.0)
    try:
        return math.exp(log_p)
    except OverflowError:
        return 0.0


def binary_entropy(eps: float) -> float:
    """H(eps) in bits; 0 at the endpoints by continuity."""
    if eps <= 0.0 or eps >= 1.0:
        return 0.0
    return -eps * math.log2(eps) - (1.0 - eps) * math.log2(1.0 - eps)


def ball_lower_bound(n: int, r: int) -> float:
    """Entropy lower bound on the Hamming-ball size over n(n+1)/2 positions.

    2^(H(eps) * n(n+1)/2) / sqrt(4 n (n+1) eps (1-eps)) with
    eps = 2r / (n (n+1)). Requires eps strictly inside (0, 1).
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    eps = 2.0 * r / (n * (n + 1))
    if eps <= 0.0 or eps >= 1.0:
        raise ValidationError("degenerate epsilon")
    positions = n * (n + 1) / 2.0
    log2_bound = binary_entropy(eps) * positions \
        - 0.5 * math.log2(4.0 * n * (n + 1) * eps * (1.0 - eps))
    return 2.0 ** log2_bound


def enumerate_hamming_ball(graph: Graph, r: int) -> int:
    """Exact ball size sum_{d<=r} C(n(n+1)/2, d); guarded test oracle."""
    if r < 0:
        raise ValidationError("radius must be >= 0")
    n = graph.num_nodes
    positions = n * (n + 1) // 2
    if positions > 24:
        raise ValidationError(f"enumeration guard exceeded: n(n+1)/2 = {positions} > 24")
    return sum(math.comb(positions, d) for d in range(min(r, positions) + 1))
