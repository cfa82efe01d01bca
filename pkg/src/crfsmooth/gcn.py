"""Two-layer GCN classifier with hand-derived gradients and Adam training.

The model is ``row_softmax(A_hat @ relu(A_hat @ X @ w1) @ w2)`` where
``A_hat`` is the symmetric renormalized adjacency with self-loops. Gradients
for ``w1``, ``w2`` and the node features (needed by the PGD attack) are
computed by reverse accumulation; a finite-difference oracle in the test
suite pins them down.

Everything here is pure and deterministic: training is a function of
``(graph, splits, config)``, and ``forward`` can be called concurrently.
"""

from __future__ import annotations

import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graphs import DatasetSplits, Graph, normalized_adjacency_csr
from .kernels import spmm

SYM_NORMALIZATION = "sym-selfloop"


@dataclass(frozen=True)
class GcnParameters:
    """Weights of the two-layer GCN; w1 is (D, H), w2 is (H, C)."""

    w1: np.ndarray
    w2: np.ndarray
    normalization: str = SYM_NORMALIZATION

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        if w1.ndim != 2 or w2.ndim != 2 or w1.shape[1] != w2.shape[0]:
            raise ValidationError(f"inconsistent weight shapes {w1.shape} / {w2.shape}")
        if not (np.isfinite(w1).all() and np.isfinite(w2).all()):
            raise ValidationError("non-finite weight")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def in_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.w2.shape[1])


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 300
    learning_rate: float = 0.01
    hidden_dim: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if self.hidden_dim < 1:
            raise ValidationError("hidden_dim must be >= 1")


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam moments for (w1, w2)."""

    m_w1: np.ndarray
    v_w1: np.ndarray
    m_w2: np.ndarray
    v_w2: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: GcnParameters) -> "AdamState":
        return cls(np.zeros_like(params.w1), np.zeros_like(params.w1),
                   np.zeros_like(params.w2), np.zeros_like(params.w2), 0)


# Normalized adjacency in CSR form, cached per graph structure. Feature-space
# smoothing reuses one structure across every model call, so this hit rate
# matters; structural sampling churns through the LRU harmlessly.
_ADJ_CACHE: OrderedDict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = OrderedDict()
_ADJ_CACHE_MAX = 128
_ADJ_LOCK = threading.Lock()


def _adjacency(graph: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    key = graph.structure_digest
    with _ADJ_LOCK:
        if key in _ADJ_CACHE:
            _ADJ_CACHE.move_to_end(key)
            return _ADJ_CACHE[key]
    csr = normalized_adjacency_csr(graph)
    with _ADJ_LOCK:
        _ADJ_CACHE[key] = csr
        if len(_ADJ_CACHE) > _ADJ_CACHE_MAX:
            _ADJ_CACHE.popitem(last=False)
    return csr


def init_parameters(seed: int, in_dim: int, hidden_dim: int, out_dim: int) -> GcnParameters:
    """Glorot-uniform weights, deterministic in the seed."""
    if min(in_dim, hidden_dim, out_dim) < 1:
        raise ValidationError("all dimensions must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    b1 = math.sqrt(6.0 / (in_dim + hidden_dim))
    b2 = math.sqrt(6.0 / (hidden_dim + out_dim))
    w1 = rng.uniform(-b1, b1, size=(in_dim, hidden_dim))
    w2 = rng.uniform(-b2, b2, size=(hidden_dim, out_dim))
    return GcnParameters(w1, w2)


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_shapes(params: GcnParameters, graph: Graph) -> None:
    if graph.feature_dim != params.in_dim:
        raise ValidationError(
            f"feature dim {graph.feature_dim} does not match model input dim {params.in_dim}")


def forward(params: GcnParameters, graph: Graph) -> np.ndarray:
    """Row-stochastic (n, C) class-probability matrix."""
    _check_shapes(params, graph)
    indptr, indices, weights = _adjacency(graph)
    hidden = np.maximum(spmm(indptr, indices, weights, graph.features @ params.w1), 0.0)
    logits = spmm(indptr, indices, weights, hidden @ params.w2)
    return _row_softmax(logits)


predict = forward


def loss_and_gradients(params: GcnParameters, graph: Graph, node_idx: np.ndarray,
                       ) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Mean cross-entropy over node_idx and its gradients (w1, w2, X).

    grad_X is the gradient with respect to the raw node features; the PGD
    feature attack ascends it.
    """
    node_idx = np.asarray(node_idx, dtype=np.int64).reshape(-1)
    if node_idx.size == 0:
        raise ValidationError("node_idx must be non-empty")
    _check_shapes(params, graph)
    indptr, indices, weights = _adjacency(graph)
    x = graph.features

    u = x @ params.w1
    s = spmm(indptr, indices, weights, u)
    hidden = np.maximum(s, 0.0)
    v = hidden @ params.w2
    logits = spmm(indptr, indices, weights, v)
    probs = _row_softmax(logits)

    y = graph.labels[node_idx]
    p_true = probs[node_idx, y]
    loss = float(-np.mean(np.log(np.maximum(p_true, 1e-300))))

    dlogits = np.zeros_like(probs)
    dlogits[node_idx] = probs[node_idx]
    dlogits[node_idx, y] -= 1.0
    dlogits /= node_idx.size

    dv = spmm(indptr, indices, weights, dlogits)  # A_hat is symmetric
    grad_w2 = hidden.T @ dv
    dhidden = dv @ params.w2.T
    ds = dhidden * (s > 0.0)
    du = spmm(indptr, indices, weights, ds)
    grad_w1 = x.T @ du
    grad_x = du @ params.w1.T
    return loss, grad_w1, grad_w2, grad_x


def adam_step(state: AdamState, params: GcnParameters,
              grads: tuple[np.ndarray, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              ) -> tuple[AdamState, GcnParameters]:
    """One bias-corrected Adam update; pure, returns new state and parameters."""
    g1, g2 = grads
    if not (np.isfinite(g1).all() and np.isfinite(g2).all()):
        raise ValidationError("diverged: non-finite gradient")
    t = state.step + 1
    new = []
    for w, m, v, g in ((params.w1, state.m_w1, state.v_w1, g1),
                       (params.w2, state.m_w2, state.v_w2, g2)):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        w = w - lr * m_hat / (np.sqrt(v_hat) + eps)
        new.append((w, m, v))
    (w1, m1, v1), (w2, m2, v2) = new
    return (AdamState(m1, v1, m2, v2, t),
            GcnParameters(w1, w2, normalization=params.normalization))


def _accuracy(probs: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    return float(np.mean(probs[idx].argmax(axis=1) == labels[idx]))


def train(graph: Graph, splits: DatasetSplits, config: TrainingConfig) -> GcnParameters:
    """Full-batch Adam on train cross-entropy; returns the best-validation epoch.

    Validation ties go to the later epoch. Raises on non-finite loss.
    """
    splits.validate_for(graph.num_nodes)
    params = init_parameters(config.seed, graph.feature_dim, config.hidden_dim,
                             graph.num_classes)
    state = AdamState.zeros_like(params)
    val_idx = splits.val_idx if splits.val_idx.size else splits.train_idx

    best_params = params
    best_val = -1.0
    for _ in range(config.epochs):
        loss, g1, g2, _ = loss_and_gradients(params, graph, splits.train_idx)
        if not math.isfinite(loss):
            raise ValidationError("diverged: non-finite loss")
        state, params = adam_step(state, params, (g1, g2), config.learning_rate,
                                  config.beta1, config.beta2, config.eps)
        val_acc = _accuracy(forward(params, graph), graph.labels, val_idx)
        if val_acc >= best_val:
            best_val = val_acc
            best_params = params
    return best_params


def save_checkpoint(params: GcnParameters, path: str | Path) -> None:
    """JSON weight dump; floats round-trip bit-exactly (shortest-repr decimals)."""
    obj = {"meta": {"D": params.in_dim, "H": params.hidden_dim, "C": params.out_dim},
           "w1": params.w1.tolist(), "w2": params.w2.tolist()}
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> GcnParameters:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"corrupt checkpoint {path}: {exc}") from exc
    try:
        meta = obj["meta"]
        w1 = np.array(obj["w1"], dtype=np.float64)
        w2 = np.array(obj["w2"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"corrupt checkpoint {path}: {exc}") from exc
    if w1.shape != (meta.get("D"), meta.get("H")) or w2.shape != (meta.get("H"), meta.get("C")):
        raise ValidationError(f"checkpoint {path}: weight shapes disagree with meta")
    return GcnParameters(w1, w2)
