"""Orchestration: train, attack, smooth, measure, aggregate over seeds.

Per repeat ``i`` the seed is ``base_seed + i`` and drives training
initialization, the attack draw, and the smoother, so the report is a pure
function of its config. Measured wall time is the one quantity that is not;
it lives in a single CSV/JSON column documented as volatile.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackBudget, PgdFeature, run_attack
from .errors import ValidationError
from .gcn import GcnParameters, TrainingConfig, forward, train
from .graphs import DatasetSplits, Graph, generate_synthetic, load_dataset
from .smoothing import CrfConfig, model_call_count, smooth_predictions

CSV_HEADER = ("seed,clean_acc_vanilla,clean_acc_smoothed,atk_acc_vanilla,"
              "atk_acc_smoothed,asr_vanilla,asr_smoothed,model_calls,smooth_wall_ms")

#: Measured wall time; excluded from byte-identity comparisons.
VOLATILE_COLUMNS = ("smooth_wall_ms",)


def accuracy(predictions: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    """Fraction of idx nodes whose argmax row matches the label.

    Ties break toward the lowest class index (argmax semantics).
    """
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise ValidationError("idx must be non-empty")
    return float(np.mean(np.argmax(predictions[idx], axis=1) == np.asarray(labels)[idx]))


def attack_success_rate(clean_pred: np.ndarray, attacked_pred: np.ndarray,
                        labels: np.ndarray, idx: np.ndarray) -> float:
    """Among idx nodes correct under clean_pred, the fraction flipped to
    wrong under attacked_pred; 0 when nothing was correct to begin with."""
    if clean_pred.shape != attacked_pred.shape:
        raise ValidationError("prediction shape mismatch")
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels)
    correct = np.argmax(clean_pred[idx], axis=1) == labels[idx]
    if not correct.any():
        return 0.0
    flipped = np.argmax(attacked_pred[idx], axis=1) != labels[idx]
    return float(np.mean(flipped[correct]))


def _recovery_fraction(clean_pred, attacked_pred, labels, idx) -> float:
    """Fraction of idx nodes wrong under clean but correct under attack."""
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels)
    wrong = np.argmax(clean_pred[idx], axis=1) != labels[idx]
    fixed = np.argmax(attacked_pred[idx], axis=1) == labels[idx]
    return float(np.mean(wrong & fixed))


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    num_nodes: int = 200
    num_classes: int = 2
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: int = 8
    class_shift: float = 1.0

    def build(self) -> tuple[Graph, DatasetSplits]:
        return generate_synthetic(self.seed, self.num_nodes, self.num_classes,
                                  self.p_in, self.p_out, self.feature_dim,
                                  self.class_shift)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str | None
    synthetic: SyntheticSpec | None
    training: TrainingConfig
    attack: AttackBudget
    crf: CrfConfig
    num_repeats: int = 10
    base_seed: int = 0
    output_path: str | None = None

    def __post_init__(self):
        if self.num_repeats < 1:
            raise ValidationError("num_repeats must be >= 1")
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ValidationError("exactly one of dataset_path / synthetic is required")

    @classmethod
    def from_json(cls, obj: dict | str | Path) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            path = Path(obj)
            try:
                obj = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"invalid JSON in {path}: {exc}") from exc
        known = {"dataset", "training", "attack", "crf", "num_repeats", "base_seed",
                 "output"}
        for key in obj:
            if key not in known:
                raise ValidationError(f"unknown experiment config field {key!r}")
        for key in ("dataset", "attack", "crf"):
            if key not in obj:
                raise ValidationError(f"experiment config missing field {key!r}")
        ds = obj["dataset"]
        dataset_path = synthetic = None
        if isinstance(ds, dict) and "path" in ds:
            dataset_path = str(ds["path"])
        elif isinstance(ds, dict) and "synthetic" in ds:
            try:
                synthetic = SyntheticSpec(**ds["synthetic"])
            except TypeError as exc:
                raise ValidationError(f"bad synthetic spec: {exc}") from exc
        else:
            raise ValidationError("dataset must carry 'path' or 'synthetic'")
        try:
            training = TrainingConfig(**obj.get("training", {}))
        except TypeError as exc:
            raise ValidationError(f"bad training config: {exc}") from exc
        return cls(dataset_path=dataset_path, synthetic=synthetic, training=training,
                   attack=AttackBudget.from_json(obj["attack"]),
                   crf=CrfConfig.from_json(obj["crf"]),
                   num_repeats=int(obj.get("num_repeats", 10)),
                   base_seed=int(obj.get("base_seed", 0)),
                   output_path=obj.get("output"))


@dataclass
class SeedMetrics:
    seed: int
    clean_acc_vanilla: float
    clean_acc_smoothed: float
    atk_acc_vanilla: float
    atk_acc_smoothed: float
    asr_vanilla: float
    asr_smoothed: float
    model_calls: int
    smooth_wall_ms: float

    def csv_row(self) -> str:
        return ",".join([str(self.seed)] + [repr(v) for v in (
            self.clean_acc_vanilla, self.clean_acc_smoothed, self.atk_acc_vanilla,
            self.atk_acc_smoothed, self.asr_vanilla, self.asr_smoothed)]
            + [str(self.model_calls), repr(self.smooth_wall_ms)])


@dataclass
class MetricsReport:
    per_seed: list[SeedMetrics]
    aggregates: dict[str, dict[str, float]] = field(default_factory=dict)

    def compute_aggregates(self) -> None:
        cols = CSV_HEADER.split(",")[1:]
        self.aggregates = {}
        for col in cols:
            values = np.array([getattr(m, col) for m in self.per_seed], dtype=np.float64)
            # population std so a single repeat reports 0, not nan
            self.aggregates[col] = {"mean": float(values.mean()),
                                    "std": float(values.std(ddof=0))}

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [m.csv_row() for m in self.per_seed]) + "\n"

    def to_json(self) -> str:
        return json.dumps({"num_repeats": len(self.per_seed), "columns": self.aggregates},
                          sort_keys=True, indent=2) + "\n"


def _load_graph(config: ExperimentConfig) -> tuple[Graph, DatasetSplits]:
    if config.dataset_path is not None:
        return load_dataset(config.dataset_path)
    return config.synthetic.build()


def run_experiment(config: ExperimentConfig, max_workers: int = 1) -> MetricsReport:
    """Train, smooth, attack, and measure once per repeat seed.

    Attacks are regenerated per repeat (fresh noise / ascent / edge flips),
    and evaluation uses the test split only. Writes per_seed.csv and
    aggregate.json under ``output_path`` when set.
    """
    graph, splits = _load_graph(config)
    splits.validate_for(graph.num_nodes)
    test_idx = splits.test_idx if splits.test_idx.size else splits.train_idx
    expected_calls = model_call_count(config.crf.num_samples, config.crf.num_iterations)

    rows = []
    for i in range(config.num_repeats):
        seed = config.base_seed + i
        params = train(graph, splits, replace(config.training, seed=seed))
        crf = config.crf.with_seed(seed)

        calls = 0

        def model(g: Graph, _params=params) -> np.ndarray:
            nonlocal calls
            calls += 1
            return forward(_params, g)

        clean_vanilla = forward(params, graph)
        t0 = time.perf_counter()
        clean_smoothed = smooth_predictions(model, graph, crf, max_workers=max_workers)
        t1 = time.perf_counter()
        calls_per_smooth = calls
        if calls_per_smooth != expected_calls:
            raise AssertionError(
                f"model call accounting broke: {calls_per_smooth} != {expected_calls}")

        attacked = run_attack(config.attack.with_seed(seed), graph, params=params,
                              target_idx=test_idx).perturbed
        atk_vanilla = forward(params, attacked)
        t2 = time.perf_counter()
        atk_smoothed = smooth_predictions(model, attacked, crf, max_workers=max_workers)
        t3 = time.perf_counter()

        labels = graph.labels
        row = SeedMetrics(
            seed=seed,
            clean_acc_vanilla=accuracy(clean_vanilla, labels, test_idx),
            clean_acc_smoothed=accuracy(clean_smoothed, labels, test_idx),
            atk_acc_vanilla=accuracy(atk_vanilla, labels, test_idx),
            atk_acc_smoothed=accuracy(atk_smoothed, labels, test_idx),
            asr_vanilla=attack_success_rate(clean_vanilla, atk_vanilla, labels, test_idx),
            asr_smoothed=attack_success_rate(clean_smoothed, atk_smoothed, labels, test_idx),
            model_calls=calls_per_smooth,
            smooth_wall_ms=((t1 - t0) + (t3 - t2)) / 2.0 * 1000.0,
        )
        _check_accuracy_identity(row, clean_vanilla, atk_vanilla, labels, test_idx,
                                 vanilla=True)
        _check_accuracy_identity(row, clean_smoothed, atk_smoothed, labels, test_idx,
                                 vanilla=False)
        rows.append(row)

    report = MetricsReport(per_seed=rows)
    report.compute_aggregates()
    if config.output_path is not None:
        out = Path(config.output_path)
        out.mkdir(parents=True, exist_ok=True)
        (out / "per_seed.csv").write_text(report.to_csv())
        (out / "aggregate.json").write_text(report.to_json())
    return report


def _check_accuracy_identity(row: SeedMetrics, clean_pred, atk_pred, labels, idx,
                             vanilla: bool) -> None:
    """attacked_acc == clean_acc * (1 - ASR) + recovered fraction, per seed."""
    clean_acc = row.clean_acc_vanilla if vanilla else row.clean_acc_smoothed
    atk_acc = row.atk_acc_vanilla if vanilla else row.atk_acc_smoothed
    asr = row.asr_vanilla if vanilla else row.asr_smoothed
    recovered = _recovery_fraction(clean_pred, atk_pred, labels, idx)
    if not math.isclose(atk_acc, clean_acc * (1.0 - asr) + recovered,
                        rel_tol=0.0, abs_tol=1e-12):
        raise AssertionError("accuracy/ASR consistency identity violated")


def timing_benchmark(model, graph: Graph, l_values: list[int], k_values: list[int],
                     base_config: CrfConfig, max_workers: int = 1) -> list[dict]:
    """Wall time and model-call count for each (L, K) cell.

    Calls are counted through a wrapping callable and must match the
    closed-form count. The model should be warm (first numba call compiles).
    """
    rows = []
    for l in l_values:
        for k in k_values:
            config = replace(base_config, num_samples=l, num_iterations=k)
            calls = 0

            def counting(g: Graph) -> np.ndarray:
                nonlocal calls
                calls += 1
                return model(g)

            t0 = time.perf_counter()
            smooth_predictions(counting, graph, config, max_workers=max_workers)
            elapsed = time.perf_counter() - t0
            expected = model_call_count(l, k)
            if calls != expected:
                raise AssertionError(f"call count {calls} != expected {expected}")
            rows.append({"L": l, "K": k, "model_calls": calls,
                         "wall_ms": elapsed * 1000.0})
    return rows
