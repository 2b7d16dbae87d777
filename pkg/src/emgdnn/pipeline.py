"""Splits, scaling, training loop, evaluation and the end-to-end run."""
from dataclasses import asdict, dataclass, field, fields
import csv
import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyInput, StageError, StratificationError, TrainingDiverged
from .features import windows_to_dataset
from .mspca import MspcaConfig, mspca_denoise
from .neuralnet import AdamState, adam_step, init_network, loss, save_model
from .signal_core import (
    N_FEATURES,
    WINDOW_LEN,
    ClassLabel,
    Dataset,
    Signal,
    atomic_write,
    segment,
    stack_windows,
)

log = logging.getLogger(__name__)

N_CLASSES = len(ClassLabel)


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitSpec:
    test_fraction: float = 0.20
    validation_fraction_of_train: float = 0.10
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        for name in ("test_fraction", "validation_fraction_of_train"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")


def _three_way(index, spec, rng):
    index = rng.permutation(index)
    n = len(index)
    n_test = int(round(n * spec.test_fraction))
    n_val = int(round((n - n_test) * spec.validation_fraction_of_train))
    test = index[:n_test]
    val = index[n_test : n_test + n_val]
    sub = index[n_test + n_val :]
    return sub, val, test


def split_indices(labels, spec):
    """Row indices of (sub_train, validation, test), each sorted ascending."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInput("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        parts = ([], [], [])
        for cls in range(N_CLASSES):
            idx = np.flatnonzero(labels == cls)
            if idx.size == 0:
                continue
            if idx.size < 3:
                raise StratificationError(
                    f"class {cls} has {idx.size} rows; stratified splitting needs >= 3"
                )
            for bucket, chunk in zip(parts, _three_way(idx, spec, rng)):
                bucket.append(chunk)
        sub, val, test = (np.concatenate(p) for p in parts)
    else:
        sub, val, test = _three_way(np.arange(labels.size), spec, rng)
    return np.sort(sub), np.sort(val), np.sort(test)


def split(dataset, spec=None):
    spec = spec or SplitSpec()
    return tuple(dataset.subset(i) for i in split_indices(dataset.labels, spec))


# ---------------------------------------------------------------------------
# standardisation


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray
    flagged: np.ndarray  # columns whose zero std was replaced by 1

    def apply(self, dataset):
        return Dataset(self.transform(dataset.feature_matrix), dataset.labels)

    def transform(self, matrix):
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.scale

    def inverse(self, matrix):
        return np.asarray(matrix, dtype=np.float64) * self.scale + self.mean


def standardize_fit(train):
    x = train.feature_matrix
    if len(x) == 0:
        raise EmptyInput("cannot fit a standardizer on zero rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    flagged = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if flagged.any():
        log.warning("zero-variance feature columns %s", np.flatnonzero(flagged) + 1)
    return Standardizer(mean=mean, scale=np.where(flagged, 1.0, std), flagged=flagged)


def standardize_apply(std, dataset):
    return std.apply(dataset)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 150
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    dropout_rate: float = 0.5
    l2_lambda: float = 1e-6
    shuffle_each_epoch: bool = True
    val_interval: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.val_interval < 1:
            raise ValueError("batch_size, epochs and val_interval must be >= 1")


@dataclass
class CurveRecord:
    epoch: int
    minibatch: int
    step: int
    train_loss: float
    train_accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None


CURVE_COLUMNS = tuple(f.name for f in fields(CurveRecord))


@dataclass
class LearningCurve:
    records: list = field(default_factory=list)

    def validation_points(self):
        return [r for r in self.records if r.val_accuracy is not None]

    def to_csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for r in self.records:
            writer.writerow(["" if v is None else repr(v) for v in astuple_record(r)])
        return buf.getvalue()


def astuple_record(r):
    return tuple(getattr(r, c) for c in CURVE_COLUMNS)


def _accuracy(probs, labels):
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def train(sub_train, validation, config=None):
    """Minibatch Adam training; returns the best-validation network and the curve."""
    config = config or TrainConfig()
    if len(sub_train) == 0 or len(validation) == 0:
        raise EmptyInput("training and validation sets must be non-empty")
    net = init_network(config.seed, dropout_rate=config.dropout_rate, l2_lambda=config.l2_lambda)
    net.config = {"train": asdict(config)}
    state = AdamState(config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    params = [p for _, p in net.parameters()]
    order_rng = np.random.default_rng([config.seed, 1])

    x, y = sub_train.feature_matrix, sub_train.labels
    xv, yv = validation.feature_matrix, validation.labels
    n = len(y)
    curve = LearningCurve()
    best_acc, best_state = -1.0, None

    def validate(record):
        nonlocal best_acc, best_state
        probs = net.forward(xv, "eval")
        record.val_loss = loss(probs, yv, net)
        record.val_accuracy = _accuracy(probs, yv)
        if record.val_accuracy > best_acc:
            best_acc, best_state = record.val_accuracy, net.snapshot()

    step = 0
    for epoch in range(config.epochs):
        order = order_rng.permutation(n) if config.shuffle_each_epoch else np.arange(n)
        starts = range(0, n, config.batch_size)
        for mb, start in enumerate(starts):
            idx = order[start : start + config.batch_size]
            probs = net.forward(x[idx], "train")
            value = loss(probs, y[idx], net)
            record = CurveRecord(epoch, mb, step, value, _accuracy(probs, y[idx]))
            curve.records.append(record)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, minibatch {mb}", curve)
            grads = net.backward(y[idx])
            adam_step(params, [g for _, g in grads], state)
            step += 1
            if step % config.val_interval == 0 or mb == len(starts) - 1:
                validate(record)
        last = curve.records[-1]
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, last.train_loss, last.val_accuracy)

    net.load_state_arrays(best_state)
    net.config["best_val_accuracy"] = best_acc
    net.config["optimizer_steps"] = state.step_count
    return net, curve


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes=N_CLASSES):
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def accuracy(self):
        return float(np.trace(self.counts) / self.total) if self.total else None

    def precision(self, c):
        col = self.counts[:, c].sum()
        return float(self.counts[c, c] / col) if col else None

    def recall(self, c):
        row = self.counts[c, :].sum()
        return float(self.counts[c, c] / row) if row else None

    def to_csv_text(self):
        k = self.counts.shape[0]
        lines = ["true\\pred," + ",".join(str(j) for j in range(k))]
        for i in range(k):
            lines.append(f"{i}," + ",".join(str(int(v)) for v in self.counts[i]))
        return "\n".join(lines) + "\n"


@dataclass
class Evaluation:
    confusion: ConfusionMatrix
    accuracy: float
    precision: list
    recall: list

    def to_dict(self):
        return {
            "n_samples": self.confusion.total,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusion_matrix": self.confusion.counts.tolist(),
        }


def metrics_from_predictions(y_true, y_pred):
    cm = ConfusionMatrix.from_predictions(y_true, y_pred)
    return Evaluation(
        confusion=cm,
        accuracy=cm.accuracy(),
        precision=[cm.precision(c) for c in range(N_CLASSES)],
        recall=[cm.recall(c) for c in range(N_CLASSES)],
    )


def evaluate(net, test):
    if len(test) == 0:
        raise EmptyInput("empty test set")
    return metrics_from_predictions(test.labels, net.predict(test.feature_matrix))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    """Flat run configuration; field names double as config-file keys."""

    seed: int = 0
    windows_per_class: int = 1200
    window_len: int = WINDOW_LEN
    stride: int = 0  # 0 means window_len
    denoise: bool = True
    wavelet: str = "db4"
    levels: int = 6
    retention: str = "kaiser"
    retention_fraction: float = 1.0
    signed_ratio: bool = False
    test_fraction: float = 0.20
    validation_fraction: float = 0.10
    stratified: bool = True
    batch_size: int = 150
    epochs: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    dropout_rate: float = 0.5
    l2_lambda: float = 1e-6
    shuffle_each_epoch: bool = True
    val_interval: int = 10

    def split_spec(self):
        return SplitSpec(self.test_fraction, self.validation_fraction, self.seed, self.stratified)

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_epsilon=self.adam_epsilon,
            dropout_rate=self.dropout_rate,
            l2_lambda=self.l2_lambda,
            shuffle_each_epoch=self.shuffle_each_epoch,
            val_interval=self.val_interval,
            seed=self.seed,
        )

    def mspca_config(self):
        return MspcaConfig(self.wavelet, self.levels, self.retention, self.retention_fraction)

    def updated(self, **overrides):
        values = asdict(self)
        for key, raw in overrides.items():
            values[key] = _coerce(key, raw)
        return PipelineConfig(**values)


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}
# names used by SplitSpec / MspcaConfig, accepted in config files too
_ALIASES = {
    "validation_fraction_of_train": "validation_fraction",
    "fraction": "retention_fraction",
    "filter": "wavelet",
}


def _coerce(key, raw):
    if key not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if kind in (bool, "bool"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    return text


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = _ALIASES.get(key, key)
        values[key] = _coerce(key, value)
    return values


def load_config(path, base=None):
    base = base or PipelineConfig()
    return base.updated(**parse_config_text(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# end-to-end run

ARTIFACTS = {
    "model": "model.emgnet",
    "metrics": "metrics.json",
    "learning_curve": "learning_curve.csv",
    "confusion_matrix": "confusion_matrix.csv",
}
MANIFEST = "manifest.json"


@dataclass
class RunResult:
    out_dir: Path
    evaluation: Evaluation
    manifest: dict
    network: object
    curve: LearningCurve


def _sha256(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _json_bytes(obj):
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def run_pipeline(inputs, config=None, out_dir="."):
    """segment -> (MSPCA) -> DWT features -> split -> scale -> train -> evaluate.

    ``inputs`` is a list of :class:`Signal` (segmented here) or of windows.
    """
    config = config or PipelineConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with _Stage("segment"):
        if len(inputs) == 0:
            raise EmptyInput("no input signals or windows")
        if isinstance(inputs[0], Signal):
            windows = []
            for sig in inputs:
                windows.extend(segment(sig, config.window_len, config.stride or None))
        else:
            windows = list(inputs)
        samples, labels = stack_windows(windows)
        input_hash = _sha256(samples, np.array([-1 if v is None else int(v) for v in labels]))

    if config.denoise:
        with _Stage("denoise"):
            windows = mspca_denoise(windows, config.mspca_config())

    with _Stage("features"):
        dataset = windows_to_dataset(windows, config.wavelet, config.levels, config.signed_ratio)

    with _Stage("split"):
        sub_train, validation, test = split(dataset, config.split_spec())

    with _Stage("standardize"):
        scaler = standardize_fit(sub_train)
        sub_train, validation, test = (scaler.apply(d) for d in (sub_train, validation, test))

    with _Stage("train"):
        net, curve = train(sub_train, validation, config.train_config())
        net.extras = {"standardizer_mean": scaler.mean, "standardizer_scale": scaler.scale}
        net.config["pipeline"] = asdict(config)

    with _Stage("evaluate"):
        result = evaluate(net, test)

    with _Stage("write"):
        metrics = result.to_dict()
        metrics["best_val_accuracy"] = net.config["best_val_accuracy"]
        save_model(net, out / ARTIFACTS["model"])
        atomic_write(out / ARTIFACTS["metrics"], _json_bytes(metrics))
        atomic_write(out / ARTIFACTS["learning_curve"], curve.to_csv_text())
        atomic_write(out / ARTIFACTS["confusion_matrix"], result.confusion.to_csv_text())
        manifest = {
            "config": asdict(config),
            "seeds": {"split": config.seed, "train": config.seed},
            "input_sha256": input_hash,
            "n_windows": len(windows),
            "denoise": config.denoise,
            "feature_matrix_shape": [len(dataset), N_FEATURES],
            "split_sizes": {
                "sub_train": len(sub_train),
                "validation": len(validation),
                "test": len(test),
            },
            "standardizer_flagged_columns": (np.flatnonzero(scaler.flagged) + 1).tolist(),
            "artifacts": dict(ARTIFACTS),
            "artifact_sha256": {
                key: hashlib.sha256((out / name).read_bytes()).hexdigest()
                for key, name in ARTIFACTS.items()
            },
        }
        atomic_write(out / MANIFEST, _json_bytes(manifest))

    return RunResult(out, result, manifest, net, curve)
