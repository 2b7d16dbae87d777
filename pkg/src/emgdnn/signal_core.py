"""Signals, windows, datasets, file I/O and the synthetic EMG generator."""
from dataclasses import dataclass
from enum import IntEnum
import io
import json
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BadInput, BadLabel, EmptyInput, EmptySegmentation, ParseError

WINDOW_LEN = 8192
N_FEATURES = 27
FEATURE_COLUMNS = tuple(f"f{i:02d}" for i in range(1, N_FEATURES + 1))


class ClassLabel(IntEnum):
    NORMAL = 0
    MYOPATHY = 1
    ALS = 2

    @classmethod
    def parse(cls, value):
        """Accept an int code, a digit string or a (case-insensitive) name."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            text = value.strip()
            if text.lstrip("-").isdigit():
                value = int(text)
            else:
                try:
                    return cls[text.upper()]
                except KeyError:
                    raise BadLabel(f"unknown class label {value!r}") from None
        try:
            return cls(int(value))
        except (ValueError, TypeError):
            raise BadLabel(f"class label must be 0, 1 or 2, got {value!r}") from None


def _as_finite_vector(samples, what):
    arr = np.array(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise BadInput(f"{what} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInput(f"{what} is empty")
    if not np.all(np.isfinite(arr)):
        raise BadInput(f"{what} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate_hz: float = 1.0
    label: Optional[ClassLabel] = None
    source_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_finite_vector(self.samples, "signal"))
        if not self.sample_rate_hz > 0:
            raise BadInput(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.label is not None:
            object.__setattr__(self, "label", ClassLabel.parse(self.label))

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class Window:
    """A fixed-length slice of a signal (8192 samples in the pipeline)."""

    samples: np.ndarray
    label: Optional[ClassLabel] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_finite_vector(self.samples, "window"))
        if self.label is not None:
            object.__setattr__(self, "label", ClassLabel.parse(self.label))

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class Dataset:
    feature_matrix: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.feature_matrix, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != N_FEATURES:
            raise BadInput(f"feature matrix must be n x {N_FEATURES}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise BadInput("feature matrix contains non-finite entries")
        y = np.array([int(ClassLabel.parse(v)) for v in np.ravel(self.labels)], dtype=np.int64)
        if len(y) != len(x):
            raise BadInput(f"{len(y)} labels for {len(x)} rows")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "feature_matrix", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return len(self.labels)

    def subset(self, index):
        return Dataset(self.feature_matrix[index], self.labels[index])

    def class_counts(self):
        return np.bincount(self.labels, minlength=len(ClassLabel))


def segment(signal, window_len=WINDOW_LEN, stride=None):
    """Cut ``signal`` into contiguous windows; trailing partial windows are dropped.

    ``stride`` defaults to ``window_len`` (non-overlapping windows).
    """
    if stride is None:
        stride = window_len
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be positive")
    n = len(signal.samples)
    if n < window_len:
        raise EmptySegmentation(
            f"signal of length {n} is shorter than window length {window_len}"
        )
    count = (n - window_len) // stride + 1
    return [
        Window(signal.samples[i * stride : i * stride + window_len], signal.label)
        for i in range(count)
    ]


def stack_windows(windows):
    """Stack windows into an ``(n, window_len)`` array plus a label list."""
    if len(windows) == 0:
        raise EmptyInput("no windows")
    lengths = {len(w) for w in windows}
    if len(lengths) != 1:
        raise BadInput(f"windows have mixed lengths {sorted(lengths)}")
    return np.stack([w.samples for w in windows]), [w.label for w in windows]


# ---------------------------------------------------------------------------
# file formats


def _infer_format(path):
    suffix = Path(path).suffix.lower()
    if suffix in (".csv", ".txt"):
        return "csv"
    if suffix in (".bin", ".f64", ".dat"):
        return "f64-binary"
    raise ValueError(f"cannot infer signal format from {path!r}; pass fmt explicitly")


def _parse_csv_samples(path):
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                continue
            if lineno == 1 and text.lower() == "amplitude":
                continue
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"non-numeric token {text!r}", line=lineno) from None
            if not np.isfinite(value):
                raise ParseError(f"non-finite value {text!r}", line=lineno)
            values.append(value)
    return values


def _parse_binary_samples(path):
    raw = Path(path).read_bytes()
    if len(raw) % 8:
        raise ParseError(f"binary size {len(raw)} is not a multiple of 8 bytes")
    values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError(f"non-finite value at sample {bad[0]}")
    return values


def load_signal(path, fmt=None, label=None, sample_rate_hz=None, source_id=None):
    """Read a single-channel signal from CSV or raw little-endian float64.

    Metadata comes from an optional JSON sidecar ``<path>.json`` with keys
    ``label``, ``sample_rate_hz`` and ``source_id``; explicit arguments win.
    """
    fmt = fmt or _infer_format(path)
    if fmt == "csv":
        values = _parse_csv_samples(path)
    elif fmt == "f64-binary":
        values = _parse_binary_samples(path)
    else:
        raise ValueError(f"unknown signal format {fmt!r}")
    if len(values) == 0:
        raise EmptyInput(f"{path} contains no samples")

    meta = {}
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if label is None:
        label = meta.get("label")
    if sample_rate_hz is None:
        sample_rate_hz = meta.get("sample_rate_hz", 1.0)
    if source_id is None:
        source_id = meta.get("source_id", Path(path).stem)
    return Signal(
        samples=values,
        sample_rate_hz=float(sample_rate_hz),
        label=label,
        source_id=str(source_id),
    )


def save_signal(signal, path, fmt=None):
    fmt = fmt or _infer_format(path)
    if fmt == "csv":
        body = "amplitude\n" + "".join(f"{v!r}\n" for v in signal.samples.tolist())
        atomic_write(path, body.encode("utf-8"))
    elif fmt == "f64-binary":
        atomic_write(path, signal.samples.astype("<f8").tobytes())
    else:
        raise ValueError(f"unknown signal format {fmt!r}")


def atomic_write(path, data):
    """Write bytes (or text) to ``path`` via a temp file and rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_dataset_csv(dataset, path):
    lines = [",".join(FEATURE_COLUMNS + ("label",))]
    for row, label in zip(dataset.feature_matrix.tolist(), dataset.labels.tolist()):
        lines.append(",".join(repr(v) for v in row) + f",{label}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_feature_csv(path):
    """Read a feature CSV; returns ``(matrix, labels)`` with labels None if absent."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header[:N_FEATURES]) != FEATURE_COLUMNS:
            raise ParseError("header must start with f01..f27", line=1)
        has_label = len(header) > N_FEATURES and header[N_FEATURES] == "label"
        rows, labels = [], []
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            parts = raw.strip().split(",")
            if len(parts) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(parts)}", line=lineno)
            try:
                rows.append([float(p) for p in parts[:N_FEATURES]])
                if has_label:
                    labels.append(int(ClassLabel.parse(parts[N_FEATURES])))
            except (ValueError, BadLabel) as exc:
                raise ParseError(str(exc), line=lineno) from None
    if not rows:
        raise EmptyInput(f"{path} contains no rows")
    return np.array(rows), (np.array(labels) if has_label else None)


def read_dataset_csv(path):
    matrix, labels = read_feature_csv(path)
    if labels is None:
        raise ParseError("dataset CSV has no 'label' column", line=1)
    return Dataset(matrix, labels)


def save_windows(path, windows):
    samples, labels = stack_windows(windows)
    codes = np.array([-1 if lab is None else int(lab) for lab in labels], dtype=np.int64)
    buf = io.BytesIO()
    np.savez(buf, samples=samples, labels=codes)
    atomic_write(path, buf.getvalue())


def load_windows(path):
    with np.load(path) as data:
        samples, codes = data["samples"], data["labels"]
    return [
        Window(row, None if code < 0 else ClassLabel(int(code)))
        for row, code in zip(samples, codes)
    ]


# ---------------------------------------------------------------------------
# synthetic EMG-like windows
#
# Each window is the sum of
#   * Gaussian white noise coloured by a class-specific amplitude spectrum
#     A(f) = exp(-(f - fc)^2 / (2 bw^2)) + floor, f in cycles/sample, fc jittered
#     by +/-10 % per window,
#   * a Poisson spike train convolved with a biphasic MUAP-like kernel
#     (first derivative of a Gaussian of width ``spike_width`` samples),
# then scaled by a per-window gain drawn from U(0.8, 1.2).
# All randomness comes from numpy's PCG64 generator seeded with (seed, class).


@dataclass(frozen=True)
class SynthProfile:
    centre_freq: float
    bandwidth: float
    floor: float
    spike_rate: float  # expected spikes per sample
    spike_width: float  # Gaussian sigma of the MUAP kernel, in samples
    spike_amplitude: float


SYNTH_PROFILES = {
    # broad-ish low-frequency content, moderate MUAPs
    ClassLabel.NORMAL: SynthProfile(0.06, 0.03, 0.05, 0.004, 4.0, 3.0),
    # higher-frequency content, short low-amplitude polyphasic MUAPs
    ClassLabel.MYOPATHY: SynthProfile(0.15, 0.06, 0.08, 0.012, 1.5, 1.5),
    # strong broadband floor, sparse large long-duration MUAPs
    ClassLabel.ALS: SynthProfile(0.03, 0.02, 0.15, 0.0015, 10.0, 8.0),
}


def _muap_kernel(width):
    half = int(np.ceil(4 * width))
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = -(t / width) * np.exp(-0.5 * (t / width) ** 2)
    return k / np.abs(k).max()


def synth_generate(label, n_windows, seed, window_len=WINDOW_LEN):
    """Deterministic synthetic windows of one class."""
    label = ClassLabel.parse(label)
    if n_windows < 1:
        raise ValueError("n_windows must be >= 1")
    prof = SYNTH_PROFILES[label]
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(label)])
    freqs = np.fft.rfftfreq(window_len)
    kernel = _muap_kernel(prof.spike_width)
    windows = []
    for _ in range(n_windows):
        fc = prof.centre_freq * rng.uniform(0.9, 1.1)
        envelope = np.exp(-0.5 * ((freqs - fc) / prof.bandwidth) ** 2) + prof.floor
        white = rng.standard_normal(window_len)
        background = np.fft.irfft(np.fft.rfft(white) * envelope, n=window_len)

        n_spikes = rng.poisson(prof.spike_rate * window_len)
        positions = rng.integers(0, window_len, size=n_spikes)
        amps = prof.spike_amplitude * rng.uniform(0.5, 1.5, size=n_spikes)
        train = np.zeros(window_len)
        np.add.at(train, positions, amps)
        spikes = np.convolve(train, kernel, mode="same")

        gain = rng.uniform(0.8, 1.2)
        windows.append(Window(gain * (background + spikes), label))
    return windows


def synth_dataset_windows(n_per_class, seed, window_len=WINDOW_LEN):
    """Balanced synthetic windows, classes in code order."""
    out = []
    for label in ClassLabel:
        out.extend(synth_generate(label, n_per_class, seed, window_len))
    return out
