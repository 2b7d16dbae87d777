import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from emgdnn.errors import BadInput, BadLabel, EmptyInput, EmptySegmentation, ParseError
from emgdnn.signal_core import (
    ClassLabel,
    Dataset,
    Signal,
    Window,
    load_signal,
    load_windows,
    read_dataset_csv,
    save_signal,
    save_windows,
    segment,
    synth_generate,
    write_dataset_csv,
)
from emgdnn.wavelet import dwt_multilevel, make_filter


def test_class_label_codes():
    assert [int(c) for c in ClassLabel] == [0, 1, 2]
    assert ClassLabel.parse("als") is ClassLabel.ALS
    assert ClassLabel.parse("1") is ClassLabel.MYOPATHY
    with pytest.raises(BadLabel):
        ClassLabel.parse(3)


def test_signal_invariants():
    with pytest.raises(EmptyInput):
        Signal([])
    with pytest.raises(BadInput):
        Signal([1.0, np.nan])
    with pytest.raises(BadInput):
        Signal([1.0], sample_rate_hz=0)
    s = Signal([1, 2, 3], label=2)
    assert s.label is ClassLabel.ALS
    assert s.samples.dtype == np.float64
    assert not s.samples.flags.writeable


@pytest.mark.parametrize(
    "n,expected", [(8192, 1), (16384, 2), (20000, 2)]
)
def test_segment_counts(n, expected):
    sig = Signal(np.arange(n, dtype=float), label=0)
    windows = segment(sig, 8192, 8192)
    assert len(windows) == expected
    assert all(len(w) == 8192 and w.label is ClassLabel.NORMAL for w in windows)
    if n == 20000:
        # the last 20000 - 2*8192 = 3616 samples are dropped
        assert windows[-1].samples[-1] == 16383


def test_segment_default_stride_and_overlap():
    sig = Signal(np.arange(10.0))
    assert len(segment(sig, 4)) == 2
    windows = segment(sig, 4, 2)
    assert len(windows) == 4
    np.testing.assert_array_equal(windows[1].samples, [2, 3, 4, 5])


def test_segment_too_short():
    with pytest.raises(EmptySegmentation):
        segment(Signal(np.ones(100)), 8192)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1e6, 1e6)),
       st.integers(1, 40), st.integers(1, 40))
def test_segment_properties(x, window_len, stride):
    sig = Signal(x)
    if len(x) < window_len:
        with pytest.raises(EmptySegmentation):
            segment(sig, window_len, stride)
        return
    windows = segment(sig, window_len, stride)
    assert len(windows) == (len(x) - window_len) // stride + 1
    for i, w in enumerate(windows):
        np.testing.assert_array_equal(w.samples, x[i * stride : i * stride + window_len])
    if stride == window_len:
        joined = np.concatenate([w.samples for w in windows])
        np.testing.assert_array_equal(joined, x[: len(windows) * window_len])


def test_load_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("1.0\n-2.5\n0.0")
    np.testing.assert_array_equal(load_signal(p).samples, [1.0, -2.5, 0.0])
    p.write_text("amplitude\n1.0\n2.0\n")
    np.testing.assert_array_equal(load_signal(p).samples, [1.0, 2.0])


def test_load_binary(tmp_path):
    p = tmp_path / "s.bin"
    p.write_bytes(np.array([1.5, -2.0, 3.25], dtype="<f8").tobytes())
    sig = load_signal(p, "f64-binary")
    assert len(sig) == 3
    np.testing.assert_array_equal(sig.samples, [1.5, -2.0, 3.25])


def test_load_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1.0\nabc\n3.0\n")
    with pytest.raises(ParseError) as info:
        load_signal(p)
    assert info.value.line == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyInput):
        load_signal(empty)
    empty_bin = tmp_path / "empty.bin"
    empty_bin.write_bytes(b"")
    with pytest.raises(EmptyInput):
        load_signal(empty_bin)
    odd = tmp_path / "odd.bin"
    odd.write_bytes(b"\x00" * 9)
    with pytest.raises(ParseError):
        load_signal(odd)


def test_sidecar_and_flag_labels(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("1\n2\n")
    (tmp_path / "s.csv.json").write_text(
        json.dumps({"label": 2, "sample_rate_hz": 4000, "source_id": "als-03"})
    )
    sig = load_signal(p)
    assert sig.label is ClassLabel.ALS and sig.sample_rate_hz == 4000 and sig.source_id == "als-03"
    assert load_signal(p, label="normal").label is ClassLabel.NORMAL


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 200),
              elements=st.floats(allow_nan=False, allow_infinity=False)),
       st.sampled_from(["csv", "f64-binary"]))
def test_save_load_round_trip(tmp_path_factory, x, fmt):
    path = tmp_path_factory.mktemp("rt") / ("s.csv" if fmt == "csv" else "s.bin")
    save_signal(Signal(x), path)
    back = load_signal(path)
    assert back.samples.tobytes() == np.asarray(x, dtype=np.float64).tobytes()


def test_dataset_invariants():
    with pytest.raises(BadInput):
        Dataset(np.zeros((3, 26)), [0, 1, 2])
    with pytest.raises(BadInput):
        Dataset(np.zeros((3, 27)), [0, 1])
    bad = np.zeros((1, 27))
    bad[0, 3] = np.inf
    with pytest.raises(BadInput):
        Dataset(bad, [0])


def test_dataset_csv_round_trip(tmp_path, rng):
    ds = Dataset(rng.standard_normal((5, 27)), [0, 1, 2, 1, 0])
    path = tmp_path / "d.csv"
    write_dataset_csv(ds, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == [f"f{i:02d}" for i in range(1, 28)] + ["label"]
    back = read_dataset_csv(path)
    assert back.feature_matrix.tobytes() == ds.feature_matrix.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_windows_file_round_trip(tmp_path):
    windows = [Window(np.arange(8.0), 0), Window(-np.arange(8.0), None)]
    path = tmp_path / "w.npz"
    save_windows(path, windows)
    back = load_windows(path)
    assert back[0].label is ClassLabel.NORMAL and back[1].label is None
    np.testing.assert_array_equal(back[1].samples, windows[1].samples)


def test_synth_deterministic():
    a = synth_generate(ClassLabel.NORMAL, 5, seed=42)
    b = synth_generate(ClassLabel.NORMAL, 5, seed=42)
    assert all(x.samples.tobytes() == y.samples.tobytes() for x, y in zip(a, b))
    c = synth_generate(ClassLabel.NORMAL, 5, seed=43)
    assert a[0].samples.tobytes() != c[0].samples.tobytes()


def test_synth_shape_and_labels():
    windows = synth_generate(ClassLabel.MYOPATHY, 3, seed=1)
    assert len(windows) == 3
    assert all(len(w) == 8192 and w.label is ClassLabel.MYOPATHY for w in windows)


@pytest.mark.parametrize("seed", range(10))
def test_synth_als_has_more_d1_power(seed):
    f = make_filter("db4")

    def d1_power(label):
        w = synth_generate(label, 1, seed)[0]
        d1 = dwt_multilevel(w.samples, f, 6).details[0]
        return np.mean(d1**2)

    assert d1_power(ClassLabel.ALS) > d1_power(ClassLabel.NORMAL)


def test_synth_full_size_count():
    # 1200 instances per class
    assert len(synth_generate(ClassLabel.MYOPATHY, 1200, seed=0)) == 1200
