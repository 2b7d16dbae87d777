import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emgdnn.errors import EmptyInput, StageError, StratificationError
from emgdnn.features import windows_to_dataset
from emgdnn.pipeline import (
    ARTIFACTS,
    MANIFEST,
    ConfusionMatrix,
    PipelineConfig,
    SplitSpec,
    TrainConfig,
    evaluate,
    load_config,
    metrics_from_predictions,
    parse_config_text,
    run_pipeline,
    split,
    split_indices,
    standardize_apply,
    standardize_fit,
    train,
)
from emgdnn.signal_core import Dataset, Signal, Window, synth_dataset_windows


def balanced_labels(per_class):
    return np.repeat([0, 1, 2], per_class)


def blob_dataset(per_class, seed=0, sep=3.0):
    rng = np.random.default_rng(seed)
    y = balanced_labels(per_class)
    x = rng.standard_normal((len(y), 27))
    x[np.arange(len(y)), y] += sep
    return Dataset(x, y)


@pytest.fixture(scope="module")
def synth_features():
    return windows_to_dataset(synth_dataset_windows(600, seed=0))


def small_config(**kw):
    base = dict(windows_per_class=30, window_len=1024, epochs=3, batch_size=30, seed=5)
    base.update(kw)
    return PipelineConfig(**base)


# -- splitting --------------------------------------------------------------


def test_split_sizes_for_3600_rows():
    y = balanced_labels(1200)
    sub, val, test = split_indices(y, SplitSpec())
    assert (len(sub), len(val), len(test)) == (2592, 288, 720)
    for part, size in ((sub, 864), (val, 96), (test, 240)):
        np.testing.assert_array_equal(np.bincount(y[part]), [size] * 3)


def test_split_is_a_partition_and_deterministic():
    y = balanced_labels(50)
    a = split_indices(y, SplitSpec(seed=3))
    b = split_indices(y, SplitSpec(seed=3))
    c = split_indices(y, SplitSpec(seed=4))
    for x, z in zip(a, b):
        np.testing.assert_array_equal(x, z)
    assert any(not np.array_equal(x, z) for x, z in zip(a, c))
    joined = np.concatenate(a)
    assert len(joined) == len(y) and len(np.unique(joined)) == len(y)


def test_unstratified_split_sizes():
    sub, val, test = split_indices(balanced_labels(1200), SplitSpec(stratified=False))
    assert (len(sub), len(val), len(test)) == (2592, 288, 720)


def test_split_errors():
    with pytest.raises(StratificationError):
        split_indices([0, 0, 0, 1, 1, 2, 2, 2], SplitSpec())
    with pytest.raises(EmptyInput):
        split_indices([], SplitSpec())
    with pytest.raises(ValueError):
        SplitSpec(test_fraction=1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(3, 40), min_size=3, max_size=3), st.integers(0, 1000),
       st.booleans())
def test_split_properties(counts, seed, stratified):
    y = np.repeat([0, 1, 2], counts)
    parts = split_indices(y, SplitSpec(seed=seed, stratified=stratified))
    joined = np.concatenate(parts)
    np.testing.assert_array_equal(np.sort(joined), np.arange(len(y)))
    again = split_indices(y, SplitSpec(seed=seed, stratified=stratified))
    for a, b in zip(parts, again):
        np.testing.assert_array_equal(a, b)


# -- standardisation --------------------------------------------------------


def test_standardizer_on_fitting_set(rng):
    x = rng.standard_normal((40, 27)) * rng.uniform(0.1, 50, 27) + rng.uniform(-10, 10, 27)
    ds = Dataset(x, rng.integers(0, 3, 40))
    scaler = standardize_fit(ds)
    out = standardize_apply(scaler, ds).feature_matrix
    assert np.abs(out.mean(axis=0)).max() <= 1e-10
    assert np.abs(out.std(axis=0) - 1).max() <= 1e-9
    np.testing.assert_allclose(scaler.inverse(out), x, atol=1e-9)


def test_constant_column_is_flagged(rng):
    x = rng.standard_normal((10, 27))
    x[:, 4] = 7.5
    scaler = standardize_fit(Dataset(x, np.zeros(10, int)))
    assert scaler.flagged[4] and scaler.flagged.sum() == 1
    assert scaler.scale[4] == 1.0
    np.testing.assert_array_equal(scaler.transform(x)[:, 4], 0.0)


def test_standardizer_does_not_see_test_rows():
    ds = blob_dataset(30)
    spec = SplitSpec(seed=1)
    sub, _, test = split_indices(ds.labels, spec)
    before = standardize_fit(ds.subset(sub))
    x = ds.feature_matrix.copy()
    x[test[0]] = 1e6  # sentinel
    sub2, _, _ = split(Dataset(x, ds.labels), spec)
    after = standardize_fit(sub2)
    assert before.mean.tobytes() == after.mean.tobytes()
    assert before.scale.tobytes() == after.scale.tobytes()


# -- training ---------------------------------------------------------------


def test_one_step_when_batch_covers_data():
    ds = blob_dataset(10)
    net, curve = train(ds, ds, TrainConfig(epochs=1, batch_size=100))
    assert net.config["optimizer_steps"] == 1
    assert len(curve.records) == 1
    assert curve.records[0].val_accuracy is not None


def test_partial_last_minibatch_and_validation_schedule():
    ds = blob_dataset(10)  # 30 rows
    _, curve = train(ds, ds, TrainConfig(epochs=2, batch_size=7, val_interval=3))
    # ceil(30 / 7) = 5 minibatches per epoch
    assert [r.minibatch for r in curve.records] == [0, 1, 2, 3, 4] * 2
    validated = [r.step for r in curve.validation_points()]
    # every third step, plus each epoch end (steps 4 and 9)
    assert validated == [2, 4, 5, 8, 9]


def test_unshuffled_runs_are_identical():
    ds = blob_dataset(20)
    cfg = TrainConfig(epochs=3, batch_size=16, shuffle_each_epoch=False, seed=9)
    a = train(ds, ds, cfg)[1].to_csv_text()
    b = train(ds, ds, cfg)[1].to_csv_text()
    assert a == b


def test_curve_ordering_and_best_snapshot():
    ds = blob_dataset(40, sep=1.0)
    val = blob_dataset(10, seed=1, sep=1.0)
    net, curve = train(ds, val, TrainConfig(epochs=4, batch_size=20, val_interval=2))
    keys = [(r.epoch, r.minibatch) for r in curve.records]
    assert keys == sorted(keys)
    assert all(np.isfinite(r.train_loss) for r in curve.records)
    best = max(r.val_accuracy for r in curve.validation_points())
    assert net.config["best_val_accuracy"] == best
    acc = float(np.mean(net.predict(val.feature_matrix) == val.labels))
    assert acc == best


def test_curve_csv_header():
    ds = blob_dataset(5)
    _, curve = train(ds, ds, TrainConfig(epochs=1, batch_size=4, val_interval=2))
    lines = curve.to_csv_text().splitlines()
    assert lines[0] == "epoch,minibatch,step,train_loss,train_accuracy,val_loss,val_accuracy"
    assert lines[1].endswith(",,")  # no validation after the first step


def test_synthetic_training_reaches_high_validation_accuracy(synth_features):
    spec = SplitSpec(seed=0)
    sub, val, _ = split(synth_features, spec)
    scaler = standardize_fit(sub)
    net, curve = train(scaler.apply(sub), scaler.apply(val), TrainConfig(epochs=30))
    assert curve.validation_points()[-1].val_accuracy >= 0.95
    assert net.config["best_val_accuracy"] >= 0.95


def test_train_rejects_empty():
    with pytest.raises(EmptyInput):
        train(blob_dataset(3), Dataset(np.zeros((0, 27)), []), TrainConfig(epochs=1))


# -- evaluation -------------------------------------------------------------


def test_perfect_predictions():
    y = balanced_labels(3)
    ev = metrics_from_predictions(y, y)
    np.testing.assert_array_equal(ev.confusion.counts, np.diag([3, 3, 3]))
    assert ev.accuracy == 1.0


def test_hand_built_matrix():
    cm = ConfusionMatrix(np.array([[5, 0, 0], [1, 4, 0], [0, 0, 5]]))
    assert cm.accuracy() == pytest.approx(14 / 15)
    assert cm.precision(0) == pytest.approx(5 / 6)
    assert cm.recall(1) == pytest.approx(4 / 5)


def test_constant_predictor():
    y = balanced_labels(4)
    ev = metrics_from_predictions(y, np.zeros_like(y))
    assert ev.accuracy == pytest.approx(1 / 3)
    assert ev.precision[0] == pytest.approx(1 / 3)
    assert ev.recall[0] == 1.0
    assert ev.precision[1] is None and ev.recall[1] == 0.0


def test_evaluate_empty_and_csv(rng):
    from emgdnn.neuralnet import init_network

    with pytest.raises(EmptyInput):
        evaluate(init_network(0), Dataset(np.zeros((0, 27)), []))
    cm = ConfusionMatrix(np.array([[1, 2, 0], [0, 3, 0], [4, 0, 5]]))
    assert cm.to_csv_text() == "true\\pred,0,1,2\n0,1,2,0\n1,0,3,0\n2,4,0,5\n"


def brute_metrics(y_true, y_pred):
    n = len(y_true)
    correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    prec, rec = [], []
    for c in range(3):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        pc = sum(1 for p in y_pred if p == c)
        tc = sum(1 for t in y_true if t == c)
        prec.append(tp / pc if pc else None)
        rec.append(tp / tc if tc else None)
    return correct / n, prec, rec


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
def test_metrics_match_recount(pairs):
    y_true, y_pred = (np.array(v) for v in zip(*pairs))
    ev = metrics_from_predictions(y_true, y_pred)
    acc, prec, rec = brute_metrics(y_true.tolist(), y_pred.tolist())
    assert ev.accuracy == acc and ev.precision == prec and ev.recall == rec
    assert ev.confusion.total == len(pairs)
    np.testing.assert_array_equal(ev.confusion.counts.sum(axis=1), np.bincount(y_true, minlength=3))


# -- configuration ----------------------------------------------------------


def test_config_parsing(tmp_path):
    text = "# comment\nepochs = 7\nshuffle_each_epoch = false\nretention = fraction  # inline\n" \
           "fraction = 0.9\nvalidation_fraction_of_train = 0.2\n"
    values = parse_config_text(text)
    assert values == {"epochs": 7, "shuffle_each_epoch": False, "retention": "fraction",
                      "retention_fraction": 0.9, "validation_fraction": 0.2}
    path = tmp_path / "run.cfg"
    path.write_text(text)
    cfg = load_config(path)
    assert cfg.epochs == 7 and cfg.train_config().shuffle_each_epoch is False
    assert cfg.mspca_config().fraction == 0.9
    assert cfg.split_spec().validation_fraction_of_train == 0.2


def test_config_errors():
    with pytest.raises(KeyError):
        parse_config_text("nonsense = 1")
    with pytest.raises(ValueError):
        parse_config_text("epochs 5")
    with pytest.raises(ValueError):
        parse_config_text("denoise = maybe")


# -- end to end -------------------------------------------------------------


def test_run_pipeline_writes_artifacts(tmp_path):
    cfg = small_config()
    windows = synth_dataset_windows(cfg.windows_per_class, cfg.seed, cfg.window_len)
    result = run_pipeline(windows, cfg, tmp_path)
    for name in list(ARTIFACTS.values()) + [MANIFEST]:
        assert (tmp_path / name).exists()
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    assert manifest["denoise"] is True
    assert manifest["feature_matrix_shape"] == [90, 27]
    assert manifest["config"]["epochs"] == 3 and manifest["seeds"]["train"] == 5
    assert sum(manifest["split_sizes"].values()) == 90
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["n_samples"] == manifest["split_sizes"]["test"]
    assert metrics["accuracy"] == result.evaluation.accuracy
    assert (tmp_path / "confusion_matrix.csv").read_text().startswith("true\\pred,0,1,2\n")


def test_run_pipeline_is_deterministic(tmp_path):
    cfg = small_config(denoise=False)
    windows = synth_dataset_windows(cfg.windows_per_class, cfg.seed, cfg.window_len)
    run_pipeline(windows, cfg, tmp_path / "a")
    run_pipeline(windows, cfg, tmp_path / "b")
    for name in ARTIFACTS.values():
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / MANIFEST).read_text())
    assert manifest["denoise"] is False and manifest["config"]["denoise"] is False


def test_run_pipeline_segments_signals(tmp_path):
    cfg = small_config(denoise=False, epochs=1)
    windows = synth_dataset_windows(12, 0, 256)
    signals = [Signal(np.concatenate([w.samples for w in windows if w.label == c]), label=c)
               for c in range(3)]
    result = run_pipeline(signals, cfg.updated(window_len=256), tmp_path)
    assert result.manifest["n_windows"] == 36


def test_stage_errors_name_the_stage(tmp_path):
    with pytest.raises(StageError) as info:
        run_pipeline([], small_config(), tmp_path)
    assert info.value.stage == "segment"
    bad = [Window(np.ones(100), i % 3) for i in range(9)]  # not divisible by 2**6
    with pytest.raises(StageError) as info:
        run_pipeline(bad, small_config(denoise=False), tmp_path)
    assert info.value.stage == "features"
