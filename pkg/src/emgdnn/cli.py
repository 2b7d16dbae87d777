"""Command-line interface: ``emgdnn <subcommand> ...``."""
import argparse
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import pipeline as pl
from .errors import EmgError
from .features import windows_to_dataset
from .mspca import mspca_denoise
from .neuralnet import load_model, save_model
from .signal_core import (
    ClassLabel,
    Dataset,
    atomic_write,
    load_signal,
    load_windows,
    read_dataset_csv,
    read_feature_csv,
    save_windows,
    segment,
    synth_dataset_windows,
    synth_generate,
    write_dataset_csv,
)

log = logging.getLogger("emgdnn")

SPLIT_FILES = ("sub_train.csv", "validation.csv", "test.csv")


def _config(args):
    cfg = pl.PipelineConfig()
    if args.config:
        cfg = pl.load_config(args.config, cfg)
    overrides = {}
    for key in ("seed", "epochs", "batch_size", "wavelet", "levels", "retention",
                "retention_fraction", "windows_per_class", "window_len", "stride"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_denoise", False):
        overrides["denoise"] = False
    return cfg.updated(**overrides)


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _windows_from_args(args, cfg):
    if getattr(args, "signal", None):
        windows = []
        for path in args.signal:
            sig = load_signal(path, args.format, label=args.label)
            windows.extend(segment(sig, cfg.window_len, cfg.stride or None))
        return windows
    return load_windows(args.windows)


def _scaler_from_model(net):
    if "standardizer_mean" not in net.extras:
        return None
    mean = net.extras["standardizer_mean"]
    return pl.Standardizer(mean, net.extras["standardizer_scale"], np.zeros(len(mean), bool))


def cmd_synth(args):
    cfg = _config(args)
    if args.label is not None:
        windows = synth_generate(ClassLabel.parse(args.label), cfg.windows_per_class,
                                 cfg.seed, cfg.window_len)
    else:
        windows = synth_dataset_windows(cfg.windows_per_class, cfg.seed, cfg.window_len)
    path = _out_dir(args) / args.output
    save_windows(path, windows)
    print(f"wrote {len(windows)} windows to {path}")


def cmd_denoise(args):
    cfg = _config(args)
    windows = mspca_denoise(_windows_from_args(args, cfg), cfg.mspca_config())
    path = _out_dir(args) / args.output
    save_windows(path, windows)
    print(f"wrote {len(windows)} denoised windows to {path}")


def cmd_extract(args):
    cfg = _config(args)
    windows = _windows_from_args(args, cfg)
    dataset = windows_to_dataset(windows, cfg.wavelet, cfg.levels, cfg.signed_ratio)
    path = _out_dir(args) / args.output
    write_dataset_csv(dataset, path)
    print(f"wrote {len(dataset)} x 27 feature matrix to {path}")


def cmd_split(args):
    cfg = _config(args)
    parts = pl.split(read_dataset_csv(args.data), cfg.split_spec())
    out = _out_dir(args)
    for name, part in zip(SPLIT_FILES, parts):
        write_dataset_csv(part, out / name)
    print(" / ".join(f"{name}: {len(p)}" for name, p in zip(SPLIT_FILES, parts)))


def cmd_train(args):
    cfg = _config(args)
    sub_train, validation = read_dataset_csv(args.train), read_dataset_csv(args.val)
    scaler = pl.standardize_fit(sub_train)
    net, curve = pl.train(scaler.apply(sub_train), scaler.apply(validation), cfg.train_config())
    net.extras = {"standardizer_mean": scaler.mean, "standardizer_scale": scaler.scale}
    out = _out_dir(args)
    save_model(net, out / pl.ARTIFACTS["model"])
    atomic_write(out / pl.ARTIFACTS["learning_curve"], curve.to_csv_text())
    print(f"best validation accuracy {net.config['best_val_accuracy']:.4f}; model in {out}")


def _prepared(net, matrix):
    scaler = _scaler_from_model(net)
    return matrix if scaler is None else scaler.transform(matrix)


def cmd_evaluate(args):
    net = load_model(args.model)
    data = read_dataset_csv(args.data)
    result = pl.evaluate(net, Dataset(_prepared(net, data.feature_matrix), data.labels))
    report = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out_dir:
        out = _out_dir(args)
        atomic_write(out / pl.ARTIFACTS["metrics"], report)
        atomic_write(out / pl.ARTIFACTS["confusion_matrix"], result.confusion.to_csv_text())
    sys.stdout.write(report)


def cmd_predict(args):
    net = load_model(args.model)
    matrix, _ = read_feature_csv(args.data)
    probs = net.forward(_prepared(net, matrix), "eval")
    lines = ["prediction,p0,p1,p2"]
    for row in probs:
        lines.append(f"{int(np.argmax(row))}," + ",".join(repr(float(p)) for p in row))
    text = "\n".join(lines) + "\n"
    if args.out_dir:
        atomic_write(_out_dir(args) / args.output, text)
    else:
        sys.stdout.write(text)


def cmd_run(args):
    cfg = _config(args)
    if args.signal:
        inputs = [load_signal(p, args.format, label=args.label) for p in args.signal]
    elif args.windows:
        inputs = load_windows(args.windows)
    else:
        inputs = synth_dataset_windows(cfg.windows_per_class, cfg.seed, cfg.window_len)
    result = pl.run_pipeline(inputs, cfg, args.out_dir)
    print(json.dumps(result.evaluation.to_dict(), indent=2, sort_keys=True))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for generation, splitting and training")
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--out-dir", default=None, help="directory for outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--windows", help="windows file (.npz) written by 'synth'")
    inputs.add_argument("--signal", nargs="+", help="raw signal file(s) to segment")
    inputs.add_argument("--format", choices=("csv", "f64-binary"),
                        help="signal format (default: from file suffix)")
    inputs.add_argument("--label", help="class label for --signal inputs (0/1/2 or name)")
    inputs.add_argument("--window-len", type=int, dest="window_len")
    inputs.add_argument("--stride", type=int)

    mspca = argparse.ArgumentParser(add_help=False)
    mspca.add_argument("--wavelet")
    mspca.add_argument("--levels", type=int)
    mspca.add_argument("--retention", choices=("kaiser", "fraction"))
    mspca.add_argument("--retention-fraction", type=float, dest="retention_fraction")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", type=int, dest="batch_size")

    p = argparse.ArgumentParser(prog="emgdnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic labelled windows")
    s.add_argument("--per-class", type=int, dest="windows_per_class")
    s.add_argument("--label", help="generate a single class only")
    s.add_argument("--window-len", type=int, dest="window_len")
    s.add_argument("--output", default="windows.npz")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("denoise", parents=[common, inputs, mspca], help="MSPCA-denoise windows")
    s.add_argument("--output", default="denoised.npz")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("extract", parents=[common, inputs], help="windows -> feature CSV")
    s.add_argument("--wavelet")
    s.add_argument("--output", default="features.csv")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("split", parents=[common], help="sub-train / validation / test split")
    s.add_argument("--data", required=True, help="feature CSV with a label column")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", parents=[common, training], help="train the classifier")
    s.add_argument("--train", required=True, help="sub-training feature CSV")
    s.add_argument("--val", required=True, help="validation feature CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="confusion matrix and metrics")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", parents=[common], help="class probabilities per row")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--output", default="predictions.csv")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("run", parents=[common, inputs, mspca, training], help="end-to-end pipeline")
    s.add_argument("--per-class", type=int, dest="windows_per_class",
                   help="synthetic windows per class when no inputs are given")
    s.add_argument("--no-denoise", action="store_true", help="skip the MSPCA stage")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out_dir is None and args.command not in ("evaluate", "predict"):
        args.out_dir = "."
    try:
        args.func(args)
    except EmgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
