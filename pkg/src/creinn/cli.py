"""Command-line entry point.

Commands: ``train``, ``eval``, ``ensemble``, ``ood`` and ``interval-eval``.
Each takes ``--config`` (an INI file with ``[model]``, ``[train]`` and
``[data]`` sections), ``--out-dir`` and an optional ``--seed`` that
overrides ``train.seed``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from dataclasses import dataclass

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .credal import ProbabilityIntervals, average_intervals, batch_uncertainty, intersection_probability
from .data import (
    FeatureMap,
    IdxFormatError,
    IntervalDataset,
    LabeledDataset,
    load_idx,
    make_interval_brightness,
    make_interval_noise,
    split,
    synth_blobs,
    synth_ood,
    with_label_noise,
)
from .layers import ModelSpec
from .metrics import ar_curve, ood_detect, relative_increase
from .training import NumericalError, TrainConfig, fit, predict, write_history_csv

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "main"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3

# Seed offsets for the data streams derived from the single config seed.
TEST_STREAM, OOD_STREAM, NOISE_STREAM = 10_000, 20_000, 30_000

DEFAULTS = {
    "model": {
        "hidden": "16,16",
        "ibn": "true",
    },
    "train": {
        "epochs": "50",
        "batch_size": "32",
        "learning_rate": "0.001",
        "lr_schedule": "",
        "optimizer": "adam",
        "seed": "0",
        "members": "5",
    },
    "data": {
        "dataset": "blobs",
        "num_classes": "3",
        "n_per_class": "200",
        "test_per_class": "200",
        "separation": "4.0",
        "sigma": "1.0",
        "label_noise": "0.0",
        "valid_fraction": "0.16666666666666666",
        "train_images": "",
        "train_labels": "",
        "test_images": "",
        "test_labels": "",
        "ood_images": "",
        "ood_labels": "",
        "ood_n": "200",
        "ood_offset": "10.0",
        "unit_box": "false",
        "standardize": "true",
        "interval": "none",
        "interval_low": "0.0",
        "interval_high": "0.0",
        "kind": "noise",
        "level_pairs": "0:0.08,0.12:0.16,0.16:0.18,0.18:0.2",
    },
}


class ConfigError(ValueError):
    pass


def _pairs(text):
    out = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        a, b = item.split(":")
        out.append((float(a), float(b)))
    return out


@dataclass
class ExperimentConfig:
    model: dict
    train: dict
    data: dict

    @property
    def seed(self) -> int:
        return int(self.train["seed"])

    def train_config(self, seed=None) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]),
            lr_schedule=[(int(e), f) for e, f in _pairs(t["lr_schedule"])],
            seed=self.seed if seed is None else seed,
            optimizer=t["optimizer"],
        )

    def model_spec(self, input_dim, num_classes) -> ModelSpec:
        hidden = [int(h) for h in self.model["hidden"].split(",") if h.strip()]
        return ModelSpec.mlp([input_dim, *hidden, num_classes], use_ibn=_bool(self.model["ibn"]))


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def load_config(path, seed=None) -> ExperimentConfig:
    """Read an INI config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in parser.sections():
        if name not in DEFAULTS:
            raise ConfigError(f"unknown section [{name}]")
    for name, defaults in DEFAULTS.items():
        values = dict(defaults)
        if parser.has_section(name):
            for key, value in parser.items(name):
                if key not in defaults:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                values[key] = value
        sections[name] = values
    if seed is not None:
        sections["train"]["seed"] = str(seed)
    cfg = ExperimentConfig(**sections)
    try:
        cfg.train_config()
        cfg.model_spec(1, 2)
        _pairs(cfg.data["level_pairs"])
        _bool(cfg.data["unit_box"]), _bool(cfg.data["standardize"])
        for key in ("num_classes", "n_per_class", "test_per_class", "ood_n"):
            int(cfg.data[key])
        for key in ("separation", "sigma", "label_noise", "valid_fraction", "ood_offset",
                    "interval_low", "interval_high"):
            float(cfg.data[key])
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    if cfg.data["dataset"] not in ("blobs", "idx"):
        raise ConfigError(f"unknown dataset {cfg.data['dataset']!r}")
    if cfg.data["interval"] not in ("none", "noise", "brightness"):
        raise ConfigError(f"unknown interval kind {cfg.data['interval']!r}")
    return cfg


# ---------------------------------------------------------------- data


def _raw_data(cfg: ExperimentConfig):
    """``(train, valid, test)`` before any preprocessing."""
    d, seed = cfg.data, cfg.seed
    if d["dataset"] == "blobs":
        kw = dict(num_classes=int(d["num_classes"]), separation=float(d["separation"]), sigma=float(d["sigma"]))
        full = synth_blobs(n_per_class=int(d["n_per_class"]), seed=seed, **kw)
        test = synth_blobs(n_per_class=int(d["test_per_class"]), seed=seed + TEST_STREAM, **kw)
    else:
        try:
            full = load_idx(d["train_images"], d["train_labels"], "idx")
            test = load_idx(d["test_images"], d["test_labels"], "idx")
        except OSError as exc:
            raise ConfigError(f"cannot read IDX data: {exc}") from None
        test.num_classes = full.num_classes = max(full.num_classes, test.num_classes)
    if float(d["label_noise"]) > 0:
        full = with_label_noise(full, float(d["label_noise"]), seed=seed + NOISE_STREAM)
    train, valid = split(full, float(d["valid_fraction"]), seed=seed)
    return train, valid, test


def _raw_ood(cfg: ExperimentConfig):
    d = cfg.data
    if d["dataset"] == "blobs":
        return synth_ood(int(d["ood_n"]), float(d["ood_offset"]), cfg.seed + OOD_STREAM,
                         int(d["num_classes"]), float(d["separation"]), float(d["sigma"]))
    if not d["ood_images"]:
        raise ConfigError("IDX datasets need data.ood_images and data.ood_labels for OOD evaluation")
    try:
        return load_idx(d["ood_images"], d["ood_labels"], "ood")
    except OSError as exc:
        raise ConfigError(f"cannot read IDX data: {exc}") from None


class Pipeline:
    """Raw data -> optional unit box -> interval construction -> optional standardization."""

    def __init__(self, box: FeatureMap | None, std: FeatureMap | None):
        self.box, self.std = box, std

    @classmethod
    def fit(cls, cfg: ExperimentConfig, train: LabeledDataset, levels):
        box = FeatureMap.unit_box(train.inputs) if _bool(cfg.data["unit_box"]) else None
        std = None
        if _bool(cfg.data["standardize"]):
            base = cls(box, None).intervals(train, cfg.data["interval"], levels)
            std = FeatureMap.standardize(0.5 * (base.lower + base.upper))
        return cls(box, std)

    def intervals(self, data: LabeledDataset, kind="none", levels=(0.0, 0.0)) -> IntervalDataset:
        if self.box is not None:
            data = self.box(data)
        if kind in ("noise", "brightness"):
            make = make_interval_noise if kind == "noise" else make_interval_brightness
            try:
                out = make(data, *levels)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        else:
            out = IntervalDataset(data.inputs, data.inputs, data.labels, "point", (0.0, 0.0),
                                  data.name, data.num_classes)
        if self.std is not None:
            out = self.std(out)
        return out

    def to_meta(self):
        enc = lambda f: None if f is None else {"shift": f.shift.tolist(), "scale": f.scale.tolist(), "clip": f.clip}
        return {"unit_box": enc(self.box), "standardize": enc(self.std)}

    @classmethod
    def from_meta(cls, meta):
        dec = lambda m: None if m is None else FeatureMap(np.array(m["shift"]), np.array(m["scale"]), m["clip"])
        return cls(dec(meta.get("unit_box")), dec(meta.get("standardize")))


def _train_levels(cfg):
    return (float(cfg.data["interval_low"]), float(cfg.data["interval_high"]))


# ---------------------------------------------------------------- helpers


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _load_members(paths, num_classes=None):
    if not paths:
        raise ConfigError("need at least one checkpoint")
    members = []
    for path in paths:
        try:
            members.append(load_checkpoint(path))
        except FileNotFoundError:
            raise ConfigError(f"checkpoint not found: {path}") from None
        except (OSError, CheckpointError) as exc:
            raise ConfigError(f"cannot load checkpoint {path}: {exc}") from None
    classes = {m.spec.num_classes for m in members}
    if len(classes) > 1:
        raise ConfigError(f"checkpoints disagree on the number of classes: {sorted(classes)}")
    if num_classes is not None and classes != {num_classes}:
        raise ConfigError(f"checkpoint has {classes.pop()} classes, dataset has {num_classes}")
    return members


def credal_predictions(members, raw: LabeledDataset, kind="none", levels=(0.0, 0.0)) -> ProbabilityIntervals:
    """Averaged reachable intervals of one or more checkpoints on ``raw``."""
    outs = []
    for ck in members:
        data = Pipeline.from_meta(ck.meta.get("preprocess", {})).intervals(raw, kind, levels)
        if int(np.prod(data.lower.shape[1:])) != ck.spec.input_dim:
            raise ConfigError(f"data has {int(np.prod(data.lower.shape[1:]))} features, "
                              f"checkpoint expects {ck.spec.input_dim}")
        lo, hi, _ = predict(ck.model, data)
        outs.append(ProbabilityIntervals(lo, hi))
    return average_intervals(outs)


def _train_one(cfg, train, valid, seed, out_dir, tag=""):
    pipe = Pipeline.fit(cfg, train, _train_levels(cfg))
    kind, levels = cfg.data["interval"], _train_levels(cfg)
    itrain, ivalid = pipe.intervals(train, kind, levels), pipe.intervals(valid, kind, levels)
    spec = cfg.model_spec(int(np.prod(train.inputs.shape[1:])), train.num_classes)
    tc = cfg.train_config(seed)
    model, history = fit(spec, itrain, ivalid, tc)
    meta = {"dataset": train.name, "epochs": tc.epochs, "preprocess": pipe.to_meta(),
            "interval": [kind, list(levels)]}
    ckpt = os.path.join(out_dir, f"model{tag}.ckpt")
    save_checkpoint(ckpt, model, seed, meta)
    write_history_csv(history, os.path.join(out_dir, f"history{tag}.csv"))
    return ckpt


def _eval_report(pi: ProbabilityIntervals, labels, out_dir, measures):
    q = intersection_probability(pi).probs
    pred = np.argmax(q, axis=-1)
    correct = pred == labels
    u = batch_uncertainty(pi)
    _write_csv(os.path.join(out_dir, "predictions.csv"), ["index", "label", "prediction", "correct", "au", "eu", "tu"],
               [(i, int(labels[i]), int(pred[i]), int(correct[i]), u["au"][i], u["eu"][i], u["tu"][i])
                for i in range(len(labels))])
    curve_rows, area_rows = [], []
    for m in measures:
        c = ar_curve(u[m], correct)
        curve_rows += [(m, r, a) for r, a in zip(c.rejection_rate, c.accuracy)]
        area_rows.append((m, c.auarc))
    _write_csv(os.path.join(out_dir, "ar_curve.csv"), ["measure", "rejection_rate", "accuracy"], curve_rows)
    _write_csv(os.path.join(out_dir, "auarc.csv"), ["measure", "auarc"], area_rows + [("accuracy", float(correct.mean()))])


def _measures(text, allowed):
    ms = [m.strip() for m in text.split(",") if m.strip()]
    if not ms or any(m not in allowed for m in ms):
        raise ConfigError(f"--measure must be a comma list from {allowed}")
    return ms


# ---------------------------------------------------------------- commands


def cmd_train(cfg, args):
    train, valid, _ = _raw_data(cfg)
    _train_one(cfg, train, valid, cfg.seed, args.out_dir)


def cmd_eval(cfg, args):
    _, _, test = _raw_data(cfg)
    members = _load_members([args.checkpoint], test.num_classes)
    pi = credal_predictions(members, test, cfg.data["interval"], _train_levels(cfg))
    _eval_report(pi, test.labels, args.out_dir, _measures(args.measure, ("au", "eu", "tu")))


def cmd_ensemble(cfg, args):
    train, valid, test = _raw_data(cfg)
    paths = args.checkpoints
    if not paths:
        k = int(cfg.train["members"])
        if k < 1:
            raise ConfigError("train.members must be >= 1")
        paths = [_train_one(cfg, train, valid, cfg.seed + i, args.out_dir, f"_{i}") for i in range(k)]
    members = _load_members(paths, test.num_classes)
    pi = credal_predictions(members, test, cfg.data["interval"], _train_levels(cfg))
    _eval_report(pi, test.labels, args.out_dir, _measures(args.measure, ("au", "eu", "tu")))


def cmd_ood(cfg, args):
    _, _, test = _raw_data(cfg)
    ood = _raw_ood(cfg)
    if len(ood) == 0:
        raise ConfigError("the OOD set is empty")
    members = _load_members(args.checkpoints, test.num_classes)
    kind, levels = cfg.data["interval"], _train_levels(cfg)
    u_id = batch_uncertainty(credal_predictions(members, test, kind, levels))
    u_ood = batch_uncertainty(credal_predictions(members, ood, kind, levels))
    rows = []
    for m in _measures(args.measure, ("au", "eu", "tu")):
        auroc, auprc = ood_detect(u_id[m], u_ood[m])
        rows.append((auroc, auprc, m))
    _write_csv(os.path.join(args.out_dir, "ood.csv"), ["auroc", "auprc", "measure"], rows)


def cmd_interval_eval(cfg, args):
    _, _, test = _raw_data(cfg)
    members = _load_members([args.checkpoint], test.num_classes)
    kind = args.kind or cfg.data["kind"]
    if kind not in ("noise", "brightness"):
        raise ConfigError(f"--kind must be noise or brightness, got {kind!r}")
    pairs = _pairs(args.pairs) if args.pairs else _pairs(cfg.data["level_pairs"])
    if not pairs:
        raise ConfigError("no level pairs given")
    levels = {"au": {}, "eu": {}, "tu": {}}
    curve_rows = []
    for pair in pairs:
        pi = credal_predictions(members, test, kind, pair)
        u = batch_uncertainty(pi)
        correct = np.argmax(intersection_probability(pi).probs, axis=-1) == test.labels
        name = f"{pair[0]:g}:{pair[1]:g}"
        for m in levels:
            levels[m][name] = u[m]
            c = ar_curve(u[m], correct)
            curve_rows += [(name, m, r, a) for r, a in zip(c.rejection_rate, c.accuracy)]
    base = f"{pairs[0][0]:g}:{pairs[0][1]:g}"
    ri = {m: relative_increase(levels[m], base).ratios for m in levels}
    _write_csv(os.path.join(args.out_dir, "relative_increase.csv"), ["level", "r_au", "r_eu", "r_tu"],
               [(name, ri["au"][name], ri["eu"][name], ri["tu"][name]) for name in levels["au"]])
    _write_csv(os.path.join(args.out_dir, "ar_curve.csv"), ["level", "measure", "rejection_rate", "accuracy"],
               curve_rows)


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ensemble": cmd_ensemble,
    "ood": cmd_ood,
    "interval-eval": cmd_interval_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="creinn", description="Credal-set interval neural networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI file with [model], [train], [data] sections")
        p.add_argument("--out-dir", required=True, help="directory for checkpoints and CSV outputs")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        return p

    add("train", "train one model; writes model.ckpt and history.csv")
    p = add("eval", "AR curves and AUARC on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--measure", default="au,eu,tu")
    p = add("ensemble", "average the credal predictions of several models")
    p.add_argument("--checkpoints", nargs="*", default=None, help="members; trains train.members models if omitted")
    p.add_argument("--measure", default="au,eu,tu")
    p = add("ood", "OOD detection AUROC/AUPRC from uncertainty scores")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--measure", default="eu,tu")
    p = add("interval-eval", "relative increase of uncertainty under interval inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", choices=("noise", "brightness"), default=None)
    p.add_argument("--pairs", default=None, help="level pairs such as 0:0.08,0.12:0.16")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, args.seed)
        os.makedirs(args.out_dir, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, IdxFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
