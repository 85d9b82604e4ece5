"""Command-line entry point: ``sanpool run <subcommand> <config> [key=value ...]``.

Exit codes: 0 success, 1 failed gradient check, 2 bad configuration or
contract violation, 3 dataset error, 4 training divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import data as D
from . import theory
from .aggregation import FeatureSet
from .errors import ConfigError, ContractError, FormatError, TrainingError
from .gradcheck import finite_diff_gradient, relative_error
from . import tensor as T
from .models import AGGREGATORS, ModelConfig, build_model, set_cardinality
from .train import TrainConfig, evaluate, train

log = logging.getLogger("sanpool")

SUBCOMMANDS = ("train", "eval", "gradcheck", "injectivity", "maxlimit", "profile")


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# key -> (parser, default); default None marks a required key
SCHEMA = {
    "output_dir": (str, None),
    "seed": (int, None),
    "aggregator": (_choice(*AGGREGATORS), "san"),
    "san_outputs": (int, 64),
    "activation": (_choice("relu", "tanh", "sigmoid"), "relu"),
    "positional": (_choice("none", "normalized-index", "normalized-2d", "sinusoidal"), "none"),
    "d_pos": (int, 2),
    "extractor": (_choice("mlp", "conv"), "mlp"),
    "extractor_widths": (_ints, (16,)),
    "conv_channels": (_ints, (8, 16)),
    "head_widths": (_ints, ()),
    "dataset": (_choice("blob-sets", "ring-vs-blob", "idx"), "blob-sets"),
    "train_images": (str, ""),
    "train_labels": (str, ""),
    "test_images": (str, ""),
    "test_labels": (str, ""),
    "n_classes": (int, 0),
    "count": (int, 1000),
    "test_count": (int, 500),
    "n_min": (int, 5),
    "n_max": (int, 20),
    "spread": (float, 0.5),
    "train_sizes": (_ints, ()),
    "test_sizes": (_ints, ()),
    "resize_method": (_choice("bilinear", "bicubic"), "bicubic"),
    "lr": (float, 1e-3),
    "batch_size": (int, 256),
    "epochs": (int, 10),
    "validation_fraction": (float, 0.0),
    "model_path": (str, ""),
    "m_schedule": (_ints, (4, 16, 64)),
    "universe_values": (int, 10),
    "subset_size": (int, 2),
    "values": (_floats, tuple(float(v) for v in range(1, 11))),
    "p_schedule": (_floats, (2.0, 10.0, 50.0, 256.0)),
    "profile_set": (_floats, (-1.0, 1.0)),
    "direction": (float, 1.0),
    "grid_step": (float, 0.25),
    "grid_min": (float, -5.0),
    "grid_max": (float, 5.0),
    "gradcheck_samples": (int, 2),
    "gradcheck_h": (float, 1e-5),
    "gradcheck_tol": (float, 1e-4),
}


def _split_kv(text, where):
    if "=" not in text:
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def parse_config(text, overrides=()):
    """Parse ``key=value`` lines (``#`` comments) plus overrides into a typed dict.

    Overrides beat file values; a key repeated among overrides keeps its last value.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, value = _split_kv(line, f"line {lineno}")
        raw[key] = value
    for item in overrides:
        key, value = _split_kv(item, "override")
        raw[key] = value
    cfg = {}
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key '{key}'", key)
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}': {value!r} ({exc})", key) from None
    for key, (_, default) in SCHEMA.items():
        if key not in cfg:
            if default is None:
                raise ConfigError(f"missing required config key '{key}'", key)
            cfg[key] = default
    return cfg


def load_config(path, overrides=()):
    with open(path) as f:
        return parse_config(f.read(), overrides)


# ---------------------------------------------------------------------------
# datasets


def _resize_all(dataset, sizes, method, rng):
    samples = []
    for img in dataset.samples:
        s = int(rng.choice(sizes))
        samples.append(D.resize_image(img, s, s, method))
    return D.LabeledDataset(samples, dataset.labels, dataset.n_classes)


def _synthetic(cfg, count, seed, n_range=None):
    n_range = n_range or (cfg["n_min"], cfg["n_max"])
    return D.gen_synthetic_sets(cfg["dataset"], count, seed, n_range=n_range,
                                spread=cfg["spread"])


def load_datasets(cfg):
    """Training and test datasets named by the config (test may be None)."""
    if cfg["dataset"] == "idx":
        if not cfg["train_images"] or not cfg["train_labels"]:
            raise ConfigError("idx dataset needs 'train_images' and 'train_labels'",
                              "train_images")
        n_classes = cfg["n_classes"] or None
        train_ds = D.load_idx(cfg["train_images"], cfg["train_labels"], n_classes)
        test_ds = None
        if cfg["test_images"]:
            test_ds = D.load_idx(cfg["test_images"], cfg["test_labels"], train_ds.n_classes)
        if cfg["train_sizes"]:
            rng = np.random.default_rng(cfg["seed"])
            train_ds = _resize_all(train_ds, cfg["train_sizes"], cfg["resize_method"], rng)
        return train_ds, test_ds
    train_ds = _synthetic(cfg, cfg["count"], cfg["seed"])
    test_ds = _synthetic(cfg, cfg["test_count"], cfg["seed"] + 1) if cfg["test_count"] else None
    return train_ds, test_ds


def sized_test_sets(cfg, test_ds):
    """(size, dataset) pairs for the per-size test evaluation."""
    out = []
    for s in cfg["test_sizes"]:
        if cfg["dataset"] == "idx":
            if test_ds is None:
                continue
            out.append((s, D.LabeledDataset(
                [D.resize_image(im, s, s, cfg["resize_method"]) for im in test_ds.samples],
                test_ds.labels, test_ds.n_classes)))
        else:
            out.append((s, _synthetic(cfg, cfg["test_count"] or 200, cfg["seed"] + 1, (s, s))))
    return out


def model_config(cfg, dataset, fixed_n=None):
    sample = dataset.samples[0]
    in_dim = sample.dim if isinstance(sample, FeatureSet) else (
        1 if np.ndim(sample) == 2 else np.shape(sample)[2])
    if cfg["aggregator"] in ("flatten", "conv1x1") and fixed_n is None:
        fixed_n = set_cardinality(sample, cfg["extractor"], len(cfg["conv_channels"]))
    return ModelConfig(
        n_classes=dataset.n_classes, in_dim=in_dim, extractor=cfg["extractor"],
        extractor_widths=cfg["extractor_widths"], conv_channels=cfg["conv_channels"],
        aggregator=cfg["aggregator"], san_outputs=cfg["san_outputs"],
        activation=cfg["activation"], positional=cfg["positional"], d_pos=cfg["d_pos"],
        head_widths=cfg["head_widths"], fixed_n=fixed_n)


def train_config(cfg):
    return TrainConfig(lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       seed=cfg["seed"], validation_fraction=cfg["validation_fraction"])


# ---------------------------------------------------------------------------
# subcommands


@dataclass
class Outcome:
    status: int
    summary: list


def _write_summary(out_dir, name, lines):
    with open(os.path.join(out_dir, name), "w") as f:
        f.write("\n".join(lines) + "\n")


def _write_size_csv(path, rows):
    with open(path, "w") as f:
        f.write("size,loss,accuracy\n")
        for size, loss, acc in rows:
            f.write(f"{size},{loss:.6f},{acc:.6f}\n")


def _evaluate_all(cfg, model, test_ds, out_dir, epoch, records, summary):
    if test_ds is not None:
        loss, acc = evaluate(model, test_ds, cfg["batch_size"])
        records.append(D.MetricsRecord(epoch, "test", loss, acc))
        summary.append(f"test accuracy: {acc:.6f}")
    rows = []
    for size, ds in sized_test_sets(cfg, test_ds):
        loss, acc = evaluate(model, ds, cfg["batch_size"])
        rows.append((size, loss, acc))
        summary.append(f"test accuracy at size {size}: {acc:.6f}")
    if rows:
        _write_size_csv(os.path.join(out_dir, "test_by_size.csv"), rows)


def cmd_train(cfg, out_dir):
    train_ds, test_ds = load_datasets(cfg)
    mcfg = model_config(cfg, train_ds)
    model = build_model(mcfg, seed=cfg["seed"])
    model, records = train(model, train_ds, train_config(cfg))
    summary = [f"aggregator: {cfg['aggregator']}", f"epochs: {cfg['epochs']}"]
    for split in ("train", "valid"):
        last = [r for r in records if r.split == split]
        if last:
            summary.append(f"final {split} accuracy: {last[-1].accuracy:.6f}")
    _evaluate_all(cfg, model, test_ds, out_dir, cfg["epochs"], records, summary)
    D.write_metrics_csv(records, os.path.join(out_dir, "metrics.csv"))
    state = model.state_dict()
    state["__fixed_n"] = np.array(-1 if mcfg.fixed_n is None else mcfg.fixed_n)
    np.savez(os.path.join(out_dir, "model.npz"), **state)
    _write_summary(out_dir, "summary.txt", summary)
    return Outcome(0, summary)


def cmd_eval(cfg, out_dir):
    train_ds, test_ds = load_datasets(cfg)
    path = cfg["model_path"] or os.path.join(out_dir, "model.npz")
    try:
        with np.load(path) as f:
            state = {k: f[k] for k in f.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    fixed_n = int(state.pop("__fixed_n", -1))
    model = build_model(model_config(cfg, train_ds, None if fixed_n < 0 else fixed_n))
    model.load_state_dict(state)
    records = []
    summary = [f"aggregator: {cfg['aggregator']}"]
    _evaluate_all(cfg, model, test_ds if test_ds is not None else train_ds, out_dir, 0,
                  records, summary)
    D.write_metrics_csv(records, os.path.join(out_dir, "eval_metrics.csv"))
    _write_summary(out_dir, "eval_summary.txt", summary)
    return Outcome(0, summary)


def cmd_gradcheck(cfg, out_dir):
    train_ds, _ = load_datasets(cfg)
    model = build_model(model_config(cfg, train_ds), seed=cfg["seed"])
    k = min(cfg["gradcheck_samples"], len(train_ds))
    samples, labels = train_ds.samples[:k], train_ds.labels[:k]

    def loss_fn(_):
        return T.softmax_cross_entropy(model.forward(samples), labels)

    T.backward(loss_fn(None))
    analytic = {name: p.grad.copy() for name, p in model.params.items()}
    rows = []
    for name, p in model.params.items():
        fd = finite_diff_gradient(loss_fn, p, cfg["gradcheck_h"])
        rows.append((name, relative_error(analytic[name], fd)))
    worst = max(err for _, err in rows)
    with open(os.path.join(out_dir, "gradcheck.csv"), "w") as f:
        f.write("parameter,relative_error\n")
        for name, err in rows:
            f.write(f"{name},{err:.6e}\n")
    ok = worst < cfg["gradcheck_tol"]
    summary = [f"parameters checked: {len(rows)}", f"max relative error: {worst:.3e}",
               f"gradcheck: {'PASS' if ok else 'FAIL'} (tolerance {cfg['gradcheck_tol']:g})"]
    _write_summary(out_dir, "gradcheck_summary.txt", summary)
    return Outcome(0 if ok else 1, summary)


def cmd_injectivity(cfg, out_dir):
    universe = theory.subsets_universe(cfg["universe_values"], cfg["subset_size"])
    reports = [theory.injectivity_check(universe, M, cfg["seed"]) for M in cfg["m_schedule"]]
    D.write_collision_csv(reports, os.path.join(out_dir, "collisions.csv"))
    summary = [f"sets: {len(universe)}"] + [
        f"M={r.M}: {r.collisions} collisions in {r.pairs_tested} pairs, "
        f"min distance {r.min_pair_distance:.6e}" for r in reports]
    _write_summary(out_dir, "injectivity_summary.txt", summary)
    return Outcome(0, summary)


def cmd_maxlimit(cfg, out_dir):
    values, ps = cfg["values"], cfg["p_schedule"]
    modes = ["log-sum-exp"] if min(values) <= 0 else ["power", "log-sum-exp"]
    summary = []
    with open(os.path.join(out_dir, "maxlimit.csv"), "w") as f:
        f.write("mode,p,error,bound\n")
        for mode in modes:
            errors = theory.maxlimit_convergence_check(values, ps, mode)
            for p, err in zip(ps, errors):
                bound = theory.maxlimit_bound(values, p, mode)
                f.write(f"{mode},{p:g},{err:.6e},{bound:.6e}\n")
                summary.append(f"{mode} p={p:g}: max error {err:.6e} (bound {bound:.6e})")
    _write_summary(out_dir, "maxlimit_summary.txt", summary)
    return Outcome(0, summary)


def cmd_profile(cfg, out_dir):
    grid = theory.uniform_grid(cfg["grid_min"], cfg["grid_max"], cfg["grid_step"])
    report = theory.relu_profile(cfg["profile_set"], cfg["direction"], grid)
    D.write_profile_csv(report, os.path.join(out_dir, "profile.csv"))
    recovered = theory.recover_1d_set(report, cfg["grid_step"])
    summary = [f"grid points: {grid.size}"] + [
        f"recovered element {x:.6f} with multiplicity {m}" for x, m in recovered]
    _write_summary(out_dir, "profile_summary.txt", summary)
    return Outcome(0, summary)


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "injectivity": cmd_injectivity,
    "maxlimit": cmd_maxlimit,
    "profile": cmd_profile,
}


def run(subcommand, config_path, overrides=()):
    """Run one subcommand; returns the process exit status."""
    try:
        with open(config_path) as f:
            text = f.read()
    except OSError as exc:
        print(f"config error: cannot read {config_path}: {exc.strerror}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, overrides)
        out_dir = cfg["output_dir"]
        os.makedirs(out_dir, exist_ok=True)
        outcome = COMMANDS[subcommand](cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError) as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return 2
    for line in outcome.summary:
        print(line)
    return outcome.status


def main(argv=None):
    parser = argparse.ArgumentParser(prog="sanpool", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment or check")
    p_run.add_argument("subcommand", choices=SUBCOMMANDS)
    p_run.add_argument("config")
    p_run.add_argument("overrides", nargs="*", metavar="key=value")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    return run(args.subcommand, args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
