"""Command-line entry point: ``perovnet generate|train|tune|eval|predict``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .config import SCHEMA, ConfigError, RunConfig
from .dataset import (
    SPLITS,
    DatasetError,
    SamplerConfig,
    dataset_template,
    generate,
    load_manifest,
    load_split,
    rasterize,
    read_eqe_csv,
)
from .evaluate import EvaluationError, export_scatter, metrics_report
from .hyperopt import HyperoptError, TrialTimeout, tune
from .materials import DispersionError, load_library
from .nn import ModelFileError, load_model, predict, save_model, train
from .nn.layers import NumericalError
from .stacks import StackFileError, default_library, load_stack_file, resolve_stack
from .tmm import TMMError, compute_eqe

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOCK_NAME = ".perovnet.lock"
CONFIG_NAME = "config.ini"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


@contextmanager
def output_lock(out_dir, lock=None):
    """Exclusive lock file guarding one output directory.

    ``lock`` overrides the lock path, for outputs that are replaced
    wholesale and so cannot hold their own lock file.
    """
    out_dir = Path(out_dir)
    if lock is None:
        out_dir.mkdir(parents=True, exist_ok=True)
        lock = out_dir / LOCK_NAME
    else:
        lock = Path(lock)
        lock.parent.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{out_dir} is locked by another run (remove {lock} if that run is dead)") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(f"{os.getpid()}\n")
    try:
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _library(cfg):
    d = cfg["paths.materials_dir"]
    return load_library(d) if d else default_library()


def _load_cfg(args) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if "." in k and v is not None}
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.threads is not None:
        overrides["run.threads"] = str(args.threads)
    for key, flag in getattr(args, "_shortcuts", {}).items():
        if getattr(args, flag, None) is not None:
            overrides[key] = str(getattr(args, flag))
    return RunConfig.load(args.config, overrides)


def _write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "learning_rate", "train_loss", "val_rmse", "val_rmse_nm"])
        for i in range(len(history)):
            val = history.val_rmse[i] if i < len(history.val_rmse) else ""
            val_nm = history.val_rmse_nm[i] if i < len(history.val_rmse_nm) else ""
            w.writerow([i, repr(history.learning_rate[i]), repr(history.train_loss[i]), repr(val), repr(val_nm)])


def _net_config_for(cfg, manifest, **changes):
    img = manifest["image"]
    net = cfg.network_config(
        channels=img["channels"], output_dim=len(manifest["box"]["names"]), height=img["height"], width=img["width"]
    )
    if changes:
        net = type(net).from_dict({**net.to_dict(), **changes})
    return net


def _fit(cfg, dataset, net_cfg, train_cfg, callback=None):
    manifest = load_manifest(dataset)
    tr = load_split(dataset, "train", manifest)
    va = load_split(dataset, "val", manifest)
    if len(tr.targets) == 0:
        raise DatasetError(f"{dataset}: training split is empty")
    box = dataset_template(dataset).box
    return train(
        net_cfg,
        train_cfg,
        tr.images,
        tr.targets,
        box,
        va.images if len(va.targets) else None,
        va.targets if len(va.targets) else None,
        callback=callback,
    )


# ---------------------------------------------------------------- commands


def cmd_generate(cfg, out):
    template = resolve_stack(cfg["stack.preset"])
    with output_lock(out, lock=out.parent / f".{out.name}.lock"):
        manifest = generate(
            template,
            _library(cfg),
            out,
            cfg["sampler.n"],
            SamplerConfig(cfg["sampler.method"], cfg["sampler.seed_or_skip"]),
            fractions=cfg["sampler.fractions"],
            width=cfg["image.width"],
            height=cfg["image.height"],
            workers=cfg["run.threads"],
        )
        cfg.write(out / CONFIG_NAME)
    counts = "/".join(str(manifest["splits"][s]["count"]) for s in SPLITS)
    print(f"wrote {manifest['total']} records to {out} (train/val/test {counts})")
    return manifest


def cmd_train(cfg, dataset, out):
    manifest = load_manifest(dataset)
    with output_lock(out):
        n_train = manifest["splits"]["train"]["count"]
        tc = cfg.train_config()
        if tc.mini_batch_size > n_train:
            raise ConfigError(f"train.mini_batch_size {tc.mini_batch_size} exceeds training-set size {n_train}")
        model = _fit(cfg, dataset, _net_config_for(cfg, manifest), tc)
        save_model(model, out / "model.pscnn")
        _write_history(out / "history.csv", model.history)
        cfg.write(out / CONFIG_NAME)
    final = model.history.val_rmse_nm[-1] if model.history.val_rmse_nm else float("nan")
    print(f"trained {len(model.history)} epochs; final validation RMSE {final:.4f} nm; model {out / 'model.pscnn'}")
    return model


def make_objective(cfg, dataset, timeout=None):
    """Evaluator for ``tune``: trains one trial and returns (val RMSE nm, model)."""
    manifest = load_manifest(dataset)
    n_train = manifest["splits"]["train"]["count"]
    epochs = cfg["tune.epoch_cap"]
    limit = cfg["tune.timeout"] if timeout is None else timeout

    def evaluate(params):
        net = _net_config_for(cfg, manifest, arch="block", section_depth=int(params["section_depth"]))
        tc = cfg.train_config(
            initial_learning_rate=params["initial_learning_rate"],
            momentum=params["momentum"],
            # the box may allow batches larger than a small training split
            mini_batch_size=min(int(params["mini_batch_size"]), n_train),
            lr_drop_factor=params["lr_drop_factor"],
            lr_drop_period=int(params["lr_drop_period"]),
            l2_coefficient=params["l2_coefficient"],
            epoch_count=epochs,
        )
        t0 = time.perf_counter()

        def watchdog(epoch, model):
            if limit and time.perf_counter() - t0 > limit:
                raise TrialTimeout(f"trial exceeded {limit} s at epoch {epoch}")

        model = _fit(cfg, dataset, net, tc, callback=watchdog)
        return model.history.val_rmse_nm[-1], model

    return evaluate


def cmd_tune(cfg, dataset, out):
    manifest = load_manifest(dataset)
    if manifest["splits"]["val"]["count"] == 0:
        raise DatasetError(f"{dataset}: tuning needs a non-empty validation split")
    space = cfg.hyper_space()
    with output_lock(out):
        cfg.write(out / CONFIG_NAME)
        log = out / "trials.csv"
        best_file = out / "best.json"
        prior = json.loads(best_file.read_text()) if best_file.exists() else None

        def on_trial(trial, model):
            nonlocal prior
            tag = f"trial {trial.index}: {trial.status}"
            if trial.ok:
                tag += f" objective {trial.objective:.4f} nm"
            print(tag, flush=True)
            if not trial.ok or model is None:
                return
            if prior is None or trial.objective < prior["objective"]:
                save_model(model, out / "best_model.pscnn")
                prior = {
                    "trial": trial.index,
                    "objective": trial.objective,
                    "params": trial.params,
                    "model": "best_model.pscnn",
                }
                best_file.write_text(json.dumps(prior, indent=2, sort_keys=True) + "\n")

        result = tune(
            space,
            cfg["tune.budget"],
            make_objective(cfg, dataset),
            seed=cfg["run.seed"],
            log_path=log,
            warmup=cfg["tune.warmup"],
            on_trial=on_trial,
        )
    b = result.best
    print(f"best trial {b.index}: validation RMSE {b.objective:.4f} nm")
    for k, v in b.params.items():
        print(f"  {k} = {v!r}")
    return result


def cmd_eval(cfg, model_path, dataset, split, out):
    model = load_model(model_path)
    manifest = load_manifest(dataset)
    data = load_split(dataset, split, manifest)
    if len(data.targets) == 0:
        raise DatasetError(f"{dataset}: split {split!r} is empty")
    train_nm = load_split(dataset, "train", manifest).thickness_nm
    preds = predict(model, data.images)
    box = model.box
    report = metrics_report(preds, data.thickness_nm, train_nm, box.names)
    print(report.format())
    if out is not None:
        with output_lock(out):
            (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
            with open(out / "predictions.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["record", *box.names])
                for idx, row in zip(data.indices, preds):
                    w.writerow([int(idx), *(repr(float(v)) for v in row)])
            export_scatter(preds, data.thickness_nm, box.names, out / "scatter", list(zip(box.lower, box.upper)))
            cfg.write(out / CONFIG_NAME)
    return report, preds


def _input_curve(path, cfg):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_eqe_csv(path)
    template = load_stack_file(path)
    if template.thicknesses is None:
        raise StackFileError(f"{path}: predict needs a thickness column for every layer")
    stack = template.instantiate(_library(cfg))
    return compute_eqe(stack, dual_side=template.dual_side)


def cmd_predict(cfg, model_path, source):
    model = load_model(model_path)
    curve = _input_curve(source, cfg)
    net = model.network.config
    if len(curve.channels) != net.channels:
        raise DatasetError(f"model expects {net.channels} EQE channel(s); input provides {len(curve.channels)}")
    image = rasterize(curve, net.width, net.height)
    pred = predict(model, image)[0]
    for name, v in zip(model.box.names, pred):
        print(f"{name},{float(v)!r}")
    return pred


# ---------------------------------------------------------------- parser


def _add_overrides(p, sections):
    for sec in sections:
        g = p.add_argument_group(f"[{sec}] settings (override the config file)")
        for key, _, default, text in SCHEMA[sec]:
            shown = ", ".join(map(str, default)) if isinstance(default, tuple) else default
            g.add_argument(f"--{sec}.{key}", dest=f"{sec}.{key}", metavar="V", help=f"{text} (default: {shown})")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="sectioned key=value config file")
    g.add_argument("--seed", type=int, help="global seed (same as --run.seed)")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--threads", type=int, help="worker processes / BLAS threads (same as --run.threads)")

    p = _Parser(prog="perovnet", description="Simulate EQE spectra and infer layer thicknesses with a CNN.")
    p.add_argument("--version", action="version", version=f"perovnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], help="simulate a dataset",
                         description="Sample thickness vectors, simulate EQE and write a dataset directory.")
    gen.add_argument("--n", type=int, help="total records (same as --sampler.n)")
    gen.add_argument("--preset", help="stack preset or stack file (same as --stack.preset)")
    gen.add_argument("--method", help="sampler (same as --sampler.method)")
    _add_overrides(gen, ["run", "paths", "stack", "sampler", "image"])
    gen.set_defaults(_shortcuts={"sampler.n": "n", "stack.preset": "preset", "sampler.method": "method"})

    tr = sub.add_parser("train", parents=[common], help="train a network on a dataset",
                        description="Train a CNN on a dataset's train split; writes model.pscnn and history.csv.")
    tr.add_argument("dataset", type=Path, help="dataset directory")
    _add_overrides(tr, ["run", "network", "train"])

    tu = sub.add_parser("tune", parents=[common], help="Bayesian hyperparameter search",
                        description="Tune training hyperparameters; writes trials.csv, best_model.pscnn, best.json.")
    tu.add_argument("dataset", type=Path, help="dataset directory")
    tu.add_argument("--budget", type=int, help="number of trials (same as --tune.budget)")
    _add_overrides(tu, ["run", "network", "train", "tune"])
    tu.set_defaults(_shortcuts={"tune.budget": "budget"})

    ev = sub.add_parser("eval", parents=[common], help="score a model on a dataset split",
                        description="Print per-layer and overall RMSE (nm) against the mean-predictor baseline.")
    ev.add_argument("model", type=Path, help="model file")
    ev.add_argument("dataset", type=Path, help="dataset directory")
    ev.add_argument("--split", choices=SPLITS, default="test", help="split to score (default: test)")
    _add_overrides(ev, ["run"])

    pr = sub.add_parser("predict", parents=[common], help="predict thicknesses for one EQE curve",
                        description="Predict layer thicknesses (nm) from an EQE CSV "
                        "(wavelength_nm,forward[,reverse]) or a stack file with thicknesses.")
    pr.add_argument("model", type=Path, help="model file")
    pr.add_argument("input", type=Path, help="EQE CSV or stack file")
    _add_overrides(pr, ["run", "paths"])
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_cfg(args)
        with threadpool_limits(cfg["run.threads"]):
            if args.command == "generate":
                cmd_generate(cfg, args.out or Path("dataset"))
            elif args.command == "train":
                cmd_train(cfg, args.dataset, args.out or Path("run"))
            elif args.command == "tune":
                cmd_tune(cfg, args.dataset, args.out or Path("tune"))
            elif args.command == "eval":
                cmd_eval(cfg, args.model, args.dataset, args.split, args.out)
            elif args.command == "predict":
                cmd_predict(cfg, args.model, args.input)
    except (ConfigError, UsageError) as exc:
        print(f"perovnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, TMMError, FloatingPointError) as exc:
        print(f"perovnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, StackFileError, DispersionError, ModelFileError, EvaluationError,
            HyperoptError, FileNotFoundError, ValueError) as exc:
        print(f"perovnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
