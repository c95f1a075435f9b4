"""Command-line entry point: ``autopinn simulate|train|search|evaluate|report``.

Configuration is layered: built-in defaults, then a flat JSON file given with
``--config``, then command-line flags (``--set key=value`` reaches any
field).  Exit codes: 0 ok, 2 config/parse error, 3 I/O error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    MissingColumn, ParseError, TooFewSamples, default_operating_points, generate_synthetic,
    load_csv, load_truth, save_csv,
)
from .network import ArchParseError, ArchSpec, ModelFormatError
from .physics import PARAM_NAMES, DivergenceError, PhysParams, NOMINAL
from .report import csv_text, markdown_table, read_report_csv
from .search import SearchConfig, random_search, run_search, write_search_log
from .training import (
    TrainConfig, evaluate_lambda, init_model, load_model, reconstruction_loss, save_history,
    save_model, train,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "runs"
    data: str = ""
    workers: int = 0  # 0: one per CPU
    # synthetic data
    samples_per_op: int = 120
    noise_rel: float = 1e-3
    duty: float = 0.5
    f_s: float = 50e3
    L: float = NOMINAL.L
    R_L: float = NOMINAL.R_L
    C: float = NOMINAL.C
    R_C: float = NOMINAL.R_C
    R_dson: float = NOMINAL.R_dson
    R_1: float = NOMINAL.R_1
    R_2: float = NOMINAL.R_2
    R_3: float = NOMINAL.R_3
    V_in: float = NOMINAL.V_in
    V_F: float = NOMINAL.V_F
    # model / training
    arch: str = "40,tanh,40,tanh,40,tanh,40,tanh,40,tanh"
    ref_offset: float = 0.2
    holdout: float = 0.0
    adam_lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 2000
    lbfgs_history: int = 10
    lbfgs_max_iter: int = 500
    lbfgs_grad_tol: float = 1e-8
    lbfgs_rel_tol: float = 1e-10
    decode_substeps: int = 16
    # search
    constraint: int = 16000
    alpha: float = -0.02
    beta: float = -0.1
    trials: int = 200
    batch: int = 5
    controller_lr: float = 0.001
    baseline_decay: float = 0.95
    use_baseline: bool = True
    embed_dim: int = 32
    hidden_dim: int = 64
    random_baselines: int = 3

    @property
    def true_params(self) -> PhysParams:
        return PhysParams.from_dict({n: getattr(self, n) for n in PARAM_NAMES})

    @property
    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{n: getattr(self, n) for n in names})

    @property
    def search_config(self) -> SearchConfig:
        return SearchConfig(
            P0=self.constraint, alpha=self.alpha, beta=self.beta, trials=self.trials,
            batch=self.batch, controller_lr=self.controller_lr, baseline_decay=self.baseline_decay,
            use_baseline=self.use_baseline, embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
            seed=self.seed)

    @property
    def dataset_path(self) -> Path:
        return Path(self.data) if self.data else Path(self.out) / "dataset.csv"

    @property
    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    kind = type(getattr(RunConfig, name))
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                    raise ValueError(value)
                return value.lower() in ("1", "true", "yes")
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults <- JSON file <- overrides (later wins)."""
    values = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        for k, v in doc.items():
            if isinstance(v, (dict, list)):
                raise ConfigError(f"{path}: key {k!r} must be a scalar")
            values[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        values[k] = _coerce(k, v)
    try:
        cfg = replace(RunConfig(), **values)
        cfg.true_params, cfg.train_config, cfg.search_config
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _manifest(cfg: RunConfig, command: str) -> str:
    config = asdict(cfg)
    del config["out"]  # implied by where the manifest lives
    doc = {"tool": "autopinn", "version": __version__, "command": command, "seed": cfg.seed,
           "config": config}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def _load_dataset(cfg: RunConfig):
    path = cfg.dataset_path
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found (run 'autopinn simulate' first)")
    return load_csv(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> Path:
    out = _out_dir(cfg)
    ds = generate_synthetic(cfg.true_params, default_operating_points(cfg.duty, cfg.f_s),
                            cfg.samples_per_op, cfg.noise_rel, cfg.seed)
    path = out / "dataset.csv"
    save_csv(ds, path)
    (out / "manifest.json").write_text(_manifest(cfg, "simulate"))
    print(f"wrote {len(ds)} samples to {path}")
    return path


def _split(ds, cfg: RunConfig):
    if cfg.holdout <= 0:
        return ds, None
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(ds))
    n_test = max(1, int(round(cfg.holdout * len(ds))))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def cmd_train(cfg: RunConfig, arch: str | None = None):
    spec = ArchSpec.parse(arch or cfg.arch)
    ds = _load_dataset(cfg)
    out = _out_dir(cfg)
    train_ds, test_ds = _split(ds, cfg)
    model = init_model(spec, train_ds, cfg.seed, ref_offset=cfg.ref_offset)
    res = train(model, train_ds, cfg.train_config)
    save_model(res.model, out / "model.txt")
    save_history(res.history, out / "loss_history.csv")
    rec = reconstruction_loss(res.model, train_ds, cfg.decode_substeps, with_grad=False)
    lines = [f"architecture: {spec.tokens()}",
             f"termination: {res.reason}",
             f"reconstruction MAE (train): {rec:.6g}"]
    if test_ds is not None:
        lines.append("reconstruction MAE (holdout): "
                     f"{reconstruction_loss(res.model, test_ds, cfg.decode_substeps, with_grad=False):.6g}")
    report = None
    if ds.ground_truth is not None:
        report = evaluate_lambda(res.model, ds.ground_truth)
        rows = [("PINN", report)]
        (out / "report.csv").write_text(csv_text(rows))
        table = markdown_table(rows)
    else:
        table = f"# Param: {res.model.param_count:,} (no ground truth: parameter MAE unavailable)\n"
    text = "\n".join(lines) + "\n\n" + table
    (out / "report.md").write_text(text)
    print(text, end="")
    return res, report


def cmd_search(cfg: RunConfig):
    ds = _load_dataset(cfg)
    out = _out_dir(cfg)
    scfg = cfg.search_config
    tcfg = cfg.train_config
    workers = cfg.n_workers

    def progress(t):
        print(f"trial {t.index:4d}  {t.arch.tokens():42s}  mae={t.mae:.4g}  params={t.param_count:6d}  "
              f"reward={t.reward:.4g}", file=sys.stderr, flush=True)

    result = run_search(ds, scfg, tcfg, workers=workers, progress=progress)
    write_search_log(result, out / "search_log.csv")
    best = result.best
    if best.model is not None:
        save_model(best.model, out / "best_model.txt")

    baseline = None
    if cfg.random_baselines > 0:
        rcfg = replace(scfg, trials=cfg.random_baselines, batch=min(scfg.batch, cfg.random_baselines))
        baseline = random_search(ds, rcfg, tcfg, workers=workers, keep_models=True)
        write_search_log(baseline, out / "random_log.csv")

    lines = [f"constraint P0: {scfg.P0:,}",
             f"trials: {scfg.trials}  (batch {scfg.batch})",
             f"best: {best.arch.tokens()}  params={best.param_count:,}  "
             f"feasible={'yes' if best.feasible else 'NO'}  reconstruction MAE={best.mae:.6g}  "
             f"reward={best.reward:.6g}"]
    if baseline is not None:
        rb = min(baseline.trials, key=lambda t: (t.mae, t.index))
        lines.append(f"best of {len(baseline.trials)} random: {rb.arch.tokens()}  params={rb.param_count:,}  "
                     f"reconstruction MAE={rb.mae:.6g}")
    rows = []
    if ds.ground_truth is not None:
        if best.model is not None:
            rows.append(("AutoPINN", evaluate_lambda(best.model, ds.ground_truth)))
        if baseline is not None:
            for k, t in enumerate(sorted(baseline.trials, key=lambda t: t.index)):
                if t.model is not None:
                    rows.append((f"R-PINN-{k + 1}", evaluate_lambda(t.model, ds.ground_truth)))
    text = "\n".join(lines) + "\n"
    if rows:
        text += "\n" + markdown_table(rows)
        (out / "report.csv").write_text(csv_text(rows))
    (out / "report.md").write_text(text)
    print(text, end="")
    return result, baseline


def cmd_evaluate(model_path, truth_path, name: str = "model"):
    model = load_model(model_path)
    truth, _ = load_truth(truth_path)
    report = evaluate_lambda(model, truth)
    print(markdown_table([(name, report)]), end="")
    print(csv_text([(name, report)]), end="")
    return report


def cmd_report(paths) -> str:
    rows = []
    for p in paths:
        rows += read_report_csv(p)
    text = markdown_table(rows)
    print(text, end="")
    return text


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--constraint", type=int, help="parameter budget P0")
    common.add_argument("--trials", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset CSV (default: <out>/dataset.csv)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field")

    p = argparse.ArgumentParser(prog="autopinn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"autopinn {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate a synthetic peak dataset")
    t = sub.add_parser("train", parents=[common], help="train one architecture")
    t.add_argument("--arch", help="10 tokens, e.g. 20,tanh,0,relu,40,tanh,40,tanh,60,relu")
    sub.add_parser("search", parents=[common], help="constrained architecture search")
    e = sub.add_parser("evaluate", parents=[common], help="score a model against ground truth")
    e.add_argument("model")
    e.add_argument("truth")
    e.add_argument("--name", default="model")
    r = sub.add_parser("report", parents=[common], help="merge report CSVs into one table")
    r.add_argument("reports", nargs="+")
    return p


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = v.strip()
    for name in ("seed", "constraint", "trials", "batch", "workers", "out", "data"):
        v = getattr(args, name, None)
        if v is not None:
            ov[name] = v
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.arch)
        elif args.command == "search":
            cmd_search(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(args.model, args.truth, args.name)
        elif args.command == "report":
            cmd_report(args.reports)
    except (ConfigError, ArchParseError, ParseError, MissingColumn, ModelFormatError,
            TooFewSamples, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
