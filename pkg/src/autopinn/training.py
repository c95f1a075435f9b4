"""PINN assembly, training and evaluation.

A :class:`PinnModel` chains

    X --z-score--> MLP --affine--> valley state --decode(lambda)--> X_hat

and is fit by minimizing mean |X - X_hat| jointly over the MLP weights and
log-scale physics parameters: full-batch Adam for a fixed number of epochs,
then L-BFGS.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network
from .data import Dataset, input_stats
from .network import ArchSpec, MlpParams
from .optim import AdamState, adam_step, lbfgs_minimize
from .physics import (
    DECODE_SUBSTEPS, N_PARAMS, NOMINAL, PARAM_NAMES, DivergenceError, PhysParams,
    decode_batch, decode_batch_grad,
)

DEFAULT_REF_OFFSET = 0.2


@dataclass(frozen=True)
class TrainConfig:
    adam_lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 2000
    lbfgs_history: int = 10
    lbfgs_max_iter: int = 500
    lbfgs_grad_tol: float = 1e-8
    lbfgs_rel_tol: float = 1e-10
    decode_substeps: int = DECODE_SUBSTEPS

    def __post_init__(self):
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        for name in ("adam_lr", "adam_eps", "lbfgs_history", "lbfgs_grad_tol",
                     "lbfgs_rel_tol", "decode_substeps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.epochs < 0 or self.lbfgs_max_iter < 0:
            raise ValueError("epochs and lbfgs_max_iter must be >= 0")


@dataclass
class PinnModel:
    encoder: MlpParams
    log_scales: np.ndarray
    lambda_ref: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray

    def __post_init__(self):
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(N_PARAMS)
        self.lambda_ref = np.asarray(self.lambda_ref, dtype=float).reshape(N_PARAMS)
        self.input_mean = np.asarray(self.input_mean, dtype=float).reshape(2)
        self.input_std = np.asarray(self.input_std, dtype=float).reshape(2)
        if np.any(self.lambda_ref <= 0):
            raise ValueError("lambda_ref must be positive")
        if np.any(self.input_std <= 0):
            raise ValueError("input_std must be positive")

    @property
    def arch(self) -> ArchSpec:
        return self.encoder.arch

    @property
    def lam(self) -> np.ndarray:
        return self.lambda_ref * np.exp(self.log_scales)

    @property
    def estimated_params(self) -> PhysParams:
        return PhysParams.from_array(self.lam)

    @property
    def param_count(self) -> int:
        return network.param_count(self.arch)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.encoder.flat(), self.log_scales])

    def with_flat(self, theta) -> "PinnModel":
        theta = np.asarray(theta, dtype=float)
        return PinnModel(self.encoder.with_flat(theta[:-N_PARAMS]), theta[-N_PARAMS:].copy(),
                         self.lambda_ref, self.input_mean, self.input_std)

    def copy(self) -> "PinnModel":
        return self.with_flat(self.flat())


def reference_params(offset: float = DEFAULT_REF_OFFSET, base: PhysParams = NOMINAL) -> np.ndarray:
    return base.as_array() * (1.0 + offset)


def init_model(arch: ArchSpec, dataset: Dataset, seed=0, lambda_ref=None,
               ref_offset: float = DEFAULT_REF_OFFSET) -> PinnModel:
    """Fresh model: Glorot encoder, log_scales = 0 (lambda starts at lambda_ref)."""
    mean, std = input_stats(dataset)
    ref = reference_params(ref_offset) if lambda_ref is None else _as_lam(lambda_ref)
    return PinnModel(network.build(arch, seed=seed), np.zeros(N_PARAMS), ref, mean, std)


def _as_lam(p):
    return p.as_array() if isinstance(p, PhysParams) else np.asarray(p, dtype=float)


def predict(model: PinnModel, dataset: Dataset, n_sub: int = DECODE_SUBSTEPS) -> np.ndarray:
    Z = (dataset.X - model.input_mean) / model.input_std
    H, _ = network.forward(model.encoder, Z)
    latent = H * model.input_std + model.input_mean
    return decode_batch(latent, model.lam, *dataset.ops, n_sub)


def reconstruction_loss(model: PinnModel, dataset: Dataset, n_sub: int = DECODE_SUBSTEPS,
                        with_grad: bool = True):
    """Mean absolute reconstruction error and its gradient.

    The gradient is a flat vector aligned with ``model.flat()`` (encoder
    weights, then the 10 log-scales).  Raises DivergenceError from the decoder.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    Z = (dataset.X - model.input_mean) / model.input_std
    H, cache = network.forward(model.encoder, Z)
    latent = H * model.input_std + model.input_mean
    lam = model.lam
    X_hat = decode_batch(latent, lam, *dataset.ops, n_sub)
    resid = X_hat - dataset.X
    loss = float(np.mean(np.abs(resid)))
    if not with_grad:
        return loss
    upstream = np.sign(resid) / resid.size
    d_latent, d_lam = decode_batch_grad(latent, lam, *dataset.ops, n_sub, upstream)
    grads, _ = network.backward(model.encoder, cache, d_latent * model.input_std)
    return loss, np.concatenate([grads.flat(), d_lam * lam])


def _objective(model: PinnModel, dataset: Dataset, n_sub: int):
    def fun(theta):
        try:
            loss, g = reconstruction_loss(model.with_flat(theta), dataset, n_sub)
        except DivergenceError:
            return np.inf, np.zeros_like(theta)
        if not (np.isfinite(loss) and np.all(np.isfinite(g))):
            return np.inf, np.zeros_like(theta)
        return loss, g
    return fun


@dataclass
class TrainResult:
    model: PinnModel
    history: list[float]
    reason: str
    adam_epochs: int = 0
    lbfgs_iterations: int = 0

    @property
    def final_loss(self) -> float:
        finite = [h for h in self.history if np.isfinite(h)]
        return min(finite) if finite else float("inf")

    @property
    def diverged(self) -> bool:
        return self.reason == "diverged"


def train(model: PinnModel, dataset: Dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Adam for ``config.epochs`` full-batch steps, then L-BFGS on everything.

    ``history`` holds the loss before each Adam step followed by the L-BFGS
    iterates.  If the decoder diverges the offending step is dropped, +inf is
    appended and the last valid model is returned with reason "diverged".
    """
    fun = _objective(model, dataset, config.decode_substeps)
    theta = model.flat()
    history: list[float] = []
    prev = theta
    state = AdamState.zeros(theta.size)
    for t in range(1, config.epochs + 1):
        loss, g = fun(theta)
        if not np.isfinite(loss):
            history.append(float("inf"))
            return TrainResult(model.with_flat(prev), history, "diverged", t - 1)
        history.append(loss)
        prev = theta
        state, theta = adam_step(state, theta, g, t, config.adam_lr, config.adam_beta1,
                                 config.adam_beta2, config.adam_eps)

    if config.epochs > 0:
        loss, _ = fun(theta)
        if not np.isfinite(loss):
            history.append(float("inf"))
            return TrainResult(model.with_flat(prev), history, "diverged", config.epochs)
    if config.lbfgs_max_iter == 0:
        return TrainResult(model.with_flat(theta), history, "adam_only", config.epochs)
    try:
        res = lbfgs_minimize(fun, theta, config.lbfgs_history, config.lbfgs_max_iter,
                             config.lbfgs_grad_tol, config.lbfgs_rel_tol)
    except ValueError:
        history.append(float("inf"))
        return TrainResult(model.with_flat(theta), history, "diverged", config.epochs)
    history.extend(res.history)
    return TrainResult(model.with_flat(res.x), history, f"lbfgs:{res.reason}",
                       config.epochs, res.iterations)


def train_arch(arch: ArchSpec, dataset: Dataset, config: TrainConfig = TrainConfig(), seed=0,
               lambda_ref=None) -> TrainResult:
    return train(init_model(arch, dataset, seed, lambda_ref), dataset, config)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class MaeReport:
    """Per-parameter absolute percentage errors (in PARAM_NAMES order)."""

    per_param: np.ndarray
    param_count: int
    average: float = field(init=False)

    def __post_init__(self):
        self.per_param = np.asarray(self.per_param, dtype=float).reshape(N_PARAMS)
        if np.any(self.per_param < 0):
            raise ValueError("MAE values must be >= 0")
        self.average = float(np.mean(self.per_param))

    def as_dict(self) -> dict:
        return {"average_mae": self.average, "param_count": self.param_count,
                **dict(zip(PARAM_NAMES, map(float, self.per_param)))}


def evaluate_lambda(model: PinnModel, ground_truth: PhysParams) -> MaeReport:
    truth = ground_truth.as_array()
    per = 100.0 * np.abs(model.lam - truth) / truth
    return MaeReport(per, model.param_count)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def save_model(model: PinnModel, path) -> None:
    lines = network.mlp_to_lines(model.encoder, network.N_FEATURES, network.N_LATENT)
    network.write_array(lines, "log_scales", model.log_scales)
    network.write_array(lines, "lambda_ref", model.lambda_ref)
    network.write_array(lines, "input_mean", model.input_mean)
    network.write_array(lines, "input_std", model.input_std)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> PinnModel:
    encoder, extra = network.parse_model_text(Path(path).read_text())
    try:
        return PinnModel(encoder, extra["log_scales"][0], extra["lambda_ref"][0],
                         extra["input_mean"][0], extra["input_std"][0])
    except KeyError as exc:
        raise network.ModelFormatError(f"missing array {exc}") from None
    except ValueError as exc:
        raise network.ModelFormatError(str(exc)) from None


def save_history(history, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for k, loss in enumerate(history, start=1):
            w.writerow([k, f"{loss:.17g}"])
