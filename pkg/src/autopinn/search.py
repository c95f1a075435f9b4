"""Architecture search: autoregressive RNN controller trained with REINFORCE.

The controller emits 2*T decisions, alternating a units choice and an
activation choice per layer.  Each decision's input is the embedding of the
previous outcome (a learned start vector for the first).  Candidates are
trained as PINNs and scored with a size-aware reward

    R = (1 / mae) * (param_count / P0) ** w,   w = alpha if param_count <= P0 else beta
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Dataset
from .network import ACTIVATION_MENU, N_LAYERS, UNITS_MENU, ArchSpec, param_count
from .optim import AdamState, adam_step
from .training import PinnModel, TrainConfig, reconstruction_loss, train_arch

_KEYS = ("start", "embed", "W_x", "W_h", "b_h", "W_units", "b_units", "W_act", "b_act")


@dataclass
class ControllerParams:
    start: np.ndarray
    embed: np.ndarray  # rows: units outcomes, then activation outcomes
    W_x: np.ndarray
    W_h: np.ndarray
    b_h: np.ndarray
    W_units: np.ndarray
    b_units: np.ndarray
    W_act: np.ndarray
    b_act: np.ndarray
    n_layers: int = N_LAYERS

    @property
    def n_units(self) -> int:
        return self.b_units.size

    @property
    def n_acts(self) -> int:
        return self.b_act.size

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in _KEYS])

    def with_flat(self, theta) -> "ControllerParams":
        arrays, pos = {}, 0
        for k in _KEYS:
            a = getattr(self, k)
            arrays[k] = np.array(theta[pos:pos + a.size]).reshape(a.shape)
            pos += a.size
        return ControllerParams(**arrays, n_layers=self.n_layers)


def init_controller(seed=0, embed_dim=32, hidden_dim=64, n_units=len(UNITS_MENU),
                    n_acts=len(ACTIVATION_MENU), n_layers=N_LAYERS, init_scale=0.1) -> ControllerParams:
    """Uniform(+-init_scale) recurrent weights; output heads start at zero,
    so a fresh controller samples every decision uniformly."""
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-init_scale, init_scale, size=shape)

    return ControllerParams(
        start=u(embed_dim), embed=u(n_units + n_acts, embed_dim),
        W_x=u(embed_dim, hidden_dim), W_h=u(hidden_dim, hidden_dim), b_h=np.zeros(hidden_dim),
        W_units=np.zeros((hidden_dim, n_units)), b_units=np.zeros(n_units),
        W_act=np.zeros((hidden_dim, n_acts)), b_act=np.zeros(n_acts),
        n_layers=n_layers,
    )


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _rollout(ctrl: ControllerParams, choices=None, rng=None, batch=1):
    """Run the controller over a batch.

    Samples when ``choices`` is None (using ``rng``), otherwise teacher-forces
    the given (B, 2T) choices.  Returns ``(choices, logp (B, 2T), cache)``.
    """
    n_steps = 2 * ctrl.n_layers
    if choices is not None:
        choices = np.asarray(choices, dtype=int).reshape(-1, n_steps)
        batch = len(choices)
    else:
        choices = np.empty((batch, n_steps), dtype=int)
    x = np.broadcast_to(ctrl.start, (batch, ctrl.start.size))
    h = np.zeros((batch, ctrl.b_h.size))
    logp = np.empty((batch, n_steps))
    cache = []
    rows = np.arange(batch)
    for t in range(n_steps):
        units_step = t % 2 == 0
        W, b = (ctrl.W_units, ctrl.b_units) if units_step else (ctrl.W_act, ctrl.b_act)
        h_prev = h
        h = np.tanh(x @ ctrl.W_x + h_prev @ ctrl.W_h + ctrl.b_h)
        lp = _log_softmax(h @ W + b)
        if rng is not None:
            cdf = np.cumsum(np.exp(lp), axis=1)
            draw = rng.random(batch)[:, None] * cdf[:, -1:]
            choices[:, t] = np.minimum((draw >= cdf).sum(axis=1), lp.shape[1] - 1)
        c = choices[:, t]
        logp[:, t] = lp[rows, c]
        cache.append((x, h_prev, h, lp))
        x = ctrl.embed[c + (0 if units_step else ctrl.n_units)]
    return choices, logp, cache


def log_probs(ctrl: ControllerParams, choices) -> np.ndarray:
    """Per-decision log-probabilities of given choice sequences, (B, 2T)."""
    return _rollout(ctrl, choices)[1]


def policy_gradient(ctrl: ControllerParams, choices, coeffs) -> np.ndarray:
    """Flat gradient of ``mean_b coeffs[b] * sum_t log P(c_bt | c_b<t)``."""
    choices, _, cache = _rollout(ctrl, choices)
    B, n_steps = choices.shape
    coeffs = np.asarray(coeffs, dtype=float).reshape(B, 1) / B
    g = {k: np.zeros_like(getattr(ctrl, k)) for k in _KEYS}
    rows = np.arange(B)
    dh_next = np.zeros((B, ctrl.b_h.size))
    dx_next = None
    for t in range(n_steps - 1, -1, -1):
        x, h_prev, h, lp = cache[t]
        units_step = t % 2 == 0
        c = choices[:, t]
        if dx_next is not None:
            # x_{t+1} was the embedding of this step's outcome
            np.add.at(g["embed"], c + (0 if units_step else ctrl.n_units), dx_next)
        dlogits = -np.exp(lp)
        dlogits[rows, c] += 1.0
        dlogits *= coeffs
        Wk, bk = ("W_units", "b_units") if units_step else ("W_act", "b_act")
        g[Wk] += h.T @ dlogits
        g[bk] += dlogits.sum(axis=0)
        dh = dlogits @ getattr(ctrl, Wk).T + dh_next
        dz = dh * (1.0 - h * h)
        g["W_x"] += x.T @ dz
        g["W_h"] += h_prev.T @ dz
        g["b_h"] += dz.sum(axis=0)
        dh_next = dz @ ctrl.W_h.T
        dx_next = dz @ ctrl.W_x.T
    g["start"] += dx_next.sum(axis=0)
    return np.concatenate([g[k].ravel() for k in _KEYS])


def choices_to_arch(choices, units_menu=UNITS_MENU, act_menu=ACTIVATION_MENU) -> ArchSpec:
    c = list(choices)
    return ArchSpec(tuple((units_menu[c[2 * k]], act_menu[c[2 * k + 1]]) for k in range(len(c) // 2)))


def arch_to_choices(arch: ArchSpec) -> np.ndarray:
    out = []
    for u, a in arch.layers:
        out += [UNITS_MENU.index(u), ACTIVATION_MENU.index(a)]
    return np.array(out)


def sample_arch(ctrl: ControllerParams, seed) -> tuple[ArchSpec, np.ndarray]:
    """Sample one architecture; also returns the 2T per-decision log-probs."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    choices, logp, _ = _rollout(ctrl, rng=rng, batch=1)
    return choices_to_arch(choices[0]), logp[0]


# ---------------------------------------------------------------------------
# reward and policy update
# ---------------------------------------------------------------------------

def reward_fn(mae: float, n_params: int, P0: float, alpha: float = -0.02, beta: float = -0.1) -> float:
    """Size-aware reward; a non-finite mae (diverged trial) scores 0."""
    if not math.isfinite(mae):
        return 0.0
    if mae <= 0:
        raise ValueError(f"mae must be > 0, got {mae}")
    if n_params < 1:
        raise ValueError("param count must be >= 1")
    w = alpha if n_params <= P0 else beta
    return (1.0 / mae) * (n_params / P0) ** w


@dataclass(frozen=True)
class SearchConfig:
    P0: int = 16000
    alpha: float = -0.02
    beta: float = -0.1
    trials: int = 200
    batch: int = 5
    controller_lr: float = 0.001
    baseline_decay: float = 0.95
    use_baseline: bool = True
    embed_dim: int = 32
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.alpha > 0 or self.beta > 0:
            raise ValueError("alpha and beta must be <= 0")
        if not self.trials >= self.batch >= 1:
            raise ValueError("need trials >= batch >= 1")
        if self.P0 < 6:
            raise ValueError("P0 must be >= 6 (the smallest model)")


@dataclass
class ReinforceState:
    adam: AdamState
    step: int = 0
    baseline: float | None = None

    @classmethod
    def fresh(cls, ctrl: ControllerParams) -> "ReinforceState":
        return cls(AdamState.zeros(ctrl.flat().size))


def reinforce_update(ctrl: ControllerParams, choices, rewards, state: ReinforceState,
                     lr: float = 0.001, baseline_decay: float = 0.95, use_baseline: bool = True):
    """One REINFORCE step (Adam ascent) on a batch of sampled decision sequences.

    Advantages are taken against an exponential moving average of rewards that
    starts at the first batch's mean; the average is updated after the
    gradient.  With ``use_baseline=False`` the raw reward is used.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.size == 0:
        raise ValueError("empty batch")
    baseline = state.baseline
    if use_baseline and baseline is None:
        baseline = float(rewards.mean())
    adv = rewards - (baseline if use_baseline else 0.0)
    grad = policy_gradient(ctrl, choices, adv)
    step = state.step + 1
    adam, theta = adam_step(state.adam, ctrl.flat(), -grad, step, lr)
    if use_baseline:
        baseline = baseline_decay * baseline + (1.0 - baseline_decay) * float(rewards.mean())
    return ctrl.with_flat(theta), ReinforceState(adam, step, baseline)


# ---------------------------------------------------------------------------
# search loop
# ---------------------------------------------------------------------------

STREAM_TRIAL, STREAM_INIT, STREAM_SAMPLE, STREAM_RANDOM = 0, 1, 2, 3


def stable_hash(seed: int, index: int, stream: int = STREAM_TRIAL) -> int:
    """Platform-independent 63-bit seed derived from (seed, stream, index)."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    state = np.random.SeedSequence([int(seed), int(stream), int(index)]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass
class TrialOutcome:
    mae: float
    model: PinnModel | None
    reason: str


def pinn_trainer(arch: ArchSpec, dataset: Dataset, config: TrainConfig, seed: int) -> TrialOutcome:
    res = train_arch(arch, dataset, config, seed)
    if res.diverged:
        return TrialOutcome(float("inf"), res.model, res.reason)
    mae = reconstruction_loss(res.model, dataset, config.decode_substeps, with_grad=False)
    return TrialOutcome(mae, res.model, res.reason)


@dataclass
class TrialResult:
    index: int
    arch: ArchSpec
    mae: float
    param_count: int
    reward: float
    seed: int
    feasible: bool
    reason: str = ""
    model: PinnModel | None = field(default=None, repr=False, compare=False)

    def key(self):
        return (self.index, self.arch.tokens(), self.mae, self.param_count, self.reward,
                self.seed, self.feasible, self.reason)


def rank_trials(trials) -> list[TrialResult]:
    """Feasible first, then reward descending (ties by trial index)."""
    return sorted(trials, key=lambda t: (not t.feasible, -t.reward, t.index))


@dataclass
class SearchResult:
    trials: list[TrialResult]  # ranked
    controller: ControllerParams | None = None
    P0: int = 0

    @property
    def best(self) -> TrialResult:
        return self.trials[0]

    @property
    def best_feasible(self) -> TrialResult | None:
        return self.trials[0] if self.trials and self.trials[0].feasible else None

    def by_index(self) -> list[TrialResult]:
        return sorted(self.trials, key=lambda t: t.index)


def _evaluate(jobs, dataset, train_config, trainer, pool):
    if pool is None:
        return [trainer(a, dataset, train_config, s) for a, s in jobs]
    futures = [pool.submit(trainer, a, dataset, train_config, s) for a, s in jobs]
    return [f.result() for f in futures]


def _make_trial(index, arch, seed, outcome: TrialOutcome, P0, alpha, beta, keep_model) -> TrialResult:
    n = param_count(arch)
    return TrialResult(index, arch, outcome.mae, n, reward_fn(outcome.mae, n, P0, alpha, beta), seed,
                       n <= P0, outcome.reason, outcome.model if keep_model else None)


def run_search(dataset: Dataset, config: SearchConfig = SearchConfig(),
               train_config: TrainConfig = TrainConfig(), trainer: Callable = pinn_trainer,
               workers: int = 1, keep_models: bool = True, progress=None) -> SearchResult:
    """Sample, train and score ``config.trials`` candidates in rounds of
    ``config.batch``, updating the controller after each round.

    Trial k trains with seed ``stable_hash(config.seed, k)``, so results do not
    depend on ``workers``.
    """
    ctrl = init_controller(stable_hash(config.seed, 0, STREAM_INIT), config.embed_dim, config.hidden_dim)
    rng = np.random.default_rng(stable_hash(config.seed, 0, STREAM_SAMPLE))
    state = ReinforceState.fresh(ctrl)
    trials: list[TrialResult] = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        n_rounds = math.ceil(config.trials / config.batch)
        for r in range(n_rounds):
            size = min(config.batch, config.trials - r * config.batch)
            choices, _, _ = _rollout(ctrl, rng=rng, batch=size)
            base = r * config.batch
            jobs = [(choices_to_arch(c), stable_hash(config.seed, base + k)) for k, c in enumerate(choices)]
            outcomes = _evaluate(jobs, dataset, train_config, trainer, pool)
            batch_trials = [_make_trial(base + k, a, s, o, config.P0, config.alpha, config.beta, keep_models)
                            for k, ((a, s), o) in enumerate(zip(jobs, outcomes))]
            trials += batch_trials
            ctrl, state = reinforce_update(ctrl, choices, [t.reward for t in batch_trials], state,
                                           config.controller_lr, config.baseline_decay,
                                           config.use_baseline)
            if progress is not None:
                for t in batch_trials:
                    progress(t)
    finally:
        if pool is not None:
            pool.shutdown()
    return SearchResult(rank_trials(trials), ctrl, config.P0)


def random_search(dataset: Dataset, config: SearchConfig = SearchConfig(),
                  train_config: TrainConfig = TrainConfig(), trainer: Callable = pinn_trainer,
                  workers: int = 1, keep_models: bool = False, progress=None) -> SearchResult:
    """Baseline: ``config.trials`` architectures drawn uniformly from the space,
    trained and scored exactly like :func:`run_search`'s candidates."""
    rng = np.random.default_rng(stable_hash(config.seed, 0, STREAM_RANDOM))
    jobs = []
    for k in range(config.trials):
        arch = ArchSpec(tuple((int(rng.choice(UNITS_MENU)), str(rng.choice(ACTIVATION_MENU)))
                              for _ in range(N_LAYERS)))
        jobs.append((arch, stable_hash(config.seed, k)))
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        trials = []
        for start in range(0, len(jobs), max(config.batch, 1)):
            chunk = jobs[start:start + config.batch]
            for k, ((a, s), o) in enumerate(zip(chunk, _evaluate(chunk, dataset, train_config, trainer, pool))):
                t = _make_trial(start + k, a, s, o, config.P0, config.alpha, config.beta, keep_models)
                trials.append(t)
                if progress is not None:
                    progress(t)
    finally:
        if pool is not None:
            pool.shutdown()
    return SearchResult(rank_trials(trials), None, config.P0)


# ---------------------------------------------------------------------------
# search log
# ---------------------------------------------------------------------------

LOG_COLUMNS = ["trial_index"] + [f"c{k}" for k in range(2 * N_LAYERS)] + [
    "reconstruction_mae", "param_count", "reward", "feasible", "termination"]


def write_search_log(result: SearchResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for t in result.by_index():
            w.writerow([t.index, *t.arch.encode(), f"{t.mae:.17g}", t.param_count,
                        f"{t.reward:.17g}", int(t.feasible), t.reason])


def read_search_log(path) -> list[TrialResult]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            arch = ArchSpec.decode([int(row[f"c{k}"]) for k in range(2 * N_LAYERS)])
            out.append(TrialResult(int(row["trial_index"]), arch, float(row["reconstruction_mae"]),
                                   int(row["param_count"]), float(row["reward"]), 0,
                                   row["feasible"] == "1", row["termination"]))
    return out
