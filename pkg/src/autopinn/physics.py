"""Buck converter model.

Two views of the same circuit live here:

* a switching-cycle simulator (forward Euler over alternating ON/OFF
  intervals) used to generate synthetic measurements, and
* ``decode``, a short differentiable integration of the ON interval that maps
  a valley state to predicted current/voltage peaks.  This is the physics
  decoder used inside the PINN, together with its hand-written reverse pass.

State is ``(i, u_c)``: inductor current and capacitor voltage.  The output
voltage includes the capacitor ESR drop, see :func:`output_voltage`.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import _kernels

PARAM_NAMES = ("L", "R_L", "C", "R_C", "R_dson", "R_1", "R_2", "R_3", "V_in", "V_F")
N_PARAMS = len(PARAM_NAMES)
# index of R_1 in the parameter vector; R_2, R_3 follow
LOAD_OFFSET = 5

DIVERGENCE_LIMIT = 1e9
DEFAULT_DUTY = 0.5
DEFAULT_FS = 50e3
DECODE_SUBSTEPS = 16
ORACLE_SUBSTEPS = 1000


class DivergenceError(ArithmeticError):
    """State magnitude left the physical range (non-physical parameters)."""


class EmptyTrajectory(ValueError):
    pass


@dataclass(frozen=True)
class PhysParams:
    """The ten converter parameters, in a fixed order (see PARAM_NAMES)."""

    L: float
    R_L: float
    C: float
    R_C: float
    R_dson: float
    R_1: float
    R_2: float
    R_3: float
    V_in: float
    V_F: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{f.name} must be finite and > 0, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "PhysParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (N_PARAMS,):
            raise ValueError(f"expected {N_PARAMS} values, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    def as_dict(self) -> dict[str, float]:
        return dict(zip(PARAM_NAMES, astuple(self)))

    @classmethod
    def from_dict(cls, d) -> "PhysParams":
        missing = [n for n in PARAM_NAMES if n not in d]
        if missing:
            raise KeyError(f"missing parameters: {', '.join(missing)}")
        return cls(*(float(d[n]) for n in PARAM_NAMES))

    def load(self, load_index: int) -> float:
        return float(self.as_array()[LOAD_OFFSET + load_index - 1])

    def replace(self, **changes) -> "PhysParams":
        d = self.as_dict()
        d.update(changes)
        return PhysParams.from_dict(d)


# Bench-style defaults for synthetic data; not measured values.
NOMINAL = PhysParams(
    L=100e-6, R_L=0.2, C=220e-6, R_C=0.1, R_dson=0.05,
    R_1=10.0, R_2=20.0, R_3=30.0, V_in=12.0, V_F=0.7,
)


@dataclass(frozen=True)
class OperatingPoint:
    duty: float = DEFAULT_DUTY
    f_s: float = DEFAULT_FS
    load_index: int = 1

    def __post_init__(self):
        if not 0.0 < self.duty < 1.0:
            raise ValueError(f"duty must lie in (0, 1), got {self.duty}")
        if not self.f_s > 0:
            raise ValueError(f"f_s must be > 0, got {self.f_s}")
        if self.load_index not in (1, 2, 3):
            raise ValueError(f"load_index must be 1, 2 or 3, got {self.load_index}")


class ConverterState(NamedTuple):
    i: float
    u_c: float


def _params_array(params) -> np.ndarray:
    if isinstance(params, PhysParams):
        return params.as_array()
    lam = np.asarray(params, dtype=float)
    if lam.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got shape {lam.shape}")
    return lam


def _esr_gain(R_C, R):
    # u_out = g * (u_c + R_C * i), g = 1 / (1 + R_C / R)
    return R / (R + R_C)


def output_voltage(state, params, op: OperatingPoint) -> float:
    """Output voltage ``(u_c + R_C i) / (1 + R_C / R_load)``."""
    lam = _params_array(params)
    i, u = state
    R = lam[LOAD_OFFSET + op.load_index - 1]
    R_C = lam[3]
    return float((u + R_C * i) / (1.0 + R_C / R))


def state_derivative(state, params, op: OperatingPoint, switch_on: bool) -> ConverterState:
    lam = _params_array(params)
    L, R_L, C, R_C, R_dson = lam[:5]
    V_in, V_F = lam[8], lam[9]
    R = lam[LOAD_OFFSET + op.load_index - 1]
    i, u = state
    u_out = output_voltage(state, lam, op)
    if switch_on:
        di = (V_in - i * (R_dson + R_L) - u_out) / L
    else:
        di = (-V_F - i * R_L - u_out) / L
    du = (i - u_out / R) / C
    return ConverterState(float(di), float(du))


# ---------------------------------------------------------------------------
# switching-cycle simulator
# ---------------------------------------------------------------------------

def _interval_affine(lam, op: OperatingPoint, switch_on: bool, h: float):
    """Euler step ``x <- M x + c`` for one interval (dynamics are affine in x)."""
    L, R_L, C, R_C, R_dson = lam[:5]
    V_in, V_F = lam[8], lam[9]
    R = lam[LOAD_OFFSET + op.load_index - 1]
    g = _esr_gain(R_C, R)
    r_series = R_dson + R_L if switch_on else R_L
    source = V_in if switch_on else -V_F
    A = np.array([
        [(-r_series - g * R_C) / L, -g / L],
        [(1.0 - g * R_C / R) / C, -g / (R * C)],
    ])
    b = np.array([source / L, 0.0])
    return np.eye(2) + h * A, h * b


def _affine_powers(M, c, n):
    """Stack ``P_k, Q_k`` with ``x_k = P_k x_0 + Q_k`` for k = 1..n."""
    P = np.empty((n, 2, 2))
    Q = np.empty((n, 2))
    p, q = np.eye(2), np.zeros(2)
    for k in range(n):
        p = M @ p
        q = M @ q + c
        P[k], Q[k] = p, q
    return P, Q


@dataclass
class Trajectory:
    """Sampled converter waveforms.

    ``t``, ``i``, ``u_c`` and ``u_out`` share one time axis that starts at the
    initial state.  ``points_per_cycle`` is the number of Euler steps per
    switching period (0 when unknown, e.g. hand-built trajectories).
    """

    t: np.ndarray
    i: np.ndarray
    u_c: np.ndarray
    u_out: np.ndarray
    points_per_cycle: int = 0
    steady_cycle: int | None = None

    def __len__(self):
        return len(self.t)

    def last_cycle(self) -> "Trajectory":
        n = self.points_per_cycle
        if n <= 0 or len(self) <= n:
            return self
        sl = slice(len(self) - n - 1, None)
        return Trajectory(self.t[sl], self.i[sl], self.u_c[sl], self.u_out[sl], n, self.steady_cycle)

    def endpoint(self) -> ConverterState:
        return ConverterState(float(self.i[-1]), float(self.u_c[-1]))


class _CycleMaps:
    def __init__(self, lam, op: OperatingPoint, substeps: int):
        period = 1.0 / op.f_s
        self.h_on = op.duty * period / substeps
        self.h_off = (1.0 - op.duty) * period / substeps
        self.on = _affine_powers(*_interval_affine(lam, op, True, self.h_on), substeps)
        self.off = _affine_powers(*_interval_affine(lam, op, False, self.h_off), substeps)
        # whole-cycle map: x_end = Phi x_0 + psi
        P_on, Q_on = self.on[0][-1], self.on[1][-1]
        P_off, Q_off = self.off[0][-1], self.off[1][-1]
        self.Phi = P_off @ P_on
        self.psi = P_off @ Q_on + Q_off


def _check(x):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
        raise DivergenceError("converter state exceeded 1e9 in magnitude")


def _relative_change(a, b) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def simulate_cycles(params, op: OperatingPoint, initial=(0.0, 0.0), cycles: int = 1,
                    substeps_per_interval: int = ORACLE_SUBSTEPS,
                    steady_tol: float = 1e-9) -> Trajectory:
    """Integrate ``cycles`` switching periods with forward Euler.

    Each ON and OFF interval is split into ``substeps_per_interval`` equal
    steps.  ``steady_cycle`` of the result is the first (1-based) cycle whose
    endpoint differs from the previous cycle's endpoint by less than
    ``steady_tol`` relative, or None.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if substeps_per_interval < 100:
        raise ValueError("substeps_per_interval must be >= 100")
    lam = _params_array(params)
    n = substeps_per_interval
    maps = _CycleMaps(lam, op, n)
    P_on, Q_on = maps.on
    P_off, Q_off = maps.off

    x = np.asarray(initial, dtype=float)
    _check(x)
    states = np.empty((cycles * 2 * n + 1, 2))
    states[0] = x
    steady = None
    for c in range(cycles):
        base = c * 2 * n
        seg_on = P_on @ x + Q_on
        _check(seg_on)
        states[base + 1: base + n + 1] = seg_on
        seg_off = P_off @ seg_on[-1] + Q_off
        _check(seg_off)
        states[base + n + 1: base + 2 * n + 1] = seg_off
        if steady is None and _relative_change(seg_off[-1], x) < steady_tol:
            steady = c + 1
        x = seg_off[-1]

    cycle_t = np.concatenate([np.arange(n) * maps.h_on, op.duty / op.f_s + np.arange(n) * maps.h_off])
    t = np.concatenate([(np.arange(cycles)[:, None] / op.f_s + cycle_t[None, :]).ravel(),
                        [cycles / op.f_s]])
    u_out = _output_voltage_vec(states[:, 0], states[:, 1], lam, op.load_index)
    return Trajectory(t, states[:, 0].copy(), states[:, 1].copy(), u_out, 2 * n, steady)


def _output_voltage_vec(i, u, lam, load_index):
    R = lam[LOAD_OFFSET + load_index - 1]
    return (u + lam[3] * i) / (1.0 + lam[3] / R)


def steady_state(params, op: OperatingPoint, substeps_per_interval: int = ORACLE_SUBSTEPS,
                 initial=(0.0, 0.0), max_cycles: int = 200_000,
                 steady_tol: float = 1e-9) -> Trajectory:
    """Run cycle endpoints until steady, then return the final cycle's waveform.

    Iterates the exact per-cycle Euler map (identical arithmetic to
    :func:`simulate_cycles`) so thousands of cycles cost almost nothing.
    ``steady_cycle`` counts cycles from ``initial``.
    """
    lam = _params_array(params)
    maps = _CycleMaps(lam, op, substeps_per_interval)
    P_on, Q_on = maps.on
    P_off, Q_off = maps.off
    x = np.asarray(initial, dtype=float)
    for c in range(1, max_cycles + 1):
        x_mid = P_on[-1] @ x + Q_on[-1]
        x_new = P_off[-1] @ x_mid + Q_off[-1]
        _check(x_new)
        if _relative_change(x_new, x) < steady_tol:
            traj = simulate_cycles(lam, op, x_new, 1, substeps_per_interval)
            traj.steady_cycle = c
            return traj
        x = x_new
    raise DivergenceError(f"no steady state within {max_cycles} cycles")


def extract_peaks(trajectory: Trajectory) -> tuple[float, float]:
    """Maximum inductor current and output voltage over the last full cycle."""
    if len(trajectory) < 2:
        raise EmptyTrajectory("need at least 2 trajectory points")
    cyc = trajectory.last_cycle()
    return float(np.max(cyc.i)), float(np.max(cyc.u_out))


# ---------------------------------------------------------------------------
# differentiable ON-interval decoder
# ---------------------------------------------------------------------------

def _op_arrays(op, n):
    """Broadcast an OperatingPoint (or a (duty, f_s, load_index) triple of arrays)."""
    if isinstance(op, OperatingPoint):
        return (np.full(n, op.duty), np.full(n, op.f_s), np.full(n, op.load_index, dtype=int))
    duty, f_s, load_index = op
    return (np.broadcast_to(np.asarray(duty, dtype=float), (n,)),
            np.broadcast_to(np.asarray(f_s, dtype=float), (n,)),
            np.broadcast_to(np.asarray(load_index, dtype=int), (n,)))


def decode_batch(latent, lam, duty, f_s, load_index, n_sub=DECODE_SUBSTEPS):
    """Vectorized :func:`decode` over N samples.

    ``latent`` is (N, 2), ``lam`` the 10-vector, operating arrays length N.
    """
    if n_sub < 1:
        raise ValueError("n_sub must be >= 1")
    out = _kernels.decode_forward(*_kernel_args(latent, lam, duty, f_s, load_index), n_sub)
    _check_decoded(out)
    return out


def decode_batch_grad(latent, lam, duty, f_s, load_index, n_sub, upstream):
    """Reverse pass of :func:`decode_batch`.

    Returns ``(d_latent (N, 2), d_lam (10,))`` for the scalar
    ``sum(upstream * decode_batch(...))``; parameter gradients are summed
    over samples in order.
    """
    args = _kernel_args(latent, lam, duty, f_s, load_index)
    up = np.ascontiguousarray(upstream, dtype=float).reshape(args[0].shape)
    out, d_latent, d_lam = _kernels.decode_backward(*args, n_sub, up)
    _check_decoded(out)
    return d_latent, d_lam


def _kernel_args(latent, lam, duty, f_s, load_index):
    latent = np.ascontiguousarray(latent, dtype=float)
    n = len(latent)
    return (latent, np.ascontiguousarray(lam, dtype=float),
            np.ascontiguousarray(np.broadcast_to(duty, (n,)), dtype=float),
            np.ascontiguousarray(np.broadcast_to(f_s, (n,)), dtype=float),
            np.ascontiguousarray(np.broadcast_to(load_index, (n,)), dtype=np.int64))


def _check_decoded(out):
    if not np.all(np.isfinite(out)) or (out.size and np.max(np.abs(out)) > DIVERGENCE_LIMIT):
        raise DivergenceError("decoder state exceeded 1e9 in magnitude")


def decode(latent, params, op, n_sub: int = DECODE_SUBSTEPS) -> np.ndarray:
    """Predicted peaks from a valley state by integrating the ON interval.

    ``latent`` is a ConverterState / length-2 sequence, or an (N, 2) array
    paired with per-sample operating arrays.  Returns ``(i_hat, u_hat)`` with
    the same leading shape.
    """
    lat = np.asarray(latent, dtype=float)
    single = lat.ndim == 1
    lat = np.atleast_2d(lat)
    lam = _params_array(params)
    duty, f_s, load = _op_arrays(op, len(lat))
    out = decode_batch(lat, lam, duty, f_s, load, n_sub)
    return out[0] if single else out


def decode_gradients(latent, params, op, n_sub: int = DECODE_SUBSTEPS, upstream=None):
    """Reverse-mode derivatives of :func:`decode`.

    Returns ``(d_loss/d_latent, d_loss/d_params)`` given ``upstream`` =
    d_loss/d_output (same shape as decode's output).
    """
    lat = np.asarray(latent, dtype=float)
    single = lat.ndim == 1
    lat = np.atleast_2d(lat)
    lam = _params_array(params)
    duty, f_s, load = _op_arrays(op, len(lat))
    up = np.atleast_2d(np.asarray(upstream, dtype=float))
    d_latent, d_lam = decode_batch_grad(lat, lam, duty, f_s, load, n_sub, up)
    return (d_latent[0] if single else d_latent), d_lam
