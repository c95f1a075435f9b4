"""MLP encoder: architecture descriptions, forward/backward, parameter counts.

An architecture is T=5 searched layers of ``(units, activation)``; a layer
with 0 units is dropped.  Every model ends with a linear projection to the
latent dimension, so even the all-zero architecture is a valid model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNITS_MENU = (0, 20, 30, 40, 50, 60)
ACTIVATION_MENU = ("tanh", "relu")
N_LAYERS = 5
N_FEATURES = 2
N_LATENT = 2

MODEL_FORMAT = "autopinn-model"
MODEL_VERSION = 1


class ArchParseError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Model file is corrupt or written by an incompatible version."""


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple[tuple[int, str], ...]

    def __post_init__(self):
        layers = tuple((int(u), str(a)) for u, a in self.layers)
        object.__setattr__(self, "layers", layers)
        if len(layers) != N_LAYERS:
            raise ValueError(f"expected {N_LAYERS} layers, got {len(layers)}")
        for units, act in layers:
            if units not in UNITS_MENU:
                raise ValueError(f"units {units} not in {UNITS_MENU}")
            if act not in ACTIVATION_MENU:
                raise ValueError(f"activation {act!r} not in {ACTIVATION_MENU}")

    @property
    def active(self) -> list[tuple[int, str]]:
        return [(u, a) for u, a in self.layers if u > 0]

    def tokens(self) -> str:
        """Comma-separated form, e.g. ``20,tanh,0,relu,...``."""
        return ",".join(f"{u},{a}" for u, a in self.layers)

    @classmethod
    def parse(cls, text: str) -> "ArchSpec":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2 * N_LAYERS:
            raise ArchParseError(f"expected {2 * N_LAYERS} tokens, got {len(parts)}: {text!r}")
        layers = []
        for k in range(N_LAYERS):
            u, a = parts[2 * k], parts[2 * k + 1].lower()
            try:
                units = int(u)
            except ValueError:
                raise ArchParseError(f"layer {k + 1}: units {u!r} is not an integer") from None
            if units not in UNITS_MENU:
                raise ArchParseError(f"layer {k + 1}: units {units} not in {UNITS_MENU}")
            if a not in ACTIVATION_MENU:
                raise ArchParseError(f"layer {k + 1}: activation {a!r} not in {ACTIVATION_MENU}")
            layers.append((units, a))
        return cls(tuple(layers))

    def encode(self) -> list[int]:
        """Ten integers: units, activation index, per layer."""
        out = []
        for u, a in self.layers:
            out += [u, ACTIVATION_MENU.index(a)]
        return out

    @classmethod
    def decode(cls, codes) -> "ArchSpec":
        codes = list(codes)
        return cls(tuple((int(codes[2 * k]), ACTIVATION_MENU[int(codes[2 * k + 1])])
                         for k in range(len(codes) // 2)))

    @classmethod
    def uniform(cls, units: int, activation: str) -> "ArchSpec":
        return cls(tuple((units, activation) for _ in range(N_LAYERS)))


@dataclass
class MlpParams:
    """Weights of one encoder.  ``activations[k]`` applies after layer k;
    the last entry of ``weights``/``biases`` is the linear output projection."""

    arch: ArchSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str] = field(default_factory=list)

    @property
    def n_scalars(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], list(self.activations))

    def flat(self) -> np.ndarray:
        chunks = []
        for w, b in zip(self.weights, self.biases):
            chunks += [w.ravel(), b]
        return np.concatenate(chunks)

    def with_flat(self, theta) -> "MlpParams":
        weights, biases, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(np.array(theta[k:k + w.size]).reshape(w.shape))
            k += w.size
            biases.append(np.array(theta[k:k + b.size]))
            k += b.size
        if k != len(theta):
            raise ValueError(f"flat vector has {len(theta)} entries, model needs {k}")
        return MlpParams(self.arch, weights, biases, list(self.activations))


def layer_sizes(arch: ArchSpec, F: int = N_FEATURES, q: int = N_LATENT) -> list[int]:
    return [F] + [u for u, _ in arch.active] + [q]


def param_count(arch: ArchSpec, F: int = N_FEATURES, q: int = N_LATENT) -> int:
    sizes = layer_sizes(arch, F, q)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def build(arch: ArchSpec, F: int = N_FEATURES, q: int = N_LATENT, seed=0) -> MlpParams:
    """Glorot-uniform weights, zero biases; zero-unit layers are skipped."""
    if F < 1 or q < 1:
        raise ValueError("F and q must be >= 1")
    rng = np.random.default_rng(seed)
    sizes = layer_sizes(arch, F, q)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(arch, weights, biases, [a for _, a in arch.active])


def _activate(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(float)  # subgradient 0 at z == 0


def forward(params: MlpParams, X):
    """Returns ``(H, cache)``.  X is (F,) or (N, F)."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    a = np.atleast_2d(X)
    inputs, pre, post = [], [], []
    n_hidden = len(params.activations)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ W + b
        if k < n_hidden:
            a = _activate(z, params.activations[k])
            pre.append(z)
            post.append(a)
        else:
            a = z
    cache = {"inputs": inputs, "pre": pre, "post": post, "single": single}
    return (a[0] if single else a), cache


def backward(params: MlpParams, cache, upstream):
    """Returns ``(grads, dX)``; ``grads`` is an MlpParams holding dW, db."""
    delta = np.atleast_2d(np.asarray(upstream, dtype=float))
    n_layers = len(params.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        if k < len(params.activations):
            delta = delta * _activate_grad(cache["pre"][k], cache["post"][k], params.activations[k])
        dW[k] = cache["inputs"][k].T @ delta
        db[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k].T
    grads = MlpParams(params.arch, dW, db, list(params.activations))
    return grads, (delta[0] if cache["single"] else delta)


# ---------------------------------------------------------------------------
# text serialization
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{x:.17g}"


def write_array(lines: list[str], name: str, arr) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    lines.append(f"array {name} {arr.shape[0]} {arr.shape[1]}")
    for row in arr:
        lines.append(" ".join(_fmt(v) for v in row))


def read_arrays(lines: list[str], start: int) -> dict[str, np.ndarray]:
    arrays = {}
    k = start
    while k < len(lines):
        line = lines[k].strip()
        k += 1
        if not line:
            continue
        head = line.split()
        if head[0] != "array" or len(head) != 4:
            raise ModelFormatError(f"line {k}: expected 'array <name> <rows> <cols>', got {line!r}")
        try:
            rows, cols = int(head[2]), int(head[3])
            block = [[float(v) for v in lines[k + r].split()] for r in range(rows)]
        except (ValueError, IndexError) as exc:
            raise ModelFormatError(f"line {k}: bad array {head[1]!r}: {exc}") from None
        if any(len(r) != cols for r in block):
            raise ModelFormatError(f"array {head[1]!r}: expected {cols} columns")
        arrays[head[1]] = np.array(block, dtype=float).reshape(rows, cols)
        k += rows
    return arrays


def mlp_to_lines(params: MlpParams, F: int, q: int) -> list[str]:
    lines = [f"{MODEL_FORMAT} {MODEL_VERSION}", f"arch {params.arch.tokens()}", f"dims {F} {q}"]
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        write_array(lines, f"W{k}", W)
        write_array(lines, f"b{k}", b)
    return lines


def parse_model_text(text: str):
    """Parse a model file into ``(MlpParams, extra_arrays)``."""
    lines = text.splitlines()
    if not lines:
        raise ModelFormatError("empty model file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MODEL_FORMAT:
        raise ModelFormatError(f"not an {MODEL_FORMAT} file (header {lines[0]!r})")
    if head[1] != str(MODEL_VERSION):
        raise ModelFormatError(f"unsupported model version {head[1]} (expected {MODEL_VERSION})")
    try:
        tag, tokens = lines[1].split(maxsplit=1)
        arch = ArchSpec.parse(tokens)
        _, F, q = lines[2].split()
        F, q = int(F), int(q)
    except (ValueError, IndexError) as exc:
        raise ModelFormatError(f"bad model preamble: {exc}") from None
    if tag != "arch":
        raise ModelFormatError("missing arch line")
    arrays = read_arrays(lines, 3)
    sizes = layer_sizes(arch, F, q)
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        try:
            W, b = arrays.pop(f"W{k}"), arrays.pop(f"b{k}")
        except KeyError as exc:
            raise ModelFormatError(f"missing array {exc}") from None
        if W.shape != (fan_in, fan_out) or b.shape != (1, fan_out):
            raise ModelFormatError(f"layer {k}: shape mismatch with arch {arch.tokens()}")
        weights.append(W)
        biases.append(b[0])
    return MlpParams(arch, weights, biases, [a for _, a in arch.active]), arrays


def save_mlp(params: MlpParams, path, F: int = N_FEATURES, q: int = N_LATENT) -> None:
    with open(path, "w") as f:
        f.write("\n".join(mlp_to_lines(params, F, q)) + "\n")


def load_mlp(path) -> MlpParams:
    with open(path) as f:
        params, _ = parse_model_text(f.read())
    return params
