"""Peak datasets: synthetic generation, CSV round-trip, input statistics."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .physics import (
    DEFAULT_DUTY, DEFAULT_FS, NOMINAL, OperatingPoint, PhysParams,
    extract_peaks, steady_state,
)

CSV_COLUMNS = ("sample_id", "i_peak", "u_peak", "load_index", "duty", "f_s")
DEFAULT_SAMPLES_PER_OP = 120
DEFAULT_NOISE_REL = 1e-3


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingColumn(ValueError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    i_peak: float
    u_peak: float
    op: OperatingPoint


@dataclass
class Dataset:
    """Observed peaks ``X`` (N, 2) with per-sample operating metadata."""

    X: np.ndarray
    duty: np.ndarray
    f_s: np.ndarray
    load_index: np.ndarray
    provenance: str = ""
    ground_truth: PhysParams | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 2)
        n = len(self.X)
        self.duty = np.asarray(self.duty, dtype=float).reshape(n)
        self.f_s = np.asarray(self.f_s, dtype=float).reshape(n)
        self.load_index = np.asarray(self.load_index, dtype=int).reshape(n)
        if np.any((self.load_index < 1) | (self.load_index > 3)):
            raise ValueError("load_index must be 1, 2 or 3")

    def __len__(self):
        return len(self.X)

    @classmethod
    def from_samples(cls, samples, provenance="", ground_truth=None) -> "Dataset":
        samples = list(samples)
        return cls(
            X=[(s.i_peak, s.u_peak) for s in samples],
            duty=[s.op.duty for s in samples],
            f_s=[s.op.f_s for s in samples],
            load_index=[s.op.load_index for s in samples],
            provenance=provenance, ground_truth=ground_truth,
        )

    @property
    def samples(self) -> list[Sample]:
        return [Sample(float(x[0]), float(x[1]), OperatingPoint(float(d), float(f), int(k)))
                for x, d, f, k in zip(self.X, self.duty, self.f_s, self.load_index)]

    @property
    def ops(self):
        return self.duty, self.f_s, self.load_index

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.duty[idx], self.f_s[idx], self.load_index[idx],
                       self.provenance, self.ground_truth)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.X, other.X]), np.r_[self.duty, other.duty],
                       np.r_[self.f_s, other.f_s], np.r_[self.load_index, other.load_index],
                       self.provenance, self.ground_truth)


def default_operating_points(duty=DEFAULT_DUTY, f_s=DEFAULT_FS) -> list[OperatingPoint]:
    return [OperatingPoint(duty, f_s, k) for k in (1, 2, 3)]


def oracle_peaks(params: PhysParams, op: OperatingPoint, substeps: int = 1000) -> tuple[float, float]:
    return extract_peaks(steady_state(params, op, substeps))


def generate_synthetic(true_params: PhysParams = NOMINAL, ops=None,
                       samples_per_op: int = DEFAULT_SAMPLES_PER_OP,
                       noise_rel: float = DEFAULT_NOISE_REL, seed=0,
                       substeps: int = 1000) -> Dataset:
    """Steady-state peaks per operating point plus relative Gaussian noise.

    The default (3 loads x 120) gives 360 samples.
    """
    if noise_rel < 0:
        raise ValueError("noise_rel must be >= 0")
    ops = default_operating_points() if ops is None else list(ops)
    rng = np.random.default_rng(seed)
    X, duty, f_s, load = [], [], [], []
    for op in ops:
        peak = np.array(oracle_peaks(true_params, op, substeps))
        noise = rng.standard_normal((samples_per_op, 2)) * (noise_rel * np.abs(peak))
        X.append(peak + noise)
        duty += [op.duty] * samples_per_op
        f_s += [op.f_s] * samples_per_op
        load += [op.load_index] * samples_per_op
    prov = (f"synthetic buck peaks: {len(ops)} operating points x {samples_per_op}, "
            f"noise_rel={noise_rel:g}, seed={seed}")
    return Dataset(np.vstack(X), duty, f_s, load, prov, true_params)


def input_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and population std; zero std is clamped to 1."""
    if len(dataset) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(dataset)}")
    mean = dataset.X.mean(axis=0)
    std = dataset.X.std(axis=0)
    flat = std == 0
    if np.any(flat):
        warnings.warn(f"zero-variance feature(s) {np.flatnonzero(flat).tolist()}; std clamped to 1")
        std = np.where(flat, 1.0, std)
    return mean, std


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def truth_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".truth.json")


def save_truth(params: PhysParams, path, provenance: str = "") -> None:
    doc = {"ground_truth": params.as_dict()}
    if provenance:
        doc["provenance"] = provenance
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_truth(path) -> tuple[PhysParams, str]:
    doc = json.loads(Path(path).read_text())
    table = doc.get("ground_truth", doc)
    return PhysParams.from_dict(table), doc.get("provenance", "")


def save_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for k, (x, d, fs, li) in enumerate(zip(dataset.X, dataset.duty, dataset.f_s, dataset.load_index)):
            w.writerow([k, f"{x[0]:.17g}", f"{x[1]:.17g}", int(li), f"{d:.17g}", f"{fs:.17g}"])
    tp = truth_path(path)
    if dataset.ground_truth is not None:
        save_truth(dataset.ground_truth, tp, dataset.provenance)
    elif dataset.provenance:
        tp.write_text(json.dumps({"provenance": dataset.provenance}, indent=2) + "\n")


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn(CSV_COLUMNS[0]) from None
        for col in CSV_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        pos = {c: header.index(c) for c in CSV_COLUMNS}
        X, duty, f_s, load = [], [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = {c: row[pos[c]] for c in CSV_COLUMNS}
            except IndexError:
                raise ParseError(line, f"expected {len(header)} fields, got {len(row)}") from None
            try:
                i_pk, u_pk = float(vals["i_peak"]), float(vals["u_peak"])
                li = int(vals["load_index"])
                d, fs = float(vals["duty"]), float(vals["f_s"])
            except ValueError as exc:
                raise ParseError(line, str(exc)) from None
            if not (np.isfinite(i_pk) and np.isfinite(u_pk)):
                raise ParseError(line, "non-finite peak value")
            try:
                OperatingPoint(d, fs, li)
            except ValueError as exc:
                raise ParseError(line, str(exc)) from None
            X.append((i_pk, u_pk))
            duty.append(d)
            f_s.append(fs)
            load.append(li)
    truth, prov = None, ""
    tp = truth_path(path)
    if tp.exists():
        doc = json.loads(tp.read_text())
        prov = doc.get("provenance", "")
        if "ground_truth" in doc:
            truth, _ = load_truth(tp)
    return Dataset(np.array(X).reshape(-1, 2), duty, f_s, load, prov, truth)
