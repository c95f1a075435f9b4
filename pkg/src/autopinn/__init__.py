"""Buck-converter PINN parameter estimation with constraint-aware architecture search."""

__version__ = "0.1.0"

from .physics import (
    NOMINAL, PARAM_NAMES, ConverterState, DivergenceError, OperatingPoint, PhysParams, decode,
    decode_gradients, extract_peaks, simulate_cycles, steady_state,
)
from .network import ArchSpec, MlpParams, build, param_count
from .data import Dataset, generate_synthetic, load_csv, save_csv
from .training import MaeReport, PinnModel, TrainConfig, evaluate_lambda, init_model, train, train_arch
from .search import SearchConfig, SearchResult, random_search, reward_fn, run_search, sample_arch

__all__ = [
    "NOMINAL", "PARAM_NAMES", "ConverterState", "DivergenceError", "OperatingPoint", "PhysParams",
    "decode", "decode_gradients", "extract_peaks", "simulate_cycles", "steady_state",
    "ArchSpec", "MlpParams", "build", "param_count",
    "Dataset", "generate_synthetic", "load_csv", "save_csv",
    "MaeReport", "PinnModel", "TrainConfig", "evaluate_lambda", "init_model", "train", "train_arch",
    "SearchConfig", "SearchResult", "random_search", "reward_fn", "run_search", "sample_arch",
]
