"""Mixture of Quantum Experts: n expert circuits summed and normalized by nu * sqrt(n)."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from config.settings import (
    CALIBRATION_SIZE,
    EVAL_CHUNK,
    HIST_BINS,
    HIST_RANGE,
    INIT_SCALE,
    NUM_LAYERS,
    SCHEDULE,
    VERSION,
)
from pipelines.mnist_io import DatasetSplit, LabeledImages, MnistData
from pipelines.training import Metrics, TrainConfig, fit, predict_sign
from simulator.ansatz import ExpertCircuit, make_expert_circuit, raw_output, z_values
from simulator.autodiff import NotCalibratedError, batch_loss_and_grad, parallel_map
from simulator.encoding import PaddedImage, encode_pixels, encode_raw_batch

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA_VERSION = 1
# nu below this counts as zero variance
MIN_NU = 1e-12


class CalibrationError(ValueError):
    """The calibration sample gives zero empirical variance."""


class CheckpointError(ValueError):
    """Checkpoint file does not match the expected schema."""


@dataclass(eq=False)
class MoqeModel:
    """n experts sharing one circuit layout; `parameters` is the flat (n * P) vector Adam updates."""

    circuit: ExpertCircuit
    parameters: np.ndarray
    num_experts: int
    nu: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_experts < 1:
            raise ValueError(f"need at least one expert, got {self.num_experts}")
        self.parameters = np.ascontiguousarray(self.parameters, dtype=np.float64).reshape(-1)
        expected = self.num_experts * self.circuit.param_count
        if self.parameters.size != expected:
            raise ValueError(f"expected {expected} parameters for {self.num_experts} experts, got {self.parameters.size}")
        if self.nu is not None and not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")

    @property
    def expert_params(self) -> np.ndarray:
        """(n, P) view onto `parameters`."""
        return self.parameters.reshape(self.num_experts, self.circuit.param_count)

    @property
    def calibrated(self) -> bool:
        return self.nu is not None

    def require_calibrated(self) -> None:
        if not self.calibrated:
            raise NotCalibratedError("calibrate the variance normalizer first")


def init_model(
    n: int,
    seed: int,
    schedule: str = SCHEDULE,
    num_layers: int = NUM_LAYERS,
    reverse: bool = False,
    scale: float = INIT_SCALE,
) -> MoqeModel:
    """Angles i.i.d. uniform in [-scale, scale] from the seeded generator; uncalibrated."""
    if n < 1:
        raise ValueError(f"need at least one expert, got {n}")
    circuit = make_expert_circuit(schedule, num_layers, reverse)
    rng = np.random.default_rng(seed)
    params = rng.uniform(-scale, scale, size=n * circuit.param_count)
    return MoqeModel(circuit, params, n, seed=seed)


# --- Forward passes ---

def raw_outputs(model: MoqeModel, amps: np.ndarray, threads: int = 1) -> np.ndarray:
    """(n, B) summed-Z readout of every expert on a batch of encoded states."""
    results = parallel_map(
        lambda params: raw_output(z_values(model.circuit, params, amps)),
        list(model.expert_params),
        threads,
    )
    return np.stack([np.atleast_1d(r) for r in results])


def model_outputs(model: MoqeModel, amps: np.ndarray, threads: int = 1) -> np.ndarray:
    model.require_calibrated()
    raw = raw_outputs(model, amps, threads)
    return raw.sum(axis=0) / (model.nu * np.sqrt(model.num_experts))


def model_output(model: MoqeModel, img: PaddedImage) -> float:
    return float(model_outputs(model, encode_pixels(img.pixels)[None])[0])


def predict(model: MoqeModel, img: PaddedImage) -> int:
    return int(predict_sign(model_output(model, img)))


def _chunked_outputs(model: MoqeModel, images: np.ndarray, threads: int) -> np.ndarray:
    out = np.empty(images.shape[0])
    for start in range(0, images.shape[0], EVAL_CHUNK):
        chunk = images[start:start + EVAL_CHUNK]
        out[start:start + chunk.shape[0]] = model_outputs(model, encode_raw_batch(chunk), threads)
    return out


def normalizer_from_raw(raw: np.ndarray) -> float:
    """Population standard deviation of each expert's raw output, averaged over experts."""
    raw = np.atleast_2d(raw)
    nu = float(np.mean(np.std(raw, axis=1)))
    if not nu > MIN_NU:
        raise CalibrationError(f"zero empirical variance over {raw.shape[1]} calibration images")
    return nu


def calibrate_normalizer(model: MoqeModel, images: np.ndarray, threads: int = 1) -> MoqeModel:
    """Fix nu from raw (N, 28, 28) calibration images; nu is frozen afterwards."""
    if model.calibrated:
        raise ValueError("normalizer already calibrated; nu is frozen for the run")
    if len(images) == 0:
        raise ValueError("calibration sample must not be empty")
    raw = np.concatenate(
        [raw_outputs(model, encode_raw_batch(images[s:s + EVAL_CHUNK]), threads) for s in range(0, len(images), EVAL_CHUNK)],
        axis=1,
    )
    model.nu = normalizer_from_raw(raw)
    logger.info("Calibrated nu = %.6f over %d images and %d experts", model.nu, len(images), model.num_experts)
    return model


def calibration_sample(data: MnistData, split: DatasetSplit, size: int = CALIBRATION_SIZE) -> np.ndarray:
    """The first `size` images of the train selection."""
    return data.train.images[split.train[:size]]


# --- Evaluation ---

def evaluate(model: MoqeModel, samples: LabeledImages, threads: int = 1) -> float:
    """Fraction of samples whose predicted sign equals the parity label."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    f = _chunked_outputs(model, samples.images, threads)
    return float(np.mean(predict_sign(f) == samples.labels))


def output_histogram(
    model: MoqeModel,
    samples: LabeledImages,
    bins: int = HIST_BINS,
    value_range: tuple[float, float] = HIST_RANGE,
    threads: int = 1,
) -> pd.DataFrame:
    """Counts of f per bin, split by true label; outliers land in the edge bins."""
    f = np.clip(_chunked_outputs(model, samples.images, threads), *value_range)
    labels = samples.labels
    edges = np.linspace(value_range[0], value_range[1], bins + 1)
    odd, _ = np.histogram(f[labels == 1], bins=edges)
    even, _ = np.histogram(f[labels == -1], bins=edges)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "odd_count": odd, "even_count": even})


# --- Training ---

def train(model: MoqeModel, data: MnistData, split: DatasetSplit, cfg: TrainConfig) -> tuple[MoqeModel, Metrics]:
    """Joint training of all experts on the global output f."""
    model.require_calibrated()
    cfg.validate()
    train_idx = split.train[:cfg.train_subset_size]
    images = data.train.images[train_idx]
    train_set = LabeledImages(images, data.train.digits[train_idx])
    labels = train_set.labels.astype(np.float64)
    test_set = data.test.subset(split.test)
    logger.info(
        "Training %d expert(s), %d parameters, on %d images for %d epoch(s) with %s gradients",
        model.num_experts, model.parameters.size, len(train_set), cfg.epochs, cfg.gradient_method,
    )

    def loss_and_grad(idx: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        return batch_loss_and_grad(model, encode_raw_batch(images[idx]), labels[idx], cfg.gradient_method, cfg.threads)

    metrics = fit(
        model.parameters,
        loss_and_grad,
        labels,
        lambda: evaluate(model, test_set, cfg.threads),
        cfg,
        f"moqe-{model.num_experts}",
        lambda: evaluate(model, train_set, cfg.threads),
    )
    return model, metrics


# --- Checkpoints ---

def save_checkpoint(model: MoqeModel, path: str | Path, epoch: int) -> Path:
    model.require_calibrated()
    path = Path(path)
    doc = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "version": VERSION,
        "schedule": model.circuit.schedule.name,
        "layers": model.circuit.num_layers,
        "reverse": model.circuit.reverse,
        "num_experts": model.num_experts,
        "nu": model.nu,
        "seed": model.seed,
        "epoch": epoch,
        # json writes floats with repr, which round-trips exactly
        "params": model.expert_params.tolist(),
    }
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_checkpoint(path: str | Path) -> tuple[MoqeModel, int]:
    """(model, epoch) from a checkpoint written by save_checkpoint."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema_version {doc.get('schema_version')!r}, expected {CHECKPOINT_SCHEMA_VERSION}")
    missing = {"schedule", "layers", "reverse", "num_experts", "nu", "seed", "epoch", "params"} - doc.keys()
    if missing:
        raise CheckpointError(f"{path}: missing fields {sorted(missing)}")
    try:
        circuit = make_expert_circuit(doc["schedule"], doc["layers"], doc["reverse"])
        params = np.array(doc["params"], dtype=np.float64)
        if params.shape != (doc["num_experts"], circuit.param_count):
            raise CheckpointError(
                f"{path}: params shape {params.shape}, expected ({doc['num_experts']}, {circuit.param_count})"
            )
        model = MoqeModel(circuit, params, doc["num_experts"], doc["nu"], doc["seed"])
    except CheckpointError:
        raise
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model, int(doc["epoch"])
