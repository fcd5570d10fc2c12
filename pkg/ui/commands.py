"""Command implementations behind `python -m ui.cli`.

Each cmd_* takes a resolved RunConfig, writes its artifacts into one run directory and
returns the process exit status (0 ok, 1 failed check).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import pandas as pd

from config import settings
from pipelines.baselines import TinyCnnConfig, parameter_count_report, train_cnn, train_quadratic
from pipelines.mnist_io import MnistData, load_mnist, make_split, verify_mnist_files
from pipelines.moqe import (
    calibrate_normalizer,
    calibration_sample,
    evaluate,
    init_model,
    load_checkpoint,
    output_histogram,
    save_checkpoint,
    train,
)
from pipelines.training import Metrics, TrainConfig
from simulator.ansatz import make_expert_circuit
from simulator.autodiff import GradientVector, check_gradients, grad_adjoint
from simulator.encoding import encode_pixels, encode_raw_batch, pad_raw_batch

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("quad", "cnn")


@dataclass
class RunConfig:
    """Every option of every command. Resolved as settings defaults < JSON file < flags."""

    command: str = "train"
    experts: int = 1
    epochs: int = settings.EPOCHS
    batch_size: int = settings.BATCH_SIZE
    lr: float | None = None
    seed: int = settings.SEED
    schedule: str = settings.SCHEDULE
    layers: int = settings.NUM_LAYERS
    reverse_ladder: bool = False
    grad: str = settings.GRADIENT_METHOD
    train_subset: int = settings.TRAIN_SELECTION_SIZE
    calibration_size: int = settings.CALIBRATION_SIZE
    threads: int = settings.THREADS
    data_dir: str = settings.DATA_DIR
    out_dir: str = settings.OUT_DIR
    run_name: str | None = None
    kind: str = "quad"
    c: tuple[int, int, int, int] = settings.CNN_CONFIG[:4]
    h: int = settings.CNN_CONFIG[4]
    checkpoint: str | None = None
    eval_subset: int | None = None
    configs: int = settings.GRADCHECK_CONFIGS
    digests: str | None = None
    write_digests: str | None = None
    allow_unpinned: bool = False
    counts: tuple[int, int] = (settings.MNIST_COUNTS["train"], settings.MNIST_COUNTS["test"])
    runs: tuple[str, ...] = ()

    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        if self.command == "baseline":
            return settings.QUAD_LEARNING_RATE if self.kind == "quad" else settings.CNN_LEARNING_RATE
        return settings.LEARNING_RATE

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            learning_rate=self.learning_rate(),
            seed=self.seed,
            train_subset_size=self.train_subset,
            gradient_method=self.grad,
            threads=self.threads,
        )

    def run_dir(self) -> Path:
        if self.run_name:
            name = self.run_name
        elif self.command == "baseline":
            name = f"{self.kind}-e{self.epochs}-s{self.seed}"
        else:
            name = f"moqe-n{self.experts}-e{self.epochs}-s{self.seed}"
        path = Path(self.out_dir) / name
        path.mkdir(parents=True, exist_ok=True)
        return path

    def to_json(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["version"] = settings.VERSION
        return doc


_TUPLE_FIELDS = {"c", "counts", "runs"}


def resolve(command: str, flags: Mapping[str, Any], config_path: str | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional JSON config file and explicit flags."""
    known = {f.name for f in fields(RunConfig)}
    values: dict[str, Any] = {}
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {config_path} must hold a JSON object")
        loaded.pop("version", None)
        loaded.pop("command", None)
        unknown = sorted(set(loaded) - known)
        if unknown:
            raise ValueError(f"unknown config keys in {config_path}: {unknown}")
        values.update(loaded)
    for key, value in flags.items():
        if key not in known:
            raise ValueError(f"unknown option {key!r}")
        values[key] = value
    for key in _TUPLE_FIELDS & values.keys():
        values[key] = tuple(values[key])
    cfg = replace(RunConfig(), command=command, **values)
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    if cfg.experts < 1:
        raise ValueError(f"--experts must be >= 1, got {cfg.experts}")
    if cfg.epochs < 0:
        raise ValueError(f"--epochs must be >= 0, got {cfg.epochs}")
    if cfg.layers < 1:
        raise ValueError(f"--layers must be >= 1, got {cfg.layers}")
    if cfg.calibration_size < 2:
        raise ValueError(f"calibration_size must be >= 2, got {cfg.calibration_size}")
    if cfg.eval_subset is not None and cfg.eval_subset < 1:
        raise ValueError(f"--train-subset must be >= 1, got {cfg.eval_subset}")
    if cfg.configs < 1:
        raise ValueError(f"--configs must be >= 1, got {cfg.configs}")
    if cfg.kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {cfg.kind!r}; choose from {BASELINE_KINDS}")
    if len(cfg.c) != 4:
        raise ValueError(f"--c needs four channel counts, got {cfg.c}")
    TinyCnnConfig(*cfg.c, cfg.h)
    make_expert_circuit(cfg.schedule, cfg.layers, cfg.reverse_ladder)
    if cfg.epochs > 0:
        cfg.train_config().validate()


def _write_config(cfg: RunConfig, run_dir: Path) -> None:
    (run_dir / "config.json").write_text(json.dumps(cfg.to_json(), indent=2))


def _load(cfg: RunConfig) -> MnistData:
    data = load_mnist(cfg.data_dir)
    if len(data.train) < 2 or len(data.test) < 1:
        raise ValueError(f"dataset in {cfg.data_dir} is too small to split")
    return data


# --- verify-data ---

def cmd_verify_data(cfg: RunConfig) -> int:
    try:
        digests = json.loads(Path(cfg.digests).read_text()) if cfg.digests else None
    except json.JSONDecodeError as exc:
        raise ValueError(f"digest manifest {cfg.digests} is not valid JSON: {exc}") from exc
    counts = {"train": cfg.counts[0], "test": cfg.counts[1]}
    checks = verify_mnist_files(cfg.data_dir, counts, digests, cfg.allow_unpinned)
    for check in checks:
        status = "PASS" if check.ok else "FAIL"
        print(f"{status} {check.name:<28} count={check.count} sha256={check.sha256} {check.message}")
    ok = all(check.ok for check in checks)
    if ok:
        print(f"{counts['train']} train / {counts['test']} test")
        if cfg.write_digests:
            manifest = {name: sha for check in checks for name, sha in check.digests().items()}
            Path(cfg.write_digests).write_text(json.dumps(manifest, indent=2))
            logger.info("Wrote SHA-256 manifest to %s", cfg.write_digests)
    else:
        print(settings.MNIST_FETCH_HINT)
    return 0 if ok else 1


# --- train ---

def cmd_train(cfg: RunConfig) -> int:
    data = _load(cfg)
    split = make_split(cfg.seed, len(data.train), len(data.test))
    run_dir = cfg.run_dir()
    _write_config(cfg, run_dir)

    model = init_model(cfg.experts, cfg.seed, cfg.schedule, cfg.layers, cfg.reverse_ladder)
    calibrate_normalizer(model, calibration_sample(data, split, cfg.calibration_size), cfg.threads)
    metrics = Metrics(f"moqe-{cfg.experts}")
    if cfg.epochs > 0:
        model, metrics = train(model, data, split, cfg.train_config())
    save_checkpoint(model, run_dir / "checkpoint.json", cfg.epochs)

    metrics.to_frame().to_csv(run_dir / "metrics.csv", index=False)
    metrics.compute_series(cfg.experts).to_csv(run_dir / "compute_series.csv", index=False)
    if cfg.epochs > 0:
        hist = output_histogram(model, data.test.subset(split.test), threads=cfg.threads)
        hist.insert(0, "split", "test")
        hist.to_csv(run_dir / "histograms.csv", index=False)

    print(f"run directory: {run_dir}")
    if metrics.records:
        print(f"final test accuracy: {metrics.final_test_accuracy:.4f}")
    if metrics.final_train_accuracy is not None:
        print(f"final train accuracy: {metrics.final_train_accuracy:.4f}")
    reference = settings.REFERENCE_MOQE_RESULTS.get(cfg.experts)
    if reference:
        print(f"reference ({cfg.experts} expert(s), {reference[2]} epochs, full data): "
              f"train {reference[0]:.4f}, test {reference[1]:.4f}")
    return 0


# --- eval ---

def _trained_subset(cfg: RunConfig) -> int:
    """Train-selection size the checkpoint was fitted on: --train-subset, else its run's config.json."""
    if cfg.eval_subset is not None:
        return cfg.eval_subset
    saved = Path(cfg.checkpoint).parent / "config.json"
    if not saved.exists():
        logger.warning("No config.json next to %s; evaluating on the full train selection", cfg.checkpoint)
        return settings.TRAIN_SELECTION_SIZE
    try:
        return int(json.loads(saved.read_text())["train_subset"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"cannot read train_subset from {saved}: {exc}") from exc


def cmd_eval(cfg: RunConfig) -> int:
    if not cfg.checkpoint:
        raise ValueError("eval needs --checkpoint")
    model, epoch = load_checkpoint(cfg.checkpoint)
    data = _load(cfg)
    split = make_split(model.seed, len(data.train), len(data.test))
    train_set = data.train.subset(split.train[:_trained_subset(cfg)])
    test_set = data.test.subset(split.test)

    train_acc = evaluate(model, train_set, cfg.threads)
    test_acc = evaluate(model, test_set, cfg.threads)
    print(f"checkpoint {cfg.checkpoint} (epoch {epoch}, {model.num_experts} expert(s))")
    print(f"train accuracy: {train_acc:.4f} on {len(train_set)} images")
    print(f"test accuracy: {test_acc:.4f} on {len(test_set)} images")

    frames = []
    for name, samples in (("train", train_set), ("test", test_set)):
        hist = output_histogram(model, samples, threads=cfg.threads)
        hist.insert(0, "split", name)
        frames.append(hist)
    out_dir = cfg.run_dir() if cfg.run_name else Path(cfg.checkpoint).parent
    pd.concat(frames, ignore_index=True).to_csv(out_dir / "histograms.csv", index=False)
    pd.DataFrame([{
        "epoch": epoch, "train_images": len(train_set), "train_acc": train_acc,
        "test_images": len(test_set), "test_acc": test_acc,
    }]).to_csv(out_dir / "eval.csv", index=False)
    return 0


# --- gradcheck ---

def _gradcheck_images(cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    """(configs, 1024) encoded states: random MNIST training images when available."""
    try:
        images = load_mnist(cfg.data_dir).train.images
        picks = images[rng.choice(len(images), size=cfg.configs, replace=False)]
        return encode_raw_batch(picks)
    except (FileNotFoundError, ValueError) as exc:
        logger.warning("MNIST not usable for gradcheck (%s); using random images", exc)
        raw = rng.integers(0, 256, size=(cfg.configs, settings.RAW_SIZE, settings.RAW_SIZE))
        return encode_pixels(pad_raw_batch(raw))


def cmd_gradcheck(cfg: RunConfig, adjoint: Callable[..., GradientVector] = grad_adjoint) -> int:
    rng = np.random.default_rng(cfg.seed)
    circuit = make_expert_circuit(cfg.schedule, cfg.layers, cfg.reverse_ladder)
    amps = _gradcheck_images(cfg, rng)
    configs = [
        (rng.uniform(-np.pi, np.pi, circuit.param_count), amps[i], rng.normal(size=circuit.num_qubits))
        for i in range(cfg.configs)
    ]
    report = check_gradients(circuit, configs, settings.GRADCHECK_STEPS, adjoint)
    print(f"{report['configs']} configurations, {circuit.param_count} parameters each")
    print(f"max |adjoint - parameter-shift| = {report['max_shift_deviation']:.3e} (tol {settings.SHIFT_TOLERANCE:g})")
    for step, dev in report["max_fd_deviation"].items():
        marker = f" (tol {settings.FD_TOLERANCE:g})" if step == settings.FD_STEP else ""
        print(f"max |adjoint - finite-diff(step {step:g})| = {dev:.3e}{marker}")
    print("PASS" if report["passed"] else "FAIL")
    return 0 if report["passed"] else 1


# --- baseline ---

def cmd_baseline(cfg: RunConfig) -> int:
    if cfg.kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {cfg.kind!r}; choose from {BASELINE_KINDS}")
    data = _load(cfg)
    split = make_split(cfg.seed, len(data.train), len(data.test))
    run_dir = cfg.run_dir()
    _write_config(cfg, run_dir)
    train_cfg = cfg.train_config()

    if cfg.kind == "quad":
        model, metrics = train_quadratic(data, split, train_cfg)
        counts = {"standard": model.num_params, "reference_test_acc": settings.REFERENCE_QUAD_TEST_ACCURACY}
    else:
        cnn_cfg = TinyCnnConfig(*cfg.c, cfg.h)
        _, metrics = train_cnn(data, split, train_cfg, cnn_cfg)
        counts = parameter_count_report(cnn_cfg)
    metrics.to_frame().to_csv(run_dir / "metrics.csv", index=False)
    (run_dir / "param_counts.json").write_text(json.dumps(counts, indent=2))

    print(f"run directory: {run_dir}")
    print(f"{cfg.kind} test accuracy: {metrics.final_test_accuracy:.4f}")
    if counts.get("reference_test_acc") is not None:
        spread = counts.get("reference_test_std")
        print(f"reference test accuracy: {counts['reference_test_acc']:.4f}" + (f" +- {spread:.4f}" if spread else ""))
    print(f"parameters: {counts['standard']}" + (
        f" (tabulated {counts['tabulated']}, {counts['equivalent_experts']:.2f} expert equivalents)"
        if cfg.kind == "cnn" else ""
    ))
    return 0


# --- compare ---

def compare_runs(run_dirs: list[str | Path]) -> pd.DataFrame:
    """Mean and spread of test accuracy per (num_experts, compute) over several runs."""
    frames = []
    for run in run_dirs:
        path = Path(run) / "compute_series.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        frames.append(pd.read_csv(path).assign(run=str(run)))
    series = pd.concat(frames, ignore_index=True)
    return (
        series.groupby(["num_experts", "compute"])["test_acc"]
        .agg(mean_test_acc="mean", std_test_acc=lambda s: s.std(ddof=0), runs="count")
        .reset_index()
    )


def cmd_compare(cfg: RunConfig) -> int:
    if not cfg.runs:
        raise ValueError("compare needs at least one run directory")
    table = compare_runs(list(cfg.runs))
    out = Path(cfg.out_dir) / (cfg.run_name or "compare.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(out, index=False)
    print(table.to_string(index=False))
    print(f"written to {out}")
    return 0


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "verify-data": cmd_verify_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
    "compare": cmd_compare,
}
