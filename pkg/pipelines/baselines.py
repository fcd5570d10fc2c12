"""Classical comparators: the full quadratic classifier and a parameter-matched tiny CNN.

Both are trained with the same square loss, Adam state and batch-of-4 epoch loop as the
quantum mixture, with hand-written backpropagation on numpy arrays.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config.settings import REFERENCE_CNN_RESULTS, PIXEL_SCALE, QUANTUM_PARAMS_PER_EXPERT, RAW_SIZE
from pipelines.mnist_io import DatasetSplit, LabeledImages, MnistData
from pipelines.training import Metrics, TrainConfig, fit, predict_sign
from simulator.encoding import pad_raw_batch

logger = logging.getLogger(__name__)

NUM_PIXELS = RAW_SIZE * RAW_SIZE
NUM_QUADRATIC = NUM_PIXELS * (NUM_PIXELS + 1) // 2


# --- Quadratic classifier ---

@lru_cache(maxsize=None)
def _triangle() -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(NUM_PIXELS)


@dataclass(eq=False)
class QuadraticClassifier:
    """bias + linear . p + sum_{i<=j} quadratic_ij p_i p_j over the 784 pixel intensities.

    `parameters` is laid out as [bias, linear (784), quadratic upper triangle (307,720)],
    the triangle in row-major order including the diagonal.
    """

    parameters: np.ndarray

    num_params = 1 + NUM_PIXELS + NUM_QUADRATIC

    def __post_init__(self) -> None:
        self.parameters = np.ascontiguousarray(self.parameters, dtype=np.float64)
        if self.parameters.shape != (self.num_params,):
            raise ValueError(f"quadratic classifier needs {self.num_params} parameters, got {self.parameters.shape}")

    @classmethod
    def zeros(cls) -> "QuadraticClassifier":
        return cls(np.zeros(cls.num_params))

    @property
    def bias(self) -> np.ndarray:
        return self.parameters[:1]

    @property
    def linear(self) -> np.ndarray:
        return self.parameters[1:1 + NUM_PIXELS]

    @property
    def quadratic(self) -> np.ndarray:
        return self.parameters[1 + NUM_PIXELS:]

    def quadratic_matrix(self) -> np.ndarray:
        w = np.zeros((NUM_PIXELS, NUM_PIXELS))
        w[_triangle()] = self.quadratic
        return w


def _flat_pixels(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-2:] != (RAW_SIZE, RAW_SIZE):
        raise ValueError(f"expected {RAW_SIZE}x{RAW_SIZE} images, got {img.shape[-2:]}")
    return img.reshape(img.shape[:-2] + (NUM_PIXELS,))


def quad_output(model: QuadraticClassifier, img: np.ndarray) -> np.ndarray | float:
    """Model output for one (28, 28) image or a (B, 28, 28) batch, intensities in [0, 1]."""
    p = _flat_pixels(img)
    out = model.bias[0] + p @ model.linear + np.einsum("...i,ij,...j->...", p, model.quadratic_matrix(), p)
    return float(out) if np.ndim(out) == 0 else out


def quadratic_features(img: np.ndarray) -> np.ndarray:
    """All 308,505 monomials of degree <= 2 in parameter order."""
    p = _flat_pixels(img)
    iu, ju = _triangle()
    return np.concatenate([np.ones(p.shape[:-1] + (1,)), p, p[..., iu] * p[..., ju]], axis=-1)


def quad_loss_and_grad(model: QuadraticClassifier, pixels: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean square loss over a (B, 28, 28) batch, its gradient and the outputs."""
    p = _flat_pixels(pixels)
    f = np.atleast_1d(quad_output(model, pixels))
    residual = f - labels
    coeff = 2.0 * residual / p.shape[0]
    outer = p.T @ (coeff[:, None] * p)
    grad = np.concatenate([[coeff.sum()], coeff @ p, outer[_triangle()]])
    return float(np.mean(residual ** 2)), grad, f


def _scaled(images: np.ndarray) -> np.ndarray:
    return images / PIXEL_SCALE


def evaluate_quadratic(model: QuadraticClassifier, samples: LabeledImages, chunk: int = 1024) -> float:
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    f = np.concatenate([
        np.atleast_1d(quad_output(model, _scaled(samples.images[s:s + chunk]))) for s in range(0, len(samples), chunk)
    ])
    return float(np.mean(predict_sign(f) == samples.labels))


def train_quadratic(data: MnistData, split: DatasetSplit, cfg: TrainConfig) -> tuple[QuadraticClassifier, Metrics]:
    cfg.validate()
    model = QuadraticClassifier.zeros()
    train_idx = split.train[:cfg.train_subset_size]
    train_set = data.train.subset(train_idx)
    test_set = data.test.subset(split.test)
    pixels = _scaled(train_set.images)
    labels = train_set.labels.astype(np.float64)
    logger.info("Training quadratic classifier (%d parameters) on %d images", model.num_params, len(train_set))
    metrics = fit(
        model.parameters,
        lambda idx: quad_loss_and_grad(model, pixels[idx], labels[idx]),
        labels,
        lambda: evaluate_quadratic(model, test_set),
        cfg,
        "quad",
        lambda: evaluate_quadratic(model, train_set),
    )
    return model, metrics


# --- Tiny CNN ---

@dataclass(frozen=True)
class TinyCnnConfig:
    c1: int
    c2: int
    c3: int
    c4: int
    h: int

    def __post_init__(self) -> None:
        if min(self.c1, self.c2, self.c3, self.c4, self.h) < 1:
            raise ValueError(f"all channel counts and the hidden width must be >= 1, got {self}")

    @property
    def channels(self) -> tuple[int, ...]:
        return (1, self.c1, self.c2, self.c3, self.c4)

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.c1, self.c2, self.c3, self.c4, self.h)

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for k, (cin, cout) in enumerate(zip(self.channels, self.channels[1:])):
            shapes += [(f"conv{k + 1}.kernel", (3, 3, cin, cout)), (f"conv{k + 1}.bias", (cout,))]
        shapes += [
            ("fc1.weight", (4 * self.c4, self.h)),
            ("fc1.bias", (self.h,)),
            ("fc2.weight", (self.h,)),
            ("fc2.bias", (1,)),
        ]
        return shapes


def count_params(cfg: TinyCnnConfig, biases: bool = True) -> int:
    """Parameters of the tiny CNN under standard counting (3x3 kernels, optional biases)."""
    ch = cfg.channels
    conv = sum(9 * cin * cout + (cout if biases else 0) for cin, cout in zip(ch, ch[1:]))
    fc = 4 * cfg.c4 * cfg.h + cfg.h + (cfg.h + 1 if biases else 0)
    return conv + fc


@dataclass(eq=False)
class TinyCnn:
    cfg: TinyCnnConfig
    parameters: np.ndarray

    def __post_init__(self) -> None:
        self.parameters = np.ascontiguousarray(self.parameters, dtype=np.float64)
        if self.parameters.shape != (count_params(self.cfg),):
            raise ValueError(f"{self.cfg} needs {count_params(self.cfg)} parameters, got {self.parameters.shape}")

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Named views onto `parameters`."""
        views, offset = {}, 0
        for name, shape in self.cfg.layout():
            size = int(np.prod(shape))
            views[name] = self.parameters[offset:offset + size].reshape(shape)
            offset += size
        return views


def init_cnn(cfg: TinyCnnConfig, seed: int = 0) -> TinyCnn:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    model = TinyCnn(cfg, np.zeros(count_params(cfg)))
    for name, view in model.arrays.items():
        if name.endswith("bias"):
            continue
        fan_in = int(np.prod(view.shape[:-1])) if view.ndim > 1 else view.shape[0]
        view[...] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=view.shape)
    return model


def _windows(x: np.ndarray) -> np.ndarray:
    """(..., H, W, C) -> (..., H, W, C, 3, 3) patches of the 1-padded input."""
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    return sliding_window_view(np.pad(x, pad), (3, 3), axis=(-3, -2))


def conv2d_3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride 1, zero padding 1: (..., H, W, C) -> (..., H, W, C')."""
    if kernel.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise ValueError(f"kernel must have shape (3, 3, C, C'), got {kernel.shape}")
    if x.ndim < 3 or x.shape[-1] != kernel.shape[2]:
        raise ValueError(f"input with {x.shape[-1] if x.ndim else 0} channels does not match kernel {kernel.shape}")
    if bias.shape != (kernel.shape[3],):
        raise ValueError(f"bias shape {bias.shape} does not match {kernel.shape[3]} output channels")
    return np.einsum("...hwcij,ijcd->...hwd", _windows(x), kernel) + bias


def conv2d_3x3_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_x, grad_kernel, grad_bias) summed over any leading batch axes."""
    windows = _windows(x)
    grad_kernel = np.einsum(
        "bhwcij,bhwd->ijcd", windows.reshape((-1,) + windows.shape[-6:]), grad_out.reshape((-1,) + grad_out.shape[-3:])
    )
    grad_bias = grad_out.reshape(-1, grad_out.shape[-1]).sum(axis=0)
    grad_x = np.einsum("...hwdij,ijcd->...hwc", _windows(grad_out), kernel[::-1, ::-1])
    return grad_x, grad_kernel, grad_bias


def avg_pool_2x2(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape[-3:]
    if h % 2 or w % 2:
        raise ValueError(f"average pooling needs even spatial dims, got {h}x{w}")
    return x.reshape(x.shape[:-3] + (h // 2, 2, w // 2, 2, c)).mean(axis=(-4, -2))


def avg_pool_2x2_backward(grad_out: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(grad_out, 2, axis=-3), 2, axis=-2) / 4.0


@dataclass
class CnnCache:
    inputs: list[np.ndarray]
    pre_relu: list[np.ndarray]
    flat: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    output: np.ndarray


def cnn_forward(model: TinyCnn, pixels: np.ndarray) -> tuple[np.ndarray, CnnCache]:
    """Outputs for (B, 32, 32) padded images: (conv, ReLU, pool) x 4, flatten, FC-ReLU-FC."""
    w = model.arrays
    a = np.asarray(pixels, dtype=np.float64)[..., None]
    inputs, pre = [], []
    for k in range(1, 5):
        inputs.append(a)
        z = conv2d_3x3(a, w[f"conv{k}.kernel"], w[f"conv{k}.bias"])
        pre.append(z)
        a = avg_pool_2x2(np.maximum(z, 0.0))
    flat = a.reshape(a.shape[:-3] + (-1,))
    hidden_pre = flat @ w["fc1.weight"] + w["fc1.bias"]
    hidden = np.maximum(hidden_pre, 0.0)
    out = hidden @ w["fc2.weight"] + w["fc2.bias"][0]
    return out, CnnCache(inputs, pre, flat, hidden_pre, hidden, out)


def cnn_backward(model: TinyCnn, cache: CnnCache, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean square loss of a cached forward pass over a (B, ...) batch and its gradient."""
    w = model.arrays
    residual = cache.output - labels
    batch = residual.shape[0]
    grads = {name: np.zeros_like(view) for name, view in w.items()}

    d_out = 2.0 * residual / batch
    grads["fc2.weight"] = d_out @ cache.hidden
    grads["fc2.bias"] = np.array([d_out.sum()])
    d_hidden = np.outer(d_out, w["fc2.weight"]) * (cache.hidden_pre > 0)
    grads["fc1.weight"] = cache.flat.T @ d_hidden
    grads["fc1.bias"] = d_hidden.sum(axis=0)
    d_a = (d_hidden @ w["fc1.weight"].T).reshape(cache.flat.shape[:-1] + (2, 2, model.cfg.c4))
    for k in range(4, 0, -1):
        z = cache.pre_relu[k - 1]
        d_z = avg_pool_2x2_backward(d_a) * (z > 0)
        d_a, grads[f"conv{k}.kernel"], grads[f"conv{k}.bias"] = conv2d_3x3_backward(
            cache.inputs[k - 1], w[f"conv{k}.kernel"], d_z
        )
    flat_grad = np.concatenate([grads[name].ravel() for name, _ in model.cfg.layout()])
    return float(np.mean(residual ** 2)), flat_grad


def evaluate_cnn(model: TinyCnn, samples: LabeledImages, chunk: int = 1024) -> float:
    if len(samples) == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    f = np.concatenate([
        cnn_forward(model, pad_raw_batch(samples.images[s:s + chunk]))[0] for s in range(0, len(samples), chunk)
    ])
    return float(np.mean(predict_sign(f) == samples.labels))


def train_cnn(
    data: MnistData, split: DatasetSplit, cfg: TrainConfig, cnn_cfg: TinyCnnConfig
) -> tuple[TinyCnn, Metrics]:
    cfg.validate()
    model = init_cnn(cnn_cfg, cfg.seed)
    train_set = data.train.subset(split.train[:cfg.train_subset_size])
    test_set = data.test.subset(split.test)
    pixels = pad_raw_batch(train_set.images)
    labels = train_set.labels.astype(np.float64)
    logger.info("Training CNN %s (%d parameters) on %d images", cnn_cfg.as_tuple(), count_params(cnn_cfg), len(train_set))

    def loss_and_grad(idx: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        out, cache = cnn_forward(model, pixels[idx])
        loss, grad = cnn_backward(model, cache, labels[idx])
        return loss, grad, out

    metrics = fit(
        model.parameters,
        loss_and_grad,
        labels,
        lambda: evaluate_cnn(model, test_set),
        cfg,
        "cnn",
        lambda: evaluate_cnn(model, train_set),
    )
    return model, metrics


def parameter_count_report(cfg: TinyCnnConfig) -> dict:
    """Our counts next to the tabulated count and reference accuracy for the same configuration."""
    standard = count_params(cfg)
    tabulated = REFERENCE_CNN_RESULTS.get(cfg.as_tuple())
    return {
        "config": list(cfg.as_tuple()),
        "standard": standard,
        "without_biases": count_params(cfg, biases=False),
        "tabulated": tabulated[0] if tabulated else None,
        "reference_test_acc": tabulated[1] if tabulated else None,
        "reference_test_std": tabulated[2] if tabulated else None,
        "equivalent_experts": standard / QUANTUM_PARAMS_PER_EXPERT,
    }
