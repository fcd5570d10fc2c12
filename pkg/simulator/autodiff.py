"""Exact gradients of expert observables and of the MoQE square loss.

Three methods cross-check each other:
  * adjoint        one forward sweep, one backward sweep of the observable state and a
                   4x4 local contraction per gate (the training default);
  * param-shift    [<O>(t + pi/2) - <O>(t - pi/2)] / 2 per parameter, valid when every
                   parameter enters through a rotation with generator eigenvalues +-1/2;
  * finite-diff    central differences, the oracle.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Callable, Iterable, Sequence, TypeVar

import numpy as np
import numpy.typing as npt

from config.settings import FD_STEP, FD_TOLERANCE, GRADIENT_METHODS, SHIFT_TOLERANCE
from simulator.ansatz import GATE_KINDS, AnyCircuit, as_parametric, z_values
from simulator.core_state import StateVector, apply_matrix, local_gram, z_signs
from simulator.encoding import PaddedImage, encode_pixels

if TYPE_CHECKING:
    from pipelines.moqe import MoqeModel

logger = logging.getLogger(__name__)

GradientVector = npt.NDArray[np.float64]

T = TypeVar("T")
R = TypeVar("R")


class ShiftRuleError(ValueError):
    """The two-term parameter-shift rule does not hold for a gate in the circuit."""


class NotCalibratedError(RuntimeError):
    """The model's variance normalizer has not been calibrated."""


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Ordered map; results come back in item order whatever the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_weights(weights: Sequence[float], num_qubits: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (num_qubits,):
        raise ValueError(f"observable needs {num_qubits} weights, got shape {weights.shape}")
    return weights


def adjoint_value_and_grad(
    circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray, weights: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    """<O> and d<O>/dparams for O = sum_q weights_q Z_q, batched over the leading axes of `amps`."""
    circ = as_parametric(circuit)
    params = circ.check_params(params)
    weights = _check_weights(weights, circ.num_qubits)
    n = circ.num_qubits

    phi = np.array(amps, dtype=np.complex128, order="C")
    gates = []
    for op in circ.operations:
        kind = GATE_KINDS[op.kind]
        theta = params[list(op.params)]
        u = kind.matrix(theta)
        derivs = kind.derivatives(theta) if op.params else None
        apply_matrix(phi, n, op.qubits, u)
        gates.append((op, u, derivs))

    lam = phi * (weights @ z_signs(n))
    values = np.real(np.sum(phi.conj() * lam, axis=-1))
    grads = np.zeros(phi.shape[:-1] + (circ.num_params,))
    for op, u, derivs in reversed(gates):
        u_dag = u.conj().T
        apply_matrix(phi, n, op.qubits, u_dag)
        if derivs is not None:
            gram = local_gram(lam, phi, n, op.qubits)
            grads[..., list(op.params)] += 2.0 * np.real(np.einsum("pkl,...kl->...p", derivs, gram))
        apply_matrix(lam, n, op.qubits, u_dag)
    return values, grads


def weighted_expectation(circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return z_values(circuit, params, amps) @ weights


def _shift_gradient(circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray, weights: np.ndarray) -> np.ndarray:
    circ = as_parametric(circuit)
    bad = sorted({op.kind for op in circ.operations if op.params and not GATE_KINDS[op.kind].shift_rule})
    if bad:
        raise ShiftRuleError(f"parameter-shift rule does not apply to gate kind(s) {bad}")
    params = circ.check_params(params)
    grads = np.zeros(np.shape(amps)[:-1] + (circ.num_params,))
    for j in range(circ.num_params):
        shifted = params.copy()
        shifted[j] = params[j] + np.pi / 2
        plus = weighted_expectation(circ, shifted, amps, weights)
        shifted[j] = params[j] - np.pi / 2
        minus = weighted_expectation(circ, shifted, amps, weights)
        grads[..., j] = (plus - minus) / 2.0
    return grads


def _fd_gradient(circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray, weights: np.ndarray, step: float) -> np.ndarray:
    circ = as_parametric(circuit)
    params = circ.check_params(params)
    grads = np.zeros(np.shape(amps)[:-1] + (circ.num_params,))
    for j in range(circ.num_params):
        shifted = params.copy()
        shifted[j] = params[j] + step
        plus = weighted_expectation(circ, shifted, amps, weights)
        shifted[j] = params[j] - step
        minus = weighted_expectation(circ, shifted, amps, weights)
        grads[..., j] = (plus - minus) / (2.0 * step)
    return grads


def grad_parameter_shift(circuit: AnyCircuit, params: np.ndarray, input: StateVector, qubit: int) -> GradientVector:
    """Gradient of <Z_qubit> by the two-term parameter-shift rule."""
    circ = as_parametric(circuit)
    if not 0 <= qubit < circ.num_qubits:
        raise IndexError(f"qubit index {qubit} out of range")
    weights = np.zeros(circ.num_qubits)
    weights[qubit] = 1.0
    return _shift_gradient(circ, params, input.amplitudes, weights)


def grad_adjoint(circuit: AnyCircuit, params: np.ndarray, input: StateVector, weights: Sequence[float]) -> GradientVector:
    """Gradient of <sum_q weights_q Z_q> by adjoint differentiation."""
    _, grads = adjoint_value_and_grad(circuit, params, input.amplitudes, weights)
    return grads


def grad_finite_difference(
    circuit: AnyCircuit, params: np.ndarray, input: StateVector, weights: Sequence[float], step: float = FD_STEP
) -> GradientVector:
    circ = as_parametric(circuit)
    return _fd_gradient(circ, params, input.amplitudes, _check_weights(weights, circ.num_qubits), step)


def expert_value_and_grad(
    circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray, method: str = "adjoint"
) -> tuple[np.ndarray, np.ndarray]:
    """Raw expert output (sum of all Z readouts) and its parameter gradient, batched."""
    weights = np.ones(as_parametric(circuit).num_qubits)
    if method == "adjoint":
        return adjoint_value_and_grad(circuit, params, amps, weights)
    values = weighted_expectation(circuit, params, amps, weights)
    if method == "param-shift":
        return values, _shift_gradient(circuit, params, amps, weights)
    if method == "finite-diff":
        return values, _fd_gradient(circuit, params, amps, weights, FD_STEP)
    raise ValueError(f"unknown gradient method {method!r}; choose from {GRADIENT_METHODS}")


def batch_loss_and_grad(
    model: "MoqeModel", amps: np.ndarray, labels: np.ndarray, method: str = "adjoint", threads: int = 1
) -> tuple[float, GradientVector, np.ndarray]:
    """Mean square loss over the batch, its gradient over all experts jointly, and the outputs f."""
    labels = np.asarray(labels, dtype=np.float64)
    if amps.shape[0] == 0:
        raise ValueError("batch must not be empty")
    if not model.calibrated:
        raise NotCalibratedError("calibrate the variance normalizer before computing the loss")
    scale = 1.0 / (model.nu * np.sqrt(model.num_experts))
    results = parallel_map(
        lambda e: expert_value_and_grad(model.circuit, model.expert_params[e], amps, method),
        range(model.num_experts),
        threads,
    )
    raw = np.zeros(amps.shape[0])
    for values, _ in results:
        raw += values
    f = raw * scale
    residual = f - labels
    loss = float(np.mean(residual ** 2))
    coeff = 2.0 * residual * scale / amps.shape[0]
    grad = np.concatenate([coeff @ grads for _, grads in results])
    return loss, grad, f


def loss_and_grad_batch(
    model: "MoqeModel", batch: Sequence[tuple[PaddedImage, int]], method: str = "adjoint", threads: int = 1
) -> tuple[float, GradientVector]:
    if not batch:
        raise ValueError("batch must not be empty")
    amps = encode_pixels(np.stack([img.pixels for img, _ in batch]))
    labels = np.array([label for _, label in batch], dtype=np.float64)
    loss, grad, _ = batch_loss_and_grad(model, amps, labels, method, threads)
    return loss, grad


def check_gradients(
    circuit: AnyCircuit,
    configs: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    steps: Sequence[float] = (FD_STEP,),
    adjoint: Callable[..., GradientVector] = grad_adjoint,
) -> dict:
    """Three-way agreement over (params, amplitudes, weights) configurations.

    Returns the maximum absolute deviation of adjoint against parameter-shift and
    against central differences for every step, plus whether the default tolerances hold.
    """
    circ = as_parametric(circuit)
    max_shift = 0.0
    max_fd = {step: 0.0 for step in steps}
    for params, amps, weights in configs:
        state = StateVector(circ.num_qubits, amps)
        reference = adjoint(circ, params, state, weights)
        shift = _shift_gradient(circ, params, state.amplitudes, _check_weights(weights, circ.num_qubits))
        max_shift = max(max_shift, float(np.max(np.abs(reference - shift))))
        for step in steps:
            fd = grad_finite_difference(circ, params, state, weights, step)
            max_fd[step] = max(max_fd[step], float(np.max(np.abs(reference - fd))))
        logger.debug("gradcheck config done: shift dev %.3e", max_shift)
    fd_at_default = max_fd.get(FD_STEP, min(max_fd.values()) if max_fd else 0.0)
    return {
        "configs": len(configs),
        "max_shift_deviation": max_shift,
        "max_fd_deviation": max_fd,
        "passed": max_shift < SHIFT_TOLERANCE and fd_at_default < FD_TOLERANCE,
    }
