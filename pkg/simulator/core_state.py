"""Dense statevector kernels.

Qubit 0 is the most significant bit of the amplitude index: the basis state
|q0 q1 ... q(n-1)> lives at index sum(q_k << (n - 1 - k)). Every array-level
kernel accepts amplitude arrays with arbitrary leading batch axes and updates
them in place.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import numpy.typing as npt
from scipy import sparse

from config.settings import MAX_ORACLE_QUBITS, MAX_QUBITS, NORM_TOLERANCE, UNITARY_TOLERANCE

Amplitudes = npt.NDArray[np.complex128]

X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2.0)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=np.complex128)


def ry_derivative(theta: float) -> np.ndarray:
    """d Ry / d theta."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return 0.5 * np.array([[-s, -c], [c, -s]], dtype=np.complex128)


def is_unitary(u: np.ndarray, tol: float = UNITARY_TOLERANCE) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(
        u.conj().T @ u, np.eye(u.shape[0]), rtol=0.0, atol=tol
    )


class PlacedGate(NamedTuple):
    """A gate matrix bound to the qubits it acts on (first qubit = most significant local bit)."""

    qubits: tuple[int, ...]
    matrix: np.ndarray


@dataclass
class StateVector:
    """The simulator's working state. The amplitude buffer is kept C-contiguous complex128."""

    num_qubits: int
    amplitudes: Amplitudes

    def __post_init__(self) -> None:
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ValueError(f"num_qubits must be in 1..{MAX_QUBITS}, got {self.num_qubits}")
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (1 << self.num_qubits,):
            raise ValueError(
                f"expected {1 << self.num_qubits} amplitudes for {self.num_qubits} qubits, got shape {amps.shape}"
            )
        self.amplitudes = amps

    @classmethod
    def basis(cls, num_qubits: int, index: int = 0) -> "StateVector":
        amps = np.zeros(1 << num_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(num_qubits, amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
        return abs(self.norm() - 1.0) < tol

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())


def _check_qubits(num_qubits: int, qubits: Sequence[int]) -> None:
    for q in qubits:
        if not 0 <= q < num_qubits:
            raise IndexError(f"qubit index {q} out of range for {num_qubits} qubits")
    if len(set(qubits)) != len(qubits):
        raise ValueError(f"qubit indices must be distinct, got {tuple(qubits)}")


def _local_view(amps: np.ndarray, num_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    """View of `amps` with the given qubits moved to the trailing axes, in order."""
    if amps.shape[-1] != 1 << num_qubits:
        raise ValueError(f"amplitude axis has length {amps.shape[-1]}, expected {1 << num_qubits}")
    if not amps.flags.c_contiguous:
        raise ValueError("amplitude buffer must be C-contiguous for in-place kernels")
    batch = amps.shape[:-1]
    tensor = amps.reshape(batch + (2,) * num_qubits)
    offset = len(batch)
    k = len(qubits)
    return np.moveaxis(tensor, [offset + q for q in qubits], list(range(-k, 0)))


def apply_matrix(amps: np.ndarray, num_qubits: int, qubits: Sequence[int], u: np.ndarray) -> np.ndarray:
    """Apply a 2^k x 2^k matrix to the given qubits of every state in `amps`, in place."""
    qubits = tuple(qubits)
    _check_qubits(num_qubits, qubits)
    k = len(qubits)
    if u.shape != (1 << k, 1 << k):
        raise ValueError(f"matrix of shape {u.shape} does not act on {k} qubit(s)")
    local = _local_view(amps, num_qubits, qubits)
    flat = local.reshape(local.shape[:-k] + (1 << k,))
    local[...] = (flat @ u.T).reshape(local.shape)
    return amps


def apply_1q(state: StateVector, qubit: int, u: np.ndarray) -> StateVector:
    """Apply a single-qubit unitary in place and return the same state."""
    _check_qubits(state.num_qubits, (qubit,))
    if u.shape != (2, 2) or not is_unitary(u):
        raise ValueError("apply_1q expects a 2x2 unitary")
    apply_matrix(state.amplitudes, state.num_qubits, (qubit,), u)
    return state


def apply_2q(state: StateVector, qubit_a: int, qubit_b: int, u: np.ndarray) -> StateVector:
    """Apply a two-qubit unitary in place; qubit_a supplies the more significant local bit."""
    _check_qubits(state.num_qubits, (qubit_a, qubit_b))
    if u.shape != (4, 4) or not is_unitary(u):
        raise ValueError("apply_2q expects a 4x4 unitary")
    apply_matrix(state.amplitudes, state.num_qubits, (qubit_a, qubit_b), u)
    return state


@lru_cache(maxsize=None)
def z_signs(num_qubits: int) -> np.ndarray:
    """(num_qubits, 2^n) table of Z eigenvalues: +1 where the qubit bit is 0, -1 where it is 1."""
    index = np.arange(1 << num_qubits)
    shifts = num_qubits - 1 - np.arange(num_qubits)
    bits = (index[None, :] >> shifts[:, None]) & 1
    signs = (1 - 2 * bits).astype(np.float64)
    signs.flags.writeable = False
    return signs


def expectation_z_all(amps: np.ndarray, num_qubits: int) -> np.ndarray:
    """<Z_q> for every qubit; shape (..., num_qubits)."""
    probs = np.abs(amps) ** 2
    return probs @ z_signs(num_qubits).T


def expectation_z(state: StateVector, qubit: int) -> float:
    _check_qubits(state.num_qubits, (qubit,))
    probs = np.abs(state.amplitudes) ** 2
    return float(probs @ z_signs(state.num_qubits)[qubit])


def local_gram(bra: np.ndarray, ket: np.ndarray, num_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    """C[..., k, l] = sum over the other qubits of conj(bra[k, rest]) * ket[l, rest]."""
    qubits = tuple(qubits)
    _check_qubits(num_qubits, qubits)
    dim = 1 << len(qubits)
    batch = bra.shape[:-1]
    lb = _local_view(bra, num_qubits, qubits).reshape(batch + (-1, dim))
    lk = _local_view(ket, num_qubits, qubits).reshape(batch + (-1, dim))
    return np.einsum("...rk,...rl->...kl", lb.conj(), lk)


@lru_cache(maxsize=None)
def _embedding_permutation(num_qubits: int, qubits: tuple[int, ...]) -> np.ndarray:
    # Maps an amplitude index to its index once `qubits` are moved to the front.
    order = list(qubits) + [q for q in range(num_qubits) if q not in qubits]
    index = np.arange(1 << num_qubits)
    weights = num_qubits - 1 - np.arange(num_qubits)
    bits = (index[:, None] >> weights[None, :]) & 1
    return (bits[:, order] << weights[None, :]).sum(axis=1)


def embed_gate(gate: PlacedGate, num_qubits: int) -> sparse.csr_matrix:
    """Full 2^n x 2^n sparse matrix of a placed gate, built by Kronecker embedding."""
    qubits = tuple(gate.qubits)
    _check_qubits(num_qubits, qubits)
    rest = 1 << (num_qubits - len(qubits))
    kron = sparse.kron(
        sparse.csr_matrix(np.asarray(gate.matrix, dtype=np.complex128)),
        sparse.identity(rest, dtype=np.complex128, format="csr"),
        format="csr",
    )
    perm = _embedding_permutation(num_qubits, qubits)
    return kron[perm][:, perm]


def dense_unitary_oracle(gate_sequence: Iterable[PlacedGate], num_qubits: int) -> np.ndarray:
    """Dense product of the gate sequence (first gate applied first). Test oracle only."""
    if num_qubits > MAX_ORACLE_QUBITS:
        raise ValueError(
            f"dense oracle limited to {MAX_ORACLE_QUBITS} qubits, got {num_qubits}"
        )
    unitary = np.eye(1 << num_qubits, dtype=np.complex128)
    for gate in gate_sequence:
        unitary = embed_gate(gate, num_qubits) @ unitary
    return np.asarray(unitary)
