"""Expert circuit: the 4-parameter two-qubit block, ladder schedules and Pauli-Z readout."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Sequence, Union

import numpy as np

from config.settings import NUM_LAYERS, NUM_QUBITS, PARAMS_PER_GATE, SCHEDULE
from simulator.core_state import (
    CNOT,
    H,
    X,
    PlacedGate,
    StateVector,
    apply_matrix,
    expectation_z_all,
    ry,
    ry_derivative,
)
from simulator.encoding import COORD_BITS, x_qubit, y_qubit


def elementary_unitary(theta: Sequence[float]) -> np.ndarray:
    """[Ry(t3) (x) Ry(t4)] . CNOT(a -> b) . [Ry(t1) (x) Ry(t2)] on the pair (a, b)."""
    t1, t2, t3, t4 = theta
    return np.kron(ry(t3), ry(t4)) @ CNOT @ np.kron(ry(t1), ry(t2))


def elementary_derivatives(theta: Sequence[float]) -> np.ndarray:
    t1, t2, t3, t4 = theta
    pre = np.kron(ry(t1), ry(t2))
    post = np.kron(ry(t3), ry(t4))
    return np.stack([
        post @ CNOT @ np.kron(ry_derivative(t1), ry(t2)),
        post @ CNOT @ np.kron(ry(t1), ry_derivative(t2)),
        np.kron(ry_derivative(t3), ry(t4)) @ CNOT @ pre,
        np.kron(ry(t3), ry_derivative(t4)) @ CNOT @ pre,
    ])


def _cry(theta: Sequence[float]) -> np.ndarray:
    u = np.eye(4, dtype=np.complex128)
    u[2:, 2:] = ry(theta[0])
    return u


def _cry_derivatives(theta: Sequence[float]) -> np.ndarray:
    d = np.zeros((1, 4, 4), dtype=np.complex128)
    d[0, 2:, 2:] = ry_derivative(theta[0])
    return d


@dataclass(frozen=True)
class GateKind:
    name: str
    arity: int
    num_params: int
    matrix: Callable[[Sequence[float]], np.ndarray]
    derivatives: Callable[[Sequence[float]], np.ndarray] | None = None
    # every parameter enters through a rotation whose generator has eigenvalues +-1/2
    shift_rule: bool = True


GATE_KINDS = {
    kind.name: kind
    for kind in (
        GateKind("elementary", 2, PARAMS_PER_GATE, elementary_unitary, elementary_derivatives),
        GateKind("ry", 1, 1, lambda t: ry(t[0]), lambda t: ry_derivative(t[0])[None]),
        GateKind("cry", 2, 1, _cry, _cry_derivatives, shift_rule=False),
        GateKind("cnot", 2, 0, lambda t: CNOT),
        GateKind("h", 1, 0, lambda t: H),
        GateKind("x", 1, 0, lambda t: X),
    )
}


class Operation(NamedTuple):
    kind: str
    qubits: tuple[int, ...]
    params: tuple[int, ...] = ()


@dataclass(frozen=True)
class ParametricCircuit:
    """Ordered gate operations whose parameters index into one flat angle vector."""

    num_qubits: int
    operations: tuple[Operation, ...]
    num_params: int

    def __post_init__(self) -> None:
        for op in self.operations:
            kind = GATE_KINDS.get(op.kind)
            if kind is None:
                raise ValueError(f"unknown gate kind {op.kind!r}")
            if len(op.qubits) != kind.arity or len(op.params) != kind.num_params:
                raise ValueError(f"operation {op} does not match gate kind {kind.name}")
            if any(not 0 <= q < self.num_qubits for q in op.qubits) or len(set(op.qubits)) != len(op.qubits):
                raise ValueError(f"operation {op} has invalid qubits for {self.num_qubits} qubits")
            if any(not 0 <= p < self.num_params for p in op.params):
                raise ValueError(f"operation {op} references a parameter outside 0..{self.num_params - 1}")

    def check_params(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got shape {params.shape}")
        return params

    def placed_gates(self, params: np.ndarray) -> list[PlacedGate]:
        params = self.check_params(params)
        return [
            PlacedGate(op.qubits, GATE_KINDS[op.kind].matrix(params[list(op.params)]))
            for op in self.operations
        ]


# --- Schedules ---

def line_distance(pair: tuple[int, int]) -> int:
    return abs(pair[0] - pair[1])


def grid_adjacent(pair: tuple[int, int]) -> bool:
    """Neighbours on the 2x5 grid with x qubits in the top row and y qubits below."""
    (ra, ca), (rb, cb) = ((q % 2, q // 2) for q in pair)
    return abs(ra - rb) + abs(ca - cb) == 1


def _is_allowed_pair(pair: tuple[int, int]) -> bool:
    a, b = sorted(pair)
    return (a % 2 == 0 and b == a + 1) or b == a + 2


@dataclass(frozen=True)
class GateSchedule:
    name: str
    placements: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        for pair in self.placements:
            if pair[0] == pair[1]:
                raise ValueError(f"schedule {self.name}: placement {pair} repeats a qubit")
            if not _is_allowed_pair(pair) or line_distance(pair) > 2:
                raise ValueError(f"schedule {self.name}: placement {pair} is not an (x_i,y_i), (x_i,x_i+1) or (y_i,y_i+1) pair")


def _ladder21() -> list[tuple[int, int]]:
    pairs = [(x_qubit(0), y_qubit(0))]
    for i in range(COORD_BITS - 1):
        pairs += [
            (x_qubit(i), x_qubit(i + 1)),
            (y_qubit(i), y_qubit(i + 1)),
            (x_qubit(i + 1), y_qubit(i + 1)),
            (x_qubit(i), x_qubit(i + 1)),
            (y_qubit(i), y_qubit(i + 1)),
        ]
    return pairs


def _ladder13() -> list[tuple[int, int]]:
    pairs = [(x_qubit(0), y_qubit(0))]
    for i in range(COORD_BITS - 1):
        pairs += [
            (x_qubit(i), x_qubit(i + 1)),
            (y_qubit(i), y_qubit(i + 1)),
            (x_qubit(i + 1), y_qubit(i + 1)),
        ]
    return pairs


SCHEDULES = {"ladder21": _ladder21, "ladder13": _ladder13}


def _mirror(qubit: int) -> int:
    level = qubit // 2
    return 2 * (COORD_BITS - 1 - level) + qubit % 2


def build_schedule(name: str, reverse: bool = False) -> GateSchedule:
    """Ladder schedule climbing from the coarsest scale (i = 0); `reverse` climbs from i = 4."""
    if name not in SCHEDULES:
        raise ValueError(f"unknown schedule {name!r}; choose from {sorted(SCHEDULES)}")
    pairs = SCHEDULES[name]()
    if reverse:
        pairs = [(_mirror(a), _mirror(b)) for a, b in pairs]
    return GateSchedule(name, tuple(pairs))


@dataclass(frozen=True)
class ExpertCircuit:
    """`num_layers` repetitions of the schedule, each layer with its own parameters."""

    schedule: GateSchedule
    num_layers: int = NUM_LAYERS
    reverse: bool = False

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be >= 1, got {self.num_layers}")

    @property
    def num_qubits(self) -> int:
        return NUM_QUBITS

    @property
    def param_count(self) -> int:
        return PARAMS_PER_GATE * len(self.schedule.placements) * self.num_layers

    @cached_property
    def parametric(self) -> ParametricCircuit:
        ops = []
        for layer in range(self.num_layers):
            for j, pair in enumerate(self.schedule.placements):
                start = PARAMS_PER_GATE * (layer * len(self.schedule.placements) + j)
                ops.append(Operation("elementary", pair, tuple(range(start, start + PARAMS_PER_GATE))))
        return ParametricCircuit(NUM_QUBITS, tuple(ops), self.param_count)


def make_expert_circuit(schedule: str = SCHEDULE, num_layers: int = NUM_LAYERS, reverse: bool = False) -> ExpertCircuit:
    return ExpertCircuit(build_schedule(schedule, reverse), num_layers, reverse)


AnyCircuit = Union[ExpertCircuit, ParametricCircuit]


def as_parametric(circuit: AnyCircuit) -> ParametricCircuit:
    return circuit.parametric if isinstance(circuit, ExpertCircuit) else circuit


# --- Execution ---

def run_circuit(circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray) -> np.ndarray:
    """Apply every operation to a (..., 2^n) amplitude array in place."""
    circ = as_parametric(circuit)
    for gate in circ.placed_gates(params):
        apply_matrix(amps, circ.num_qubits, gate.qubits, gate.matrix)
    return amps


def simulate(circuit: AnyCircuit, params: np.ndarray, state: StateVector) -> StateVector:
    out = state.copy()
    run_circuit(circuit, params, out.amplitudes)
    return out


def z_values(circuit: AnyCircuit, params: np.ndarray, amps: np.ndarray) -> np.ndarray:
    """Batched <Z_q> readout, shape (..., num_qubits); `amps` is left untouched."""
    circ = as_parametric(circuit)
    work = np.array(amps, dtype=np.complex128, order="C")
    run_circuit(circ, params, work)
    return expectation_z_all(work, circ.num_qubits)


def run_expert(circuit: AnyCircuit, params: np.ndarray, input: StateVector) -> np.ndarray:
    if not input.is_normalized():
        raise ValueError("expert input state must be normalized")
    return z_values(circuit, params, input.amplitudes)


def raw_output(z: np.ndarray) -> np.ndarray | float:
    """Plain sum of the Z readouts along the last axis."""
    total = np.sum(z, axis=-1)
    return float(total) if np.ndim(total) == 0 else total
