"""Dense statevector simulation of the RX/RY/RZ/CNOT/SWAP gate set.

Bit convention: amplitudes live in a flat array of length ``2**n_qubits`` and
qubit 0 is the most significant bit of the basis index, so the basis state
``|q0 q1 ... q_{n-1}>`` sits at index ``q0*2**(n-1) + ... + q_{n-1}``.

Rotations follow ``R_P(angle) = exp(-i * angle * P / 2)``.

This module is the reference path: one gate at a time, complex128, no
batching. :mod:`c4vqc.engine` holds the fast batched simulator used for
training and is tested against the functions here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapabilityError, CapacityError, ConfigurationError, ValidationError

MAX_QUBITS = 24
ROTATION_KINDS = ("RX", "RY", "RZ")
TWO_QUBIT_KINDS = ("CNOT", "SWAP")
GATE_KINDS = ROTATION_KINDS + TWO_QUBIT_KINDS

PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class GateOp:
    """One gate of a circuit.

    A rotation carries exactly one angle source: a bound ``angle``, a
    trainable ``param`` slot, or an input ``feature`` slot.
    """

    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None
    param: int | None = None
    feature: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ConfigurationError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        arity = 1 if self.kind in ROTATION_KINDS else 2
        if len(self.qubits) != arity:
            raise ConfigurationError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != arity or min(self.qubits) < 0:
            raise ConfigurationError(f"invalid qubit indices {self.qubits}")
        sources = sum(x is not None for x in (self.angle, self.param, self.feature))
        if self.kind in ROTATION_KINDS and sources != 1:
            raise ConfigurationError("a rotation needs exactly one of angle, param, feature")
        if self.kind in TWO_QUBIT_KINDS and sources:
            raise ConfigurationError(f"{self.kind} takes no angle")

    @property
    def is_rotation(self) -> bool:
        return self.kind in ROTATION_KINDS

    @property
    def axis(self) -> str:
        return self.kind[1]

    def bind(self, params: Sequence[float] | None = None, inputs: Sequence[float] | None = None) -> float:
        """Resolve the rotation angle from the parameter and input vectors."""
        if self.angle is not None:
            return float(self.angle)
        if self.param is not None:
            if params is None or self.param >= len(params):
                raise ConfigurationError(f"unbound parameter slot {self.param}")
            return float(params[self.param])
        if inputs is None or self.feature >= len(inputs):
            raise ConfigurationError(f"unbound input slot {self.feature}")
        return float(inputs[self.feature])


def rx(q: int, angle: float | None = None, *, param: int | None = None, feature: int | None = None) -> GateOp:
    return GateOp("RX", (q,), angle, param, feature)


def ry(q: int, angle: float | None = None, *, param: int | None = None, feature: int | None = None) -> GateOp:
    return GateOp("RY", (q,), angle, param, feature)


def rz(q: int, angle: float | None = None, *, param: int | None = None, feature: int | None = None) -> GateOp:
    return GateOp("RZ", (q,), angle, param, feature)


def cnot(control: int, target: int) -> GateOp:
    return GateOp("CNOT", (control, target))


def swap(a: int, b: int) -> GateOp:
    return GateOp("SWAP", (a, b))


@dataclass(frozen=True)
class ZSumObservable:
    """``sum_k c_k Z_{q_k}`` over distinct qubits."""

    terms: tuple[tuple[int, float], ...]

    def __post_init__(self):
        terms = tuple((int(q), float(c)) for q, c in self.terms)
        qubits = [q for q, _ in terms]
        if len(set(qubits)) != len(qubits):
            raise ValidationError("observable terms must act on distinct qubits")
        object.__setattr__(self, "terms", terms)

    @property
    def qubits(self) -> tuple[int, ...]:
        return tuple(q for q, _ in self.terms)

    @property
    def bound(self) -> float:
        return sum(abs(c) for _, c in self.terms)

    def diagonal(self, n_qubits: int) -> np.ndarray:
        """The observable as a length ``2**n_qubits`` real diagonal."""
        idx = np.arange(1 << n_qubits)
        diag = np.zeros(1 << n_qubits)
        for q, c in self.terms:
            bit = (idx >> (n_qubits - 1 - q)) & 1
            diag += c * (1 - 2 * bit)
        return diag


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.n_qubits,):
            raise ValidationError(
                f"expected {1 << self.n_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())


def init_zero(n_qubits: int) -> StateVector:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise CapacityError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(1 << n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """``exp(-i angle P / 2)`` for the Pauli ``P`` named by ``axis``."""
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return c * np.eye(2, dtype=complex) - 1j * s * PAULI[axis]


def apply_matrix_1q(amps: np.ndarray, n_qubits: int, q: int, u: np.ndarray) -> np.ndarray:
    """Apply a 2x2 matrix to qubit ``q`` of a flat amplitude array (returns a new array)."""
    view = amps.reshape(1 << q, 2, 1 << (n_qubits - 1 - q))
    return np.matmul(u, view).reshape(-1)


def _apply_cnot(amps: np.ndarray, n_qubits: int, control: int, target: int) -> np.ndarray:
    psi = amps.reshape((2,) * n_qubits).copy()
    index = [slice(None)] * n_qubits
    index[control] = 1
    sub = psi[tuple(index)]
    axis = target if target < control else target - 1
    sub[...] = np.flip(sub, axis=axis).copy()
    return psi.reshape(-1)


def _apply_swap(amps: np.ndarray, n_qubits: int, a: int, b: int) -> np.ndarray:
    psi = amps.reshape((2,) * n_qubits)
    return np.ascontiguousarray(np.swapaxes(psi, a, b)).reshape(-1)


def _check_qubits(gate: GateOp, n_qubits: int) -> None:
    if max(gate.qubits) >= n_qubits:
        raise ConfigurationError(f"gate {gate.kind}{gate.qubits} exceeds {n_qubits} qubits")


def _apply_amps(amps, n_qubits, gate, params, inputs, dagger=False, shift=0.0):
    if gate.is_rotation:
        angle = gate.bind(params, inputs) + shift
        if dagger:
            angle = -angle
        return apply_matrix_1q(amps, n_qubits, gate.qubits[0], rotation_matrix(gate.axis, angle))
    if gate.kind == "CNOT":
        return _apply_cnot(amps, n_qubits, *gate.qubits)
    if gate.kind == "SWAP":
        return _apply_swap(amps, n_qubits, *gate.qubits)
    raise CapabilityError(f"unsupported gate kind {gate.kind!r}")


def apply_gate(state: StateVector, gate: GateOp, params=None, inputs=None) -> StateVector:
    """Return ``gate |state>`` as a new state."""
    _check_qubits(gate, state.n_qubits)
    return StateVector(state.n_qubits, _apply_amps(state.amplitudes, state.n_qubits, gate, params, inputs))


def inverse_gate(gate: GateOp, params=None, inputs=None) -> GateOp:
    """The gate undoing ``gate``; rotations come back with a bound, negated angle."""
    if gate.is_rotation:
        return GateOp(gate.kind, gate.qubits, angle=-gate.bind(params, inputs))
    return gate


def run_circuit(
    circuit: Iterable[GateOp],
    n_qubits: int,
    params=None,
    inputs=None,
    state: StateVector | None = None,
    shifts: Mapping[int, float] | None = None,
) -> StateVector:
    """Apply ``circuit`` to ``state`` (default ``|0...0>``).

    ``shifts`` maps a gate position in ``circuit`` to an angle offset; only
    the parameter-shift oracle uses it.
    """
    psi = init_zero(n_qubits).amplitudes if state is None else state.amplitudes
    shifts = shifts or {}
    for pos, gate in enumerate(circuit):
        _check_qubits(gate, n_qubits)
        psi = _apply_amps(psi, n_qubits, gate, params, inputs, shift=shifts.get(pos, 0.0))
    return StateVector(n_qubits, psi)


def expectation(state: StateVector, obs: ZSumObservable) -> float:
    probs = np.abs(state.amplitudes) ** 2
    return float(probs @ obs.diagonal(state.n_qubits))


def _validate_perm(perm: Sequence[int], n_qubits: int) -> np.ndarray:
    perm = np.asarray(perm, dtype=int)
    if perm.shape != (n_qubits,) or sorted(perm.tolist()) != list(range(n_qubits)):
        raise ValidationError(f"not a permutation of {n_qubits} qubits: {perm.tolist()}")
    return perm


def permute_qubits(state: StateVector, perm: Sequence[int]) -> StateVector:
    """Move the content of qubit ``q`` to qubit ``perm[q]``.

    Implemented as an axis transpose of the ``(2,)*n`` tensor, i.e. a pure
    basis-index remapping.
    """
    n = state.n_qubits
    perm = _validate_perm(perm, n)
    psi = state.amplitudes.reshape((2,) * n)
    out = np.transpose(psi, np.argsort(perm))
    return StateVector(n, np.ascontiguousarray(out).reshape(-1))


def swap_decomposition(perm: Sequence[int]) -> list[tuple[int, int]]:
    """Transpositions whose sequential application as SWAP gates realizes ``perm``.

    Each cycle ``q -> perm[q] -> ...`` of length ``m`` costs ``m - 1`` swaps.
    """
    perm = _validate_perm(perm, len(perm))
    # position[q]: where the content that started on qubit q currently lives
    where = list(range(len(perm)))
    holder = list(range(len(perm)))
    swaps = []
    for q in range(len(perm)):
        dest = int(perm[q])
        here = where[q]
        if here == dest:
            continue
        other = holder[dest]
        swaps.append((here, dest))
        holder[here], holder[dest] = other, q
        where[q], where[other] = dest, here
    return swaps


def _slot_vectors(params, inputs):
    n_params = len(params) if params is not None else 0
    n_inputs = len(inputs) if inputs is not None else 0
    return np.zeros(n_params), np.zeros(n_inputs)


def adjoint_gradient(
    circuit: Sequence[GateOp],
    obs: ZSumObservable,
    params=None,
    inputs=None,
    n_qubits: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(d<O>/dparams, d<O>/dinputs)`` by one forward and one reverse sweep.

    Slots shared by several gates accumulate the contribution of every
    occurrence.
    """
    circuit = list(circuit)
    if n_qubits is None:
        n_qubits = 1 + max(max(g.qubits) for g in circuit)
    for gate in circuit:
        if gate.kind not in GATE_KINDS:
            raise CapabilityError(f"adjoint sweep does not support {gate.kind!r}")
    d_params, d_inputs = _slot_vectors(params, inputs)
    psi = run_circuit(circuit, n_qubits, params, inputs).amplitudes
    lam = obs.diagonal(n_qubits) * psi
    for gate in reversed(circuit):
        psi = _apply_amps(psi, n_qubits, gate, params, inputs, dagger=True)
        if gate.is_rotation and gate.angle is None:
            angle = gate.bind(params, inputs)
            pauli = PAULI[gate.axis]
            deriv = -0.5j * pauli @ rotation_matrix(gate.axis, angle)
            mu = apply_matrix_1q(psi, n_qubits, gate.qubits[0], deriv)
            value = 2.0 * np.real(np.vdot(lam, mu))
            if gate.param is not None:
                d_params[gate.param] += value
            else:
                d_inputs[gate.feature] += value
        lam = _apply_amps(lam, n_qubits, gate, params, inputs, dagger=True)
    return d_params, d_inputs


def shift_rule_gradient(
    circuit: Sequence[GateOp],
    obs: ZSumObservable,
    params=None,
    inputs=None,
    n_qubits: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-shift gradient, shifting each gate occurrence separately by ``+-pi/2``.

    Exact for Pauli-generated rotations. A slot tied across several gates is
    differentiated occurrence by occurrence and summed.
    """
    circuit = list(circuit)
    if n_qubits is None:
        n_qubits = 1 + max(max(g.qubits) for g in circuit)
    d_params, d_inputs = _slot_vectors(params, inputs)
    for pos, gate in enumerate(circuit):
        if not gate.is_rotation or gate.angle is not None:
            continue
        if gate.kind not in ROTATION_KINDS:
            raise CapabilityError(f"{gate.kind} is not generated by a single Pauli")
        plus = expectation(run_circuit(circuit, n_qubits, params, inputs, shifts={pos: np.pi / 2}), obs)
        minus = expectation(run_circuit(circuit, n_qubits, params, inputs, shifts={pos: -np.pi / 2}), obs)
        value = 0.5 * (plus - minus)
        if gate.param is not None:
            d_params[gate.param] += value
        else:
            d_inputs[gate.feature] += value
    return d_params, d_inputs
