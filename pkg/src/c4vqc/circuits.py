"""Re-uploading classifier circuits: encoding layers, the three variational blocks, observables.

Every model alternates an angle-encoding layer (``RX(x_k)`` on qubit ``k``)
with a variational block, ``n_layers`` times, and reads out a normalized sum
of ``Z`` over one group of qubits.

* ``Equivariant``: one general rotation ``RZ(b) RY(g) RZ(d)`` per orbit, tied
  over the orbit's qubits, plus CNOTs placed in complete rotation orbits so
  the block commutes with the qubit permutation ``U_g``.
* ``NonEquivariant``: the same layout over a seeded random partition with
  the orbit sizes of the real one.
* ``BasicEntangler``: one single-axis rotation per qubit and a CNOT ring.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ValidationError
from .statevector import GateOp, ZSumObservable, cnot, expectation, run_circuit, rx, ry, rz
from .symmetry import OrbitTable, compute_orbits, qubit_of

ARCHITECTURES = ("Equivariant", "NonEquivariant", "BasicEntangler")
CHECKPOINT_VERSION = 1

# Minimal CNOT circuit for x_i -> x_i XOR (parity of the other three bits) on
# four qubits. The linear map commutes with every qubit permutation, so it is
# the symmetrized entangler of the one-orbit (n=2) block; 8 = 4(n_phi + 1).
PARITY_GADGET = ((0, 1), (1, 0), (2, 3), (0, 2), (3, 0), (0, 1), (1, 2), (2, 3))


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    n: int = 4
    n_layers: int = 1
    random_orbit_seed: int | None = None
    rotation_axis: str = "X"
    observable_orbits: str = "random"  # NonEquivariant readout: "random" group or "true" orbit

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.n < 2:
            raise ConfigurationError(f"resolution must be >= 2, got {self.n}")
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.architecture == "NonEquivariant" and self.random_orbit_seed is None:
            raise ConfigurationError("NonEquivariant requires random_orbit_seed")
        if self.rotation_axis not in ("X", "Y", "Z"):
            raise ConfigurationError(f"rotation_axis must be X, Y or Z, got {self.rotation_axis!r}")
        if self.observable_orbits not in ("random", "true"):
            raise ConfigurationError("observable_orbits must be 'random' or 'true'")

    @property
    def n_qubits(self) -> int:
        return self.n * self.n

    @property
    def params_per_layer(self) -> int:
        if self.architecture == "BasicEntangler":
            return self.n * self.n
        return 3 * compute_orbits(self.n).n_orbits

    @property
    def n_params(self) -> int:
        return self.n_layers * self.params_per_layer

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(**data)


@dataclass
class ModelParams:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).ravel()

    def check(self, spec: ModelSpec) -> "ModelParams":
        if self.values.size != spec.n_params:
            raise ConfigurationError(
                f"{spec.architecture} with {spec.n_layers} layers takes {spec.n_params} parameters, "
                f"got {self.values.size}"
            )
        return self


@dataclass(frozen=True)
class Layout:
    """Rotation groups and cell structure an orbit-tied block is built over.

    ``members[g][k]`` is the qubit of group ``g`` in cell ``k``; a size-1
    group has a single entry.
    """

    members: tuple[tuple[int, ...], ...]

    @property
    def n_groups(self) -> int:
        return len(self.members)


def true_layout(table: OrbitTable) -> Layout:
    members = []
    for o in range(table.n_orbits):
        size = len(table.orbits[o])
        members.append(tuple(qubit_of(table.cell_member(k, o), table.n) for k in range(size)))
    return Layout(tuple(members))


def random_layout(table: OrbitTable, seed: int) -> Layout:
    """Seeded random partition with the true orbit-size multiset, never the true orbits."""
    n = table.n
    sizes = [len(o) for o in table.orbits]
    true_sets = {frozenset(table.orbit_qubits(o)) for o in range(table.n_orbits)}
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        order = rng.permutation(n * n).tolist()
        members, start = [], 0
        for size in sizes:
            members.append(tuple(order[start:start + size]))
            start += size
        # a partition into a single group (n=2) cannot differ from the true one
        if len(sizes) == 1 or {frozenset(m) for m in members} != true_sets:
            return Layout(tuple(members))
    raise ConfigurationError(f"could not draw a non-symmetric partition for seed {seed}")


def encoding_layer(n: int) -> list[GateOp]:
    return [rx(k, feature=k) for k in range(n * n)]


def _tied_rotations(layout: Layout, offset: int) -> list[GateOp]:
    gates = []
    for g, members in enumerate(layout.members):
        beta, gamma, delta = offset + 3 * g, offset + 3 * g + 1, offset + 3 * g + 2
        for q in members:
            # operator RZ(beta) RY(gamma) RZ(delta): RZ(delta) acts first
            gates += [rz(q, param=delta), ry(q, param=gamma), rz(q, param=beta)]
    return gates


def _structured_cnots(layout: Layout) -> list[GateOp]:
    members = layout.members
    if len(members) == 1:
        return [cnot(members[0][c], members[0][t]) for c, t in PARITY_GADGET]
    gates = []
    n_groups = len(members)
    # intra-cell ring, each edge replicated into the four cells
    for m in range(n_groups):
        a, b = members[m], members[(m + 1) % n_groups]
        for k in range(4):
            gates.append(cnot(a[k % len(a)], b[k % len(b)]))
    # inter-cell link: group 0 of cell k controls group 1 of cell k+1
    a, b = members[0], members[1]
    for k in range(4):
        gates.append(cnot(a[k % len(a)], b[(k + 1) % len(b)]))
    return gates


def equivariant_block(table: OrbitTable, offset: int = 0, layer_params=None) -> list[GateOp]:
    """One symmetric variational block; parameter slots start at ``offset``.

    If ``layer_params`` is given the rotations are bound to those angles
    instead of slots.
    """
    layout = true_layout(table)
    gates = _tied_rotations(layout, offset) + _structured_cnots(layout)
    return _maybe_bind(gates, layer_params, 3 * layout.n_groups, offset)


def nonequivariant_block(layout: Layout, offset: int = 0, layer_params=None) -> list[GateOp]:
    gates = _tied_rotations(layout, offset)
    if len(layout.members) == 1:
        # the only size-4 partition is the true orbit and the gadget is
        # symmetric, so use the unsymmetrized CNOT ring (twice) in random order
        order = layout.members[0]
        size = len(order)
        gates += [cnot(order[k % size], order[(k + 1) % size]) for k in range(2 * size)]
    else:
        gates += _structured_cnots(layout)
    return _maybe_bind(gates, layer_params, 3 * layout.n_groups, offset)


def basic_entangler_block(n: int, offset: int = 0, axis: str = "X", layer_params=None) -> list[GateOp]:
    nq = n * n
    gates = [GateOp("R" + axis, (q,), param=offset + q) for q in range(nq)]
    gates += [cnot(q, (q + 1) % nq) for q in range(nq)]
    return _maybe_bind(gates, layer_params, nq, offset)


def _maybe_bind(gates, layer_params, expected, offset):
    if layer_params is None:
        return gates
    layer_params = np.asarray(layer_params, dtype=float).ravel()
    if layer_params.size != expected:
        raise ConfigurationError(f"block takes {expected} parameters, got {layer_params.size}")
    return [
        GateOp(g.kind, g.qubits, angle=float(layer_params[g.param - offset])) if g.param is not None else g
        for g in gates
    ]


def _corner_observable(qubits: Sequence[int]) -> ZSumObservable:
    return ZSumObservable(tuple((q, 1.0 / len(qubits)) for q in sorted(qubits)))


@dataclass(frozen=True)
class CircuitPlan:
    spec: ModelSpec
    gates: tuple[GateOp, ...]
    observable: ZSumObservable
    layout: Layout | None = field(default=None, compare=False)

    @property
    def n_qubits(self) -> int:
        return self.spec.n_qubits

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def n_inputs(self) -> int:
        return self.spec.n_qubits

    @cached_property
    def compiled(self):
        from .engine import CompiledCircuit

        return CompiledCircuit(self.gates, self.n_qubits, self.observable, self.n_params, self.n_inputs)

    def block(self, layer: int = 0) -> list[GateOp]:
        """Gates of one variational block (without its encoding layer)."""
        per = len(self.gates) // self.spec.n_layers
        nq = self.n_qubits
        return list(self.gates[layer * per + nq:(layer + 1) * per])


def build_model(spec: ModelSpec) -> CircuitPlan:
    table = compute_orbits(spec.n)
    per = spec.params_per_layer
    layout = None
    if spec.architecture == "Equivariant":
        make = lambda off: equivariant_block(table, off)  # noqa: E731
        readout = table.orbit_qubits(0)
    elif spec.architecture == "NonEquivariant":
        layout = random_layout(table, spec.random_orbit_seed)
        make = lambda off: nonequivariant_block(layout, off)  # noqa: E731
        if spec.observable_orbits == "true":
            readout = table.orbit_qubits(0)
        else:
            readout = next(m for m in layout.members if 0 in m)
    else:
        make = lambda off: basic_entangler_block(spec.n, off, spec.rotation_axis)  # noqa: E731
        readout = table.orbit_qubits(0)
    gates = []
    for layer in range(spec.n_layers):
        gates += encoding_layer(spec.n)
        gates += make(layer * per)
    return CircuitPlan(spec, tuple(gates), _corner_observable(readout), layout)


def _check_features(plan: CircuitPlan, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != plan.n_inputs:
        raise ConfigurationError(f"expected {plan.n_inputs} features, got shape {x.shape}")
    return x


def model_forward(plan: CircuitPlan, params, features, reference: bool = False):
    """``<O>`` for one feature vector (scalar) or a batch of rows (vector).

    ``reference=True`` routes through the gate-by-gate simulator instead of
    the compiled engine.
    """
    values = params.check(plan.spec).values if isinstance(params, ModelParams) else np.asarray(params, float)
    if values.size != plan.n_params:
        raise ConfigurationError(f"expected {plan.n_params} parameters, got {values.size}")
    x = _check_features(plan, features)
    rows = x.reshape(-1, plan.n_inputs)
    if reference:
        out = np.array([expectation(run_circuit(plan.gates, plan.n_qubits, values, r), plan.observable) for r in rows])
    else:
        out = plan.compiled.forward(values, rows)
    return float(out[0]) if x.ndim == 1 else out


def resource_counts(spec: ModelSpec) -> dict:
    """Per-layer parameter and gate counts, read off the built block."""
    plan = build_model(ModelSpec(**{**spec.to_dict(), "n_layers": 1}))
    block = plan.block(0)
    return {
        "architecture": spec.architecture,
        "n": spec.n,
        "n_orbits": compute_orbits(spec.n).n_orbits,
        "params_per_layer": len({g.param for g in block if g.param is not None}),
        "cnots_per_layer": sum(g.kind == "CNOT" for g in block),
        "rotations_per_layer": sum(g.is_rotation for g in block),
        "encoding_gates_per_layer": spec.n_qubits,
        "total_params": spec.n_params,
    }


def table_one_counts(architecture: str, n: int) -> tuple[int, int]:
    """Closed-form (params, CNOTs) per layer."""
    n_phi = compute_orbits(n).n_orbits
    if architecture == "BasicEntangler":
        return n * n, n * n
    return 3 * n_phi, 4 * (n_phi + 1)


def init_params(spec: ModelSpec, seed: int, low: float = 0.0, high: float = 2 * math.pi) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(rng.uniform(low, high, spec.n_params))


def save_checkpoint(path, spec: ModelSpec, params: ModelParams, extra: dict | None = None) -> None:
    """JSON checkpoint; floats are written with ``repr`` precision so reloading is bit-exact."""
    params.check(spec)
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "params": [float(v) for v in params.values],
    }
    if extra:
        doc["extra"] = extra
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[ModelSpec, ModelParams, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint format {doc.get('format_version')!r}")
    spec = ModelSpec.from_dict(doc["spec"])
    params = ModelParams(doc["params"]).check(spec)
    return spec, params, doc.get("extra", {})


__all__ = [
    "ARCHITECTURES",
    "CircuitPlan",
    "Layout",
    "ModelParams",
    "ModelSpec",
    "basic_entangler_block",
    "build_model",
    "encoding_layer",
    "equivariant_block",
    "init_params",
    "load_checkpoint",
    "model_forward",
    "nonequivariant_block",
    "random_layout",
    "resource_counts",
    "save_checkpoint",
    "table_one_counts",
    "true_layout",
]
