"""C4 geometry: pixel rotation, orbits, unit cells and the qubit-permutation representation.

A 90 degree image rotation moves the value at source pixel ``(n-1-j, i)`` to
``(i, j)``. With one qubit per pixel (``k(i, j) = i*n + j``) the same
rotation acts on the Hilbert space as a qubit permutation ``U_g``: transpose
the grid, then reverse the column order. Everything here is a pure function
of ``n`` and safe to share between workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .statevector import (
    PAULI,
    GateOp,
    StateVector,
    apply_matrix_1q,
    permute_qubits,
    run_circuit,
)

Pixel = tuple[int, int]


@dataclass(frozen=True)
class PixelIndex:
    i: int
    j: int
    n: int

    def __post_init__(self):
        if not (0 <= self.i < self.n and 0 <= self.j < self.n):
            raise ValidationError(f"pixel ({self.i}, {self.j}) outside a {self.n}x{self.n} grid")

    @property
    def qubit(self) -> int:
        return self.i * self.n + self.j


def rotate_index(p: PixelIndex) -> PixelIndex:
    """Source pixel whose value lands on ``p`` after one 90 degree rotation."""
    return PixelIndex(p.n - 1 - p.j, p.i, p.n)


def _rot(pixel: Pixel, n: int) -> Pixel:
    i, j = pixel
    return (n - 1 - j, i)


def rotate_image(x, times: int = 1, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Rotate the square grid spanned by ``axes`` so that ``x'[i, j] = x[n-1-j, i]``.

    Applied ``times`` times (taken mod 4). Extra axes (batch, channels) ride along.
    """
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[axes[0]] != x.shape[axes[1]]:
        raise ValidationError(f"rotate_image needs a square grid, got shape {x.shape}")
    # np.rot90 with k=-1 is the clockwise turn x'[i, j] = x[n-1-j, i]
    return np.rot90(x, k=-(times % 4), axes=axes)


def qubit_of(pixel: Pixel, n: int) -> int:
    return pixel[0] * n + pixel[1]


def pixel_of(qubit: int, n: int) -> Pixel:
    return divmod(qubit, n)


@dataclass(frozen=True)
class OrbitTable:
    """Partition of the ``n x n`` pixels into C4 orbits, plus the unit cells.

    ``orbits[o]`` lists the members of orbit ``o`` in rotation order, starting
    from its lexicographically smallest pixel; orbit ids follow that smallest
    pixel in row-major order. ``cells[k]`` holds one representative per
    orbit (ordered by orbit id); only cell 0 holds the centre of an odd grid.
    """

    n: int
    orbits: tuple[tuple[Pixel, ...], ...]
    cells: tuple[tuple[Pixel, ...], ...]

    @property
    def n_orbits(self) -> int:
        return len(self.orbits)

    @property
    def orbit_of(self) -> dict[Pixel, int]:
        return {p: o for o, members in enumerate(self.orbits) for p in members}

    def orbit_qubits(self, o: int) -> tuple[int, ...]:
        return tuple(qubit_of(p, self.n) for p in self.orbits[o])

    def cell_member(self, k: int, o: int) -> Pixel:
        """Representative of orbit ``o`` in cell ``k``; a size-1 orbit represents itself everywhere."""
        if len(self.orbits[o]) == 1:
            return self.orbits[o][0]
        rep = self.cells[0][o]
        for _ in range(k % 4):
            rep = _rot(rep, self.n)
        return rep

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "orbits": [[list(p) for p in members] for members in self.orbits],
            "orbit_qubits": [list(self.orbit_qubits(o)) for o in range(self.n_orbits)],
            "cells": [[list(p) for p in cell] for cell in self.cells],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OrbitTable":
        return cls(
            n=int(data["n"]),
            orbits=tuple(tuple(tuple(p) for p in members) for members in data["orbits"]),
            cells=tuple(tuple(tuple(p) for p in cell) for cell in data["cells"]),
        )


def orbit_count(n: int) -> int:
    """Closed form: ``n**2/4`` for even ``n``, ``ceil(n/2)*floor(n/2) + 1`` for odd ``n``."""
    if n % 2 == 0:
        return n * n // 4
    return ((n + 1) // 2) * (n // 2) + 1


@lru_cache(maxsize=None)
def compute_orbits(n: int) -> OrbitTable:
    if n < 1:
        raise ValidationError(f"resolution must be >= 1, got {n}")
    orbits: list[tuple[Pixel, ...]] = []
    seen: set[Pixel] = set()
    for i in range(n):
        for j in range(n):
            if (i, j) in seen:
                continue
            members = [(i, j)]
            p = _rot((i, j), n)
            while p != (i, j):
                members.append(p)
                p = _rot(p, n)
            orbits.append(tuple(members))
            seen.update(members)
    orbit_id = {p: o for o, members in enumerate(orbits) for p in members}

    # cell 0: the top-left floor(n/2) x ceil(n/2) block; its rotations tile the
    # grid minus the centre, which joins cell 0 for odd n
    block = [(i, j) for i in range(n // 2) for j in range((n + 1) // 2)]
    if n % 2 == 1:
        block.append((n // 2, n // 2))
    cell0 = tuple(sorted(block, key=lambda p: orbit_id[p]))
    cells = [cell0]
    if n > 1:
        current = [p for p in cell0 if len(orbits[orbit_id[p]]) == 4]
        for _ in range(3):
            current = [_rot(p, n) for p in current]
            cells.append(tuple(current))
    return OrbitTable(n=n, orbits=tuple(orbits), cells=tuple(cells))


def compose(first: Sequence[int], second: Sequence[int]) -> np.ndarray:
    """Permutation applying ``first`` then ``second`` (content of q ends at ``second[first[q]]``)."""
    first = np.asarray(first)
    return np.asarray(second)[first]


def generator_swaps(n: int) -> list[tuple[int, int]]:
    """The SWAP network of ``U_g`` in application order: transpose, then column reversal."""
    k = lambda i, j: i * n + j  # noqa: E731
    swaps = [(k(i, j), k(j, i)) for i in range(n) for j in range(i)]
    swaps += [(k(i, j), k(i, n - j - 1)) for i in range(n) for j in range(n // 2)]
    return swaps


@dataclass(frozen=True)
class GroupRep:
    """``{U_g, U_g^2, U_g^3, I}`` as qubit permutations (content of q moves to ``perm[q]``)."""

    n: int
    elements: tuple[tuple[int, ...], ...]

    @property
    def n_qubits(self) -> int:
        return self.n * self.n

    @property
    def generator(self) -> np.ndarray:
        return np.asarray(self.elements[0])

    def power(self, k: int) -> np.ndarray:
        k %= 4
        return np.asarray(self.elements[k - 1]) if k else np.asarray(self.elements[3])

    def act(self, state: StateVector, k: int = 1) -> StateVector:
        return permute_qubits(state, self.power(k))


@lru_cache(maxsize=None)
def build_group_rep(n: int) -> GroupRep:
    """Generate ``U_g`` from its SWAP network and close it under composition."""
    nq = n * n
    position = list(range(nq))  # position[q]: where the content of qubit q sits
    holder = list(range(nq))
    for a, b in generator_swaps(n):
        ca, cb = holder[a], holder[b]
        holder[a], holder[b] = cb, ca
        position[ca], position[cb] = b, a
    gen = np.asarray(position)
    elements = [gen]
    for _ in range(3):
        elements.append(compose(elements[-1], gen))
    return GroupRep(n=n, elements=tuple(tuple(int(v) for v in e) for e in elements))


def twirl_pauli(axis: str, qubit: int, table: OrbitTable) -> list[tuple[str, int, float]]:
    """Group average of ``P_qubit``: one equally weighted term per orbit member."""
    if not 0 <= qubit < table.n * table.n:
        raise ValidationError(f"qubit {qubit} outside a {table.n}x{table.n} image")
    members = table.orbits[table.orbit_of[pixel_of(qubit, table.n)]]
    weight = 1.0 / len(members)
    return [(axis, qubit_of(p, table.n), weight) for p in members]


def apply_pauli_terms(state: StateVector, terms: Sequence[tuple[str, int, float]]) -> np.ndarray:
    """``sum_t w_t P_t |state>`` (not normalized)."""
    out = np.zeros_like(state.amplitudes)
    for axis, q, w in terms:
        out += w * apply_matrix_1q(state.amplitudes, state.n_qubits, q, PAULI[axis])
    return out


def random_state(n_qubits: int, rng: np.random.Generator) -> StateVector:
    amps = rng.normal(size=1 << n_qubits) + 1j * rng.normal(size=1 << n_qubits)
    return StateVector(n_qubits, amps / np.linalg.norm(amps))


def verify_equivariance(
    gates: Sequence[GateOp],
    rep: GroupRep,
    params=None,
    inputs=None,
    n_states: int = 3,
    seed: int = 0,
    tol: float = 1e-10,
) -> tuple[bool, float]:
    """Check ``U_g W = W U_g`` on random states for all four group elements.

    Returns ``(passed, max_deviation)`` where the deviation is the largest
    ``||(U_g W - W U_g)|psi>||`` seen.
    """
    rng = np.random.default_rng(seed)
    nq = rep.n_qubits
    worst = 0.0
    for _ in range(n_states):
        psi = random_state(nq, rng)
        w_psi = run_circuit(gates, nq, params, inputs, state=psi)
        for k in range(4):
            left = rep.act(w_psi, k).amplitudes
            right = run_circuit(gates, nq, params, inputs, state=rep.act(psi, k)).amplitudes
            worst = max(worst, float(np.linalg.norm(left - right)))
    return worst < tol, worst
