"""Batched simulator for encoding/variational circuits, with a fused adjoint sweep.

The reference simulator in :mod:`c4vqc.statevector` applies one gate at a
time to one state. Training needs the same circuit on many inputs, so this
module compiles a gate list once into three kinds of passes over a batch of
states stored batch-inner (``amp[a * B + b]`` for basis index ``a`` and
sample ``b``), with real and imaginary parts in separate arrays:

* ``D``: a per-sample diagonal phase, the whole angle-encoding layer;
* ``K``: a fused 2x2 matrix on one qubit, shared by all samples;
* ``P``: a basis permutation (runs of CNOT/SWAP gates).

Encoding RX gates are not diagonal, but ``RX(x) = H RZ(x) H``, so until the
last encoding layer the circuit is simulated in the Hadamard-rotated frame
where every ``RX(feature)`` is a phase and ``CNOT(c, t)`` becomes
``CNOT(t, c)``. The frame change back is folded into the next 1-qubit
matrices. The backward sweep uncomputes the forward state gate by gate
(adjoint method) and, at each ``K`` pass, collects the four reduced overlaps
``E[a, b] = sum conj(lambda_a) psi_b`` that give every parameter occurrence
fused into that matrix in one go.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import CapabilityError, ConfigurationError, ValidationError
from .statevector import PAULI, GateOp, ZSumObservable, rotation_matrix

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_JIT = dict(fastmath=True, error_model="numpy", cache=True, nogil=True)
TILE = 1 << 14  # floats per contiguous tile (64 KiB in float32)
CHUNK = 1 << 8  # contiguous run inside a strided tile


# ---------------------------------------------------------------- kernels


@numba.njit(**_JIT)
def _pair(r0, i0, r1, i1, ar, ai, br, bi, cr, ci, dr, di):
    for j in range(r0.shape[0]):
        xr = r0[j]
        xi = i0[j]
        yr = r1[j]
        yi = i1[j]
        r0[j] = ar * xr - ai * xi + br * yr - bi * yi
        i0[j] = ar * xi + ai * xr + br * yi + bi * yr
        r1[j] = cr * xr - ci * xi + dr * yr - di * yi
        i1[j] = cr * xi + ci * xr + dr * yi + di * yr


@numba.njit(**_JIT)
def _group_low(re, im, strides, mats, tile):
    """Apply one 2x2 matrix per stride, tile by contiguous tile (all strides < tile)."""
    for start in range(0, re.shape[0], tile):
        for h in range(strides.shape[0]):
            s = strides[h]
            m = mats[h]
            for b in range(start, start + tile, 2 * s):
                _pair(re[b:b + s], im[b:b + s], re[b + s:b + 2 * s], im[b + s:b + 2 * s],
                      m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7])


@numba.njit(**_JIT)
def _group_high(re, im, strides, offsets, mats, chunk):
    """Same for large strides: a tile is every combination of the strided bits times one chunk."""
    mask = 0
    for h in range(strides.shape[0]):
        mask |= strides[h]
    for base in range(0, re.shape[0], chunk):
        if base & mask:
            continue
        for h in range(strides.shape[0]):
            s = strides[h]
            m = mats[h]
            for t in range(offsets.shape[0]):
                if (t >> h) & 1:
                    continue
                o = base + offsets[t]
                _pair(re[o:o + chunk], im[o:o + chunk], re[o + s:o + s + chunk], im[o + s:o + s + chunk],
                      m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7])


@numba.njit(**_JIT)
def _overlap_pair(pr0, pi0, pr1, pi1, lr0, li0, lr1, li1, zero):
    s0 = zero
    s1 = zero
    s2 = zero
    s3 = zero
    s4 = zero
    s5 = zero
    s6 = zero
    s7 = zero
    for j in range(pr0.shape[0]):
        xr = pr0[j]
        xi = pi0[j]
        yr = pr1[j]
        yi = pi1[j]
        ur = lr0[j]
        ui = li0[j]
        vr = lr1[j]
        vi = li1[j]
        s0 += ur * xr + ui * xi
        s1 += ur * xi - ui * xr
        s2 += ur * yr + ui * yi
        s3 += ur * yi - ui * yr
        s4 += vr * xr + vi * xi
        s5 += vr * xi - vi * xr
        s6 += vr * yr + vi * yi
        s7 += vr * yi - vi * yr
    return s0, s1, s2, s3, s4, s5, s6, s7


@numba.njit(**_JIT)
def _overlap_low(pr, pi, lr, li, strides, tile, zero):
    """``E[h] = sum conj(lambda_a) psi_b`` over the pairs of every stride, read-only."""
    e = np.zeros((strides.shape[0], 8))
    for start in range(0, pr.shape[0], tile):
        for h in range(strides.shape[0]):
            s = strides[h]
            for b in range(start, start + tile, 2 * s):
                c = b + s
                acc = _overlap_pair(pr[b:c], pi[b:c], pr[c:c + s], pi[c:c + s],
                                    lr[b:c], li[b:c], lr[c:c + s], li[c:c + s], zero)
                for k in range(8):
                    e[h, k] += acc[k]
    return e


@numba.njit(**_JIT)
def _overlap_high(pr, pi, lr, li, strides, offsets, chunk, zero):
    e = np.zeros((strides.shape[0], 8))
    mask = 0
    for h in range(strides.shape[0]):
        mask |= strides[h]
    for base in range(0, pr.shape[0], chunk):
        if base & mask:
            continue
        for h in range(strides.shape[0]):
            s = strides[h]
            for t in range(offsets.shape[0]):
                if (t >> h) & 1:
                    continue
                o = base + offsets[t]
                c = o + s
                acc = _overlap_pair(pr[o:o + chunk], pi[o:o + chunk], pr[c:c + chunk], pi[c:c + chunk],
                                    lr[o:o + chunk], li[o:o + chunk], lr[c:c + chunk], li[c:c + chunk], zero)
                for k in range(8):
                    e[h, k] += acc[k]
    return e


@numba.njit(**_JIT)
def _phase(re, im, c, s):
    for j in range(re.shape[0]):
        xr = re[j]
        xi = im[j]
        re[j] = xr * c[j] - xi * s[j]
        im[j] = xr * s[j] + xi * c[j]


@numba.njit(**_JIT)
def _unphase_adjoint(lr, li, pr, pi, c, s, overlap, want_overlap):
    """Undo a phase on lambda; optionally store ``Im(conj(lambda) psi)`` first."""
    for j in range(lr.shape[0]):
        ur = lr[j]
        ui = li[j]
        if want_overlap:
            overlap[j] = ur * pi[j] - ui * pr[j]
        cj = c[j]
        sj = s[j]
        lr[j] = ur * cj + ui * sj
        li[j] = ui * cj - ur * sj


@numba.njit(**_JIT)
def _gather(dst_r, dst_i, src_r, src_i, index, block):
    for a in range(index.shape[0]):
        s = index[a] * block
        d = a * block
        for b in range(block):
            dst_r[d + b] = src_r[s + b]
            dst_i[d + b] = src_i[s + b]


# ---------------------------------------------------------------- compilation


@dataclass
class _KOp:
    qubit: int
    # factors in application order: ("const", U) or ("param", slot, P, frame)
    factors: list = field(default_factory=list)
    n_param: int = 0


@dataclass
class _DOp:
    qubits: np.ndarray
    features: np.ndarray
    key: tuple = ()


@dataclass
class _POp:
    index: np.ndarray  # new[a] = old[index[a]]
    inverse: np.ndarray


def _cnot_index(n, control, target):
    a = np.arange(1 << n)
    cbit = (a >> (n - 1 - control)) & 1
    return a ^ (cbit << (n - 1 - target))


def _swap_index(n, q1, q2):
    a = np.arange(1 << n)
    b1 = (a >> (n - 1 - q1)) & 1
    b2 = (a >> (n - 1 - q2)) & 1
    diff = b1 ^ b2
    return a ^ (diff << (n - 1 - q1)) ^ (diff << (n - 1 - q2))


class CompiledCircuit:
    """A gate list compiled for batched forward and adjoint evaluation.

    Supports the gate set of :mod:`c4vqc.statevector`; input (feature) slots
    are only allowed on RX gates. Results agree with the reference path to
    round-off in float64; float32 is available for speed.
    """

    def __init__(self, gates: Sequence[GateOp], n_qubits: int, observable: ZSumObservable,
                 n_params: int | None = None, n_inputs: int | None = None):
        gates = list(gates)
        self.n_qubits = n = int(n_qubits)
        self.observable = observable
        for g in gates:
            if g.kind not in ("RX", "RY", "RZ", "CNOT", "SWAP"):
                raise CapabilityError(f"unsupported gate kind {g.kind!r}")
            if max(g.qubits) >= n:
                raise ConfigurationError(f"gate {g.kind}{g.qubits} exceeds {n} qubits")
            if g.feature is not None and g.kind != "RX":
                raise CapabilityError("input slots are only supported on RX gates")
        slots = [g.param for g in gates if g.param is not None]
        feats = [g.feature for g in gates if g.feature is not None]
        self.n_params = n_params if n_params is not None else (max(slots) + 1 if slots else 0)
        self.n_inputs = n_inputs if n_inputs is not None else (max(feats) + 1 if feats else 0)
        if slots and max(slots) >= self.n_params or feats and max(feats) >= self.n_inputs:
            raise ConfigurationError("slot index exceeds the declared vector length")
        self.ops: list = []
        self._compile(gates)

    # -- compile --------------------------------------------------------

    def _compile(self, gates):
        n = self.n_qubits
        last_feature = max((i for i, g in enumerate(gates) if g.feature is not None), default=-1)
        hadamard = last_feature >= 0
        pending: dict[int, _KOp] = {}
        # the open run of commuting passes: CNOT/SWAP permutations or encoding
        # phases, plus the qubits it touches
        run: dict = {"kind": None, "items": [], "touched": set()}

        def flush_run():
            items = run["items"]
            if run["kind"] == "perm":
                index = items[0]
                for nxt in items[1:]:
                    index = index[nxt]
                self.ops.append(_POp(index.astype(np.int64), np.argsort(index).astype(np.int64)))
            elif run["kind"] == "diag":
                qubits = np.array([g.qubits[0] for g in items], dtype=np.int64)
                features = np.array([g.feature for g in items], dtype=np.int64)
                key = tuple(zip(qubits.tolist(), features.tolist()))
                self.ops.append(_DOp(qubits, features, key))
            run.update(kind=None, items=[], touched=set())

        def extend_run(kind, item, qubits):
            if run["kind"] != kind:
                flush_run()
                run["kind"] = kind
            run["items"].append(item)
            run["touched"].update(qubits)

        def flush_k(q):
            # a pending matrix never shares a qubit with the open run, so it
            # commutes with the run and is emitted ahead of it
            op = pending.pop(q, None)
            if op is not None:
                self.ops.append(op)

        def kop(q):
            if q not in pending:
                if q in run["touched"]:
                    flush_run()
                pending[q] = _KOp(q)
            return pending[q]

        for pos, g in enumerate(gates):
            frame_h = hadamard and pos <= last_feature
            if g.feature is not None:
                flush_k(g.qubits[0])
                extend_run("diag", g, g.qubits)
            elif g.is_rotation:
                op = kop(g.qubits[0])
                if g.param is not None:
                    op.factors.append(("param", g.param, g.axis, frame_h))
                    op.n_param += 1
                else:
                    u = rotation_matrix(g.axis, float(g.angle))
                    op.factors.append(("const", _H @ u @ _H if frame_h else u))
            else:
                for q in g.qubits:
                    flush_k(q)
                c, t = g.qubits
                if g.kind == "CNOT":
                    index = _cnot_index(n, t, c) if frame_h else _cnot_index(n, c, t)
                else:
                    index = _swap_index(n, c, t)
                extend_run("perm", index, g.qubits)
            if pos == last_feature:
                # leave the Hadamard frame: every qubit owes one H
                for q in range(n):
                    kop(q).factors.append(("const", _H.copy()))
        for q in sorted(pending):
            flush_k(q)
        flush_run()
        self.hadamard_start = hadamard

        # a trailing permutation folds into the observable diagonal
        obs = self.observable.diagonal(n)
        while self.ops and isinstance(self.ops[-1], _POp):
            obs = obs[self.ops.pop().inverse]
        self.obs_diag = obs
        self._schedules = {}
        self._d_keys = {}
        for op in self.ops:
            if isinstance(op, _DOp):
                self._d_keys.setdefault(op.key, op)

    # -- matrices -------------------------------------------------------

    def _k_matrices(self, params):
        """Per K op: fused matrix and the (slot, G) pairs of its parameter occurrences."""
        out = []
        for op in self.ops:
            if not isinstance(op, _KOp):
                continue
            mats, gens = [], []
            for f in op.factors:
                if f[0] == "const":
                    mats.append(f[1])
                    gens.append(None)
                else:
                    _, slot, axis, frame_h = f
                    u = rotation_matrix(axis, float(params[slot]))
                    gen = -0.5j * PAULI[axis]
                    if frame_h:
                        u = _H @ u @ _H
                        gen = _H @ gen @ _H
                    mats.append(u)
                    gens.append((slot, gen))
            total = np.eye(2, dtype=complex)
            after = np.eye(2, dtype=complex)
            occ = []
            for u, g in zip(reversed(mats), reversed(gens)):
                if g is not None:
                    occ.append((g[0], after @ g[1] @ after.conj().T))
                after = after @ u
            for u in mats:
                total = u @ total
            out.append((total, occ))
        return out

    # -- evaluation -----------------------------------------------------

    def _phases(self, op: _DOp, xb: np.ndarray, dtype):
        n = self.n_qubits
        a = np.arange(1 << n)
        zs = (1 - 2 * ((a[:, None] >> (n - 1 - op.qubits[None, :])) & 1)).astype(dtype)
        phi = (zs @ xb[:, op.features].T.astype(dtype)) * dtype(-0.5)
        return np.cos(phi).ravel(), np.sin(phi).ravel(), zs

    def _check(self, params, inputs):
        params = np.asarray(params, dtype=float).ravel()
        if params.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} parameters, got {params.size}")
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[None, :]
        if inputs.ndim != 2 or inputs.shape[1] != self.n_inputs:
            raise ConfigurationError(f"expected inputs of width {self.n_inputs}, got shape {inputs.shape}")
        return params, inputs

    def _schedule(self, nb: int):
        """Tiling of every run of 1-qubit passes for batch width ``nb`` (a power of two)."""
        key = nb
        if key in self._schedules:
            return self._schedules[key]
        n = self.n_qubits
        size = (1 << n) * nb
        tile = min(TILE, size)
        program = []
        k = 0
        run: list[tuple[int, int]] = []

        def close():
            if not run:
                return
            low = [(q, i) for q, i in run if 2 * (1 << (n - 1 - q)) * nb <= tile]
            high = [(q, i) for q, i in run if 2 * (1 << (n - 1 - q)) * nb > tile]
            parts = []
            if low:
                strides = np.array([(1 << (n - 1 - q)) * nb for q, _ in low], dtype=np.int64)
                parts.append(("low", strides, np.array([i for _, i in low]), None, tile))
            if high:
                strides = np.array([(1 << (n - 1 - q)) * nb for q, _ in high], dtype=np.int64)
                g = len(high)
                offsets = np.array(
                    [sum(int(strides[j]) for j in range(g) if (t >> j) & 1) for t in range(1 << g)],
                    dtype=np.int64,
                )
                chunk = int(min(CHUNK, strides.min()))
                parts.append(("high", strides, np.array([i for _, i in high]), offsets, chunk))
            program.append(("K", parts))
            run.clear()

        for op in self.ops:
            if isinstance(op, _KOp):
                run.append((op.qubit, k))
                k += 1
            else:
                close()
                program.append(("D" if isinstance(op, _DOp) else "P", op))
        close()
        self._schedules[key] = program
        return program

    def _run_forward(self, mats, xb, dtype, trace=None):
        """Simulate one padded block; ``trace`` collects the state before every pass."""
        n = self.n_qubits
        nb = xb.shape[0]
        size = (1 << n) * nb
        if self.hadamard_start:
            re = np.full(size, dtype(2.0 ** (-n / 2)), dtype=dtype)
        else:
            re = np.zeros(size, dtype=dtype)
            re[:nb] = 1
        im = np.zeros(size, dtype=dtype)
        spare = None
        phases = {key: self._phases(op, xb, dtype) for key, op in self._d_keys.items()}
        for kind, item in self._schedule(nb):
            if trace is not None:
                trace.append((re, im))
                if kind != "P":
                    re, im = re.copy(), im.copy()
            if kind == "K":
                for part, strides, idx, offsets, width in item:
                    if part == "low":
                        _group_low(re, im, strides, mats[idx], width)
                    else:
                        _group_high(re, im, strides, offsets, mats[idx], width)
            elif kind == "D":
                c, s, _ = phases[item.key]
                _phase(re, im, c, s)
            else:
                if spare is None or trace is not None:
                    spare = (np.empty_like(re), np.empty_like(im))
                _gather(spare[0], spare[1], re, im, item.index, nb)
                spare, (re, im) = (re, im), spare
        return re, im, phases

    def _values(self, re, im, nb, dtype):
        o = self.obs_diag.astype(dtype)
        prob = re.reshape(-1, nb) ** 2 + im.reshape(-1, nb) ** 2
        return (o @ prob).astype(float)

    def _chunks(self, inputs, chunk):
        """Row blocks padded with zero rows to a power-of-two width."""
        for start in range(0, inputs.shape[0], chunk):
            rows = slice(start, min(start + chunk, inputs.shape[0]))
            xb = inputs[rows]
            width = 1 << max(0, (len(xb) - 1).bit_length())
            if width != len(xb):
                xb = np.vstack([xb, np.zeros((width - len(xb), xb.shape[1]))])
            yield rows, xb

    def forward(self, params, inputs, dtype=np.float64, chunk: int = 16) -> np.ndarray:
        """Model outputs ``<O>`` for every row of ``inputs``."""
        params, inputs = self._check(params, inputs)
        dtype = np.dtype(dtype).type
        kmats = self._k_matrices(params)
        mats = np.array([_split(m, dtype) for m, _ in kmats], dtype=dtype).reshape(-1, 8)
        out = np.empty(inputs.shape[0])
        for rows, xb in self._chunks(inputs, chunk):
            re, im, _ = self._run_forward(mats, xb, dtype)
            out[rows] = self._values(re, im, xb.shape[0], dtype)[: rows.stop - rows.start]
        return out

    def vjp(
        self,
        params,
        inputs,
        cotangent: Callable[[np.ndarray, slice], np.ndarray],
        dtype=np.float64,
        chunk: int = 16,
        input_grad: bool = True,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Outputs plus pulled-back gradients.

        ``cotangent(f_chunk, rows)`` returns the weight ``dL/df`` of each
        sample in the chunk; the result is ``(f, dL/dparams, dL/dinputs)``
        with parameter gradients summed over samples.
        """
        params, inputs = self._check(params, inputs)
        dtype = np.dtype(dtype).type
        kmats = self._k_matrices(params)
        mats = np.array([_split(m, dtype) for m, _ in kmats], dtype=dtype).reshape(-1, 8)
        minv = np.array([_split(m.conj().T, dtype) for m, _ in kmats], dtype=dtype).reshape(-1, 8)
        f_all = np.empty(inputs.shape[0])
        e_total = np.zeros((len(kmats), 8))
        d_inputs = np.zeros(inputs.shape)
        zero = dtype(0)
        for rows, xb in self._chunks(inputs, chunk):
            nb = xb.shape[0]
            count = rows.stop - rows.start
            trace: list = []
            pr, pi, phases = self._run_forward(mats, xb, dtype, trace)
            f = self._values(pr, pi, nb, dtype)[:count]
            f_all[rows] = f
            w = np.zeros(nb)
            w[:count] = np.asarray(cotangent(f, rows), dtype=float).reshape(count)
            if not np.all(np.isfinite(w)):
                raise ValidationError("non-finite cotangent")
            scale = (self.obs_diag[:, None] * w[None, :]).astype(dtype)
            lr = (pr.reshape(-1, nb) * scale).ravel()
            li = (pi.reshape(-1, nb) * scale).ravel()
            lr2, li2 = np.empty_like(lr), np.empty_like(li)
            overlap = np.empty_like(pr)
            grad_block = np.zeros((nb, self.n_inputs))
            for kind, item in reversed(self._schedule(nb)):
                # (pr, pi) is the state after this pass; trace holds the one before
                if kind == "K":
                    # the matrices of one run commute, so each one may be taken
                    # as the last: all overlaps come from the state after the run
                    for part, strides, idx, offsets, width in item:
                        if part == "low":
                            e_total[idx] += _overlap_low(pr, pi, lr, li, strides, width, zero)
                        else:
                            e_total[idx] += _overlap_high(pr, pi, lr, li, strides, offsets, width, zero)
                    for part, strides, idx, offsets, width in item:
                        if part == "low":
                            _group_low(lr, li, strides, minv[idx], width)
                        else:
                            _group_high(lr, li, strides, offsets, minv[idx], width)
                elif kind == "D":
                    c, s, zs = phases[item.key]
                    _unphase_adjoint(lr, li, pr, pi, c, s, overlap, input_grad)
                    if input_grad:
                        contrib = zs.T @ overlap.reshape(-1, nb)  # (gates, nb)
                        np.add.at(grad_block.T, item.features, contrib.astype(float))
                else:
                    _gather(lr2, li2, lr, li, item.inverse, nb)
                    lr, li, lr2, li2 = lr2, li2, lr, li
                pr, pi = trace.pop()
            d_inputs[rows] = grad_block[:count]
        d_params = np.zeros(self.n_params)
        for (_, occ), e in zip(kmats, e_total):
            if occ:
                emat = np.array([[e[0] + 1j * e[1], e[2] + 1j * e[3]], [e[4] + 1j * e[5], e[6] + 1j * e[7]]])
                for slot, g in occ:
                    d_params[slot] += 2.0 * np.real(np.sum(g * emat))
        return f_all, d_params, d_inputs


def _split(m: np.ndarray, dtype):
    return tuple(dtype(v) for z in m.ravel() for v in (z.real, z.imag))
