from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c4vqc.circuits import ModelSpec, build_model, init_params, model_forward
from c4vqc.data import gen_tetrominoes
from c4vqc.errors import CapabilityError, ValidationError
from c4vqc.statevector import GateOp, ZSumObservable, rx
from c4vqc.training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    landscape_stats,
    loss_and_gradient,
    loss_gradient,
    mse_loss,
    parameter_shift_gradient,
    train,
)


def fd_gradient(plan, theta, x, y, h=1e-5):
    def loss(t):
        return mse_loss(model_forward(plan, t, x, reference=True), y)

    grad = np.zeros(theta.size)
    for s in range(theta.size):
        e = np.zeros(theta.size)
        e[s] = h
        grad[s] = (loss(theta + e) - loss(theta - e)) / (2 * h)
    return grad


def test_mse_examples():
    assert mse_loss([1, -1], [1, -1]) == 0
    assert mse_loss([1, -1], [1, 1]) == 2.0
    assert mse_loss([0, 0, 0], [1, -1, 1]) == 1.0
    with pytest.raises(ValidationError):
        mse_loss([], [])


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.integers(0, 2**16))
def test_mse_nonnegative(preds, seed):
    labels = np.random.default_rng(seed).choice([-1.0, 1.0], len(preds))
    value = mse_loss(preds, labels)
    assert value >= 0
    assert (value == 0) == np.array_equal(np.asarray(preds), labels)


def test_shift_rule_on_single_rotation():
    # f(theta) = cos(theta); the loss (f - y)^2 with y = 0 has derivative -2 cos sin
    plan = SimpleNamespace(gates=(rx(0, param=0),), n_qubits=1, n_inputs=1,
                           observable=ZSumObservable(((0, 1.0),)))
    theta = math.pi / 3
    got = parameter_shift_gradient(plan, [theta], [[0.0]], [0.0])
    assert abs(got[0] - 2 * math.cos(theta) * -math.sin(theta)) < 1e-12


def test_shift_rule_rejects_non_pauli_gate():
    gate = GateOp("CNOT", (0, 1))
    bad = SimpleNamespace(gates=(gate,), n_qubits=2, n_inputs=1, observable=ZSumObservable(((0, 1.0),)))
    object.__setattr__(gate, "param", 0)
    with pytest.raises(CapabilityError):
        parameter_shift_gradient(bad, [0.0], [[0.0]], [1.0])


@pytest.mark.parametrize("arch,n", [("Equivariant", 2), ("Equivariant", 4), ("NonEquivariant", 4),
                                    ("BasicEntangler", 2)])
def test_gradient_backends_agree(arch, n):
    spec = ModelSpec(arch, n, 2, random_orbit_seed=3 if arch == "NonEquivariant" else None)
    plan = build_model(spec)
    rng = np.random.default_rng(n)
    theta = rng.uniform(0, 2 * math.pi, plan.n_params)
    x = rng.uniform(0, math.pi, (2, n * n))
    y = np.array([1.0, -1.0])
    adjoint = loss_gradient(plan, theta, x, y)
    shift = parameter_shift_gradient(plan, theta, x, y)
    assert np.max(np.abs(adjoint - shift)) < 1e-10
    assert np.max(np.abs(adjoint - fd_gradient(plan, theta, x, y))) < 1e-6


def test_zero_gradient_at_perfect_fit():
    spec = ModelSpec("Equivariant", 2, 1)
    plan = build_model(spec)
    theta = np.random.default_rng(0).uniform(0, 2 * math.pi, plan.n_params)
    x = np.zeros((1, 4))
    f = model_forward(plan, theta, x)
    assert np.allclose(loss_gradient(plan, theta, x, f), 0.0, atol=1e-15)


def test_adam_first_step_and_fixed_point():
    grads = np.array([0.3, -2.0, 1e-3])
    new, state = adam_step(AdamState.zeros(3), np.zeros(3), grads, 0.1)
    assert np.allclose(new, -0.1 * np.sign(grads), rtol=1e-4)
    assert np.allclose(new[:2], -0.1 * np.sign(grads[:2]), rtol=1e-6)
    assert state.step_count == 1
    params, st_ = np.array([1.0, 2.0]), AdamState.zeros(2)
    for _ in range(5):
        params, st_ = adam_step(st_, params, np.zeros(2), 0.1)
    assert np.array_equal(params, [1.0, 2.0])
    with pytest.raises(ValidationError):
        adam_step(AdamState.zeros(2), np.zeros(3), np.zeros(3), 0.1)


def test_adam_matches_textbook_recursion():
    rng = np.random.default_rng(4)
    grads = rng.normal(size=(6, 3))
    params, state = np.zeros(3), AdamState.zeros(3)
    m = v = np.zeros(3)
    ref = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        params, state = adam_step(state, params, g, 0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert np.allclose(params, ref, atol=1e-14)


def test_train_config_validation_and_round_trip():
    with pytest.raises(ValidationError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValidationError):
        TrainConfig(max_epochs=0)
    cfg = TrainConfig(learning_rate=0.05, batch_size=8, seed=3)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def _small_data():
    d = gen_tetrominoes(4)
    return d, d


def test_one_epoch_changes_params():
    d, _ = _small_data()
    spec = ModelSpec("Equivariant", 4, 1)
    cfg = TrainConfig(max_epochs=1, seed=2, dtype="float64")
    params, history = train(spec, d, cfg)
    assert len(history) == 1
    assert not np.array_equal(params.values, init_params(spec, 2).values)


def test_training_is_deterministic_and_loss_drops():
    d, test = _small_data()
    spec = ModelSpec("Equivariant", 4, 2)
    cfg = TrainConfig(max_epochs=6, seed=1, batch_size=16)
    p1, h1 = train(spec, d, cfg, test)
    p2, h2 = train(spec, d, cfg, test)
    assert np.array_equal(p1.values, p2.values)
    assert np.array_equal(h1.losses, h2.losses)
    assert h1.losses[-1] < h1.losses[0]
    assert h1.records[-1].test is not None and h1.records[0].test is None
    assert TrainHistory.from_dict(h1.to_dict()).losses.tolist() == h1.losses.tolist()
    lines = h1.to_csv().splitlines()
    assert lines[0].startswith("epoch,loss,wall_time,train_accuracy") and len(lines) == 7


def test_train_rejects_empty_dataset():
    with pytest.raises(ValidationError):
        train(ModelSpec("Equivariant", 2, 1), (np.zeros((0, 4)), np.zeros(0)), TrainConfig(max_epochs=1))


def test_float32_loss_gradient_close_to_float64():
    plan = build_model(ModelSpec("Equivariant", 4, 2))
    rng = np.random.default_rng(7)
    theta = rng.uniform(0, 2 * math.pi, plan.n_params)
    x = rng.uniform(0, math.pi, (5, 16))
    y = rng.choice([-1.0, 1.0], 5)
    l64, g64, _ = loss_and_gradient(plan, theta, x, y, np.float64)
    l32, g32, _ = loss_and_gradient(plan, theta, x, y, np.float32)
    assert abs(l64 - l32) < 1e-5 and np.max(np.abs(g64 - g32)) < 1e-5


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_landscape_stats_basic(seed):
    spec = ModelSpec("Equivariant", 2, 2)
    stats = landscape_stats(spec, np.zeros(4), 1.0, 40, seed)
    assert stats.n_samples == 40 and stats.var_loss >= 0 and stats.var_grad >= 0
    assert 0 <= stats.mean_loss <= 4
    with pytest.raises(ValidationError):
        landscape_stats(spec, np.zeros(4), 1.0, 1)
