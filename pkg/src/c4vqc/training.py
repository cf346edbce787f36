"""MSE loss, gradients, Adam and the training loop, plus landscape statistics.

Labels are +1/-1 and the model output ``f`` lies in [-1, 1]; the loss is
``mean((f - y)**2)``. Gradients come from the compiled engine's adjoint
sweep; :func:`parameter_shift_gradient` is the slow exact oracle.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .circuits import CircuitPlan, ModelParams, ModelSpec, build_model, init_params
from .data import Dataset
from .errors import CapabilityError, NumericalError, ValidationError
from .metrics import MetricsReport, classify, compute_metrics
from .statevector import ROTATION_KINDS, expectation, run_circuit

DTYPES = {"float32": np.float32, "float64": np.float64}


def mse_loss(predictions, labels) -> float:
    f = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if f.size == 0 or f.size != y.size:
        raise ValidationError(f"need equal nonempty vectors, got {f.size} and {y.size}")
    return float(np.mean((f - y) ** 2))


def _batch(plan: CircuitPlan, features, labels):
    x = np.asarray(features, dtype=float).reshape(-1, plan.n_inputs)
    y = np.asarray(labels, dtype=float).ravel()
    if x.shape[0] == 0 or x.shape[0] != y.size:
        raise ValidationError(f"need a nonempty batch with one label per row, got {x.shape[0]} and {y.size}")
    return x, y


def loss_and_gradient(plan: CircuitPlan, params, features, labels, dtype=np.float64, chunk: int = 16):
    """``(loss, dL/dtheta, predictions)`` via one batched adjoint sweep."""
    x, y = _batch(plan, features, labels)
    values = params.values if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
    scale = 2.0 / y.size

    def cotangent(f, rows):
        if not np.all(np.isfinite(f)):
            raise NumericalError("circuit output is not finite")
        return scale * (f - y[rows])

    f, grad, _ = plan.compiled.vjp(values, x, cotangent, dtype=dtype, chunk=chunk, input_grad=False)
    return mse_loss(f, y), grad, f


def loss_gradient(plan: CircuitPlan, params, features, labels, dtype=np.float64) -> np.ndarray:
    return loss_and_gradient(plan, params, features, labels, dtype)[1]


def parameter_shift_gradient(plan: CircuitPlan, params, features, labels) -> np.ndarray:
    """Loss gradient from the two-term shift rule, one gate occurrence at a time."""
    x, y = _batch(plan, features, labels)
    values = params.values if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
    gates = list(plan.gates)
    for g in gates:
        if g.param is not None and g.kind not in ROTATION_KINDS:
            raise CapabilityError(f"{g.kind} is not generated by a single Pauli")
    positions = [pos for pos, g in enumerate(gates) if g.param is not None]
    grad = np.zeros(values.size)
    nq, obs = plan.n_qubits, plan.observable
    for xi, yi in zip(x, y):
        f = expectation(run_circuit(gates, nq, values, xi), obs)
        df = np.zeros(values.size)
        for pos in positions:
            plus = expectation(run_circuit(gates, nq, values, xi, shifts={pos: math.pi / 2}), obs)
            minus = expectation(run_circuit(gates, nq, values, xi, shifts={pos: -math.pi / 2}), obs)
            df[gates[pos].param] += 0.5 * (plus - minus)
        grad += 2.0 * (f - yi) * df
    return grad / y.size


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kw)


def adam_step(state: AdamState, params, grads, lr: float) -> tuple[np.ndarray, AdamState]:
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if not (params.shape == grads.shape == state.first_moment.shape):
        raise ValidationError("parameter, gradient and moment lengths differ")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grads**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)


# ---------------------------------------------------------------- training loop


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 100
    batch_size: int = 0  # 0: full batch
    seed: int = 0
    init_range: tuple[float, float] = (0.0, 2 * math.pi)
    feature_range: tuple[float, float] = (0.0, math.pi)  # used when a Dataset is passed
    dtype: str = "float32"
    eval_every: int = 0  # test metrics every k epochs (0: final epoch only)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValidationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 0 or self.eval_every < 0:
            raise ValidationError("batch_size and eval_every must be >= 0")
        if self.dtype not in DTYPES:
            raise ValidationError(f"dtype must be one of {sorted(DTYPES)}")
        object.__setattr__(self, "init_range", tuple(float(v) for v in self.init_range))
        object.__setattr__(self, "feature_range", tuple(float(v) for v in self.feature_range))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_range"] = list(self.init_range)
        d["feature_range"] = list(self.feature_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train: MetricsReport
    test: MetricsReport | None
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "train": self.train.to_dict(),
            "test": self.test.to_dict() if self.test else None,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EpochRecord":
        test = MetricsReport.from_dict(d["test"]) if d.get("test") else None
        return cls(d["epoch"], d["loss"], MetricsReport.from_dict(d["train"]), test, d["wall_time"])


@dataclass
class TrainHistory:
    """Per epoch: the loss and train metrics at the parameters the step started from."""

    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_dict(self) -> dict:
        return {"records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls([EpochRecord.from_dict(r) for r in d["records"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        names = ("accuracy", "precision", "recall", "f1")
        header = ["epoch", "loss", "wall_time"]
        header += [f"{split}_{m}" for split in ("train", "test") for m in names]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for r in self.records:
            row = [r.epoch, repr(r.loss), f"{r.wall_time:.6f}"]
            row += [repr(getattr(r.train, m)) for m in names]
            row += [repr(getattr(r.test, m)) if r.test else "" for m in names]
            writer.writerow(row)
        return buf.getvalue()


def as_arrays(data, feature_range=(0.0, math.pi)) -> tuple[np.ndarray, np.ndarray]:
    """Accept a :class:`Dataset` (scaled here) or an ``(features, labels)`` pair."""
    if isinstance(data, Dataset):
        data.check_trainable()
        return data.features(*feature_range), data.labels
    x, y = data
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] == 0:
        raise ValidationError("dataset is empty")
    return x.reshape(x.shape[0], -1), y


def evaluate(plan: CircuitPlan, params, features, labels, dtype=np.float64) -> tuple[MetricsReport, float]:
    values = params.values if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
    f = plan.compiled.forward(values, np.asarray(features, dtype=float), dtype=dtype)
    return compute_metrics(classify(f), labels), mse_loss(f, labels)


def train(spec: ModelSpec, dataset, config: TrainConfig, test=None, callback=None):
    """Adam on the MSE loss; returns ``(ModelParams, TrainHistory)``.

    Deterministic given ``config.seed``: the initial angles and the
    mini-batch order are both drawn from it.
    """
    x, y = as_arrays(dataset, config.feature_range)
    xt, yt = as_arrays(test, config.feature_range) if test is not None else (None, None)
    plan = build_model(spec)
    dtype = DTYPES[config.dtype]
    params = init_params(spec, config.seed, *config.init_range).values
    state = AdamState.zeros(params.size)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        if config.batch_size and config.batch_size < y.size:
            order = rng.permutation(y.size)
            batches = [order[i:i + config.batch_size] for i in range(0, y.size, config.batch_size)]
        else:
            batches = [np.arange(y.size)]
        preds = np.empty(y.size)
        for idx in batches:
            _, grad, f = loss_and_gradient(plan, params, x[idx], y[idx], dtype)
            preds[idx] = f
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"non-finite gradient at epoch {epoch}")
            params, state = adam_step(state, params, grad, config.learning_rate)
        loss = mse_loss(preds, y)
        if not math.isfinite(loss):
            raise NumericalError(f"loss became {loss} at epoch {epoch}")
        test_report = None
        last = epoch == config.max_epochs
        if xt is not None and (last or (config.eval_every and epoch % config.eval_every == 0)):
            test_report, _ = evaluate(plan, params, xt, yt, dtype)
        record = EpochRecord(epoch, loss, compute_metrics(classify(preds), y), test_report,
                             time.perf_counter() - start)
        history.records.append(record)
        if callback is not None:
            callback(record)
    return ModelParams(params), history


# ---------------------------------------------------------------- landscape


@dataclass(frozen=True)
class LandscapeStats:
    mean_loss: float
    var_loss: float
    mean_grad: float
    var_grad: float
    n_samples: int
    slot: int

    def to_dict(self) -> dict:
        return asdict(self)


def landscape_stats(spec: ModelSpec, x, y: float, n_samples: int = 2000, seed: int = 0,
                    slot: int = 0, dtype=np.float64) -> LandscapeStats:
    """Loss and ``dL/dtheta_slot`` at one data point over uniform angles in [0, 2pi).

    Variances are unbiased (``ddof=1``).
    """
    if n_samples < 2:
        raise ValidationError("landscape statistics need at least 2 samples")
    plan = build_model(spec)
    x = np.asarray(x, dtype=float).reshape(1, plan.n_inputs)
    if not 0 <= slot < plan.n_params:
        raise ValidationError(f"slot {slot} outside 0..{plan.n_params - 1}")
    rng = np.random.default_rng(seed)
    losses = np.empty(n_samples)
    grads = np.empty(n_samples)
    for s in range(n_samples):
        theta = rng.uniform(0.0, 2 * math.pi, plan.n_params)
        loss, grad, _ = loss_and_gradient(plan, theta, x, [y], dtype)
        losses[s] = loss
        grads[s] = grad[slot]
    return LandscapeStats(float(losses.mean()), float(losses.var(ddof=1)),
                          float(grads.mean()), float(grads.var(ddof=1)), n_samples, slot)


__all__ = [
    "AdamState",
    "EpochRecord",
    "LandscapeStats",
    "TrainConfig",
    "TrainHistory",
    "adam_step",
    "as_arrays",
    "evaluate",
    "landscape_stats",
    "loss_and_gradient",
    "loss_gradient",
    "mse_loss",
    "parameter_shift_gradient",
    "train",
]
