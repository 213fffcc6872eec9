"""Few-spike (FS) neuron model.

An FS-neuron emulates one ANN activation in ``K`` discrete steps.  Its
membrane potential starts at the gate input ``x``; at step ``t`` it spikes
when the potential reaches the threshold ``T[t]``, is then lowered by
``h[t]``, and the spike contributes ``d[t]`` to the decoded output.  There
is no leak and no noise.

Everything here runs in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ACTIVATION_KINDS = ("relu", "silu", "sigmoid", "identity")


class FsParamsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# activation functions
# ---------------------------------------------------------------------------


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def _silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * _sigmoid(x)


def _identity(x):
    return np.asarray(x, dtype=np.float64).copy()


_EVALUATORS: dict[str, Callable] = {
    "relu": _relu,
    "silu": _silu,
    "sigmoid": _sigmoid,
    "identity": _identity,
}


@dataclass(frozen=True)
class ActivationFunction:
    """A named element-wise nonlinearity with a closed-form evaluator."""

    kind: str

    def __post_init__(self):
        if self.kind not in _EVALUATORS:
            raise ValueError(
                f"unknown activation {self.kind!r}; supported: {', '.join(ACTIVATION_KINDS)}"
            )

    def __call__(self, x):
        out = _EVALUATORS[self.kind](np.asarray(x, dtype=np.float64).reshape(-1))
        if np.ndim(x) == 0:
            return float(out[0])
        return out.reshape(np.shape(x))


def activation(kind: str) -> ActivationFunction:
    return ActivationFunction(kind)


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------


def _as_schedule(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FsParams:
    """Threshold, reset and output-weight schedules over ``num_steps`` steps."""

    num_steps: int
    thresholds: np.ndarray
    resets: np.ndarray
    output_weights: np.ndarray
    activation_tag: str = "custom"

    def __post_init__(self):
        if int(self.num_steps) != self.num_steps or self.num_steps < 1:
            raise FsParamsError(f"num_steps must be a positive integer, got {self.num_steps!r}")
        object.__setattr__(self, "num_steps", int(self.num_steps))
        for name in ("thresholds", "resets", "output_weights"):
            arr = _as_schedule(getattr(self, name))
            if arr.shape != (self.num_steps,):
                raise FsParamsError(
                    f"{name} has {arr.size} entries, expected K={self.num_steps}"
                )
            if not np.all(np.isfinite(arr)):
                raise FsParamsError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)

    # short aliases matching the usual T/h/d notation
    @property
    def T(self) -> np.ndarray:
        return self.thresholds

    @property
    def h(self) -> np.ndarray:
        return self.resets

    @property
    def d(self) -> np.ndarray:
        return self.output_weights

    def __eq__(self, other):
        if not isinstance(other, FsParams):
            return NotImplemented
        return (
            self.num_steps == other.num_steps
            and self.activation_tag == other.activation_tag
            and np.array_equal(self.thresholds, other.thresholds)
            and np.array_equal(self.resets, other.resets)
            and np.array_equal(self.output_weights, other.output_weights)
        )

    def __repr__(self):
        return (
            f"FsParams(K={self.num_steps}, activation={self.activation_tag!r}, "
            f"T={self.thresholds.tolist()}, h={self.resets.tolist()}, d={self.output_weights.tolist()})"
        )

    def to_dict(self) -> dict:
        return {
            "k": self.num_steps,
            "t": self.thresholds.tolist(),
            "h": self.resets.tolist(),
            "d": self.output_weights.tolist(),
            "activation": self.activation_tag,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "FsParams":
        missing = [key for key in ("k", "t", "h", "d", "activation") if key not in obj]
        if missing:
            raise FsParamsError(f"FS parameter record is missing fields: {', '.join(missing)}")
        k = obj["k"]
        if not isinstance(k, int) or isinstance(k, bool):
            raise FsParamsError(f"field 'k' must be an integer, got {k!r}")
        for key in ("t", "h", "d"):
            if not isinstance(obj[key], list) or len(obj[key]) != k:
                got = len(obj[key]) if isinstance(obj[key], list) else type(obj[key]).__name__
                raise FsParamsError(f"field {key!r} must be a list of length k={k}, got {got}")
        return cls(k, obj["t"], obj["h"], obj["d"], str(obj["activation"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FsParams":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FsParamsError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(obj)


@dataclass
class FsNeuronState:
    """Membrane potential ``potential`` at 1-based step ``step``."""

    potential: float
    step: int = 1


@dataclass(frozen=True)
class FsOutput:
    value: float
    spikes: tuple[bool, ...]
    spike_count: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "spike_count", int(sum(self.spikes)))


def make_relu_params(num_steps: int, alpha: float) -> FsParams:
    """Binary-coding ReLU parameters: ``T = h = d = alpha * 2**-t`` for t = 1..K."""
    if int(num_steps) != num_steps or num_steps < 1:
        raise FsParamsError(f"K must be a positive integer, got {num_steps!r}")
    if not alpha > 0 or not math.isfinite(alpha):
        raise FsParamsError(f"alpha must be a positive finite number, got {alpha!r}")
    sched = alpha * np.ldexp(1.0, -np.arange(1, int(num_steps) + 1))
    return FsParams(int(num_steps), sched, sched, sched, "relu")


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def fs_step(state: FsNeuronState, params: FsParams) -> tuple[FsNeuronState, bool]:
    """Advance one step.  The threshold comparison is inclusive (spike at v == T)."""
    t = state.step
    if not 1 <= t <= params.num_steps:
        raise IndexError(f"step {t} outside 1..{params.num_steps}")
    v = state.potential
    spike = bool(v >= params.thresholds[t - 1])
    if spike:
        v = v - float(params.resets[t - 1])
    return FsNeuronState(v, t + 1), spike


def fs_simulate(x: float, params: FsParams) -> FsOutput:
    state = FsNeuronState(float(x), 1)
    spikes = []
    value = 0.0
    for t in range(params.num_steps):
        state, z = fs_step(state, params)
        spikes.append(z)
        if z:
            value += float(params.output_weights[t])
    return FsOutput(value, tuple(spikes))


def fs_simulate_batch(x, params: FsParams, return_trace: bool = False):
    """Vectorised :func:`fs_simulate` over an array of gate inputs.

    Returns ``(values, spikes)`` where ``spikes`` has a trailing axis of
    length K holding 0/1 as ``uint8``.  With ``return_trace`` the potentials
    ``v(1..K)`` are returned as a third element.  Results are bit-identical
    to the scalar path.
    """
    v = np.array(x, dtype=np.float64, copy=True)
    K = params.num_steps
    spikes = np.zeros(v.shape + (K,), dtype=np.uint8)
    values = np.zeros(v.shape, dtype=np.float64)
    trace = np.empty(v.shape + (K,), dtype=np.float64) if return_trace else None
    for t in range(K):
        if return_trace:
            trace[..., t] = v
        z = v >= params.thresholds[t]
        spikes[..., t] = z
        v = np.where(z, v - params.resets[t], v)
        values = np.where(z, values + params.output_weights[t], values)
    if return_trace:
        return values, spikes, trace
    return values, spikes


def relu_closed_form(x, num_steps: int, alpha: float):
    """Floor-to-grid ReLU with saturation at ``alpha * (1 - 2**-K)``."""
    scale = 2.0**num_steps
    xa = np.asarray(x, dtype=np.float64)
    levels = np.floor(xa * scale / alpha)
    levels = np.clip(levels, 0.0, scale - 1.0)
    out = levels * (alpha / scale)
    if np.ndim(x) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizationSpec:
    """``2**bits`` equally spaced levels on ``[range_low, range_high]``, endpoints included."""

    bits: int
    range_low: float = -8.0
    range_high: float = 8.0

    def __post_init__(self):
        if int(self.bits) != self.bits or self.bits < 1:
            raise ValueError(f"bits must be a positive integer, got {self.bits!r}")
        if not self.range_low < self.range_high:
            raise ValueError(
                f"quantization range must satisfy low < high, got [{self.range_low}, {self.range_high}]"
            )

    @property
    def num_levels(self) -> int:
        return 2 ** int(self.bits)

    @property
    def spacing(self) -> float:
        return (self.range_high - self.range_low) / (self.num_levels - 1)

    def levels(self) -> np.ndarray:
        return self.range_low + np.arange(self.num_levels) * self.spacing

    def snap(self, values) -> np.ndarray:
        vals = np.asarray(values, dtype=np.float64)
        pos = (vals - self.range_low) / self.spacing
        # ceil(p - 0.5) sends exact midpoints to the lower level
        idx = np.clip(np.ceil(pos - 0.5), 0, self.num_levels - 1)
        return self.range_low + idx * self.spacing


def quantize_params(params: FsParams, q: QuantizationSpec) -> FsParams:
    return FsParams(
        params.num_steps,
        q.snap(params.thresholds),
        q.snap(params.resets),
        q.snap(params.output_weights),
        params.activation_tag,
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _as_activation(target) -> ActivationFunction | Callable:
    if isinstance(target, str):
        return ActivationFunction(target)
    return target


def approximation_mse(params: FsParams, target, interval: Sequence[float], n_samples: int = 10001) -> float:
    """Mean squared error of the FS output against ``target`` on an even grid."""
    lo, hi = interval
    if not lo < hi:
        raise ValueError(f"interval must satisfy lo < hi, got [{lo}, {hi}]")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    xs = np.linspace(lo, hi, int(n_samples))
    approx, _ = fs_simulate_batch(xs, params)
    err = approx - np.asarray(_as_activation(target)(xs), dtype=np.float64)
    return float(np.mean(err * err))


def spike_count_profile(params: FsParams, interval: Sequence[float], n_samples: int):
    """Spike count per sample over an ascending grid; returns ``(xs, counts)``."""
    lo, hi = interval
    if not lo < hi:
        raise ValueError(f"interval must satisfy lo < hi, got [{lo}, {hi}]")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    xs = np.linspace(lo, hi, int(n_samples))
    _, spikes = fs_simulate_batch(xs, params)
    return xs, spikes.sum(axis=-1).astype(np.int64)


_PUBLISHED = {"silu": "silu_k16.json", "sigmoid": "sigmoid_k12.json"}


def published_params(kind: str) -> FsParams:
    """Shipped fits: SiLU with K=16 and sigmoid with K=12.

    The fit configs that produced them sit next to them as ``*_fit.json``.
    """
    if kind not in _PUBLISHED:
        raise FsParamsError(f"no shipped parameters for {kind!r}; available: {', '.join(sorted(_PUBLISHED))}")
    return FsParams.load(Path(__file__).parent / "data" / _PUBLISHED[kind])
