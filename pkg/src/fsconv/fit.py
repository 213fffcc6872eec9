"""Fitting FS-neuron parameters to an activation function.

Parameters are trained by backpropagation through the K unrolled steps.
The Heaviside spike function has no useful derivative, so wherever
``dz/dv`` is needed a triangle of half-width ``gamma`` centred on the
threshold is used instead.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fs_core import (
    ActivationFunction,
    FsParams,
    QuantizationSpec,
    approximation_mse,
    fs_simulate_batch,
    make_relu_params,
    quantize_params,
)

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegionWeights:
    """Piecewise-constant loss weights: a list of ``((lo, hi), weight)``.

    Where regions overlap the largest weight wins; points outside every
    region get weight 1.
    """

    regions: tuple = ()

    def __post_init__(self):
        regs = []
        for (lo, hi), w in self.regions:
            if not lo < hi:
                raise ConfigError(f"region [{lo}, {hi}] is empty")
            if not w > 0:
                raise ConfigError(f"region weight must be positive, got {w}")
            regs.append(((float(lo), float(hi)), float(w)))
        object.__setattr__(self, "regions", tuple(regs))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.regions:
            return np.ones_like(x)
        w = np.zeros_like(x)
        for (lo, hi), weight in self.regions:
            inside = (x >= lo) & (x <= hi)
            w = np.where(inside, np.maximum(w, weight), w)
        return np.where(w > 0, w, 1.0)

    def covers(self, interval) -> bool:
        lo, hi = interval
        edges = sorted(self.regions)
        reach = lo
        for (a, b), _ in edges:
            if a > reach:
                return False
            reach = max(reach, b)
        return reach >= hi


@dataclass(frozen=True)
class FitConfig:
    train_interval: tuple
    num_steps: int
    batch_size: int
    iterations: int
    learning_rate: float
    pseudo_derivative_width: float
    rng_seed: int
    region_weights: RegionWeights = field(default_factory=RegionWeights)
    momentum: float = 0.9
    init_noise: float = 0.2
    anneal_at: float = 2.0 / 3.0
    anneal_factor: float = 0.5
    validation_points: int = 2048
    validate_every: int = 50
    param_noise: float = 0.0

    def __post_init__(self):
        lo, hi = self.train_interval
        if not lo < hi:
            raise ConfigError(f"train_interval must satisfy lo < hi, got {self.train_interval}")
        object.__setattr__(self, "train_interval", (float(lo), float(hi)))
        for name in ("num_steps", "batch_size", "iterations"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("learning_rate", "pseudo_derivative_width"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum!r}")
        if isinstance(self.region_weights, (list, tuple)):
            object.__setattr__(self, "region_weights", RegionWeights(tuple(self.region_weights)))

    _REQUIRED = (
        "train_interval",
        "num_steps",
        "batch_size",
        "iterations",
        "learning_rate",
        "pseudo_derivative_width",
        "rng_seed",
        "region_weights",
    )

    @classmethod
    def from_dict(cls, obj: dict) -> "FitConfig":
        """Build from a JSON-style mapping.  Every core field must be present."""
        missing = [k for k in cls._REQUIRED if k not in obj]
        if missing:
            raise ConfigError(f"fit config is missing required field(s): {', '.join(missing)}")
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        unknown = sorted(set(obj) - known - {"target"})
        if unknown:
            raise ConfigError(f"fit config has unknown field(s): {', '.join(unknown)}")
        kwargs = {k: v for k, v in obj.items() if k in known}
        kwargs["train_interval"] = tuple(obj["train_interval"])
        kwargs["region_weights"] = RegionWeights(
            tuple((tuple(r["interval"]), r["weight"]) for r in obj["region_weights"])
        )
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train_interval"] = list(self.train_interval)
        out["region_weights"] = [
            {"interval": list(iv), "weight": w} for iv, w in self.region_weights.regions
        ]
        return out


def load_fit_config(path) -> tuple[str | None, FitConfig]:
    """Read a FitConfig JSON file; returns ``(target kind or None, config)``."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return obj.get("target"), FitConfig.from_dict(obj)


# ---------------------------------------------------------------------------
# surrogate gradient machinery
# ---------------------------------------------------------------------------


def pseudo_grad(v, threshold, width):
    """Triangle ``max(0, 1 - |v - threshold| / width)``; peak 1 at the threshold."""
    if not width > 0:
        raise ValueError("width must be positive")
    out = np.maximum(0.0, 1.0 - np.abs(np.asarray(v, dtype=np.float64) - threshold) / width)
    return float(out) if out.ndim == 0 else out


def smooth_step(u, width):
    """Antiderivative of the triangle: a C1 ramp from 0 (u <= -width) to ``width`` (u >= width).

    For unit width this is a smoothed Heaviside.  It is the forward
    function whose exact derivative is :func:`pseudo_grad`, which makes the
    backward pass checkable by finite differences.
    """
    u = np.clip(np.asarray(u, dtype=np.float64), -width, width)
    neg = (u + width) ** 2 / (2 * width)
    pos = width / 2 + u - u * u / (2 * width)
    return np.where(u < 0, neg, pos)


@dataclass
class Gradients:
    thresholds: np.ndarray
    resets: np.ndarray
    output_weights: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.thresholds, self.resets, self.output_weights])


def _unpack(params):
    if isinstance(params, FsParams):
        return params.thresholds, params.resets, params.output_weights
    return params


def forward_backward(
    x_batch,
    params,
    target,
    weights: RegionWeights | None = None,
    gamma: float = 1.0,
    smooth: bool = False,
    target_values=None,
):
    """Weighted MSE loss and its BPTT gradient with respect to ``T``, ``h``, ``d``.

    With ``smooth=False`` (used for fitting) the forward pass is the true
    hard-threshold dynamics and the triangle is substituted for ``dz/dv``.
    With ``smooth=True`` the forward pass uses :func:`smooth_step` instead, so
    the returned gradient is the exact gradient of that surrogate loss.

    ``params`` may be an :class:`FsParams` or a ``(T, h, d)`` triple of arrays.
    """
    x = np.asarray(x_batch, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("x_batch must be non-empty")
    T, h, d = (np.asarray(a, dtype=np.float64) for a in _unpack(params))
    K = T.shape[0]
    if target_values is None:
        if isinstance(target, str):
            target = ActivationFunction(target)
        target_values = target(x)
    w = np.ones_like(x) if weights is None else weights(x)
    wsum = w.sum()

    n = x.size
    z = np.empty((K, n))
    u = np.empty((K, n))
    v = x.copy()
    out = np.zeros(n)
    for t in range(K):
        u[t] = v - T[t]
        z[t] = smooth_step(u[t], gamma) if smooth else (u[t] >= 0)
        out = out + d[t] * z[t]
        v = v - h[t] * z[t]

    resid = out - target_values
    loss = float(np.sum(w * resid * resid) / wsum)
    if not np.isfinite(loss):
        raise FitError("non-finite loss in forward pass")

    g_out = 2.0 * w * resid / wsum
    gT = np.empty(K)
    gh = np.empty(K)
    gd = np.empty(K)
    lam = np.zeros(n)  # dL/dv(t+1)
    for t in range(K - 1, -1, -1):
        gd[t] = np.dot(g_out, z[t])
        gh[t] = -np.dot(lam, z[t])
        dz = g_out * d[t] - lam * h[t]
        du = dz * pseudo_grad(u[t], 0.0, gamma)
        gT[t] = -du.sum()
        lam = lam + du
    grads = Gradients(gT, gh, gd)
    if not np.all(np.isfinite(grads.as_vector())):
        raise FitError("non-finite gradient in backward pass")
    return loss, grads


def surrogate_loss(x_batch, params, target, weights=None, gamma: float = 1.0) -> float:
    """Loss of the smoothed dynamics alone; the finite-difference target."""
    x = np.asarray(x_batch, dtype=np.float64).reshape(-1)
    T, h, d = (np.asarray(a, dtype=np.float64) for a in _unpack(params))
    if isinstance(target, str):
        target = ActivationFunction(target)
    w = np.ones_like(x) if weights is None else weights(x)
    v = x.copy()
    out = np.zeros_like(x)
    for t in range(T.shape[0]):
        z = smooth_step(v - T[t], gamma)
        out += d[t] * z
        v -= h[t] * z
    r = out - target(x)
    return float(np.sum(w * r * r) / w.sum())


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _analytic_start(target_kind: str, cfg: FitConfig) -> FsParams:
    base = make_relu_params(cfg.num_steps, max(cfg.train_interval[1], 1e-3))
    return replace(base, activation_tag=target_kind)


def initial_params(target_kind: str, cfg: FitConfig, rng: np.random.Generator) -> FsParams:
    """Analytic ReLU coder over ``[0, hi]`` plus seeded uniform noise."""
    lo, hi = cfg.train_interval
    base = _analytic_start(target_kind, cfg)
    scale = cfg.init_noise * (hi - lo) / cfg.num_steps
    K = cfg.num_steps
    return FsParams(
        K,
        base.thresholds + rng.uniform(-scale, scale, K),
        base.resets + rng.uniform(-scale, scale, K),
        base.output_weights + rng.uniform(-scale, scale, K),
        target_kind,
    )


def validation_grid(cfg: FitConfig) -> np.ndarray:
    """Fixed evaluation points: ``validation_points`` per weighted region plus the full interval."""
    lo, hi = cfg.train_interval
    parts = [np.linspace(lo, hi, cfg.validation_points)]
    for (a, b), _ in cfg.region_weights.regions:
        a, b = max(a, lo), min(b, hi)
        if a < b:
            parts.append(np.linspace(a, b, cfg.validation_points))
    return np.concatenate(parts)


def _weighted_mse(params: FsParams, xs, target_values, w) -> float:
    approx, _ = fs_simulate_batch(xs, params)
    r = approx - target_values
    return float(np.sum(w * r * r) / w.sum())


def _training_points(cfg: FitConfig, rng: np.random.Generator) -> np.ndarray:
    lo, hi = cfg.train_interval
    n = cfg.batch_size
    grid = np.linspace(lo, hi, n, endpoint=False)
    return grid + rng.uniform(0.0, (hi - lo) / n, n)


@dataclass
class FitResult:
    params: FsParams
    best_validation: float
    initial_validation: float
    final_train_loss: float
    initial_train_loss: float
    best_iteration: int
    history: list = field(default_factory=list)


def fit_detailed(target, cfg: FitConfig, init: FsParams | None = None) -> FitResult:
    if isinstance(target, str):
        target = ActivationFunction(target)
    kind = getattr(target, "kind", "custom")
    rng = np.random.default_rng(cfg.rng_seed)
    params = init if init is not None else initial_params(kind, cfg, rng)
    if params.num_steps != cfg.num_steps:
        raise ConfigError(f"init has K={params.num_steps}, config asks for K={cfg.num_steps}")

    val_x = validation_grid(cfg)
    val_y = target(val_x)
    val_w = cfg.region_weights(val_x)

    theta = np.concatenate([params.thresholds, params.resets, params.output_weights])
    K = cfg.num_steps
    velocity = np.zeros_like(theta)

    def as_params(vec):
        return FsParams(K, vec[:K], vec[K : 2 * K], vec[2 * K :], kind)

    best_val = _weighted_mse(params, val_x, val_y, val_w)
    initial_val = best_val
    best_theta = theta.copy()
    if init is None:
        # the noise-free coder is a candidate too, so a fit never ends worse than it
        clean = _analytic_start(kind, cfg)
        clean_val = _weighted_mse(clean, val_x, val_y, val_w)
        if clean_val < best_val:
            best_val = clean_val
            best_theta = np.concatenate([clean.thresholds, clean.resets, clean.output_weights])
    best_it = 0
    history = []
    gamma = cfg.pseudo_derivative_width
    anneal_it = int(cfg.anneal_at * cfg.iterations)
    initial_loss = None
    loss = float("nan")

    for it in range(1, cfg.iterations + 1):
        if it == anneal_it:
            gamma *= cfg.anneal_factor
        xb = _training_points(cfg, rng)
        probe = theta
        if cfg.param_noise > 0:
            probe = theta + rng.uniform(-cfg.param_noise, cfg.param_noise, theta.size)
        loss, g = forward_backward(
            xb, (probe[:K], probe[K : 2 * K], probe[2 * K :]), target, cfg.region_weights, gamma
        )
        if initial_loss is None:
            initial_loss = loss
        if loss > initial_loss * 1e3 + 1e-12:
            raise FitError(
                f"fit diverged at iteration {it}: loss {loss:.4g} exceeds 1000x the initial {initial_loss:.4g}"
            )
        velocity = cfg.momentum * velocity - cfg.learning_rate * g.as_vector()
        theta = theta + velocity

        if it % cfg.validate_every == 0 or it == cfg.iterations:
            val = _weighted_mse(as_params(theta), val_x, val_y, val_w)
            history.append((it, loss, val))
            if val < best_val:
                best_val, best_theta, best_it = val, theta.copy(), it

    log.debug("fit %s K=%d: best validation %.5g at iteration %d", kind, K, best_val, best_it)
    return FitResult(
        as_params(best_theta),
        best_val,
        initial_val,
        loss,
        initial_loss,
        best_it,
        history,
    )


def fit(target, cfg: FitConfig, init: FsParams | None = None) -> FsParams:
    """Fit FS parameters to ``target``; returns the best-on-validation parameters."""
    return fit_detailed(target, cfg, init).params


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def region_mses(params: FsParams, target, regions, n_samples: int = 10001) -> dict:
    """``{name: mse}`` for ``regions`` given as ``{name: [(lo, hi), ...]}``.

    A multi-interval region is sampled evenly across its pieces, with
    sample counts proportional to piece length.
    """
    if isinstance(target, str):
        target = ActivationFunction(target)
    out = {}
    for name, pieces in regions.items():
        total_len = sum(hi - lo for lo, hi in pieces)
        xs = np.concatenate(
            [np.linspace(lo, hi, max(2, round(n_samples * (hi - lo) / total_len))) for lo, hi in pieces]
        )
        approx, _ = fs_simulate_batch(xs, params)
        err = approx - target(xs)
        out[name] = float(np.mean(err * err))
    return out


def default_regions(cfg: FitConfig) -> dict:
    """Main region = the most heavily weighted one; outside = the rest of the interval."""
    lo, hi = cfg.train_interval
    if not cfg.region_weights.regions:
        return {"all": [(lo, hi)]}
    (a, b), _ = max(cfg.region_weights.regions, key=lambda r: r[1])
    out = {"main": [(a, b)], "all": [(lo, hi)]}
    rest = [(p, q) for p, q in ((lo, a), (b, hi)) if q > p]
    if rest:
        out["outside"] = rest
    return out


@dataclass
class SweepRow:
    key: int
    mses: dict
    ok: bool = True
    error: str = ""


def sweep_k(target, k_values: Sequence[int], cfg: FitConfig, regions=None) -> list[SweepRow]:
    """One fit per K, rows in input order.  Row ``i`` uses seed ``rng_seed + i``."""
    if not k_values:
        raise ValueError("k_values must be non-empty")
    regions = regions or default_regions(cfg)
    rows = []
    for i, k in enumerate(k_values):
        row_cfg = replace(cfg, num_steps=int(k), rng_seed=cfg.rng_seed + i)
        try:
            params = fit(target, row_cfg)
            rows.append(SweepRow(int(k), region_mses(params, target, regions)))
        except (FitError, ConfigError) as exc:
            rows.append(SweepRow(int(k), {}, ok=False, error=str(exc)))
    return rows


def sweep_q(
    params: FsParams,
    target,
    q_values: Sequence[int],
    interval=(-8.0, 12.0),
    n_samples: int = 10001,
    qrange=(-8.0, 8.0),
) -> list[tuple[int, float]]:
    """Quantize the fixed ``params`` at each Q and measure MSE; no refitting."""
    rows = []
    for q in q_values:
        qp = quantize_params(params, QuantizationSpec(int(q), *qrange))
        rows.append((int(q), approximation_mse(qp, target, interval, n_samples)))
    return rows
