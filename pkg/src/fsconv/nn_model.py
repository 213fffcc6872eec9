"""Minimal feed-forward ANN: layer specs, reference forward pass, weight files,
batch-norm folding, pre-activation statistics and a small MLP trainer.

Arrays are numpy throughout.  Batches carry a leading sample axis; images
are channel-first ``(C, H, W)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fs_core import ACTIVATION_KINDS, ActivationFunction

log = logging.getLogger(__name__)

LAYER_KINDS = ("dense", "conv2d", "avgpool2d", "flatten", "residual_add", "batchnorm")


class NetworkError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One layer.  ``params`` holds the arrays; ``attrs`` the scalar settings.

    dense:        params ``weight`` (out, in), ``bias`` (out,)
    conv2d:       params ``weight`` (out_c, in_c, kh, kw), ``bias`` (out_c,);
                  attrs ``stride`` (int), ``padding`` ("same" | "valid")
    avgpool2d:    attrs ``pool`` (int); stride equals the pool size
    flatten:      no parameters
    residual_add: attrs ``source``: index of an earlier layer whose output
                  is added to this layer's input (-1 = network input)
    batchnorm:    params ``gamma``, ``beta``, ``mean``, ``var``; attrs ``eps``
    """

    kind: str
    params: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict)
    activation: str = "identity"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise NetworkError(f"unknown layer kind {self.kind!r}; supported: {', '.join(LAYER_KINDS)}")
        if self.activation not in ACTIVATION_KINDS:
            raise NetworkError(
                f"unknown activation {self.activation!r}; supported: {', '.join(ACTIVATION_KINDS)}"
            )
        object.__setattr__(
            self, "params", {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        )

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.activation == other.activation
            and self.attrs == other.attrs
            and self.params.keys() == other.params.keys()
            and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)
        )

    @property
    def is_affine(self) -> bool:
        return self.kind in ("dense", "conv2d")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def dense(weight, bias=None, activation="identity") -> LayerSpec:
    weight = np.asarray(weight, dtype=np.float64)
    if bias is None:
        bias = np.zeros(weight.shape[0])
    return LayerSpec("dense", {"weight": weight, "bias": bias}, {}, activation)


def conv2d(weight, bias=None, stride=1, padding="valid", activation="identity") -> LayerSpec:
    weight = np.asarray(weight, dtype=np.float64)
    if bias is None:
        bias = np.zeros(weight.shape[0])
    return LayerSpec(
        "conv2d", {"weight": weight, "bias": bias}, {"stride": int(stride), "padding": padding}, activation
    )


def batchnorm(gamma, beta, mean, var, eps=1e-5, activation="identity") -> LayerSpec:
    return LayerSpec(
        "batchnorm",
        {"gamma": gamma, "beta": beta, "mean": mean, "var": var},
        {"eps": float(eps)},
        activation,
    )


def avgpool2d(pool: int, activation="identity") -> LayerSpec:
    return LayerSpec("avgpool2d", {}, {"pool": int(pool)}, activation)


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def residual_add(source: int, activation="identity") -> LayerSpec:
    return LayerSpec("residual_add", {}, {"source": int(source)}, activation)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    class_count: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.output_shapes()  # validates the chain

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (
            self.input_shape == other.input_shape
            and self.class_count == other.class_count
            and len(self.layers) == len(other.layers)
            and all(a == b for a, b in zip(self.layers, other.layers))
        )

    def num_parameters(self) -> int:
        return sum(layer.num_parameters() for layer in self.layers)

    def activation_kinds(self) -> set:
        return {layer.activation for layer in self.layers if layer.activation != "identity"}

    def activation_neurons(self) -> int:
        """Number of scalar units that pass through a non-identity activation."""
        shapes = self.output_shapes()
        return sum(
            math.prod(shape)
            for layer, shape in zip(self.layers, shapes)
            if layer.activation != "identity"
        )

    def output_shapes(self) -> list[tuple]:
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _infer_shape(layer, shape, shapes, self.input_shape, i)
            shapes.append(shape)
        if shapes and math.prod(shapes[-1]) != self.class_count:
            raise NetworkError(
                f"last layer produces shape {shapes[-1]}, expected {self.class_count} class outputs"
            )
        return shapes


def _infer_shape(layer: LayerSpec, shape: tuple, prev_shapes: list, input_shape: tuple, index: int) -> tuple:
    where = f"layer {index} ({layer.kind})"
    p = layer.params
    if layer.kind == "dense":
        w, b = p["weight"], p["bias"]
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise NetworkError(f"{where}: weight must be (out, in) and bias (out,), got {w.shape}, {b.shape}")
        if shape != (w.shape[1],):
            raise NetworkError(f"{where}: expects input ({w.shape[1]},), got {shape}")
        return (w.shape[0],)
    if layer.kind == "conv2d":
        w, b = p["weight"], p["bias"]
        if w.ndim != 4 or b.shape != (w.shape[0],):
            raise NetworkError(f"{where}: weight must be (out_c, in_c, kh, kw), got {w.shape}")
        if len(shape) != 3 or shape[0] != w.shape[1]:
            raise NetworkError(f"{where}: expects (C={w.shape[1]}, H, W) input, got {shape}")
        stride = layer.attrs.get("stride", 1)
        pad = layer.attrs.get("padding", "valid")
        if pad not in ("same", "valid"):
            raise NetworkError(f"{where}: padding must be 'same' or 'valid', got {pad!r}")
        _, h, wd = shape
        kh, kw = w.shape[2:]
        if pad == "same":
            oh, ow = -(-h // stride), -(-wd // stride)
        else:
            oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
        if oh < 1 or ow < 1:
            raise NetworkError(f"{where}: kernel {kh}x{kw} does not fit input {shape}")
        return (w.shape[0], oh, ow)
    if layer.kind == "avgpool2d":
        k = layer.attrs["pool"]
        if len(shape) != 3 or shape[1] < k or shape[2] < k:
            raise NetworkError(f"{where}: pool {k} does not fit input {shape}")
        return (shape[0], shape[1] // k, shape[2] // k)
    if layer.kind == "flatten":
        return (math.prod(shape),)
    if layer.kind == "residual_add":
        src = layer.attrs["source"]
        if not -1 <= src < index:
            raise NetworkError(f"{where}: source {src} must reference an earlier layer")
        src_shape = input_shape if src == -1 else prev_shapes[src]
        if src_shape != shape:
            raise NetworkError(f"{where}: source shape {src_shape} does not match input shape {shape}")
        return shape
    if layer.kind == "batchnorm":
        c = shape[0]
        for key in ("gamma", "beta", "mean", "var"):
            if p[key].shape != (c,):
                raise NetworkError(f"{where}: {key} must have shape ({c},), got {p[key].shape}")
        return shape
    raise NetworkError(f"{where}: unsupported kind")


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _pad_same(x, kh, kw, stride):
    h, w = x.shape[-2:]
    oh, ow = -(-h // stride), -(-w // stride)
    ph = max((oh - 1) * stride + kh - h, 0)
    pw = max((ow - 1) * stride + kw - w, 0)
    return np.pad(x, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))


def conv2d_forward(x, weight, bias, stride=1, padding="valid"):
    """Batched cross-correlation; ``x`` is (N, C, H, W)."""
    kh, kw = weight.shape[2:]
    if padding == "same":
        x = _pad_same(x, kh, kw, stride)
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    out = np.einsum("nchwij,ocij->nohw", windows, weight, optimize=True)
    return out + bias[None, :, None, None]


def avgpool_forward(x, k):
    n, c, h, w = x.shape
    x = x[:, :, : h // k * k, : w // k * k]
    return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))


def affine_forward(layer: LayerSpec, x):
    """The linear part of a layer (no activation); batched."""
    p = layer.params
    if layer.kind == "dense":
        return x @ p["weight"].T + p["bias"]
    if layer.kind == "conv2d":
        return conv2d_forward(x, p["weight"], p["bias"], layer.attrs.get("stride", 1), layer.attrs.get("padding", "valid"))
    if layer.kind == "avgpool2d":
        return avgpool_forward(x, layer.attrs["pool"])
    if layer.kind == "flatten":
        return x.reshape(x.shape[0], -1)
    if layer.kind == "batchnorm":
        shape = (1, -1) + (1,) * (x.ndim - 2)
        scale = p["gamma"] / np.sqrt(p["var"] + layer.attrs.get("eps", 1e-5))
        return (x - p["mean"].reshape(shape)) * scale.reshape(shape) + p["beta"].reshape(shape)
    raise NetworkError(f"affine_forward does not handle {layer.kind}")


def _batched(net: NetworkSpec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == net.input_shape:
        return x[None], True
    if x.shape[1:] != net.input_shape:
        raise NetworkError(f"input shape {x.shape} does not match network input {net.input_shape}")
    return x, False


def forward(net: NetworkSpec, x, record_preactivations: bool = False):
    """Reference forward pass.

    Accepts a single input of ``net.input_shape`` or a batch.  Returns the
    logits, plus ``{layer_index: pre-activation}`` for every layer with a
    non-identity activation when ``record_preactivations`` is set.
    """
    h, single = _batched(net, x)
    outputs = []
    pre = {}
    for i, layer in enumerate(net.layers):
        if layer.kind == "residual_add":
            src = layer.attrs["source"]
            z = h + (_batched(net, x)[0] if src == -1 else outputs[src])
        else:
            z = affine_forward(layer, h)
        if layer.activation != "identity":
            if record_preactivations:
                pre[i] = z[0] if single else z
            h = ActivationFunction(layer.activation)(z)
        else:
            h = z
        outputs.append(h)
    out = h.reshape(h.shape[0], -1)
    out = out[0] if single else out
    if record_preactivations:
        return out, pre
    return out


def predict(net: NetworkSpec, x, batch_size: int = 2048) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [forward(net, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    logits = np.concatenate(out)
    if logits.shape[1] == 1:
        return (logits[:, 0] > 0).astype(np.int64)
    return logits.argmax(axis=1)


def accuracy(net: NetworkSpec, x, labels) -> float:
    return float(np.mean(predict(net, x) == np.asarray(labels)))


# ---------------------------------------------------------------------------
# batch-norm folding
# ---------------------------------------------------------------------------


def fold_batchnorm(net: NetworkSpec) -> NetworkSpec:
    """Absorb each batchnorm into the dense/conv2d layer right before it."""
    layers = list(net.layers)
    out: list[LayerSpec] = []
    index_map = {-1: -1}
    referenced = {l.attrs["source"] for l in layers if l.kind == "residual_add"}
    for i, layer in enumerate(layers):
        if layer.kind != "batchnorm":
            if layer.kind == "residual_add":
                layer = replace(layer, attrs={**layer.attrs, "source": index_map[layer.attrs["source"]]})
            out.append(layer)
            index_map[i] = len(out) - 1
            continue
        prev = layers[i - 1] if i > 0 else None
        if prev is None or not prev.is_affine:
            raise NetworkError(f"layer {i}: batchnorm must directly follow a dense or conv2d layer")
        if prev.activation != "identity":
            raise NetworkError(
                f"layer {i}: batchnorm follows layer {i - 1} which already applies {prev.activation}"
            )
        if (i - 1) in referenced:
            raise NetworkError(
                f"layer {i}: cannot fold, layer {i - 1} output is used by a residual connection"
            )
        p = layer.params
        scale = p["gamma"] / np.sqrt(p["var"] + layer.attrs.get("eps", 1e-5))
        w, b = prev.params["weight"], prev.params["bias"]
        w_new = w * scale.reshape((-1,) + (1,) * (w.ndim - 1))
        b_new = (b - p["mean"]) * scale + p["beta"]
        out[-1] = replace(prev, params={"weight": w_new, "bias": b_new}, activation=layer.activation)
        index_map[i] = len(out) - 1
    return NetworkSpec(tuple(out), net.input_shape, net.class_count, dict(net.metadata))


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


@dataclass
class LayerStats:
    mean: float
    variance: float
    max: float
    min: float
    count: int
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "max": self.max,
            "min": self.min,
            "count": self.count,
            "hist_counts": self.hist_counts.tolist(),
            "hist_edges": self.hist_edges.tolist(),
        }


def activation_stats(net: NetworkSpec, calibration, bins=np.linspace(-8, 8, 65), batch_size: int = 1024) -> dict:
    """Pre-activation statistics for each non-identity activation layer."""
    calibration = np.asarray(calibration, dtype=np.float64)
    if calibration.shape[1:] != net.input_shape or len(calibration) == 0:
        raise NetworkError("calibration batch must be non-empty and match the network input shape")
    sums: dict = {}
    for start in range(0, len(calibration), batch_size):
        _, pre = forward(net, calibration[start : start + batch_size], record_preactivations=True)
        for i, z in pre.items():
            z = z.reshape(-1)
            acc = sums.setdefault(i, {"n": 0, "s": 0.0, "ss": 0.0, "max": -np.inf, "min": np.inf, "hist": 0})
            acc["n"] += z.size
            acc["s"] += z.sum()
            acc["ss"] += np.dot(z, z)
            acc["max"] = max(acc["max"], float(z.max()))
            acc["min"] = min(acc["min"], float(z.min()))
            acc["hist"] = acc["hist"] + np.histogram(z, bins=bins)[0]
    stats = {}
    for i, acc in sums.items():
        mean = acc["s"] / acc["n"]
        var = max(acc["ss"] / acc["n"] - mean * mean, 0.0)
        stats[i] = LayerStats(float(mean), float(var), acc["max"], acc["min"], acc["n"], np.asarray(acc["hist"]), np.asarray(bins))
    return stats


# ---------------------------------------------------------------------------
# weight container: manifest.json + weights.bin
# ---------------------------------------------------------------------------

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _layer_manifest(layer: LayerSpec, i: int, offset: int, dtype: str, blobs: list):
    tensors = []
    for name, arr in layer.params.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dtype])
        tensors.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": data.nbytes}
        )
        blobs.append(data.tobytes())
        offset += data.nbytes
    entry = {"kind": layer.kind, "activation": layer.activation, "attrs": dict(layer.attrs), "tensors": tensors}
    return entry, offset


def network_manifest(net: NetworkSpec, dtype: str = "f64") -> tuple[dict, bytes]:
    if dtype not in _DTYPES:
        raise NetworkError(f"dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    blobs: list = []
    offset = 0
    layers = []
    for i, layer in enumerate(net.layers):
        entry, offset = _layer_manifest(layer, i, offset, dtype, blobs)
        layers.append(entry)
    manifest = {
        "format": "fsconv-network",
        "version": 1,
        "dtype": dtype,
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "layers": layers,
        "metadata": net.metadata,
    }
    return manifest, b"".join(blobs)


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def save_network(net: NetworkSpec, path, dtype: str = "f64", extra: dict | None = None) -> None:
    """Write ``path/manifest.json`` and ``path/weights.bin``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest, blob = network_manifest(net, dtype)
    if extra:
        manifest.update(extra)
    _atomic_write(path / "weights.bin", blob)
    _atomic_write(path / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())


def _read_layers(manifest: dict, blob: bytes, where: Path) -> list[LayerSpec]:
    dtype = manifest.get("dtype")
    if dtype not in _DTYPES:
        raise NetworkError(f"{where}: dtype must be one of {sorted(_DTYPES)}, got {dtype!r}")
    dt = _DTYPES[dtype]
    layers = []
    for i, entry in enumerate(manifest["layers"]):
        kind = entry.get("kind")
        if kind not in LAYER_KINDS:
            raise NetworkError(f"{where}: layer {i} has unknown kind {kind!r}; supported: {', '.join(LAYER_KINDS)}")
        act = entry.get("activation", "identity")
        if act not in ACTIVATION_KINDS:
            raise NetworkError(
                f"{where}: layer {i} has unknown activation {act!r}; supported: {', '.join(ACTIVATION_KINDS)}"
            )
        params = {}
        for t in entry.get("tensors", []):
            name = f"layer {i} tensor {t['name']!r}"
            count = math.prod(t["shape"])
            nbytes = count * dt.itemsize
            if t.get("nbytes", nbytes) != nbytes:
                raise NetworkError(f"{where}: {name}: nbytes {t['nbytes']} does not match shape {t['shape']}")
            start = t["offset"]
            if start < 0 or start + nbytes > len(blob):
                raise NetworkError(
                    f"{where}: {name} needs bytes {start}..{start + nbytes} but weights.bin has {len(blob)} bytes (truncated)"
                )
            arr = np.frombuffer(blob, dtype=dt, count=count, offset=start).astype(np.float64)
            if not np.all(np.isfinite(arr)):
                raise NetworkError(f"{where}: {name} contains non-finite values")
            params[t["name"]] = arr.reshape(t["shape"])
        try:
            layers.append(LayerSpec(kind, params, dict(entry.get("attrs", {})), act))
        except KeyError as exc:
            raise NetworkError(f"{where}: layer {i} is missing tensor {exc}") from None
    return layers


def load_manifest(path) -> tuple[dict, bytes]:
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise NetworkError(f"{mpath}: no such manifest") from None
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{mpath}: invalid JSON ({exc})") from exc
    blob = (mpath.parent / "weights.bin").read_bytes()
    return manifest, blob


def load_network(path) -> NetworkSpec:
    manifest, blob = load_manifest(path)
    layers = _read_layers(manifest, blob, Path(path))
    try:
        return NetworkSpec(
            tuple(layers), tuple(manifest["input_shape"]), int(manifest["class_count"]), manifest.get("metadata", {})
        )
    except KeyError as exc:
        raise NetworkError(f"{path}: layer is missing parameter {exc}") from None


# ---------------------------------------------------------------------------
# MLP training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.05
    epochs: int = 5
    batch: int = 64
    seed: int = 0
    momentum: float = 0.9


def init_mlp(widths: Sequence[int], activation: str = "relu", seed: int = 0) -> NetworkSpec:
    """He-initialised dense stack; the output layer is linear."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_out, fan_in))
        last = i == len(widths) - 2
        layers.append(dense(w, np.zeros(fan_out), "identity" if last else activation))
    return NetworkSpec(tuple(layers), (widths[0],), widths[-1])


def _act_grad(kind, z):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "silu":
        s = ActivationFunction("sigmoid")(z)
        return s * (1 + z * (1 - s))
    if kind == "sigmoid":
        s = ActivationFunction("sigmoid")(z)
        return s * (1 - s)
    return np.ones_like(z)


def train_mlp(
    train_x,
    train_y,
    widths: Sequence[int],
    hyper: TrainHyper = TrainHyper(),
    activation: str = "relu",
    test_x=None,
    test_y=None,
) -> NetworkSpec:
    """Minibatch SGD with momentum on softmax cross-entropy.

    A single output unit switches to logistic loss on 0/1 labels.  The
    returned network records ``train_accuracy`` (and ``test_accuracy`` if a
    test set is given) in its metadata.
    """
    if activation not in ("relu", "silu"):
        raise NetworkError(f"train_mlp supports relu or silu hidden units, got {activation!r}")
    x = np.asarray(train_x, dtype=np.float64).reshape(len(train_x), -1)
    y = np.asarray(train_y, dtype=np.int64)
    if x.shape[1] != widths[0]:
        raise NetworkError(f"input width {x.shape[1]} does not match architecture {widths[0]}")
    net = init_mlp(widths, activation, hyper.seed)
    W = [l.params["weight"].copy() for l in net.layers]
    B = [l.params["bias"].copy() for l in net.layers]
    vW = [np.zeros_like(w) for w in W]
    vB = [np.zeros_like(b) for b in B]
    rng = np.random.default_rng(hyper.seed + 1)
    binary = widths[-1] == 1
    n = len(x)

    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch):
            idx = order[start : start + hyper.batch]
            xb, yb = x[idx], y[idx]
            acts, pres = [xb], []
            h = xb
            for li in range(len(W)):
                z = h @ W[li].T + B[li]
                pres.append(z)
                h = z if li == len(W) - 1 else ActivationFunction(activation)(z)
                acts.append(h)
            logits = acts[-1]
            m = len(idx)
            if binary:
                p = ActivationFunction("sigmoid")(logits[:, 0])
                total += -np.sum(yb * np.log(p + 1e-12) + (1 - yb) * np.log(1 - p + 1e-12))
                g = ((p - yb) / m)[:, None]
            else:
                shifted = logits - logits.max(axis=1, keepdims=True)
                e = np.exp(shifted)
                p = e / e.sum(axis=1, keepdims=True)
                total += -np.sum(np.log(p[np.arange(m), yb] + 1e-12))
                g = p
                g[np.arange(m), yb] -= 1.0
                g /= m
            for li in range(len(W) - 1, -1, -1):
                gW = g.T @ acts[li]
                gB = g.sum(axis=0)
                if li > 0:
                    g = (g @ W[li]) * _act_grad(activation, pres[li - 1])
                vW[li] = hyper.momentum * vW[li] - hyper.lr * gW
                vB[li] = hyper.momentum * vB[li] - hyper.lr * gB
                W[li] += vW[li]
                B[li] += vB[li]
        mean_loss = total / n
        finite = all(np.all(np.isfinite(w)) for w in W) and all(np.all(np.isfinite(b)) for b in B)
        if not math.isfinite(mean_loss) or not finite:
            raise TrainingError(f"training diverged in epoch {epoch + 1}: loss {mean_loss}")
        log.info("epoch %d: loss %.4f", epoch + 1, mean_loss)

    layers = tuple(
        dense(w, b, "identity" if li == len(W) - 1 else activation) for li, (w, b) in enumerate(zip(W, B))
    )
    trained = NetworkSpec(layers, (widths[0],), widths[-1])
    meta = {
        "widths": list(widths),
        "activation": activation,
        "hyper": {"lr": hyper.lr, "epochs": hyper.epochs, "batch": hyper.batch, "seed": hyper.seed, "momentum": hyper.momentum},
        "train_accuracy": accuracy(trained, x, y),
    }
    if test_x is not None:
        tx = np.asarray(test_x, dtype=np.float64).reshape(len(test_x), -1)
        meta["test_accuracy"] = accuracy(trained, tx, test_y)
    return NetworkSpec(layers, (widths[0],), widths[-1], meta)
