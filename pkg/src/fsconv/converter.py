"""ANN -> FS-SNN conversion.

Conversion keeps every weight and connection of the source network.  What
changes is how each activation is evaluated: all neurons sharing an
activation kind share one set of FS parameters, and ReLU layers get the
binary coder scaled by a per-layer ``alpha``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .fs_core import FsParams, FsParamsError, make_relu_params
from .nn_model import LayerSpec, NetworkSpec, load_manifest, _read_layers, network_manifest, _atomic_write


class ConversionError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalFixed:
    alpha: float = 25.0


@dataclass(frozen=True)
class PerLayerMax:
    safety: float = 1.1


def calibrate_alpha(stats: dict, policy, layers=None) -> dict:
    """Per-layer ``alpha`` for ReLU layers.

    ``stats`` is the output of :func:`fsconv.nn_model.activation_stats`.
    ``layers`` restricts the result to the given layer indices (all layers
    in ``stats`` by default).
    """
    wanted = sorted(stats) if layers is None else list(layers)
    if isinstance(policy, GlobalFixed):
        if not policy.alpha > 0:
            raise ConversionError(f"alpha must be positive, got {policy.alpha}")
        return {i: float(policy.alpha) for i in wanted}
    if isinstance(policy, PerLayerMax):
        out = {}
        for i in wanted:
            if i not in stats:
                raise ConversionError(f"per_layer_max needs activation statistics for layer {i}")
            peak = stats[i].max
            # a layer that never goes positive still needs a valid coder
            out[i] = float(policy.safety * peak) if peak > 0 else 1.0
        return out
    raise ConversionError(f"unknown alpha policy {policy!r}")


@dataclass(frozen=True, eq=False)
class SnnSpec:
    layers: tuple
    input_shape: tuple
    class_count: int
    fs_table: dict
    alpha: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def k_by_kind(self) -> dict:
        return {kind: p.num_steps for kind, p in self.fs_table.items()}

    def layer_params(self, index: int) -> FsParams | None:
        """FS parameters used by layer ``index``; None for identity layers."""
        kind = self.layers[index].activation
        if kind == "identity":
            return None
        if kind == "relu" and index in self.alpha:
            return make_relu_params(self.fs_table["relu"].num_steps, self.alpha[index])
        return self.fs_table[kind]

    def activation_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.activation != "identity"]

    def stage_length(self) -> int:
        ks = [self.layer_params(i).num_steps for i in self.activation_layers()]
        return max(ks) if ks else max(self.k_by_kind.values(), default=1)

    def is_mixed_k(self) -> bool:
        return len({self.layer_params(i).num_steps for i in self.activation_layers()}) > 1

    def as_network(self) -> NetworkSpec:
        return NetworkSpec(self.layers, self.input_shape, self.class_count)

    def num_parameters(self) -> int:
        return sum(layer.num_parameters() for layer in self.layers)

    def neuron_count(self) -> int:
        return self.as_network().activation_neurons()


def convert(net: NetworkSpec, fs_table: dict, alpha_policy=None) -> SnnSpec:
    """Bind FS parameters to every activation layer of ``net``.

    ``alpha_policy`` may be None (ReLU layers use ``fs_table['relu']`` as is),
    a :class:`GlobalFixed`, or a ``{layer_index: alpha}`` mapping such as the
    output of :func:`calibrate_alpha`.
    """
    for i, layer in enumerate(net.layers):
        if layer.kind == "batchnorm":
            raise ConversionError(f"layer {i} is a batchnorm; run fold_batchnorm first")
    for kind in sorted(net.activation_kinds()):
        if kind not in fs_table:
            raise ConversionError(f"no FS parameters for activation: {kind}")
    relu_layers = [i for i, layer in enumerate(net.layers) if layer.activation == "relu"]
    if alpha_policy is None:
        alpha = {}
    elif isinstance(alpha_policy, GlobalFixed):
        alpha = {i: float(alpha_policy.alpha) for i in relu_layers}
    elif isinstance(alpha_policy, dict):
        missing = [i for i in relu_layers if i not in alpha_policy]
        if missing:
            raise ConversionError(f"no alpha for ReLU layer(s) {missing}")
        alpha = {i: float(alpha_policy[i]) for i in relu_layers}
    else:
        raise ConversionError(f"unsupported alpha policy {alpha_policy!r}")
    for i, a in alpha.items():
        if not a > 0:
            raise ConversionError(f"alpha for layer {i} must be positive, got {a}")
    used = {k: fs_table[k] for k in sorted(net.activation_kinds())}
    snn = SnnSpec(net.layers, net.input_shape, net.class_count, used, alpha, dict(net.metadata))
    if snn.num_parameters() != net.num_parameters():
        raise ConversionError("conversion changed the parameter count")
    return snn


# ---------------------------------------------------------------------------
# linear-layer collapsing
# ---------------------------------------------------------------------------


def _is_pointwise_conv(layer: LayerSpec) -> bool:
    return (
        layer.kind == "conv2d"
        and layer.params["weight"].shape[2:] == (1, 1)
        and layer.attrs.get("stride", 1) == 1
    )


def _fuse(first: LayerSpec, second: LayerSpec):
    """Compose two affine layers, ``first`` linear.  None when not composable."""
    w1, b1 = first.params["weight"], first.params["bias"]
    w2, b2 = second.params["weight"], second.params["bias"]
    if first.kind == "dense" and second.kind == "dense":
        return replace(second, params={"weight": w2 @ w1, "bias": w2 @ b1 + b2})
    if first.kind == "conv2d" and _is_pointwise_conv(second):
        m = w2[:, :, 0, 0]
        w = np.einsum("om,mikl->oikl", m, w1)
        return replace(first, params={"weight": w, "bias": m @ b1 + b2}, activation=second.activation)
    return None


def collapse_linear(net: NetworkSpec) -> NetworkSpec:
    """Merge each identity-activation affine layer into the affine layer after it.

    Pairs that cannot be composed (or whose intermediate output feeds a
    residual connection) are left alone and listed in
    ``metadata['collapse_report']``.
    """
    layers = list(net.layers)
    referenced = {l.attrs["source"] for l in layers if l.kind == "residual_add"}
    out: list[LayerSpec] = []
    index_map = {-1: -1}
    report = []
    for i, layer in enumerate(layers):
        if layer.kind == "residual_add":
            layer = replace(layer, attrs={**layer.attrs, "source": index_map[layer.attrs["source"]]})
        prev_orig = i - 1
        if (
            out
            and layer.is_affine
            and out[-1].is_affine
            and out[-1].activation == "identity"
            and prev_orig >= 0
            and index_map.get(prev_orig) == len(out) - 1
        ):
            if prev_orig in referenced:
                report.append({"layers": [prev_orig, i], "reason": "intermediate output feeds a residual_add"})
            else:
                fused = _fuse(out[-1], layer)
                if fused is not None:
                    out[-1] = fused
                    index_map[i] = len(out) - 1
                    continue
                report.append(
                    {"layers": [prev_orig, i], "reason": f"cannot compose {out[-1].kind} with {layer.kind}"}
                )
        out.append(layer)
        index_map[i] = len(out) - 1
    meta = dict(net.metadata)
    meta["collapse_report"] = report
    return NetworkSpec(tuple(out), net.input_shape, net.class_count, meta)


# ---------------------------------------------------------------------------
# serialization: network manifest + fs_table + alpha
# ---------------------------------------------------------------------------


def save_snn(snn: SnnSpec, path, dtype: str = "f64") -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest, blob = network_manifest(snn.as_network(), dtype)
    manifest["format"] = "fsconv-snn"
    manifest["metadata"] = snn.metadata
    manifest["fs_table"] = {k: p.to_dict() for k, p in snn.fs_table.items()}
    manifest["alpha"] = {str(i): a for i, a in sorted(snn.alpha.items())}
    _atomic_write(path / "weights.bin", blob)
    _atomic_write(path / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())


def load_snn(path) -> SnnSpec:
    manifest, blob = load_manifest(path)
    if "fs_table" not in manifest:
        raise ConversionError(f"{path}: manifest has no fs_table; not a converted network")
    layers = _read_layers(manifest, blob, Path(path))
    try:
        table = {k: FsParams.from_dict(v) for k, v in manifest["fs_table"].items()}
    except FsParamsError as exc:
        raise ConversionError(f"{path}: bad fs_table entry: {exc}") from exc
    alpha = {int(k): float(v) for k, v in manifest.get("alpha", {}).items()}
    net = NetworkSpec(tuple(layers), tuple(manifest["input_shape"]), int(manifest["class_count"]))
    for kind in net.activation_kinds():
        if kind not in table:
            raise ConversionError(f"{path}: no FS parameters for activation: {kind}")
    return SnnSpec(net.layers, net.input_shape, net.class_count, table, alpha, manifest.get("metadata", {}))
