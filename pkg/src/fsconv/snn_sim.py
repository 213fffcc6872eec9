"""Time-stepped execution of converted networks.

Between activation layers the simulator transports decoded values
``sum_t d(t) z(t)`` per presynaptic neuron rather than individual spike
events.  Decoding is linear, so this is exact; the event-exact mode keeps
per-step spike lists, rebuilds the same sums from them and must agree
bit for bit.  Only activation-layer spikes are counted.

Pipelined timing: every stage alternates K collecting steps and K firing
steps in lockstep with all other stages, so each stage handles one image
per ``2K`` steps.  Image ``i`` enters at step ``2K*i`` and its logits are
available at step ``2K*(i + L)`` for ``L`` activation stages.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .converter import SnnSpec
from .fs_core import FsParams, fs_simulate_batch
from .nn_model import ActivationFunction, NetworkSpec, affine_forward, forward


class SimulationError(ValueError):
    pass


@dataclass
class SpikeAccounting:
    """Spike totals.  ``neurons`` is the activation-neuron count of one image."""

    neurons: int
    images: int = 0
    per_layer_spikes: dict = field(default_factory=dict)

    @property
    def total_spikes(self) -> int:
        return int(sum(self.per_layer_spikes.values()))

    @property
    def spikes_per_image(self) -> float:
        return self.total_spikes / self.images if self.images else 0.0

    @property
    def spikes_per_neuron(self) -> float:
        denom = self.neurons * self.images
        return self.total_spikes / denom if denom else 0.0

    def add(self, layer: int, count: int) -> None:
        self.per_layer_spikes[layer] = self.per_layer_spikes.get(layer, 0) + int(count)

    def merge(self, other: "SpikeAccounting") -> "SpikeAccounting":
        if other.neurons != self.neurons:
            raise SimulationError("cannot merge accounting of different networks")
        layers = {}
        for src in (self.per_layer_spikes, other.per_layer_spikes):
            for k, v in src.items():
                layers[k] = layers.get(k, 0) + v
        return SpikeAccounting(self.neurons, self.images + other.images, layers)

    def to_dict(self) -> dict:
        return {
            "total_spikes": self.total_spikes,
            "per_layer_spikes": {str(k): v for k, v in sorted(self.per_layer_spikes.items())},
            "neurons": self.neurons,
            "images": self.images,
            "spikes_per_image": self.spikes_per_image,
            "spikes_per_neuron": self.spikes_per_neuron,
        }


def _as_batch(snn: SnnSpec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == snn.input_shape:
        return x[None], True
    if x.shape[1:] != snn.input_shape:
        raise SimulationError(f"input shape {x.shape} does not match network input {snn.input_shape}")
    return x, False


def _linear_part(layer, h, outputs, net_input):
    if layer.kind == "residual_add":
        src = layer.attrs["source"]
        return h + (net_input if src == -1 else outputs[src])
    return affine_forward(layer, h)


def _fire_events(x, params: FsParams, stage_len: int):
    """Run the FS dynamics step by step, returning per-step spike index arrays.

    Steps beyond ``params.num_steps`` (mixed-K padding) are idle.
    """
    flat = x.reshape(-1)
    v = flat.copy()
    events = []
    for t in range(stage_len):
        if t >= params.num_steps:
            events.append(np.empty(0, dtype=np.int64))
            continue
        z = v >= params.thresholds[t]
        v = np.where(z, v - params.resets[t], v)
        events.append(np.flatnonzero(z))
    return events


def _collect(events, params: FsParams, size: int):
    """Rebuild decoded values from spike events, accumulating in step order."""
    acc = np.zeros(size)
    for t, idx in enumerate(events):
        if idx.size:
            acc[idx] = acc[idx] + params.output_weights[t]
    return acc


def run_batch(snn: SnnSpec, x, event_exact: bool = False, trace=None, record_layers: bool = False):
    """Simulate a batch layer by layer.  Returns ``(logits, accounting[, layer_outputs])``.

    ``trace``, if given, is a list that receives
    ``(global_step, layer, neuron_index)`` rows for every spike; global steps
    follow the pipelined schedule of image 0 of the batch.
    """
    h, single = _as_batch(snn, x)
    net_input = h
    acc = SpikeAccounting(snn.neuron_count(), len(h))
    outputs = []
    act_outputs = {}
    K = snn.stage_length()
    stage = 0
    for i, layer in enumerate(snn.layers):
        z = _linear_part(layer, h, outputs, net_input)
        params = snn.layer_params(i)
        if params is None:
            h = z
        elif not event_exact:
            values, spikes = fs_simulate_batch(z, params)
            acc.add(i, spikes.sum(dtype=np.int64))
            h = values
        else:
            decoded = np.empty_like(z)
            count = 0
            for b in range(len(z)):
                events = _fire_events(z[b], params, K)
                count += sum(e.size for e in events)
                if trace is not None and b == 0:
                    base = 2 * K * stage + K
                    for t, idx in enumerate(events):
                        trace.extend((base + t, i, int(j)) for j in idx)
                decoded[b] = _collect(events, params, z[b].size).reshape(z[b].shape)
            acc.add(i, count)
            h = decoded
        if params is not None:
            stage += 1
            if record_layers:
                act_outputs[i] = h
        outputs.append(h)
    logits = h.reshape(len(h), -1)
    if single:
        logits = logits[0]
    if record_layers:
        return logits, acc, act_outputs
    return logits, acc


def run_single(snn: SnnSpec, x, event_exact: bool = False, trace=None):
    """Simulate one input of shape ``snn.input_shape``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != snn.input_shape:
        raise SimulationError(f"input shape {x.shape} does not match network input {snn.input_shape}")
    return run_batch(snn, x, event_exact=event_exact, trace=trace)


def evaluate(snn: SnnSpec, x, batch_size: int = 1000):
    """Batched logits and merged accounting for a whole dataset array."""
    x = np.asarray(x, dtype=np.float64)
    logits = []
    total = SpikeAccounting(snn.neuron_count(), 0)
    for start in range(0, len(x), batch_size):
        out, acc = run_batch(snn, x[start : start + batch_size])
        logits.append(out)
        total = total.merge(acc)
    return np.concatenate(logits), total


def _predict(logits):
    if logits.shape[1] == 1:
        return (logits[:, 0] > 0).astype(np.int64)
    return logits.argmax(axis=1)


# ---------------------------------------------------------------------------
# pipelined execution
# ---------------------------------------------------------------------------


@dataclass
class ThroughputReport:
    images: int
    stage_length: int
    cadence_steps: int
    latency_steps: int
    activation_stages: int
    entry_steps: list
    output_steps: list
    total_steps: int

    def to_dict(self) -> dict:
        intervals = np.diff(self.output_steps).tolist() if len(self.output_steps) > 1 else []
        return {
            "images": self.images,
            "K": self.stage_length,
            "cadence_steps": self.cadence_steps,
            "latency_steps": self.latency_steps,
            "activation_stages": self.activation_stages,
            "entry_steps": self.entry_steps,
            "output_steps": self.output_steps,
            "output_intervals": intervals,
            "total_steps": self.total_steps,
            "images_per_2k_steps": (self.images * self.cadence_steps / self.total_steps) if self.total_steps else 0.0,
        }


@dataclass
class _Stage:
    layer: int  # index of the activation layer
    first: int  # first layer index whose linear part is computed by this stage
    params: FsParams


def _stages(snn: SnnSpec) -> tuple[list[_Stage], int]:
    stages = []
    first = 0
    for i in snn.activation_layers():
        stages.append(_Stage(i, first, snn.layer_params(i)))
        first = i + 1
    return stages, first


def run_pipelined(snn: SnnSpec, inputs, allow_mixed_k: bool = False, trace=None):
    """Step-accurate pipelined simulation of a stream of inputs.

    Returns ``(logits array, accounting, ThroughputReport)``.  Each row of the
    logits equals :func:`run_single` on the same input, bit for bit.
    """
    xs = np.asarray(inputs, dtype=np.float64)
    if xs.shape == snn.input_shape:
        xs = xs[None]
    if xs.shape[1:] != snn.input_shape:
        raise SimulationError(f"input shape {xs.shape[1:]} does not match network input {snn.input_shape}")
    if snn.is_mixed_k() and not allow_mixed_k:
        raise SimulationError(
            f"activation layers use different K {sorted(set(snn.k_by_kind.values()))}; pass allow_mixed_k to pad"
        )
    n = len(xs)
    K = snn.stage_length()
    period = 2 * K
    stages, tail_first = _stages(snn)
    L = len(stages)
    acc = SpikeAccounting(snn.neuron_count(), n)

    # per-image layer outputs (decoded), needed for residual sources
    outputs = [[None] * len(snn.layers) for _ in range(n)]
    # stage s: image currently firing, its potentials, spike events so far
    firing = [None] * L
    # transfer registers: events emitted by stage s for image i, consumed by stage s+1
    transfer: dict = {}
    collected: dict = {}
    results = [None] * n
    output_steps = [None] * n

    def linear_chain(img, first, last, h):
        for j in range(first, last + 1):
            layer = snn.layers[j]
            z = _linear_part(layer, h, outputs[img], xs[img][None])
            if j < last:
                outputs[img][j] = z
            h = z
        return h

    total_steps = period * (n - 1 + L) if n else 0
    if L == 0:
        total_steps = period * (n - 1) if n else 0
    for g in range(total_steps + 1):
        slot, phase = divmod(g, period)
        # outputs become available at slot boundaries
        if phase == 0:
            i = slot - L
            if 0 <= i < n and results[i] is None:
                h = xs[i][None] if L == 0 else collected.pop(("out", i))
                first = tail_first
                if first < len(snn.layers):
                    h = linear_chain(i, first, len(snn.layers) - 1, h)
                    outputs[i][len(snn.layers) - 1] = h
                results[i] = h.reshape(-1)
                output_steps[i] = g
        if g == total_steps:
            break
        for s, st in enumerate(stages):
            i = slot - s
            if not 0 <= i < n:
                continue
            if phase < K:
                # collecting: consume upstream events of firing step `phase`
                key = (s, i)
                if s == 0:
                    if phase == 0:
                        collected[key] = xs[i][None]
                else:
                    up = stages[s - 1]
                    events = transfer[(s - 1, i)]
                    buf = collected.setdefault(key, np.zeros(outputs_shape(snn, up.layer)))
                    idx = events[phase]
                    if idx.size:
                        flat = buf.reshape(-1)
                        flat[idx] = flat[idx] + up.params.output_weights[phase]
                if phase == K - 1:
                    h = collected.pop(key)
                    if s > 0:
                        outputs[i][stages[s - 1].layer] = h
                    x = linear_chain(i, st.first, st.layer, h)
                    firing[s] = {"img": i, "v": x.reshape(-1).copy(), "events": [], "shape": x.shape}
            else:
                t = phase - K
                state = firing[s]
                p = st.params
                if t < p.num_steps:
                    z = state["v"] >= p.thresholds[t]
                    state["v"] = np.where(z, state["v"] - p.resets[t], state["v"])
                    idx = np.flatnonzero(z)
                else:
                    idx = np.empty(0, dtype=np.int64)
                state["events"].append(idx)
                acc.add(st.layer, idx.size)
                if trace is not None:
                    trace.extend((g, st.layer, int(j)) for j in idx)
                if t == K - 1:
                    if s + 1 < L:
                        transfer[(s, i)] = state["events"]
                    else:
                        decoded = _collect(state["events"], p, state["v"].size).reshape(state["shape"])
                        outputs[i][st.layer] = decoded
                        collected[("out", i)] = decoded
                    firing[s] = None
            # drop transfer registers once consumed
            if s > 0 and phase == K - 1:
                transfer.pop((s - 1, i), None)

    logits = np.stack(results) if n else np.empty((0, snn.class_count))
    report = ThroughputReport(
        images=n,
        stage_length=K,
        cadence_steps=period,
        latency_steps=period * L,
        activation_stages=L,
        entry_steps=[period * i for i in range(n)],
        output_steps=output_steps,
        total_steps=total_steps,
    )
    return logits, acc, report


def outputs_shape(snn: SnnSpec, layer: int) -> tuple:
    return (1,) + snn.as_network().output_shapes()[layer]


# ---------------------------------------------------------------------------
# parity against the source ANN
# ---------------------------------------------------------------------------


def compare_with_ann(net: NetworkSpec, snn: SnnSpec, inputs, labels=None, tolerance: float = math.inf, batch_size: int = 1000) -> dict:
    """ANN vs SNN on the same inputs.  Returns a JSON-ready dict."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape == net.input_shape:
        x = x[None]
    ann_logits, snn_logits = [], []
    layer_delta: dict = {}
    saturated = {}
    counts = {}
    acc_total = SpikeAccounting(snn.neuron_count(), 0)
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        a_logits, pre = forward(net, xb, record_preactivations=True)
        s_logits, acc, s_layers = run_batch(snn, xb, record_layers=True)
        acc_total = acc_total.merge(acc)
        ann_logits.append(a_logits)
        snn_logits.append(s_logits)
        for i, z in pre.items():
            ann_out = ActivationFunction(net.layers[i].activation)(z)
            d = float(np.max(np.abs(ann_out - s_layers[i]))) if z.size else 0.0
            layer_delta[i] = max(layer_delta.get(i, 0.0), d)
            if i in snn.alpha:
                saturated[i] = saturated.get(i, 0) + int(np.sum(z >= snn.alpha[i]))
                counts[i] = counts.get(i, 0) + z.size
    ann_logits = np.concatenate(ann_logits)
    snn_logits = np.concatenate(snn_logits)
    max_delta = float(np.max(np.abs(ann_logits - snn_logits))) if len(x) else 0.0
    report = {
        "images": int(len(x)),
        "max_abs_logit_delta": max_delta,
        "within_tolerance": bool(max_delta <= tolerance),
        "per_layer_max_abs_delta": {str(k): v for k, v in sorted(layer_delta.items())},
        "prediction_agreement": float(np.mean(_predict(ann_logits) == _predict(snn_logits))) if len(x) else 1.0,
        "saturation_rate": {str(k): saturated[k] / counts[k] for k in sorted(saturated)},
        "spikes": acc_total.to_dict(),
    }
    if labels is not None:
        labels = np.asarray(labels)
        report["ann_accuracy"] = float(np.mean(_predict(ann_logits) == labels))
        report["snn_accuracy"] = float(np.mean(_predict(snn_logits) == labels))
        report["accuracy_delta_pp"] = 100.0 * (report["snn_accuracy"] - report["ann_accuracy"])
    return report


# ---------------------------------------------------------------------------
# CSV dumps
# ---------------------------------------------------------------------------


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["global_step", "layer", "neuron_index", "spike"])
    for g, layer, j in sorted(rows):
        w.writerow([g, layer, j, 1])
    return buf.getvalue()


def neuron_trace(x: float, params: FsParams) -> list[dict]:
    """Per-step ``(t, v, T, z)`` of a single FS-neuron for input ``x``."""
    values, spikes, v = fs_simulate_batch(np.array([x]), params, return_trace=True)
    return [
        {"t": t + 1, "v": float(v[0, t]), "threshold": float(params.thresholds[t]), "z": int(spikes[0, t])}
        for t in range(params.num_steps)
    ]
