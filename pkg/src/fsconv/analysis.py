"""Sweeps and profiles producing flat tables (lists of dicts) and CSV files."""

from __future__ import annotations

import csv
import io
import os
from pathlib import Path

import numpy as np

from .converter import GlobalFixed, PerLayerMax, calibrate_alpha, convert
from .fit import FitConfig, sweep_k, sweep_q
from .fs_core import FsParams, approximation_mse, fs_simulate_batch, make_relu_params, spike_count_profile
from .nn_model import NetworkSpec, activation_stats, predict
from .snn_sim import _predict, evaluate

HEADERS = {
    "spikes_vs_x": ["x", "spike_count", "value"],
    "mse_vs_k": ["k", "region", "mse"],
    "mse_vs_q": ["q", "region", "mse"],
    "accuracy_vs_k": ["k", "ann_accuracy", "snn_accuracy", "spikes_per_neuron"],
}


def spikes_vs_x(params: FsParams, interval, n_samples: int = 1001) -> list[dict]:
    xs, counts = spike_count_profile(params, interval, n_samples)
    values, _ = fs_simulate_batch(xs, params)
    return [{"x": float(x), "spike_count": int(c), "value": float(v)} for x, c, v in zip(xs, counts, values)]


def mse_vs_k(target, k_values, cfg: FitConfig, regions=None) -> list[dict]:
    rows = []
    for row in sweep_k(target, k_values, cfg, regions):
        if not row.ok:
            rows.append({"k": row.key, "region": "error", "mse": float("nan")})
            continue
        for region, mse in row.mses.items():
            rows.append({"k": row.key, "region": region, "mse": mse})
    return rows


def mse_vs_q(params: FsParams, target, q_values, regions=None, n_samples: int = 10001) -> list[dict]:
    """MSE of the quantized parameters per Q and region; Q = 0 marks the unquantized row."""
    regions = regions or {"all": [(-8.0, 12.0)]}
    rows = []
    for name, pieces in regions.items():
        for lo, hi in pieces:
            if len(pieces) > 1:
                raise ValueError("mse_vs_q regions must be single intervals")
            rows.append({"q": 0, "region": name, "mse": approximation_mse(params, target, (lo, hi), n_samples)})
            for q, mse in sweep_q(params, target, q_values, (lo, hi), n_samples):
                rows.append({"q": q, "region": name, "mse": mse})
    return rows


def accuracy_vs_k(net: NetworkSpec, x, labels, k_values, alpha_policy=PerLayerMax(), calibration=None) -> list[dict]:
    """SNN test accuracy of the ReLU network ``net`` for each K."""
    labels = np.asarray(labels)
    ann_acc = float(np.mean(predict(net, x) == labels))
    if isinstance(alpha_policy, PerLayerMax):
        if calibration is None:
            raise ValueError("per_layer_max alpha needs a calibration batch")
        alpha = calibrate_alpha(activation_stats(net, calibration), alpha_policy)
    elif isinstance(alpha_policy, GlobalFixed):
        alpha = alpha_policy
    else:
        alpha = dict(alpha_policy)
    rows = []
    for k in k_values:
        snn = convert(net, {"relu": make_relu_params(int(k), 1.0)}, alpha)
        logits, acc = evaluate(snn, x)
        rows.append(
            {
                "k": int(k),
                "ann_accuracy": ann_acc,
                "snn_accuracy": float(np.mean(_predict(logits) == labels)),
                "spikes_per_neuron": acc.spikes_per_neuron,
            }
        )
    return rows


def to_csv(rows: list[dict], header: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row[k] for k in header})
    return buf.getvalue()


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
