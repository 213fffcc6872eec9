"""Train a small MNIST MLP, convert it, and compare ANN and SNN.

Needs the four IDX files in $MNIST_DIR (default /root/data/mnist).
Run:  python demos/04_mnist_conversion.py
"""

import os

import numpy as np

from fsconv import make_relu_params
from fsconv.converter import PerLayerMax, calibrate_alpha, convert
from fsconv.datasets import mnist_split
from fsconv.nn_model import TrainHyper, activation_stats, train_mlp
from fsconv.snn_sim import compare_with_ann, run_pipelined

root = os.environ.get("MNIST_DIR", "/root/data/mnist")
train, test = mnist_split(root, "train"), mnist_split(root, "test")
net = train_mlp(train.flat(), train.labels, [784, 128, 128, 10], TrainHyper(epochs=2))

alpha = calibrate_alpha(activation_stats(net, train.flat()[:1000]), PerLayerMax(1.1))
print("per-layer alpha:", {k: round(v, 2) for k, v in alpha.items()})

x, y = test.flat()[:2000], test.labels[:2000]
for k in (2, 4, 6, 10):
    snn = convert(net, {"relu": make_relu_params(k, 1.0)}, alpha)
    rep = compare_with_ann(net, snn, x, y)
    print(f"K={k:2d}  ANN {rep['ann_accuracy']:.4f}  SNN {rep['snn_accuracy']:.4f}  "
          f"spikes/neuron {rep['spikes']['spikes_per_neuron']:.2f}")

# pipelined: a new image every 2K steps once the pipe is full
logits, _, report = run_pipelined(snn, x[:8])
print("\noutput steps:", report.output_steps)
print("cadence", report.cadence_steps, "steps; first image out after", report.latency_steps, "steps")
print("predictions", np.argmax(logits, axis=1), "labels", y[:8])
