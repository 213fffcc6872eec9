"""Random network builders and an independent loop-based evaluator."""

import numpy as np

from fsconv.nn_model import NetworkSpec, avgpool2d, batchnorm, conv2d, dense, flatten, residual_add


def random_bn(rng, c, activation="identity"):
    return batchnorm(
        rng.uniform(0.5, 2, c), rng.normal(size=c), rng.normal(size=c), rng.uniform(0.2, 3, c), activation=activation
    )


def random_mlp(rng, widths, activation="relu", scale=1.0):
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        w = rng.normal(0, scale / np.sqrt(a), (b, a))
        layers.append(dense(w, rng.normal(0, 0.1, b), "identity" if last else activation))
    return NetworkSpec(tuple(layers), (widths[0],), widths[-1])


def random_bn_net(rng):
    """A conv or dense net with a batchnorm after every affine layer."""
    if rng.random() < 0.5:
        widths = [int(rng.integers(2, 9)) for _ in range(int(rng.integers(2, 5)))]
        layers = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            act = "identity" if i == len(widths) - 2 else str(rng.choice(["relu", "silu"]))
            layers += [dense(rng.normal(size=(b, a)), rng.normal(size=b)), random_bn(rng, b, act)]
        return NetworkSpec(tuple(layers), (widths[0],), widths[-1])
    c_in, c1, c2 = (int(v) for v in rng.integers(1, 4, 3))
    pad = str(rng.choice(["same", "valid"]))
    size = 6 if pad == "same" else 4
    layers = [
        conv2d(rng.normal(size=(c1, c_in, 3, 3)), rng.normal(size=c1), 1, pad),
        random_bn(rng, c1, "relu"),
        conv2d(rng.normal(size=(c2, c1, 1, 1)), rng.normal(size=c2)),
        random_bn(rng, c2),
        flatten(),
        dense(rng.normal(size=(3, c2 * size * size)), rng.normal(size=3)),
    ]
    return NetworkSpec(tuple(layers), (c_in, 6, 6), 3)


def random_linear_chain_net(rng):
    """Affine layers with identity activations sandwiched between nonlinear ones."""
    if rng.random() < 0.5:
        w = [int(rng.integers(2, 10)) for _ in range(5)]
        acts = ["relu", "identity", "identity", "silu"]
        layers = [dense(rng.normal(size=(b, a)), rng.normal(size=b), act) for a, b, act in zip(w[:-1], w[1:], acts)]
        layers.append(dense(rng.normal(size=(2, w[-1])), rng.normal(size=2)))
        return NetworkSpec(tuple(layers), (w[0],), 2)
    c0, c1, c2, c3 = (int(v) for v in rng.integers(1, 5, 4))
    layers = [
        conv2d(rng.normal(size=(c1, c0, 3, 3)), rng.normal(size=c1), 1, "same", "relu"),
        conv2d(rng.normal(size=(c2, c1, 3, 3)), rng.normal(size=c2), 1, "same"),
        conv2d(rng.normal(size=(c3, c2, 1, 1)), rng.normal(size=c3), 1, "valid", "relu"),
        avgpool2d(2),
        flatten(),
        dense(rng.normal(size=(4, c3 * 4)), rng.normal(size=4)),
    ]
    return NetworkSpec(tuple(layers), (c0, 4, 4), 4)


def naive_forward(net, x):
    """Scalar-loop reference forward pass for dense/conv2d/pool/flatten/residual nets."""
    h = np.array(x, dtype=float)
    outs = []
    for layer in net.layers:
        p = layer.params
        if layer.kind == "dense":
            w, b = p["weight"], p["bias"]
            z = np.zeros(w.shape[0])
            for o in range(w.shape[0]):
                s = b[o]
                for i in range(w.shape[1]):
                    s += w[o, i] * h[i]
                z[o] = s
        elif layer.kind == "conv2d":
            w, b = p["weight"], p["bias"]
            stride, pad = layer.attrs["stride"], layer.attrs["padding"]
            oc, ic, kh, kw = w.shape
            _, H, W = h.shape
            if pad == "same":
                oh, ow = -(-H // stride), -(-W // stride)
                ph = max((oh - 1) * stride + kh - H, 0)
                pw = max((ow - 1) * stride + kw - W, 0)
                top, left = ph // 2, pw // 2
            else:
                oh, ow = (H - kh) // stride + 1, (W - kw) // stride + 1
                top = left = 0
            z = np.zeros((oc, oh, ow))
            for o in range(oc):
                for r in range(oh):
                    for c in range(ow):
                        s = b[o]
                        for ch in range(ic):
                            for i in range(kh):
                                for j in range(kw):
                                    rr, cc = r * stride + i - top, c * stride + j - left
                                    if 0 <= rr < H and 0 <= cc < W:
                                        s += w[o, ch, i, j] * h[ch, rr, cc]
                        z[o, r, c] = s
        elif layer.kind == "avgpool2d":
            k = layer.attrs["pool"]
            C, H, W = h.shape
            z = np.zeros((C, H // k, W // k))
            for ch in range(C):
                for r in range(H // k):
                    for c in range(W // k):
                        z[ch, r, c] = sum(h[ch, r * k + i, c * k + j] for i in range(k) for j in range(k)) / (k * k)
        elif layer.kind == "flatten":
            z = h.reshape(-1)
        elif layer.kind == "residual_add":
            src = layer.attrs["source"]
            z = h + (np.array(x, dtype=float) if src == -1 else outs[src])
        else:
            raise ValueError(layer.kind)
        a = layer.activation
        if a == "relu":
            z = np.where(z > 0, z, 0.0)
        elif a == "silu":
            z = z / (1 + np.exp(-z))
        elif a == "sigmoid":
            z = 1 / (1 + np.exp(-z))
        outs.append(z)
        h = z
    return h.reshape(-1)


def random_stream_net(rng, activation="relu"):
    """Small conv+residual or dense net with two or three activation stages."""
    if rng.random() < 0.5:
        layers = (
            conv2d(rng.normal(size=(3, 1, 3, 3)), rng.normal(size=3), 1, "same", activation),
            conv2d(rng.normal(size=(3, 3, 3, 3)) * 0.3, rng.normal(size=3) * 0.1, 1, "same"),
            residual_add(0, activation),
            avgpool2d(2),
            flatten(),
            dense(rng.normal(size=(6, 18)) * 0.3, rng.normal(size=6), activation),
            dense(rng.normal(size=(3, 6)), rng.normal(size=3)),
        )
        return NetworkSpec(layers, (1, 4, 6), 3)
    widths = [int(rng.integers(2, 8)) for _ in range(int(rng.integers(3, 5)))]
    return random_mlp(rng, widths + [3], activation)
