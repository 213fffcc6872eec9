import numpy as np
import pytest

from fsconv.converter import GlobalFixed, convert
from fsconv.fs_core import fs_simulate_batch, make_relu_params, published_params, relu_closed_form
from fsconv.nn_model import NetworkSpec, dense
from fsconv.snn_sim import (
    SimulationError,
    SpikeAccounting,
    compare_with_ann,
    evaluate,
    neuron_trace,
    run_batch,
    run_pipelined,
    run_single,
    trace_csv,
)

from nets import random_mlp, random_stream_net


def relu_snn(net, k=10, alpha=8.0):
    return convert(net, {"relu": make_relu_params(k, 1.0)}, GlobalFixed(alpha))


def test_identity_network_passes_input(rng):
    net = NetworkSpec((dense(np.eye(4)),), (4,), 4)
    snn = convert(net, {})
    x = rng.normal(size=4)
    logits, acc = run_single(snn, x)
    assert np.array_equal(logits, x) and acc.total_spikes == 0


def test_single_relu_layer_logits(rng):
    w, b = rng.normal(size=(5, 3)), rng.normal(size=5)
    net = NetworkSpec((dense(w, b, "relu"),), (3,), 5)
    x = rng.normal(size=3)
    logits, _ = run_single(relu_snn(net, 10, 25.0), x)
    assert np.array_equal(logits, relu_closed_form(w @ x + b, 10, 25.0))


def test_shape_mismatch(rng):
    snn = relu_snn(random_mlp(rng, [3, 4, 2]))
    with pytest.raises(SimulationError):
        run_single(snn, np.zeros(4))
    with pytest.raises(SimulationError):
        run_pipelined(snn, np.zeros((2, 4)))


def test_event_exact_matches_decoded_transport(rng):
    for _ in range(10):
        net = random_stream_net(rng)
        snn = relu_snn(net, int(rng.integers(2, 12)), float(rng.uniform(2, 10)))
        x = rng.uniform(0, 1, size=(6,) + net.input_shape)
        a, acc_a = run_batch(snn, x)
        b, acc_b = run_batch(snn, x, event_exact=True)
        assert np.array_equal(a, b)
        assert acc_a.per_layer_spikes == acc_b.per_layer_spikes


def test_accounting_conservation(rng):
    net = random_mlp(rng, [4, 6, 5, 2])
    snn = relu_snn(net, 8, 4.0)
    x = rng.normal(size=(7, 4))
    _, acc = run_batch(snn, x)
    expected, h = {}, x
    for i, layer in enumerate(net.layers[:2]):
        z = h @ layer.params["weight"].T + layer.params["bias"]
        h, spikes = fs_simulate_batch(z, snn.layer_params(i))
        expected[i] = int(spikes.sum())
    assert acc.per_layer_spikes == expected
    assert acc.total_spikes == sum(expected.values())
    assert acc.spikes_per_neuron == pytest.approx(acc.total_spikes / (11 * 7))


def test_zero_input_zero_spikes():
    rng = np.random.default_rng(5)
    layers = (dense(rng.normal(size=(6, 4)), activation="relu"), dense(rng.normal(size=(3, 6)), activation="relu"), dense(rng.normal(size=(2, 3))))
    snn = relu_snn(NetworkSpec(layers, (4,), 2))
    _, acc = run_batch(snn, np.zeros((3, 4)))
    assert acc.total_spikes == 0


def test_accounting_merge_is_associative():
    a = SpikeAccounting(10, 2, {0: 5, 1: 3})
    b = SpikeAccounting(10, 1, {1: 4})
    c = SpikeAccounting(10, 3, {0: 1, 2: 9})
    left, right = a.merge(b).merge(c), a.merge(b.merge(c))
    assert left.per_layer_spikes == right.per_layer_spikes and left.images == right.images == 6
    with pytest.raises(SimulationError):
        a.merge(SpikeAccounting(11, 1))


def test_evaluate_batches_agree(rng):
    net = random_mlp(rng, [4, 5, 3])
    snn = relu_snn(net)
    x = rng.normal(size=(23, 4))
    whole, acc = run_batch(snn, x)
    parts, acc2 = evaluate(snn, x, batch_size=5)
    assert np.array_equal(whole, parts) and acc.total_spikes == acc2.total_spikes and acc2.images == 23


def test_pipelined_equals_sequential(rng):
    for n in range(1, 17):
        net = random_stream_net(rng, str(rng.choice(["relu", "silu"])))
        table = {"relu": make_relu_params(int(rng.integers(3, 11)), 1.0), "silu": published_params("silu")}
        snn = convert(net, {k: v for k, v in table.items() if k in net.activation_kinds()},
                      GlobalFixed(6.0) if "relu" in net.activation_kinds() else None)
        x = rng.uniform(-1, 1, size=(n,) + net.input_shape)
        logits, acc, _ = run_pipelined(snn, x)
        seq = np.stack([run_single(snn, xi)[0] for xi in x])
        assert np.array_equal(logits, seq)
        assert acc.total_spikes == run_batch(snn, x)[1].total_spikes


def test_schedule_three_stages_k10(rng):
    net = random_mlp(rng, [5, 6, 6, 6, 2])
    snn = relu_snn(net, 10)
    _, _, rep = run_pipelined(snn, rng.normal(size=(8, 5)))
    assert rep.activation_stages == 3
    assert rep.entry_steps == [20 * i for i in range(8)]
    assert rep.output_steps == [20 * (i + 3) for i in range(8)]
    assert rep.output_steps[-1] == 200
    assert set(np.diff(rep.output_steps)) == {20}
    assert rep.to_dict()["images_per_2k_steps"] == pytest.approx(8 * 20 / 200)


def test_silu_k16_cadence(rng):
    net = random_mlp(rng, [4, 5, 5, 2], activation="silu")
    snn = convert(net, {"silu": published_params("silu")})
    _, _, rep = run_pipelined(snn, rng.normal(size=(6, 4)))
    assert rep.cadence_steps == 32
    assert set(np.diff(rep.output_steps)) == {32}


def test_mixed_k_needs_flag(rng):
    layers = (
        dense(rng.normal(size=(5, 4)), activation="silu"),
        dense(rng.normal(size=(5, 5)), activation="sigmoid"),
        dense(rng.normal(size=(2, 5))),
    )
    net = NetworkSpec(layers, (4,), 2)
    snn = convert(net, {"silu": published_params("silu"), "sigmoid": published_params("sigmoid")})
    x = rng.normal(size=(4, 4))
    with pytest.raises(SimulationError, match="allow_mixed_k"):
        run_pipelined(snn, x)
    logits, _, rep = run_pipelined(snn, x, allow_mixed_k=True)
    assert rep.cadence_steps == 32
    assert np.array_equal(logits, np.stack([run_single(snn, xi)[0] for xi in x]))


def test_trace_rows_follow_schedule(rng):
    net = random_mlp(rng, [3, 4, 4, 2])
    snn = relu_snn(net, 6, 4.0)
    x = rng.uniform(0, 2, size=3)
    rows_seq, rows_pipe = [], []
    run_single(snn, x, event_exact=True, trace=rows_seq)
    run_pipelined(snn, x[None], trace=rows_pipe)
    assert sorted(rows_seq) == sorted(rows_pipe)
    csv = trace_csv(rows_seq).splitlines()
    assert csv[0] == "global_step,layer,neuron_index,spike"
    assert all(line.endswith(",1") for line in csv[1:])
    # layer 0 fires in steps K..2K-1, layer 1 in 3K..4K-1
    steps = {(layer, g) for g, layer, _ in rows_seq}
    assert all(6 <= g < 12 for layer, g in steps if layer == 0)
    assert all(18 <= g < 24 for layer, g in steps if layer == 1)


def test_neuron_trace_relu_example():
    rows = neuron_trace(5.0, make_relu_params(3, 8.0))
    assert [r["z"] for r in rows] == [1, 0, 1]
    assert [r["v"] for r in rows] == [5.0, 1.0, 1.0]
    assert [r["threshold"] for r in rows] == [4.0, 2.0, 1.0]


def test_neuron_trace_silu_reproducible():
    p = published_params("silu")
    rows = neuron_trace(-0.5, p)
    assert len(rows) == 16
    _, spikes = fs_simulate_batch(np.array([-0.5]), p)
    assert [r["z"] for r in rows] == spikes[0].tolist()


def test_compare_identity_net(rng):
    net = NetworkSpec((dense(np.eye(3)),), (3,), 3)
    rep = compare_with_ann(net, convert(net, {}), rng.normal(size=(4, 3)), labels=np.zeros(4, dtype=int))
    assert rep["max_abs_logit_delta"] == 0.0
    assert rep["ann_accuracy"] == rep["snn_accuracy"]
    assert rep["spikes"]["total_spikes"] == 0


def test_compare_single_relu_layer_bound(rng):
    k, alpha = 8, 16.0
    net = NetworkSpec((dense(rng.normal(size=(6, 4)), rng.normal(size=6), "relu"),), (4,), 6)
    rep = compare_with_ann(net, relu_snn(net, k, alpha), rng.normal(size=(50, 4)))
    assert rep["per_layer_max_abs_delta"]["0"] <= alpha * 2.0**-k
    assert rep["saturation_rate"]["0"] == 0.0
