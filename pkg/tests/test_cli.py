import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fsconv.cli import main
from fsconv.converter import load_snn
from fsconv.fs_core import FsParams, approximation_mse, make_relu_params
from fsconv.nn_model import NetworkSpec, dense, load_network, save_network

from corrupt import idx_bytes
from nets import random_mlp

DATA = __import__("conftest").DATA_DIR


@pytest.fixture
def tiny_mnist(tmp_path):
    """A 4x4 'MNIST' whose label is the brightest quadrant plus noise classes."""
    rng = np.random.default_rng(0)
    d = tmp_path / "mnist"
    d.mkdir()
    for prefix, n in (("train", 400), ("t10k", 100)):
        labels = rng.integers(0, 4, n).astype(np.uint8)
        pix = rng.integers(0, 60, size=(n, 4, 4)).astype(np.uint8)
        for i, lab in enumerate(labels):
            r, c = divmod(int(lab), 2)
            pix[i, 2 * r : 2 * r + 2, 2 * c : 2 * c + 2] += 180
        (d / f"{prefix}-images-idx3-ubyte").write_bytes(idx_bytes(0x803, (n, 4, 4), pix.tobytes()))
        (d / f"{prefix}-labels-idx1-ubyte").write_bytes(idx_bytes(0x801, (n,), labels.tobytes()))
    return d


def write_cfg(path, **over):
    cfg = {
        "target": "silu",
        "train_interval": [-4.0, 4.0],
        "num_steps": 6,
        "batch_size": 128,
        "iterations": 100,
        "learning_rate": 0.02,
        "pseudo_derivative_width": 1.0,
        "rng_seed": 0,
        "region_weights": [{"interval": [-2.0, 2.0], "weight": 10.0}],
    }
    cfg.update(over)
    for k, v in list(cfg.items()):
        if v is None:
            del cfg[k]
    path.write_text(json.dumps(cfg))
    return path


def test_fit_writes_params_and_report(tmp_path):
    out = tmp_path / "p.json"
    assert main(["fit", "--config", str(write_cfg(tmp_path / "c.json")), "--out", str(out)]) == 0
    params = FsParams.load(out)
    assert params.num_steps == 6 and params.activation_tag == "silu"
    report = json.loads((tmp_path / "p.json.report.json").read_text())
    assert report["seed"] == 0 and report["iterations"] == 100
    assert set(report["region_mse"]) == {"main", "all", "outside"}
    assert report["config"]["learning_rate"] == 0.02


def test_fit_is_deterministic(tmp_path):
    cfg = str(write_cfg(tmp_path / "c.json"))
    main(["fit", "--config", cfg, "--out", str(tmp_path / "a.json")])
    main(["fit", "--config", cfg, "--out", str(tmp_path / "b.json")])
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_fit_missing_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", pseudo_derivative_width=None)
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "p.json")]) == 2
    assert "pseudo_derivative_width" in capsys.readouterr().err


def test_fit_divergence_exit_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.json", learning_rate=50.0, iterations=200)
    assert main(["fit", "--config", str(cfg), "--out", str(tmp_path / "p.json")]) == 1
    assert "diverged" in capsys.readouterr().err


def test_fit_relu_warns(tmp_path, caplog):
    cfg = write_cfg(tmp_path / "c.json", target="relu", train_interval=[-1.0, 4.0])
    main(["fit", "--config", str(cfg), "--out", str(tmp_path / "p.json")])
    assert "make_relu_params" in caplog.text


def test_fit_shipped_silu_config(tmp_path):
    out = tmp_path / "silu.json"
    assert main(["fit", "--config", str(DATA / "silu_k16_fit.json"), "--out", str(out)]) == 0
    assert approximation_mse(FsParams.load(out), "silu", (-2, 2), 10001) <= 0.005
    assert FsParams.load(out) == FsParams.load(DATA / "silu_k16.json")


def test_train_convert_eval(tmp_path, tiny_mnist, capsys):
    flag = f"mnist:{tiny_mnist}"
    net_dir, snn_dir = tmp_path / "net", tmp_path / "snn"
    assert main(["train", "--dataset", flag, "--arch", "16-12-4", "--epochs", "30", "--lr", "0.02", "--batch", "32", "--out", str(net_dir)]) == 0
    net = load_network(net_dir)
    assert net.metadata["test_accuracy"] >= 0.9
    assert main(["convert", "--net", str(net_dir), "--k", "10", "--alpha", "fixed:25", "--out", str(snn_dir)]) == 0
    counts = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert counts["ann_parameters"] == counts["snn_parameters"]
    assert load_snn(snn_dir).alpha == {0: 25.0}
    rep_path = tmp_path / "eval.json"
    assert main(["eval", "--net", str(net_dir), "--snn", str(snn_dir), "--dataset", flag, "--mode", "pipelined", "--out", str(rep_path)]) == 0
    rep = json.loads(rep_path.read_text())
    assert rep["throughput"]["cadence_steps"] == 20
    assert set(rep["throughput"]["output_intervals"]) == {20}
    assert rep["snn_accuracy_pipelined"] == rep["snn_accuracy"]
    for key in ("ann_accuracy", "snn_accuracy", "spikes", "wall_time_s", "config"):
        assert key in rep
    assert rep["config"]["mode"] == "pipelined"


def test_convert_calibrate(tmp_path, tiny_mnist):
    net = random_mlp(np.random.default_rng(0), [16, 8, 4])
    save_network(net, tmp_path / "net")
    args = ["convert", "--net", str(tmp_path / "net"), "--k", "8", "--alpha", "calibrate",
            "--calib", "mnist:50", "--dataset", f"mnist:{tiny_mnist}", "--out", str(tmp_path / "snn")]
    assert main(args) == 0
    alpha = load_snn(tmp_path / "snn").alpha[0]
    assert alpha > 0 and alpha != 25.0


def test_convert_missing_silu_params(tmp_path, capsys):
    save_network(random_mlp(np.random.default_rng(0), [3, 4, 2], activation="silu"), tmp_path / "net")
    assert main(["convert", "--net", str(tmp_path / "net"), "--out", str(tmp_path / "snn")]) == 2
    assert "silu" in capsys.readouterr().err


def test_eval_identity_net(tmp_path, tiny_mnist):
    net = NetworkSpec((dense(np.zeros((4, 16))),), (16,), 4)
    save_network(net, tmp_path / "net")
    main(["convert", "--net", str(tmp_path / "net"), "--out", str(tmp_path / "snn")])
    out = tmp_path / "r.json"
    assert main(["eval", "--net", str(tmp_path / "net"), "--snn", str(tmp_path / "snn"), "--dataset", f"mnist:{tiny_mnist}", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["ann_accuracy"] == rep["snn_accuracy"] and rep["spikes"]["total_spikes"] == 0


def test_eval_bad_dataset_exit_2(tmp_path):
    net = NetworkSpec((dense(np.zeros((4, 16))),), (16,), 4)
    save_network(net, tmp_path / "net")
    main(["convert", "--net", str(tmp_path / "net"), "--out", str(tmp_path / "snn")])
    args = ["eval", "--net", str(tmp_path / "net"), "--snn", str(tmp_path / "snn"), "--dataset", f"mnist:{tmp_path}", "--out", str(tmp_path / "r.json")]
    assert main(args) == 2


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_profile_spikes_vs_x(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["profile", "spikes_vs_x", "--relu", "6:10", "--range=-2:10", "--samples", "1201", "--out", str(out)]) == 0
    rows = _csv(out)
    assert list(rows[0]) == ["x", "spike_count", "value"]
    xs = [float(r["x"]) for r in rows]
    assert xs == sorted(xs)
    assert int(rows[-2]["spike_count"]) == 6  # x just below alpha
    assert all(int(r["spike_count"]) == 0 for r in rows if float(r["x"]) < 0)


def test_profile_mse_vs_q(tmp_path):
    out = tmp_path / "q.csv"
    assert main(["profile", "mse_vs_q", "--fs-params", str(DATA / "silu_k16.json"), "--q", "2..8", "--out", str(out)]) == 0
    rows = _csv(out)
    assert [int(r["q"]) for r in rows] == [0, 2, 3, 4, 5, 6, 7, 8]
    assert list(rows[0]) == ["q", "region", "mse"]


def test_profile_mse_vs_k(tmp_path):
    out = tmp_path / "k.csv"
    cfg = write_cfg(tmp_path / "c.json", iterations=60)
    assert main(["profile", "mse_vs_k", "--config", str(cfg), "--k-values", "2,6", "--out", str(out)]) == 0
    rows = _csv(out)
    assert [int(r["k"]) for r in rows if r["region"] == "all"] == [2, 6]


def test_profile_unknown_kind_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["profile", "mse_vs_z"])
    assert info.value.code == 2


def test_trace_single_relu_neuron(tmp_path):
    net = NetworkSpec((dense(np.eye(1), activation="relu"),), (1,), 1)
    snn_dir = tmp_path / "snn"
    from fsconv.converter import convert, save_snn

    save_snn(convert(net, {"relu": make_relu_params(3, 1.0)}, {0: 8.0}), snn_dir)
    out = tmp_path / "t.csv"
    assert main(["trace", "--snn", str(snn_dir), "--x", "5", "--out", str(out)]) == 0
    rows = _csv(out)
    assert [(int(r["global_step"]), int(r["neuron_index"])) for r in rows] == [(3, 0), (5, 0)]
    dyn = _csv(str(out) + ".neurons.csv")
    assert [int(r["z"]) for r in dyn] == [1, 0, 1]
    assert main(["trace", "--snn", str(snn_dir), "--x", "-1", "--out", str(out)]) == 0
    assert _csv(out) == []


def test_trace_silu_neuron(tmp_path):
    from fsconv.converter import convert, save_snn
    from fsconv.fs_core import fs_simulate, published_params

    net = NetworkSpec((dense(np.eye(1), activation="silu"),), (1,), 1)
    save_snn(convert(net, {"silu": published_params("silu")}), tmp_path / "snn")
    out = tmp_path / "t.csv"
    assert main(["trace", "--snn", str(tmp_path / "snn"), "--x", "-0.5", "--out", str(out)]) == 0
    dyn = _csv(str(out) + ".neurons.csv")
    assert len(dyn) == 16
    assert [bool(int(r["z"])) for r in dyn] == list(fs_simulate(-0.5, published_params("silu")).spikes)


def test_trace_size_guard(tmp_path, capsys):
    from fsconv.converter import convert, save_snn

    net = random_mlp(np.random.default_rng(0), [2, 50, 2])
    save_snn(convert(net, {"relu": make_relu_params(4, 1.0)}, {0: 4.0}), tmp_path / "snn")
    args = ["trace", "--snn", str(tmp_path / "snn"), "--x", "1,1", "--max-neurons", "10", "--out", str(tmp_path / "t.csv")]
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_train_xor(tmp_path):
    out = tmp_path / "xor"
    assert main(["train", "--dataset", "xor", "--arch", "2-4-1", "--epochs", "2000", "--batch", "4", "--lr", "0.1", "--out", str(out)]) == 0
    assert load_network(out).metadata["train_accuracy"] >= 0.99


def test_train_zero_lr_unchanged(tmp_path):
    from fsconv.nn_model import init_mlp

    out = tmp_path / "xor"
    main(["train", "--dataset", "xor", "--arch", "2-4-1", "--lr", "0", "--seed", "3", "--out", str(out)])
    assert load_network(out) == init_mlp([2, 4, 1], "relu", 3)


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fsconv", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "convert" in proc.stdout
