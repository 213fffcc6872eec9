"""Command-line front end: ``fsconv {fit,convert,eval,profile,trace,train}``.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
Reports are JSON, tables are CSV; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace

import numpy as np

from . import analysis
from .converter import ConversionError, GlobalFixed, PerLayerMax, calibrate_alpha, collapse_linear, convert, load_snn, save_snn
from .datasets import DatasetError, load_dataset_flag
from .fit import ConfigError, FitError, default_regions, fit_detailed, load_fit_config, region_mses
from .fs_core import FsParams, FsParamsError, fs_simulate_batch, make_relu_params
from .nn_model import NetworkError, TrainHyper, TrainingError, activation_stats, fold_batchnorm, load_network, save_network, train_mlp
from .snn_sim import SimulationError, _linear_part, compare_with_ann, neuron_trace, run_pipelined, run_single, trace_csv

log = logging.getLogger("fsconv")


class UsageError(Exception):
    """Bad flags or invalid inputs; exit code 2."""


def _write_json(path, obj) -> None:
    analysis.write_text_atomic(path, json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _resolved(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"range must look like lo:hi, got {text!r}") from None
    if not lo < hi:
        raise UsageError(f"range must satisfy lo < hi, got {text!r}")
    return lo, hi


def _parse_ints(text: str) -> list[int]:
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise UsageError(f"expected a list like 2,4,6 or 2..8, got {text!r}") from None


def _load_fs_params(paths) -> dict:
    table = {}
    for p in paths or []:
        params = FsParams.load(p)
        table[params.activation_tag] = params
    return table


def _dataset(args, split="test"):
    if not args.dataset:
        raise UsageError("--dataset is required (mnist:<dir> or cifar10:<dir>)")
    return load_dataset_flag(args.dataset, split)


def _flat_inputs(ds, net_input_shape):
    if len(net_input_shape) == 1:
        return ds.flat()
    return ds.images


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    target, cfg = load_fit_config(args.config)
    if target is None:
        raise ConfigError("fit config is missing required field(s): target")
    if target == "relu":
        log.warning("relu has an exact analytic construction; prefer make_relu_params(K, alpha) over fitting")
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    start = time.time()
    res = fit_detailed(target, cfg)
    res.params.save(args.out)
    report = {
        "target": target,
        "config": cfg.to_dict(),
        "region_mse": region_mses(res.params, target, default_regions(cfg)),
        "best_validation": res.best_validation,
        "initial_validation": res.initial_validation,
        "best_iteration": res.best_iteration,
        "iterations": cfg.iterations,
        "seed": cfg.rng_seed,
        "wall_time_s": time.time() - start,
    }
    _write_json(str(args.out) + ".report.json", report)
    print(json.dumps(report["region_mse"]))
    return 0


def _calibration_batch(args, net):
    spec = args.calib or "1000"
    count = spec.rpartition(":")[2]
    try:
        n = int(count)
    except ValueError:
        raise UsageError(f"--calib must be <count> or <kind>:<count>, got {spec!r}") from None
    ds = _dataset(args, "train")
    return _flat_inputs(ds, net.input_shape)[:n]


def cmd_convert(args) -> int:
    net = load_network(args.net)
    net = collapse_linear(fold_batchnorm(net))
    table = _load_fs_params(args.fs_params)
    if "relu" in net.activation_kinds() and "relu" not in table:
        if args.k is None:
            raise UsageError("network uses relu: pass --k or a relu --fs-params file")
        table["relu"] = make_relu_params(args.k, 1.0)
    alpha = None
    if "relu" in net.activation_kinds():
        mode = args.alpha or "calibrate"
        if mode.startswith("fixed:"):
            try:
                alpha = GlobalFixed(float(mode.split(":", 1)[1]))
            except ValueError:
                raise UsageError(f"--alpha fixed:<value> needs a number, got {mode!r}") from None
        elif mode == "calibrate":
            stats = activation_stats(net, _calibration_batch(args, net))
            relu_layers = [i for i, l in enumerate(net.layers) if l.activation == "relu"]
            alpha = calibrate_alpha(stats, PerLayerMax(args.safety), relu_layers)
        else:
            raise UsageError(f"--alpha must be fixed:<value> or calibrate, got {mode!r}")
    snn = convert(net, table, alpha)
    snn.metadata["alpha_policy"] = args.alpha or "calibrate"
    save_snn(snn, args.out)
    counts = {
        "ann_parameters": net.num_parameters(),
        "snn_parameters": snn.num_parameters(),
        "neurons": snn.neuron_count(),
        "alpha": {str(k): v for k, v in snn.alpha.items()},
        "k_by_kind": snn.k_by_kind,
    }
    print(json.dumps(counts))
    return 0


def cmd_eval(args) -> int:
    net = collapse_linear(fold_batchnorm(load_network(args.net)))
    snn = load_snn(args.snn)
    ds = _dataset(args, "test")
    if args.limit:
        ds = ds.subset(args.limit)
    x = _flat_inputs(ds, net.input_shape)
    start = time.time()
    report = compare_with_ann(net, snn, x, ds.labels)
    K = snn.stage_length()
    report["mode"] = args.mode
    if args.mode == "pipelined":
        logits, acc, tp = run_pipelined(snn, x, allow_mixed_k=args.allow_mixed_k)
        pred = logits.argmax(axis=1) if logits.shape[1] > 1 else (logits[:, 0] > 0).astype(int)
        report["snn_accuracy_pipelined"] = float(np.mean(pred == ds.labels))
        report["throughput"] = tp.to_dict()
        report["throughput"]["output_steps"] = tp.output_steps[:32]
        report["throughput"]["entry_steps"] = tp.entry_steps[:32]
        report["throughput"]["output_intervals"] = report["throughput"]["output_intervals"][:32]
    else:
        report["throughput"] = {
            "cadence_steps": 2 * K,
            "latency_steps": 2 * K * len(snn.activation_layers()),
        }
    report["steps_per_image"] = 2 * K
    report["wall_time_s"] = time.time() - start
    report["config"] = _resolved(args)
    _write_json(args.out, report)
    print(json.dumps({k: report[k] for k in ("ann_accuracy", "snn_accuracy", "accuracy_delta_pp") if k in report}))
    return 0


def cmd_profile(args) -> int:
    what = args.what
    if what == "spikes_vs_x":
        params = _single_params(args)
        lo, hi = _parse_range(args.range or "-8:12")
        rows = analysis.spikes_vs_x(params, (lo, hi), args.samples)
    elif what == "mse_vs_q":
        params = _single_params(args)
        lo, hi = _parse_range(args.range or "-8:12")
        qs = _parse_ints(args.q or "2..8")
        rows = analysis.mse_vs_q(params, params.activation_tag, qs, {"all": [(lo, hi)]}, args.samples)
    elif what == "mse_vs_k":
        if not args.config:
            raise UsageError("mse_vs_k needs --config (a fit config used as the template)")
        target, cfg = load_fit_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, rng_seed=args.seed)
        rows = analysis.mse_vs_k(target, _parse_ints(args.k_values or "4,8,12,16"), cfg)
    elif what == "accuracy_vs_k":
        if not args.net:
            raise UsageError("accuracy_vs_k needs --net")
        net = collapse_linear(fold_batchnorm(load_network(args.net)))
        test = _dataset(args, "test")
        if args.limit:
            test = test.subset(args.limit)
        x = _flat_inputs(test, net.input_shape)
        if args.alpha and args.alpha.startswith("fixed:"):
            policy, calib = GlobalFixed(float(args.alpha.split(":", 1)[1])), None
        else:
            policy, calib = PerLayerMax(args.safety), _calibration_batch(args, net)
        rows = analysis.accuracy_vs_k(net, x, test.labels, _parse_ints(args.k_values or "2,4,6,8,10"), policy, calib)
    else:  # argparse restricts choices; kept for direct calls
        raise UsageError(f"unknown profile {what!r}")
    text = analysis.to_csv(rows, analysis.HEADERS[what])
    if args.out:
        analysis.write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _single_params(args) -> FsParams:
    if args.relu:
        try:
            k, alpha = args.relu.split(":")
            return make_relu_params(int(k), float(alpha))
        except ValueError:
            raise UsageError(f"--relu must look like K:alpha, got {args.relu!r}") from None
    if not args.fs_params or len(args.fs_params) != 1:
        raise UsageError("this profile needs exactly one --fs-params file (or --relu K:alpha)")
    return FsParams.load(args.fs_params[0])


def cmd_trace(args) -> int:
    snn = load_snn(args.snn)
    if args.x is not None:
        try:
            x = np.array([float(v) for v in args.x.split(",")]).reshape(snn.input_shape)
        except ValueError:
            raise UsageError(f"--x must hold {np.prod(snn.input_shape)} comma-separated numbers") from None
    else:
        ds = _dataset(args, "test")
        x = _flat_inputs(ds, snn.input_shape)[args.input_index]
    neurons = snn.neuron_count()
    if neurons > args.max_neurons and not args.force:
        raise UsageError(f"network has {neurons} activation neurons (> --max-neurons {args.max_neurons}); pass --force")
    rows: list = []
    logits, acc = run_single(snn, x, event_exact=True, trace=rows)
    analysis.write_text_atomic(args.out, trace_csv(rows))

    # per-neuron internal dynamics for the first --neurons units of each layer
    gate_inputs = _snn_gate_inputs(snn, x)
    lines = ["layer,neuron_index,t,v,threshold,z"]
    for layer, z in gate_inputs.items():
        params = snn.layer_params(layer)
        for j in range(min(args.neurons, z.size)):
            for row in neuron_trace(float(z.reshape(-1)[j]), params):
                lines.append(f"{layer},{j},{row['t']},{row['v']!r},{row['threshold']!r},{row['z']}")
    analysis.write_text_atomic(str(args.out) + ".neurons.csv", "\n".join(lines) + "\n")
    print(json.dumps({"spike_events": len(rows), "total_spikes": acc.total_spikes, "logits": np.asarray(logits).tolist()}))
    return 0


def _snn_gate_inputs(snn, x) -> dict:
    """Gate input of every activation layer, computed from decoded upstream values."""
    h = np.asarray(x, dtype=np.float64)[None]
    net_input = h
    outputs, gates = [], {}
    for i, layer in enumerate(snn.layers):
        z = _linear_part(layer, h, outputs, net_input)
        params = snn.layer_params(i)
        if params is not None:
            gates[i] = z[0]
            z, _ = fs_simulate_batch(z, params)
        h = z
        outputs.append(h)
    return gates


def _xor_data():
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float64)
    y = np.array([0, 1, 1, 0])
    return x, y, x, y


def cmd_train(args) -> int:
    try:
        widths = [int(w) for w in args.arch.split("-")]
    except ValueError:
        raise UsageError(f"--arch must look like 784-128-128-10, got {args.arch!r}") from None
    if args.dataset == "xor":
        tx, ty, vx, vy = _xor_data()
    else:
        train = _dataset(args, "train")
        test = _dataset(args, "test")
        tx, ty, vx, vy = train.flat(), train.labels, test.flat(), test.labels
    hyper = TrainHyper(lr=args.lr, epochs=args.epochs, batch=args.batch, seed=args.seed or 0)
    net = train_mlp(tx, ty, widths, hyper, args.activation, vx, vy)
    net.metadata["config"] = _resolved(args)
    save_network(net, args.out)
    print(json.dumps({k: net.metadata[k] for k in ("train_accuracy", "test_accuracy") if k in net.metadata}))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsconv", description="Few-spike ANN-to-SNN conversion toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit FS parameters to an activation function")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("convert", help="convert an ANN weight container into an SNN")
    c.add_argument("--net", required=True)
    c.add_argument("--fs-params", action="append", default=[])
    c.add_argument("--alpha", help="fixed:<value> or calibrate (default)")
    c.add_argument("--calib", help="calibration sample count, <count> or <kind>:<count>")
    c.add_argument("--safety", type=float, default=1.1)
    c.add_argument("--k", type=int)
    c.add_argument("--dataset")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    e = sub.add_parser("eval", help="ANN/SNN parity report")
    e.add_argument("--net", required=True)
    e.add_argument("--snn", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--mode", choices=("sequential", "pipelined"), default="sequential")
    e.add_argument("--limit", type=int)
    e.add_argument("--allow-mixed-k", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("profile", help="spike-count and K/Q sweep tables")
    pr.add_argument("what", choices=sorted(analysis.HEADERS))
    pr.add_argument("--fs-params", action="append", default=[])
    pr.add_argument("--relu", help="analytic ReLU parameters as K:alpha")
    pr.add_argument("--range", help="lo:hi; write --range=-2:10 when lo is negative")
    pr.add_argument("--samples", type=int, default=1001)
    pr.add_argument("--q", help="Q values, e.g. 2..8")
    pr.add_argument("--k-values", help="K values, e.g. 2,4,6,8,10")
    pr.add_argument("--config")
    pr.add_argument("--net")
    pr.add_argument("--dataset")
    pr.add_argument("--alpha")
    pr.add_argument("--calib")
    pr.add_argument("--safety", type=float, default=1.1)
    pr.add_argument("--limit", type=int)
    pr.add_argument("--seed", type=int)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_profile)

    t = sub.add_parser("trace", help="event-exact spike trace of one input")
    t.add_argument("--snn", required=True)
    t.add_argument("--input-index", type=int, default=0)
    t.add_argument("--x", help="comma-separated raw input instead of a dataset sample")
    t.add_argument("--dataset")
    t.add_argument("--neurons", type=int, default=4, help="neurons per layer in the dynamics dump")
    t.add_argument("--max-neurons", type=int, default=4096)
    t.add_argument("--force", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_trace)

    tr = sub.add_parser("train", help="train a dense MLP")
    tr.add_argument("--dataset", required=True, help="mnist:<dir>, cifar10:<dir> or xor")
    tr.add_argument("--arch", required=True)
    tr.add_argument("--activation", choices=("relu", "silu"), default="relu")
    tr.add_argument("--lr", type=float, default=0.05)
    tr.add_argument("--epochs", type=int, default=5)
    tr.add_argument("--batch", type=int, default=64)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)
    return p


_VALIDATION_ERRORS = (FileNotFoundError, UsageError, ConfigError, ConversionError, DatasetError, NetworkError, FsParamsError)
_RUNTIME_ERRORS = (FitError, TrainingError, SimulationError, OSError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"fsconv {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"fsconv {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
