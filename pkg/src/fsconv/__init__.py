"""Few-spike conversion of trained ANNs into spiking networks."""

from .converter import GlobalFixed, PerLayerMax, SnnSpec, calibrate_alpha, collapse_linear, convert
from .fs_core import (
    ActivationFunction,
    FsNeuronState,
    FsOutput,
    FsParams,
    QuantizationSpec,
    approximation_mse,
    fs_simulate,
    fs_simulate_batch,
    fs_step,
    make_relu_params,
    published_params,
    quantize_params,
    relu_closed_form,
    spike_count_profile,
)
from .fit import FitConfig, RegionWeights, fit, forward_backward, pseudo_grad, sweep_k, sweep_q
from .nn_model import NetworkSpec, LayerSpec, fold_batchnorm, forward, load_network, save_network, train_mlp
from .snn_sim import SpikeAccounting, compare_with_ann, run_pipelined, run_single

__version__ = "0.1.0"

__all__ = [
    "ActivationFunction",
    "FitConfig",
    "FsNeuronState",
    "FsOutput",
    "FsParams",
    "GlobalFixed",
    "LayerSpec",
    "NetworkSpec",
    "PerLayerMax",
    "QuantizationSpec",
    "RegionWeights",
    "SnnSpec",
    "SpikeAccounting",
    "approximation_mse",
    "calibrate_alpha",
    "collapse_linear",
    "compare_with_ann",
    "convert",
    "fit",
    "fold_batchnorm",
    "forward",
    "forward_backward",
    "fs_simulate",
    "fs_simulate_batch",
    "fs_step",
    "load_network",
    "make_relu_params",
    "pseudo_grad",
    "published_params",
    "quantize_params",
    "relu_closed_form",
    "run_pipelined",
    "run_single",
    "save_network",
    "spike_count_profile",
    "sweep_k",
    "sweep_q",
    "train_mlp",
]
