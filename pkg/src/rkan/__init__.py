"""From-scratch deep-learning kit built around KAN convolutions.

Chebyshev (and Gaussian-RBF) basis expansions over convolution patches,
residual KAN stage blocks, a four-stage micro backbone, and a deterministic
training/benchmark harness, all in double precision with hand-written
adjoints verified against finite differences.
"""

import os as _os

# RKAN_THREADS caps the worker threads for batch math. BLAS reads these at
# import, so they must be set before numpy loads.
_cap = _os.environ.get("RKAN_THREADS")
if _cap:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)
del _os, _cap

from .basis import (Chebyshev, GaussianRBF, chebyshev_basis,
                    chebyshev_basis_grad, evenly_spaced_rbf, rbf_basis,
                    rbf_basis_grad, tanh_normalize)
from .backbone import (BackboneSpec, BasicBlock, Model, RkanSettings,
                       StageSpec, build, default_micro_spec,
                       load_checkpoint_into, model_forward, read_checkpoint,
                       save_checkpoint, spec_from_dict)
from .block import RkanBlock, RkanBlockConfig, aggregate
from .data import (Dataset, Standardizer, SyntheticConfig, generate_synthetic,
                   load_cifar10, load_cifar100, serialize_cifar10,
                   synthetic_task)
from .kan_conv import KanConv2d, kan_parameter_count
from .layers import (Activation, ChannelAffine, Conv2d, Linear, Module,
                     Parameter)
from .ops import (activation, activation_backward, conv2d, conv2d_backward,
                  conv_output_hw, fold_to_grid, fold_to_grid_backward,
                  global_avg_pool, global_avg_pool_backward, sigmoid,
                  softmax_cross_entropy, unfold, unfold_backward)
from .training import (EpochRecord, GradCheckReport, RunMetrics, TrainConfig,
                       coefficient_of_variation, evaluate_top1, gradcheck,
                       lr_at, scaled_peak_lr, sgd_step, throughput, train_run,
                       write_metrics_csv)
from . import errors

__version__ = "0.1.0"
