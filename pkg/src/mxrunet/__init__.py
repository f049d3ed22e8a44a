"""RGB-to-hyperspectral reconstruction on a numpy autodiff core.

The package is self-contained: `tensor` provides reverse-mode autodiff
over numpy arrays, `layers`/`model` build the U-Net style reconstruction
network on a residual encoder, `loss` the three-term perceptual
objective, `training` the one-cycle AdamW loop, `metrics` evaluation and
latency reporting, and `formats` the binary image/cube/checkpoint
formats.  `cli.main` exposes the train/infer/eval/bench/selftest
commands.
"""

from .errors import (
    ConfigError, ContractError, DimensionError, DomainError, FormatError,
    IntegrityError, NumericsError, TruncationError, VersionError,
)
from .tensor import Tensor, no_grad, nan_guard, tensor
from .layers import (
    BatchNorm2d, Conv2d, ConvLayer, DecoderBlock, Module, ModuleList,
    PixelShuffleUpsampler, ResidualBlock, SelfAttention, Stem, blur,
    icnr_init, kaiming_normal, mish, pixel_shuffle, pixel_unshuffle,
)
from .model import Encoder, MXRUNet, ModelConfig, build_mxresnet, build_unet, count_params
from .loss import (
    LossNetwork, LossWeights, adapt_input_layer, extract_features,
    feature_loss, gram, loss_breakdown, pixel_loss, style_loss, total_loss,
)
from .training import (
    AdamW, AugmentConfig, NormalizationStats, OneCycleSchedule, augment,
    compressed_schedule, denormalize, fit, identity_augment, normalize,
)
from .metrics import (
    LatencyReport, MetricReport, benchmark_latency, evaluate_dataset, mrae,
    rmse,
)
from .formats import (
    RunConfig, load_checkpoint, pair_dataset, read_cube, read_rgb,
    save_checkpoint, write_cube, write_rgb,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
