"""Direction-aware cumulative-convolution depth lab on a from-scratch numpy autodiff."""

from . import autodiff
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    DaccnError,
    DegenerateError,
    DimensionError,
    DomainError,
    GenerationError,
    NumericError,
    TapeError,
)
from .autodiff import Tensor, finite_diff_check, no_grad
from .ops import (
    ConvBlock,
    CumulativeConvParams,
    DirectionScales,
    affine_grid,
    cumulative_convolution,
    direction_aware_block,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    backproject,
    disparity_to_depth,
    project,
    warp_image,
)
from .losses import LossConfig, photometric_loss, smoothness_loss, ssim, total_loss
from .metrics import MetricsReport, depth_metrics
from .model import DaCCNModel, ModelConfig, init_model, load_checkpoint, save_checkpoint
from .synthdata import SceneSample, SceneSpec, dataset, generate_scene

__version__ = "0.1.0"
