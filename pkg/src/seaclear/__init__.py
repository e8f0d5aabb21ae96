"""seaclear: underwater image formation, self-supervised deblurring and
perspective warping, with every backward pass verified against finite
differences."""

from .errors import (
    DimensionError,
    DomainError,
    EvaluationError,
    FileFormatError,
    ParameterError,
    SeaclearError,
    SingularTransformError,
)
from .grid import Grid
from .ops import ConvParams, activation, bilinear_upsample, conv2d, dropout
from .optim import AdamState, adam_step
from .gradcheck import finite_diff_check
from .imaging import (
    T_MIN,
    invert_direct,
    reconstruct_hazy,
    synthesize_hazy,
    transmission_from_depth,
)
from .dcp import (
    dark_channel,
    dark_channel_loss,
    estimate_background_light,
    estimate_transmission_dcp,
    recover_clear,
    recovery_map,
)
from .stn import Homography, SamplingGrid, affine_grid, bilinear_sample, localize, make_grid, stn_forward
from .transmission import TransNetParams, predict_transmission
from .deblur import DeblurParams, deblur_forward, generate_clear, multiscale_mapping, upsample_features
from .trainer import (
    Metrics,
    ModelState,
    TrainConfig,
    gen_shapes_dataset,
    gen_underwater_dataset,
    psnr,
    reconstruction_loss,
    total_loss,
    train_selfsup_deblur,
    train_stn_classifier,
)

__version__ = "0.1.0"
