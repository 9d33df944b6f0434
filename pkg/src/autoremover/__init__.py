"""Shadow-aware video object removal with geometry-guided temporal warping."""

from .errors import (AutoRemoverError, BadArgument, BadCamera, BadLabels, BadParams, BadSequence,
                     EmptyLossSupport, EmptyRegion, MissingFrame, NoBackground, NoData, NonFiniteLoss,
                     ShapeMismatch)
from .geometry import CameraModel, FlowField, WarpResult, flow_from_depth, warp_bilinear, warp_mask
from .dataset import VideoSequence, load_sequence, preprocess_eval, preprocess_train
from .maskgen import dilate_mask, generate_temporal_masks, merge_shadow_mask
from .attention import PatchSet, contextual_attention, extract_patches
from .losses import LossWeights, build_loss_validity, d_hinge_loss, g_hinge_loss, reconstruction_loss
from .metrics import EvalReport, evaluate, masked_mae, masked_psnr, masked_rmse, masked_ssim, twe

__version__ = "0.1.0"
