"""Guided depth-map super-resolution with a multi-scale progressive fusion network."""
from .baselines import bicubic_sr, guided_filter, guided_filter_sr
from .data import (
    PatchSet,
    RgbdPair,
    SrSample,
    augment_rot90,
    complete_depth,
    extract_patches,
    load_rgbd,
    make_sr_sample,
    save_rgbd,
    synth_scene,
)
from .imaging import ColorImage, DepthMap, FeatureMap, bicubic_resample, sobel_magnitude, ssim_mean
from .losses import LossValue, LossWeights, edge_loss, l1_loss, structure_loss, total_loss
from .metrics import EvalReport, evaluate, psnr, rmse
from .network import (
    FusionSchedule,
    NetworkConfig,
    Parameters,
    color_encoder_forward,
    depth_encoder_forward,
    forward,
    fusion_step,
    init_parameters,
    load_checkpoint,
    loss_gradients,
    save_checkpoint,
)
from .training import TrainConfig, TrainLog, grad_check, train

__version__ = "0.1.0"
