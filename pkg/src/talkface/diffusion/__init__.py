from .autoencoder import AutoencoderConfig, ToyAutoencoder, fit_autoencoder
from .sampler import ddim_sample, ddim_timesteps
from .schedule import DiffusionSchedule, add_noise, make_schedule, predict_x0
from .text import encode_text
from .unet import (ATTENTION_ORDER, ConditioningBundle, DenoisingUNet, ReferenceNet, UNetConfig,
                   collate_bundles, referencenet_forward, unet_forward)

__all__ = [
    "ATTENTION_ORDER", "AutoencoderConfig", "ConditioningBundle", "DenoisingUNet", "DiffusionSchedule",
    "ReferenceNet", "ToyAutoencoder", "UNetConfig", "add_noise", "collate_bundles", "ddim_sample",
    "ddim_timesteps", "encode_text", "fit_autoencoder", "make_schedule", "predict_x0",
    "referencenet_forward", "unet_forward",
]
