"""Model components: encoder, prior, denoiser, schedule, and the assembly."""
from __future__ import annotations

import numpy as np

from ..config import RunConfig
from ..numcore import Tensor
from ..signal import NormStats
from .base import ParamModule, conv_init, linear_init
from .encoder import LOGVAR_CLAMP, Encoder, LatentPosterior, pool, reparameterize
from .prior import (
    PriorError,
    PseudoInputs,
    kl_pooled,
    pooled_posterior,
    standard_normal_logpdf,
    stratified_init,
    vamp_components,
    vampprior_logpdf,
)
from .schedule import (
    DiffusionSchedule,
    ScheduleError,
    forward_diffuse,
    kl_weight,
    posterior_mean_exact,
)
from .sampler import (
    SamplerError,
    ddim_sample,
    ddim_timesteps,
    generate,
    interpolate_latent,
    reconstruct,
    seeded_noise,
)
from .unet import UNet, sinusoidal_embedding

__all__ = [
    "ParamModule", "conv_init", "linear_init",
    "LOGVAR_CLAMP", "Encoder", "LatentPosterior", "pool", "reparameterize",
    "PriorError", "PseudoInputs", "kl_pooled", "pooled_posterior",
    "standard_normal_logpdf", "stratified_init", "vamp_components",
    "vampprior_logpdf",
    "DiffusionSchedule", "ScheduleError", "forward_diffuse", "kl_weight",
    "posterior_mean_exact",
    "SamplerError", "ddim_sample", "ddim_timesteps", "generate",
    "interpolate_latent", "reconstruct", "seeded_noise",
    "UNet", "sinusoidal_embedding",
    "VampDiffModel",
]


class VampDiffModel(ParamModule):
    """Encoder + pseudo-inputs + conditional denoiser, wired from a RunConfig."""

    def __init__(self, config: RunConfig, rng: np.random.Generator | None = None,
                 pseudo_init: np.ndarray | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(config.seed)
        self.config = config
        self.encoder = self.add_child(
            "encoder",
            Encoder(config.latent_channels, widths=config.encoder_widths,
                    groups=config.groupnorm_groups, rng=rng))
        self.pseudo = self.add_child(
            "pseudo",
            PseudoInputs(config.pseudo_inputs, config.window_len,
                         init=pseudo_init, rng=rng))
        self.unet = self.add_child(
            "unet",
            UNet(config.latent_channels, channels=config.unet_channels,
                 time_dim=config.time_embed_dim,
                 groups=config.groupnorm_groups, rng=rng))
        self.schedule = DiffusionSchedule(config.diffusion_steps)
        self.norm_stats: NormStats | None = None

    def encode(self, x: Tensor) -> LatentPosterior:
        return self.encoder(x)

    def predict_x0(self, x_t: Tensor, t: np.ndarray, z: Tensor) -> Tensor:
        if self.config.condition_on_pooled:
            z = pool(z, self.config.pooled_len)
        return self.unet(x_t, t, z)

    def param_groups(self) -> dict[str, list[Tensor]]:
        """Optimizer groups: denoiser, encoder, pseudo-inputs."""
        return {
            "decoder": self.unet.params(),
            "encoder": self.encoder.params(),
            "pseudo": self.pseudo.params(),
        }
