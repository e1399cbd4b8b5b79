"""Forward-pass neural components: enhancer, vocoder, discriminators,
losses, weight serialization, and finite-difference verification."""
from .enhancer import (
    EnhancerConfig,
    enhancer_forward,
    enhancer_loss,
    enhancer_manifest,
    visual_encode,
)
from .gradcheck import central_difference, finite_diff_gradcheck, relative_error
from .losses import GeneratorLoss, LossWeights, discriminator_loss, generator_loss
from .microtrain import micro_config, micro_train_demo
from .tensors import (
    TensorBundle,
    count_params,
    init_weights,
    load_weights,
    save_weights,
    validate_manifest,
)
from .vocoder import (
    DiscOutput,
    VocoderConfig,
    discriminate,
    discriminator_manifest,
    generator_manifest,
    mpd_forward,
    mpd_manifest,
    msd_forward,
    msd_manifest,
    vocoder_forward,
)

__all__ = [
    "EnhancerConfig",
    "enhancer_forward",
    "enhancer_loss",
    "enhancer_manifest",
    "visual_encode",
    "VocoderConfig",
    "DiscOutput",
    "generator_manifest",
    "mpd_manifest",
    "msd_manifest",
    "discriminator_manifest",
    "vocoder_forward",
    "mpd_forward",
    "msd_forward",
    "discriminate",
    "LossWeights",
    "GeneratorLoss",
    "generator_loss",
    "discriminator_loss",
    "TensorBundle",
    "save_weights",
    "load_weights",
    "init_weights",
    "validate_manifest",
    "count_params",
    "finite_diff_gradcheck",
    "central_difference",
    "relative_error",
    "micro_train_demo",
    "micro_config",
]
