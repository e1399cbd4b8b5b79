"""Low-SNR audio-visual speech enhancement toolkit.

Desk-scale pieces of a two-stage enhancement pipeline: controlled SNR/SIR
corruption, log-mel DSP, transformer enhancer and HiFi-GAN-style vocoder
forward passes with their training losses, three spectrogram-inversion
methods, and an objective-metric harness.
"""

from .dsp import (
    AudioParams,
    ComplexSpectrogram,
    MelSpectrogram,
    Waveform,
    griffin_lim,
    istft,
    log_mel,
    mel_filterbank,
    mel_to_linear,
    noisy_phase_invert,
    peak_normalize,
    resample,
    stft,
)
from .audio_io import read_melf, read_wav, write_melf, write_wav
from .corrupt import (
    MixRecipe,
    MixResult,
    apply_condition,
    gain_for_ratio,
    mix,
    parse_manifest,
    preset_condition,
    sample_training_recipe,
    signal_power,
)
from .metrics import (
    EvalReport,
    MetricSpec,
    estoi,
    evaluate_utterance,
    external_metric_adapter,
    improvement,
    mcd,
    spec_mse,
    stoi,
)
from .video import (
    AugmentSpec,
    VideoClip,
    align_indices,
    augment,
    hflip,
    load_pgm_dir,
    load_roi,
    save_vroi,
)
from . import errors, neural

__version__ = "0.1.0"

__all__ = [
    "AudioParams",
    "AugmentSpec",
    "ComplexSpectrogram",
    "EvalReport",
    "MelSpectrogram",
    "MetricSpec",
    "MixRecipe",
    "MixResult",
    "VideoClip",
    "Waveform",
    "align_indices",
    "apply_condition",
    "augment",
    "errors",
    "estoi",
    "evaluate_utterance",
    "external_metric_adapter",
    "gain_for_ratio",
    "griffin_lim",
    "hflip",
    "improvement",
    "istft",
    "load_pgm_dir",
    "load_roi",
    "log_mel",
    "mcd",
    "mel_filterbank",
    "mel_to_linear",
    "mix",
    "neural",
    "noisy_phase_invert",
    "parse_manifest",
    "peak_normalize",
    "preset_condition",
    "read_melf",
    "read_wav",
    "resample",
    "sample_training_recipe",
    "save_vroi",
    "signal_power",
    "spec_mse",
    "stft",
    "stoi",
    "write_melf",
    "write_wav",
    "__version__",
]
