"""Latent-space audio watermarking with hand-written adjoints.

A clip is encoded to a perfect-reconstruction STFT latent, an additive
latent perturbation is optimized so that signed projections of a log-Mel
embedding onto secret carriers spell out the payload, and the result is
decoded back to a waveform.
"""

from .audio import AudioClip, load_wav, save_wav, si_snr
from .embed import EmbedConfig, EmbedReport, embed, verify
from .features import Payload, SecretKey, derive_carriers, detect_payload

__all__ = [
    "AudioClip",
    "EmbedConfig",
    "EmbedReport",
    "Payload",
    "SecretKey",
    "derive_carriers",
    "detect_payload",
    "embed",
    "load_wav",
    "save_wav",
    "si_snr",
    "verify",
]
