"""Virtual-microphone blind source separation.

Separates concurrent sources from multichannel mixtures without any
training data: linear demixers (independent vector analysis or complex
angular-central-Gaussian spatial clustering) produce rough estimates,
those estimates are re-projected as extra "virtual" microphone channels,
and a direct optimizer refines the estimates against a filter-based
mixture-consistency loss over the augmented channel stack.
"""

from .signals import (
    ChannelTag,
    ConfigError,
    InvalidInputError,
    Spectrogram,
    StftConfig,
    Waveform,
    build_context,
    istft,
    physical_tags,
    spectral_energy,
    stft,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelTag",
    "ConfigError",
    "InvalidInputError",
    "Spectrogram",
    "StftConfig",
    "Waveform",
    "build_context",
    "istft",
    "physical_tags",
    "spectral_energy",
    "stft",
    "__version__",
]
