"""Time-frequency transforms and the core waveform/spectrogram containers.

All STFT-domain tensors in this package are complex arrays of shape
``[channels, frames, bins]``. Analysis and synthesis both use a square-root
periodic Hann window, which gives constant overlap-add (hence exact
inverse transforms) whenever the hop divides the window length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidInputError(ValueError):
    """Raised when signal data violates an operation's preconditions."""


class ConfigError(ValueError):
    """Raised when a configuration object violates its invariants."""


@dataclass(frozen=True)
class ChannelTag:
    """Identity of one channel in a (possibly augmented) observation stack.

    A physical channel is identified by its microphone index alone
    (``src is None``). A virtual channel carries both the microphone it was
    back-projected to and the source component it was derived from.
    """

    mic: int
    src: int | None = None

    @property
    def is_physical(self) -> bool:
        return self.src is None

    def __str__(self) -> str:
        if self.src is None:
            return f"phys:{self.mic}"
        return f"virt:{self.mic}:{self.src}"

    @classmethod
    def parse(cls, text: str) -> "ChannelTag":
        parts = text.split(":")
        if parts[0] == "phys" and len(parts) == 2:
            return cls(mic=int(parts[1]))
        if parts[0] == "virt" and len(parts) == 3:
            return cls(mic=int(parts[1]), src=int(parts[2]))
        raise InvalidInputError(f"unrecognized channel tag {text!r}")


def physical_tags(n: int) -> list[ChannelTag]:
    return [ChannelTag(mic=p) for p in range(n)]


@dataclass
class Waveform:
    """Multichannel time-domain signal.

    samples : real array [channels, num_samples]
    sample_rate : Hz
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2:
            raise InvalidInputError("waveform samples must be [channels, num_samples]")
        if self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def channel(self, p: int) -> np.ndarray:
        return self.samples[p]


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis settings shared by stft and istft.

    The hop must divide the window length with at least 2x overlap; this is
    what makes the squared sqrt-Hann window sum to the constant
    ``window_length / (2 * hop_length)`` and the transform exactly invertible.
    """

    window_length: int = 512
    hop_length: int = 128
    fft_size: int | None = None
    window_kind: str = "sqrt-hann"

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.window_length)
        if self.window_kind != "sqrt-hann":
            raise ConfigError(f"unsupported window kind {self.window_kind!r}")
        if self.window_length <= 0 or self.hop_length <= 0:
            raise ConfigError("window_length and hop_length must be positive")
        if self.window_length % self.hop_length != 0:
            raise ConfigError("hop_length must divide window_length")
        if self.window_length // self.hop_length < 2:
            raise ConfigError("need at least 2x overlap for constant overlap-add")
        if self.fft_size < self.window_length:
            raise ConfigError("fft_size must be >= window_length")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def ola_constant(self) -> float:
        """Value of sum_m hann(n - m*hop) over the fully covered region."""
        return self.window_length / (2.0 * self.hop_length)

    @property
    def energy_constant(self) -> float:
        """Two-sided STFT energy = waveform energy * this constant."""
        return self.fft_size * self.ola_constant

    def window(self) -> np.ndarray:
        n = np.arange(self.window_length)
        return np.sin(np.pi * n / self.window_length)

    def num_frames(self, num_samples: int) -> int:
        pad = self.window_length - self.hop_length
        covered = num_samples + 2 * pad - self.window_length
        return int(np.ceil(covered / self.hop_length)) + 1

    @classmethod
    def from_milliseconds(cls, window_ms: float, hop_ms: float, sample_rate: int,
                          fft_size: int | None = None) -> "StftConfig":
        win = int(round(window_ms * sample_rate / 1000.0))
        hop = int(round(hop_ms * sample_rate / 1000.0))
        return cls(window_length=win, hop_length=hop, fft_size=fft_size)


@dataclass
class Spectrogram:
    """Complex STFT-domain tensor [channels, frames, bins] plus its config."""

    data: np.ndarray
    config: StftConfig
    sample_rate: int
    channel_tags: list[ChannelTag] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise InvalidInputError("spectrogram data must be [channels, frames, bins]")
        if self.data.shape[2] != self.config.num_bins:
            raise InvalidInputError(
                f"bin count {self.data.shape[2]} does not match config "
                f"({self.config.num_bins} bins)")
        if not self.channel_tags:
            self.channel_tags = physical_tags(self.data.shape[0])
        if len(self.channel_tags) != self.data.shape[0]:
            raise InvalidInputError("channel_tags length must equal channel count")

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]

    def channel(self, k: int) -> np.ndarray:
        """One channel as a [frames, bins] view."""
        return self.data[k]


def spectral_energy(s: Spectrogram) -> float:
    """Total two-sided STFT energy, reconstructed from one-sided storage.

    Interior bins stand in for a conjugate pair and count twice; DC (and
    Nyquist, when fft_size is even) appear once in the full spectrum. For a
    real input this equals ``spectral_energy == waveform_energy *
    config.energy_constant`` up to rounding, since the analysis windows tile
    every original sample with a constant squared-window sum.
    """
    mag2 = np.abs(s.data) ** 2
    total = 2.0 * float(np.sum(mag2)) - float(np.sum(mag2[..., 0]))
    if s.config.fft_size % 2 == 0:
        total -= float(np.sum(mag2[..., -1]))
    return total


def _frame_grid(cfg: StftConfig, num_samples: int) -> tuple[int, int, int]:
    """Padding and frame count: (pad_front, padded_length, n_frames).

    The signal is zero-padded by window - hop on both sides (rounded up at
    the tail to complete the last frame) so every original sample is covered
    by the full complement of overlapping windows. That keeps both the
    round trip and the energy identity exact over the original support.
    """
    pad = cfg.window_length - cfg.hop_length
    n_frames = cfg.num_frames(num_samples)
    padded = (n_frames - 1) * cfg.hop_length + cfg.window_length
    return pad, padded, n_frames


def stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    """Short-time Fourier transform with a sqrt-Hann analysis window.

    Parameters
    ----------
    w : Waveform
        Multichannel time-domain input.
    cfg : StftConfig
        Window, hop, and FFT size. ``fft_size > window_length`` zero-pads
        each frame before the FFT.

    Returns
    -------
    Spectrogram
        One-sided spectra, shape [channels, frames, fft_size // 2 + 1].
    """
    if w.num_samples == 0:
        raise InvalidInputError("cannot transform an empty waveform")
    win = cfg.window()
    pad, padded, n_frames = _frame_grid(cfg, w.num_samples)
    x = np.zeros((w.num_channels, padded), dtype=np.float64)
    x[:, pad:pad + w.num_samples] = w.samples

    starts = np.arange(n_frames) * cfg.hop_length
    idx = starts[:, None] + np.arange(cfg.window_length)[None, :]
    frames = x[:, idx] * win[None, None, :]
    data = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    return Spectrogram(data=data, config=cfg, sample_rate=w.sample_rate)


def istft(s: Spectrogram, length: int | None = None) -> Waveform:
    """Inverse STFT via weighted overlap-add with a sqrt-Hann synthesis window.

    The overlap-added signal is normalized per sample by the window-square
    sum, so ``istft(stft(w))`` reconstructs ``w`` exactly over its original
    support. Pass ``length`` to trim (or zero-extend) the output to a known
    sample count; otherwise the full de-padded length is returned, which may
    exceed the original by up to one hop.
    """
    cfg = s.config
    win = cfg.window()
    n_frames = s.num_frames
    padded = (n_frames - 1) * cfg.hop_length + cfg.window_length
    pad = cfg.window_length - cfg.hop_length

    frames = np.fft.irfft(s.data, n=cfg.fft_size, axis=-1)[..., :cfg.window_length]
    frames = frames * win[None, None, :]

    out = np.zeros((s.num_channels, padded), dtype=np.float64)
    norm = np.zeros(padded, dtype=np.float64)
    wsq = win * win
    for t in range(n_frames):
        lo = t * cfg.hop_length
        out[:, lo:lo + cfg.window_length] += frames[:, t]
        norm[lo:lo + cfg.window_length] += wsq
    nonzero = norm > 1e-12
    out[:, nonzero] /= norm[nonzero]

    out = out[:, pad:padded - pad]
    if length is not None:
        if length <= out.shape[1]:
            out = out[:, :length]
        else:
            out = np.pad(out, ((0, 0), (0, length - out.shape[1])))
    return Waveform(samples=out, sample_rate=s.sample_rate)


def build_context(z: np.ndarray, past: int, future: int) -> np.ndarray:
    """Stack the temporal context of one spectrogram channel.

    Parameters
    ----------
    z : complex array [frames, bins]
    past, future : int
        Context taps before/after the current frame; the context length is
        ``past + future + 1``.

    Returns
    -------
    complex array [frames, bins, past + future + 1]
        Entry ``[t, f, e]`` holds ``z[t - past + e, f]``, zero outside the
        valid frame range.
    """
    if past < 0 or future < 0:
        raise InvalidInputError("context taps must be non-negative")
    z = np.asarray(z)
    if z.ndim != 2:
        raise InvalidInputError("expected a single [frames, bins] channel")
    T, F = z.shape
    E = past + future + 1
    ctx = np.zeros((T, F, E), dtype=z.dtype)
    for e in range(E):
        shift = e - past  # context index e holds frame t + shift
        if shift < 0:
            ctx[-shift:, :, e] = z[:T + shift]
        elif shift > 0:
            ctx[:T - shift, :, e] = z[shift:]
        else:
            ctx[:, :, e] = z
    return ctx
