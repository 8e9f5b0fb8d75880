"""Synthetic multichannel scene generation with exact mixing ground truth.

Scenes are built from spectrally colored, amplitude-modulated noise sources
convolved with simple simulated room responses (a sparse direct path plus an
exponentially decaying diffuse tail). Because each source image is produced
by explicit convolution, the rendered mixture equals the sum of images plus
sensor noise to machine precision — which is what makes these scenes usable
as oracles for mixing-consistency tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .signals import ConfigError, Waveform


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to deterministically render one scene.

    num_sources / num_mics : counts C and P.
    duration : seconds of audio to generate.
    sample_rate : Hz.
    rir_length : taps per room impulse response.
    direct_delay_range : [min, max] direct-path delay in samples, inclusive.
    decay_rate : per-sample amplitude factor of the diffuse tail, in (0, 1).
    tail_level : RMS of the tail relative to the direct spike (0 disables).
    noise_level : sensor-noise RMS relative to per-mic mixture RMS.
    seed : RNG seed; equal specs render identical scenes.
    """

    num_sources: int = 2
    num_mics: int = 2
    duration: float = 3.0
    sample_rate: int = 8000
    rir_length: int = 400
    direct_delay_range: tuple[int, int] = (0, 24)
    decay_rate: float = 0.98
    tail_level: float = 0.25
    noise_level: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.num_sources < 1 or self.num_mics < 1:
            raise ConfigError("need at least one source and one mic")
        if self.duration <= 0 or self.sample_rate <= 0:
            raise ConfigError("duration and sample_rate must be positive")
        if self.rir_length < 1:
            raise ConfigError("rir_length must be >= 1")
        lo, hi = self.direct_delay_range
        if not (0 <= lo <= hi):
            raise ConfigError("direct_delay_range must satisfy 0 <= min <= max")
        if hi >= self.rir_length:
            raise ConfigError("direct-path delays must fit within rir_length")
        if not (0.0 < self.decay_rate < 1.0):
            raise ConfigError("decay_rate must lie in (0, 1)")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass
class Scene:
    """A rendered scene: mixture, per-source images, dry sources, and RIRs.

    images[c] is the num_mics-channel image of source c at the array, so
    ``mixture.samples == sum_c images[c].samples + noise`` exactly.
    """

    spec: SceneSpec
    mixture: Waveform
    images: list[Waveform]
    sources: Waveform
    rirs: np.ndarray  # [sources, mics, rir_length]
    noise: np.ndarray = field(repr=False, default=None)


def _colored_am_noise(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    """One unit-RMS source: band-shaped noise under a syllabic envelope.

    The deep, fast amplitude modulation gives each source a distinct
    time-varying variance profile — the non-stationarity that Gaussian-model
    IVA needs to tell sources apart — and the random band coloring makes
    their spectra distinct.
    """
    white = rng.standard_normal(n + 512)
    # random second-order resonance: smooth spectral coloring, distinct per call
    center = rng.uniform(0.05, 0.35)  # normalized frequency
    r = rng.uniform(0.8, 0.95)
    b = [1.0]
    a = [1.0, -2 * r * np.cos(2 * np.pi * center), r * r]
    x = lfilter(b, a, white)[512:]
    # broadband floor: every frequency bin carries energy from every source,
    # otherwise per-frequency demixing is unidentifiable away from the peak
    x = x / np.sqrt(np.mean(x * x)) + 0.25 * rng.standard_normal(n)

    # syllable-rate modulation with a heavy-tailed level distribution:
    # mostly quiet, occasionally loud, never exactly silent
    seg = max(1, int(0.12 * sample_rate))
    n_seg = int(np.ceil(n / seg)) + 1
    levels = 0.02 + 0.98 * rng.uniform(0.0, 1.0, size=n_seg) ** 3
    env = np.interp(np.arange(n), np.arange(n_seg) * seg, levels)
    x = x * env

    rms = np.sqrt(np.mean(x * x))
    return x / max(rms, 1e-12)


def _make_rir(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    """One mic's RIR: unit direct-path spike plus decaying Gaussian tail."""
    h = np.zeros(spec.rir_length)
    lo, hi = spec.direct_delay_range
    d = int(rng.integers(lo, hi + 1))
    h[d] = 1.0
    if spec.tail_level > 0 and spec.rir_length > d + 1:
        k = np.arange(spec.rir_length - d - 1)
        tail = rng.standard_normal(k.size) * spec.decay_rate ** k
        tail_rms = np.sqrt(np.mean(tail * tail))
        h[d + 1:] = tail * (spec.tail_level / max(tail_rms, 1e-12))
    return h


def generate_sources(spec: SceneSpec, rng: np.random.Generator | None = None) -> Waveform:
    """Draw the dry source signals for a scene: [num_sources, num_samples], unit RMS each."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    src = np.stack([_colored_am_noise(rng, spec.num_samples, spec.sample_rate)
                    for _ in range(spec.num_sources)])
    return Waveform(samples=src, sample_rate=spec.sample_rate)


def render_scene(spec: SceneSpec) -> Scene:
    """Render a full scene from its spec.

    The RNG is consumed in a fixed order (sources, then RIRs source-major,
    then sensor noise), so every field of the result is reproducible from
    the spec alone.
    """
    rng = np.random.default_rng(spec.seed)
    sources = generate_sources(spec, rng)
    n = spec.num_samples

    rirs = np.zeros((spec.num_sources, spec.num_mics, spec.rir_length))
    for c in range(spec.num_sources):
        for p in range(spec.num_mics):
            rirs[c, p] = _make_rir(rng, spec)

    images = []
    for c in range(spec.num_sources):
        img = np.stack([fftconvolve(sources.samples[c], rirs[c, p])[:n]
                        for p in range(spec.num_mics)])
        images.append(Waveform(samples=img, sample_rate=spec.sample_rate))

    mix = np.sum([im.samples for im in images], axis=0)
    if spec.noise_level > 0:
        mix_rms = np.sqrt(np.mean(mix * mix, axis=1, keepdims=True))
        noise = rng.standard_normal(mix.shape) * spec.noise_level * mix_rms
    else:
        noise = np.zeros_like(mix)
    mixture = Waveform(samples=mix + noise, sample_rate=spec.sample_rate)
    return Scene(spec=spec, mixture=mixture, images=images, sources=sources,
                 rirs=rirs, noise=noise)


def instantaneous_scene(spec: SceneSpec, mixing: np.ndarray | None = None,
                        ) -> Scene:
    """A scene mixed by a plain matrix instead of convolution.

    Useful for exercising demixers under ideal (frequency-flat) conditions.
    ``mixing`` is [num_mics, num_sources]; a random well-conditioned matrix
    is drawn when omitted. Sensor noise is added per ``spec.noise_level``.
    """
    rng = np.random.default_rng(spec.seed)
    sources = generate_sources(spec, rng)
    if mixing is None:
        mixing = rng.standard_normal((spec.num_mics, spec.num_sources))
        mixing += np.sign(mixing) * 0.5  # keep entries away from zero
    mixing = np.asarray(mixing, dtype=np.float64)
    if mixing.shape != (spec.num_mics, spec.num_sources):
        raise ConfigError("mixing matrix must be [num_mics, num_sources]")

    images = []
    rirs = np.zeros((spec.num_sources, spec.num_mics, 1))
    for c in range(spec.num_sources):
        img = mixing[:, c:c + 1] * sources.samples[c][None, :]
        images.append(Waveform(samples=img, sample_rate=spec.sample_rate))
        rirs[c, :, 0] = mixing[:, c]

    mix = np.sum([im.samples for im in images], axis=0)
    if spec.noise_level > 0:
        mix_rms = np.sqrt(np.mean(mix * mix, axis=1, keepdims=True))
        noise = rng.standard_normal(mix.shape) * spec.noise_level * mix_rms
    else:
        noise = np.zeros_like(mix)
    mixture = Waveform(samples=mix + noise, sample_rate=spec.sample_rate)
    return Scene(spec=spec, mixture=mixture, images=images, sources=sources,
                 rirs=rirs, noise=noise)
