"""Shared fixtures: tiny STFT grids, random spectra, and rendered scenes."""

import numpy as np
import pytest

from vmbss.iva import IvaConfig, auxiva_run
from vmbss.scene import SceneSpec, render_scene
from vmbss.signals import StftConfig, Waveform, stft
from vmbss.vmic import backproject, build_stack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disjoint_delay_scene(stage=None, seed=0):
    """A noiseless 2x2 scene whose truth sits exactly in the filter span.

    Each room response is a single tap at a hop-multiple delay, so in the
    STFT domain every cross-channel transfer is an exact one-frame shift
    (one past or future tap). The two sources occupy disjoint time ranges,
    which makes their frame contexts orthogonal: per-source filter fits
    cannot absorb any of the other source. Together these two properties
    mean oracle estimates (the true reference-mic images) reconstruct every
    physical channel exactly within a past=1/future=1 context.

    Returns (stack, oracle, refs, sample_rate): an augmented stack whose
    virtual channels come from a determined demixing run on the same STFT
    grid (so they are per-frequency mixes of the two images, also in span),
    the oracle estimates [C, T, F], and the reference-mic image waveforms.
    """
    stage = stage or StftConfig(window_length=512, hop_length=128)
    sr = 8000
    n = 12000
    hop = stage.hop_length
    rng = np.random.default_rng(seed)

    sources = np.zeros((2, n))
    sources[0, 800:4800] = rng.standard_normal(4000)
    sources[1, 7200:11200] = rng.standard_normal(4000)

    # (amplitude, delay) per source and mic; delays are hop multiples, and
    # source 1 arrives *earlier* at mic 1 than at the reference mic, which
    # is what forces the future tap
    taps = {(0, 0): (1.0, 0), (0, 1): (0.8, hop),
            (1, 0): (0.9, hop), (1, 1): (1.0, 0)}
    images = np.zeros((2, 2, n))  # [source, mic, n]
    for (c, p), (amp, d) in taps.items():
        images[c, p, d:] = amp * sources[c, :n - d]
    mixture = images.sum(axis=0)

    physical = stft(Waveform(mixture, sr), stage)
    sol = auxiva_run(physical, IvaConfig(n_iter=30, stft=stage))
    stack = build_stack(physical, backproject(sol))
    oracle = stft(Waveform(images[:, 0], sr), stage).data
    return stack, oracle, images[:, 0], sr


@pytest.fixture
def tiny_stft():
    """Smallest practical grid: 4 bins, hop 3."""
    return StftConfig(window_length=6, hop_length=3, fft_size=6)


@pytest.fixture
def desk_stft():
    """The separator-stage grid at 8 kHz: 64 ms window, 16 ms hop."""
    return StftConfig(window_length=512, hop_length=128)


@pytest.fixture(scope="session")
def small_scene():
    """A 1-second reverberant 2x2 scene, shared across tests (read-only)."""
    return render_scene(SceneSpec(duration=1.0, seed=7))


def random_spectrogram_data(rng, channels=2, frames=12, bins=5):
    shape = (channels, frames, bins)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
