"""File formats: WAV audio, raw complex spectrogram dumps, demixer archives.

Spectrograms are stored as raw little-endian complex64 with a JSON sidecar
describing shape and STFT settings — trivially memory-mappable and free of
any container overhead. Demixing solutions (W and its pseudo-inverse A)
share the same raw-complex convention inside a single .npz-free archive.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .signals import ChannelTag, InvalidInputError, Spectrogram, StftConfig, Waveform

_PCM16_SCALE = 32767.0


def save_wav(path: str | Path, w: Waveform, pcm16: bool = False) -> None:
    """Write a waveform as WAV (float32 by default, int16 when ``pcm16``).

    PCM16 output clips to [-1, 1) semantics: values are scaled by 32767 and
    clamped, so full-scale float input survives the round trip to within one
    quantization step.
    """
    data = w.samples.T  # wavfile wants [samples, channels]
    if data.shape[1] == 1:
        data = data[:, 0]
    if pcm16:
        scaled = np.round(np.clip(data, -1.0, 1.0) * _PCM16_SCALE)
        wavfile.write(str(path), w.sample_rate, scaled.astype(np.int16))
    else:
        wavfile.write(str(path), w.sample_rate, data.astype(np.float32))


def load_wav(path: str | Path) -> Waveform:
    """Read a WAV file into a float64 waveform in [-1, 1] scale."""
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if np.issubdtype(data.dtype, np.integer):
        # divide by the positive full scale (the factor save_wav multiplies
        # by), so a PCM16 round trip is symmetric; the integer minimum then
        # maps a hair below -1, which callers tolerate
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    else:
        data = data.astype(np.float64)
    return Waveform(samples=data.T, sample_rate=int(rate))


def save_spectrogram(path: str | Path, s: Spectrogram) -> None:
    """Dump a spectrogram as raw complex64 plus a JSON sidecar.

    Layout is channel-major, frame-major, bin-minor — exactly the C order of
    the in-memory [channels, frames, bins] tensor. The sidecar (same path
    with ``.json`` appended) records shape, STFT settings, sample rate, and
    channel tags.
    """
    path = Path(path)
    s.data.astype(np.complex64).tofile(path)
    meta = {
        "shape": list(s.data.shape),
        "dtype": "complex64",
        "order": "channel-major,frame-major,bin-minor",
        "window_length": s.config.window_length,
        "hop_length": s.config.hop_length,
        "fft_size": s.config.fft_size,
        "window_kind": s.config.window_kind,
        "sample_rate": s.sample_rate,
        "channel_tags": [str(t) for t in s.channel_tags],
    }
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")


def load_spectrogram(path: str | Path) -> Spectrogram:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise InvalidInputError(f"missing sidecar {sidecar}")
    meta = json.loads(sidecar.read_text())
    shape = tuple(meta["shape"])
    raw = np.fromfile(path, dtype=np.complex64)
    if raw.size != int(np.prod(shape)):
        raise InvalidInputError(
            f"raw file holds {raw.size} values, sidecar shape {shape} "
            f"needs {int(np.prod(shape))}")
    cfg = StftConfig(window_length=meta["window_length"],
                     hop_length=meta["hop_length"],
                     fft_size=meta["fft_size"],
                     window_kind=meta.get("window_kind", "sqrt-hann"))
    tags = [ChannelTag.parse(t) for t in meta.get("channel_tags", [])]
    return Spectrogram(data=raw.reshape(shape).astype(np.complex128),
                       config=cfg,
                       sample_rate=meta["sample_rate"],
                       channel_tags=tags)


def save_demixer(path: str | Path, W: np.ndarray, A: np.ndarray,
                 extra: dict | None = None) -> None:
    """Store a per-frequency demixing solution W [F, C, P] and mixing A [F, P, C].

    Both tensors go into one raw complex64 file (W first, then A, each in C
    order) with a JSON sidecar carrying shapes and any extra metadata.
    """
    path = Path(path)
    W = np.asarray(W, dtype=np.complex64)
    A = np.asarray(A, dtype=np.complex64)
    with open(path, "wb") as fh:
        W.tofile(fh)
        A.tofile(fh)
    meta = {
        "w_shape": list(W.shape),
        "a_shape": list(A.shape),
        "dtype": "complex64",
    }
    if extra:
        meta.update(extra)
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_demixer(path: str | Path) -> tuple[np.ndarray, np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    w_shape = tuple(meta["w_shape"])
    a_shape = tuple(meta["a_shape"])
    raw = np.fromfile(path, dtype=np.complex64)
    nw = int(np.prod(w_shape))
    na = int(np.prod(a_shape))
    if raw.size != nw + na:
        raise InvalidInputError("demixer file size does not match sidecar shapes")
    W = raw[:nw].reshape(w_shape).astype(np.complex128)
    A = raw[nw:].reshape(a_shape).astype(np.complex128)
    return W, A, meta


def save_masks(path: str | Path, masks: np.ndarray) -> None:
    """Store posterior masks [classes, frames, bins] as raw float32 + sidecar."""
    path = Path(path)
    m = np.asarray(masks, dtype=np.float32)
    m.tofile(path)
    meta = {"shape": list(m.shape), "dtype": "float32"}
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=2) + "\n")


def load_masks(path: str | Path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    shape = tuple(meta["shape"])
    raw = np.fromfile(path, dtype=np.float32)
    if raw.size != int(np.prod(shape)):
        raise InvalidInputError("mask file size does not match sidecar shape")
    return raw.reshape(shape).astype(np.float64)
