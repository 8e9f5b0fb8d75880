"""Mixture-consistency losses over augmented channel stacks, and their gradients.

The core quantity is the per-channel MC loss: how badly the filtered source
estimates fail to add up to an observed channel, measured with L1 penalties
on the real part, imaginary part, and magnitude of the residual, normalized
by the channel's total magnitude. Physical and virtual channels enter the
total with separate weights. An optional variance-ratio term (ISMS) penalizes
sources whose per-frame log-magnitude profile scatters across frequency more
than the mixture's does — the symptom of frequency-permutation failures.

Gradients are with respect to the complex source estimates, packed as
``dL/dRe + i·dL/dIm``, with the filters held fixed and every absolute value
smoothed as sqrt(x² + δ²); reported loss values always use exact absolutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fcp import (
    FcpConfig,
    RelativeFilterBank,
    bank_adjoint,
    bank_images,
    filter_adjoint,
    solve_filter_bank,
)
from .signals import ConfigError, InvalidInputError

NORMALIZER_FLOOR = 1e-12
LOG_MAG_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Weights of the loss terms.

    w_r, w_i, w_m : real / imaginary / magnitude residual penalties.
    alpha, beta : per-channel weights for physical and virtual channels.
    """

    w_r: float = 1.0
    w_i: float = 1.0
    w_m: float = 1.0
    alpha: float = 1.0
    beta: float = 0.02

    def __post_init__(self):
        if min(self.w_r, self.w_i, self.w_m) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.w_r == self.w_i == self.w_m == 0:
            raise ConfigError("at least one of w_r, w_i, w_m must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("channel weights must be non-negative")


@dataclass
class LossReport:
    """Full breakdown of one loss evaluation.

    total = alpha·sum(physical per-channel MC) + beta·sum(virtual) + ISMS
    (ISMS only when it was enabled), recomputable from the parts.
    """

    per_channel_mc: np.ndarray
    isms: float
    total: float
    weights: LossWeights
    normalizers: np.ndarray
    physical_mask: np.ndarray
    isms_enabled: bool = False
    warnings: list[str] = field(default_factory=list)

    def recompute_total(self) -> float:
        phys = float(np.sum(self.per_channel_mc[self.physical_mask]))
        virt = float(np.sum(self.per_channel_mc[~self.physical_mask]))
        total = self.weights.alpha * phys + self.weights.beta * virt
        if self.isms_enabled:
            total += self.isms
        return total

    def to_dict(self) -> dict:
        return {
            "total": float(self.total),
            "isms": float(self.isms),
            "isms_enabled": self.isms_enabled,
            "per_channel_mc": [float(v) for v in self.per_channel_mc],
            "normalizers": [float(v) for v in self.normalizers],
            "physical_mask": [bool(v) for v in self.physical_mask],
            "weights": {
                "w_r": self.weights.w_r, "w_i": self.weights.w_i,
                "w_m": self.weights.w_m,
                "alpha": self.weights.alpha, "beta": self.weights.beta,
            },
            "warnings": list(self.warnings),
        }


def _stack_parts(stack, num_physical: int | None = None,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Accept an AugmentedStack or a bare [K, T, F] array.

    Returns (data, physical mask). Bare arrays are all-physical unless
    ``num_physical`` marks a prefix.
    """
    obs = getattr(stack, "observations", None)
    if obs is not None:
        data = obs.data
        mask = np.array([t.is_physical for t in obs.channel_tags], dtype=bool)
        return data, mask
    data = np.asarray(stack, dtype=np.complex128)
    if data.ndim != 3:
        raise InvalidInputError("stack must be [channels, frames, bins]")
    K = data.shape[0]
    if num_physical is None:
        num_physical = K
    mask = np.zeros(K, dtype=bool)
    mask[:num_physical] = True
    return data, mask


def mc_loss_channel(obs: np.ndarray, images: np.ndarray, w: LossWeights,
                    ) -> tuple[float, float]:
    """Normalized mixture-consistency loss of one channel.

    Parameters
    ----------
    obs : complex [frames, bins]
    images : complex [sources, frames, bins] — filtered estimates at this channel.

    Returns
    -------
    (loss, normalizer) where loss sums w_r|Re residual| + w_i|Im residual|
    + w_m·‖|obs| − |summed image|‖_1 over all bins, divided by the channel
    magnitude sum (floored at 1e-12).
    """
    obs = np.asarray(obs, dtype=np.complex128)
    images = np.asarray(images, dtype=np.complex128)
    if images.ndim != 3 or images.shape[1:] != obs.shape:
        raise InvalidInputError("images must be [sources, frames, bins] matching obs")
    total_image = images.sum(axis=0)
    residual = obs - total_image
    raw = (w.w_r * np.sum(np.abs(residual.real))
           + w.w_i * np.sum(np.abs(residual.imag))
           + w.w_m * np.sum(np.abs(np.abs(obs) - np.abs(total_image))))
    normalizer = max(float(np.sum(np.abs(obs))), NORMALIZER_FLOOR)
    return float(raw / normalizer), normalizer


def isms_loss(images: np.ndarray, obs: np.ndarray) -> tuple[float, bool]:
    """Intra-source magnitude scattering ratio at one (reference) channel.

    Numerator: per-frame variance across frequency of each source image's
    log-magnitude, averaged over sources, summed over frames. Denominator:
    the same quantity for the observed channel. Magnitudes are floored at
    1e-8 before the log. Returns (value, degenerate-denominator flag); a
    constant-magnitude observation trips the flag and divides by 1e-12.
    """
    images = np.asarray(images, dtype=np.complex128)
    obs = np.asarray(obs, dtype=np.complex128)
    if images.ndim != 3 or images.shape[1:] != obs.shape:
        raise InvalidInputError("images must be [sources, frames, bins] matching obs")
    log_img = np.log(np.maximum(np.abs(images), LOG_MAG_FLOOR))
    log_obs = np.log(np.maximum(np.abs(obs), LOG_MAG_FLOOR))
    numerator = float(np.sum(np.mean(np.var(log_img, axis=2), axis=0)))
    denominator = float(np.sum(np.var(log_obs, axis=1)))
    if denominator <= 0.0:
        return numerator / NORMALIZER_FLOOR, True
    return numerator / denominator, False


def vm_loss(stack, estimates: np.ndarray, cfg: FcpConfig, w: LossWeights,
            isms_enabled: bool = False, bank: RelativeFilterBank | None = None,
            num_physical: int | None = None) -> LossReport:
    """Weighted mixture-consistency loss over every channel of a stack.

    For each channel and source a relative filter is fit (closed form),
    the filtered images are summed, and the per-channel MC losses are
    combined with ``alpha`` on physical channels and ``beta`` on virtual
    ones. Pass a pre-solved ``bank`` to evaluate the loss with the filters
    held fixed (as the separator does between refreshes); otherwise filters
    are solved from the estimates on the fly.

    ``stack`` may be an AugmentedStack or a bare [channels, frames, bins]
    array; bare arrays are treated as all-physical unless ``num_physical``
    marks a prefix. ISMS, when enabled, is evaluated at the first physical
    channel with unit weight.
    """
    data, physical_mask = _stack_parts(stack, num_physical)
    est = np.asarray(estimates, dtype=np.complex128)
    if est.ndim != 3:
        raise InvalidInputError("estimates must be [sources, frames, bins]")
    if est.shape[1:] != data.shape[1:]:
        raise InvalidInputError("estimates and stack must share frames and bins")
    if bank is None:
        bank = solve_filter_bank(data, est, cfg)
    images = bank_images(bank, est)  # [K, C, T, F]
    return report_from_images(data, physical_mask, images, w, isms_enabled)


def report_from_images(data: np.ndarray, physical_mask: np.ndarray,
                       images: np.ndarray, w: LossWeights,
                       isms_enabled: bool = False) -> LossReport:
    """Assemble a LossReport from pre-computed filtered images.

    The image map is linear in the estimates for a fixed filter bank, so a
    line search can form trial images as ``images(Z) - eta * images(grad)``
    and score them here without touching the filters again.
    """
    K = data.shape[0]
    per_channel = np.empty(K)
    normalizers = np.empty(K)
    warnings: list[str] = []
    for k in range(K):
        per_channel[k], normalizers[k] = mc_loss_channel(data[k], images[k], w)
        if normalizers[k] <= NORMALIZER_FLOOR:
            warnings.append(f"channel {k}: zero-magnitude observation, "
                            "normalizer floored")

    isms_value = 0.0
    if isms_enabled:
        ref = int(np.argmax(physical_mask)) if physical_mask.any() else 0
        isms_value, degenerate = isms_loss(images[ref], data[ref])
        if degenerate:
            warnings.append("isms: constant-magnitude observation, "
                            "denominator floored")

    phys = float(np.sum(per_channel[physical_mask]))
    virt = float(np.sum(per_channel[~physical_mask]))
    total = w.alpha * phys + w.beta * virt
    if isms_enabled:
        total += isms_value
    return LossReport(per_channel_mc=per_channel, isms=isms_value,
                      total=float(total), weights=w, normalizers=normalizers,
                      physical_mask=physical_mask, isms_enabled=isms_enabled,
                      warnings=warnings)


def _smooth_sign(x: np.ndarray, delta: float) -> np.ndarray:
    return x / np.sqrt(x * x + delta * delta)


def _isms_gradient(ref_images: np.ndarray, ref_obs: np.ndarray,
                   bank: RelativeFilterBank, ref_channel: int,
                   delta: float) -> np.ndarray:
    """Packed gradient of the ISMS term w.r.t. the estimates, [C, T, F]."""
    C, T, F = ref_images.shape
    m_sq = ref_images.real ** 2 + ref_images.imag ** 2 + delta * delta
    v = 0.5 * np.log(m_sq)
    log_obs = np.log(np.maximum(np.abs(ref_obs), LOG_MAG_FLOOR))
    denominator = float(np.sum(np.var(log_obs, axis=1)))
    if denominator <= 0.0:
        denominator = NORMALIZER_FLOOR
    d_num_dv = (2.0 / (C * F)) * (v - v.mean(axis=2, keepdims=True))
    g_images = (d_num_dv / denominator) * (ref_images / m_sq)
    cfg = bank.config
    grad = np.empty_like(ref_images)
    for c in range(C):
        grad[c] = filter_adjoint(bank.filters[ref_channel, c], g_images[c], cfg)
    return grad


def vm_loss_gradient(stack, estimates: np.ndarray, cfg: FcpConfig,
                     w: LossWeights, bank: RelativeFilterBank,
                     isms_enabled: bool = False, delta: float = 1e-8,
                     num_physical: int | None = None,
                     images: np.ndarray | None = None) -> np.ndarray:
    """Packed complex gradient of the (smoothed) stack loss w.r.t. estimates.

    The filters in ``bank`` are treated as constants; the returned tensor is
    ``dL/dRe(Ẑ) + i·dL/dIm(Ẑ)`` with shape [sources, frames, bins]. All
    absolute values use the sqrt(x² + δ²) smoothing, so the gradient matches
    central finite differences of the exact loss away from the kinks.
    ``images`` may carry pre-computed ``bank_images(bank, estimates)``.
    """
    data, physical_mask = _stack_parts(stack, num_physical)
    est = np.asarray(estimates, dtype=np.complex128)
    if images is None:
        images = bank_images(bank, est)  # [K, C, T, F]
    summed = images.sum(axis=1)      # [K, T, F]
    residual = data - summed

    normalizers = np.maximum(np.abs(data).sum(axis=(1, 2)), NORMALIZER_FLOOR)
    channel_w = np.where(physical_mask, w.alpha, w.beta)
    scale = (channel_w / normalizers)[:, None, None]

    m = np.sqrt(summed.real ** 2 + summed.imag ** 2 + delta * delta)
    mag_gap = np.abs(data) - m
    g_summed = -(w.w_r * _smooth_sign(residual.real, delta)
                 + 1j * w.w_i * _smooth_sign(residual.imag, delta))
    g_summed -= w.w_m * _smooth_sign(mag_gap, delta) * (summed / m)
    g_summed *= scale

    grad = bank_adjoint(bank, g_summed)

    if isms_enabled:
        ref = int(np.argmax(physical_mask)) if physical_mask.any() else 0
        grad = grad + _isms_gradient(images[ref], data[ref], bank, ref, delta)

    if not np.all(np.isfinite(grad)):
        bad = np.argwhere(~np.isfinite(grad))
        c, t, f = bad[0]
        raise FloatingPointError(
            f"non-finite gradient at source {c}, frame {t}, bin {f} "
            f"({len(bad)} entries total)")
    return grad
