"""Closed-form relative-filter estimation between source estimates and channels.

For each (channel, source, frequency) triple we fit a short filter over the
source estimate's temporal context that best explains the observed channel
in the least-squares sense. The filters model relative room responses: they
map one source's estimate at the reference microphone to that source's image
at any other (physical or virtual) channel.

Conventions: a filter g of length E is applied as ``image(t,f) = g(f)ᴴ z̃(t,f)``
where z̃ stacks frames t-A .. t+B of the estimate (zero-padded at the edges).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import ConfigError, InvalidInputError, build_context


@dataclass(frozen=True)
class FcpConfig:
    """Temporal context and regularization for the per-frequency filter fits.

    past_taps / future_taps : frames of context before/after the current one
        (filter length E = past + future + 1). Defaults suit realistic runs;
        tests typically use tiny symmetric contexts.
    tikhonov : ridge term relative to the mean context power; 0 disables.
    """

    past_taps: int = 19
    future_taps: int = 0
    tikhonov: float = 1e-4

    def __post_init__(self):
        if self.past_taps < 0 or self.future_taps < 0:
            raise ConfigError("context taps must be non-negative")
        if self.tikhonov < 0:
            raise ConfigError("tikhonov must be non-negative")

    @property
    def num_taps(self) -> int:
        return self.past_taps + self.future_taps + 1


@dataclass
class RelativeFilterBank:
    """Solved filters for every (stack channel, source) pair.

    filters : complex [channels K, sources C, bins F, taps E]
    """

    filters: np.ndarray
    config: FcpConfig

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.complex128)
        if self.filters.ndim != 4:
            raise InvalidInputError("filter bank must be [K, C, F, E]")
        if self.filters.shape[-1] != self.config.num_taps:
            raise InvalidInputError("tap count does not match config")
        if not np.all(np.isfinite(self.filters)):
            k, c, f = (int(i) for i in
                       np.argwhere(~np.isfinite(self.filters))[0][:3])
            raise InvalidInputError(
                f"filter bank contains non-finite entries (first at "
                f"channel {k}, source {c}, bin {f})")

    @property
    def num_channels(self) -> int:
        return self.filters.shape[0]

    @property
    def num_sources(self) -> int:
        return self.filters.shape[1]


def _solve_normal_equations(R: np.ndarray, rhs: np.ndarray, tikhonov: float,
                            n_frames: int) -> np.ndarray:
    """Solve (R + λI) g = rhs per frequency with power-relative λ.

    R : [..., F, E, E] context autocorrelations, rhs : [..., F, E].
    Frequencies whose context is identically zero get a zero filter (the
    documented degenerate case for silent estimates).
    """
    E = R.shape[-1]
    trace = np.einsum("...ee->...", R).real
    lam = tikhonov * trace / (n_frames * E)
    dead = trace <= 0.0
    eye = np.eye(E)
    A = R + lam[..., None, None] * eye
    if np.any(dead):
        # keep the batched solve non-singular; rhs is zero there anyway
        A = A + np.where(dead[..., None, None], 1.0, 0.0) * eye
    try:
        g = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        # singular autocorrelation with tikhonov=0: fall back to the
        # minimum-norm least-squares solution per frequency
        flatA = A.reshape(-1, E, E)
        flatb = rhs.reshape(-1, E)
        g = np.stack([np.linalg.lstsq(a, b, rcond=None)[0]
                      for a, b in zip(flatA, flatb)])
        g = g.reshape(rhs.shape)
    if np.any(dead):
        g = np.where(dead[..., None], 0.0, g)
    return g


def fcp_solve(obs: np.ndarray, est: np.ndarray, cfg: FcpConfig) -> np.ndarray:
    """Fit per-frequency filters mapping ``est`` onto ``obs``.

    Parameters
    ----------
    obs, est : complex [frames, bins]
        Observed channel and source estimate on the same grid.
    cfg : FcpConfig

    Returns
    -------
    complex [bins, taps]
        Per frequency f, the minimizer of
        ``sum_t |obs(t,f) - g(f)ᴴ z̃(t,f)|^2 + λ_f ||g||^2`` where z̃ is the
        zero-padded context of ``est`` and ``λ_f`` is the Tikhonov knob
        scaled by the mean context power at f.
    """
    obs = np.asarray(obs, dtype=np.complex128)
    est = np.asarray(est, dtype=np.complex128)
    if obs.shape != est.shape or obs.ndim != 2:
        raise InvalidInputError("obs and est must be [frames, bins] with equal shape")
    ctx = build_context(est, cfg.past_taps, cfg.future_taps)  # [T, F, E]
    R = np.einsum("tfe,tfd->fed", ctx, ctx.conj())
    rhs = np.einsum("tfe,tf->fe", ctx, obs.conj())
    return _solve_normal_equations(R, rhs, cfg.tikhonov, obs.shape[0])


def fcp_image(est: np.ndarray, filters: np.ndarray, cfg: FcpConfig) -> np.ndarray:
    """Apply per-frequency filters to a source estimate's context.

    Returns the filtered image ``g(f)ᴴ z̃(t,f)`` as [frames, bins].
    """
    est = np.asarray(est, dtype=np.complex128)
    filters = np.asarray(filters, dtype=np.complex128)
    if filters.shape != (est.shape[1], cfg.num_taps):
        raise InvalidInputError("filters must be [bins, taps] matching est and cfg")
    ctx = build_context(est, cfg.past_taps, cfg.future_taps)
    return np.einsum("fe,tfe->tf", filters.conj(), ctx)


def solve_filter_bank(stack_data: np.ndarray, estimates: np.ndarray,
                      cfg: FcpConfig) -> RelativeFilterBank:
    """Solve all (channel, source) filter fits for an observation stack.

    Parameters
    ----------
    stack_data : complex [channels K, frames, bins]
    estimates : complex [sources C, frames, bins]

    Each source's context autocorrelation is shared across the K channels,
    so the K right-hand sides are solved in one batched call per source.
    """
    stack_data = np.asarray(stack_data, dtype=np.complex128)
    estimates = np.asarray(estimates, dtype=np.complex128)
    if stack_data.ndim != 3 or estimates.ndim != 3:
        raise InvalidInputError("expected [channels, frames, bins] tensors")
    if stack_data.shape[1:] != estimates.shape[1:]:
        raise InvalidInputError("stack and estimates must share frames and bins")
    K = stack_data.shape[0]
    C, T, F = estimates.shape
    E = cfg.num_taps
    filters = np.empty((K, C, F, E), dtype=np.complex128)
    obs_ft = np.ascontiguousarray(stack_data.conj().transpose(2, 0, 1))  # [F, K, T]
    for c in range(C):
        ctx = build_context(estimates[c], cfg.past_taps, cfg.future_taps)
        ctx_f = np.ascontiguousarray(ctx.transpose(1, 0, 2))  # [F, T, E]
        R = ctx_f.transpose(0, 2, 1) @ ctx_f.conj()            # [F, E, E]
        rhs = (obs_ft @ ctx_f).transpose(1, 0, 2)              # [K, F, E]
        filters[:, c] = _solve_normal_equations(R[None], rhs, cfg.tikhonov, T)
    return RelativeFilterBank(filters=filters, config=cfg)


def bank_images(bank: RelativeFilterBank, estimates: np.ndarray) -> np.ndarray:
    """All filtered images [K, C, frames, bins] for a bank and estimates."""
    cfg = bank.config
    estimates = np.asarray(estimates, dtype=np.complex128)
    C, T, F = estimates.shape
    K = bank.num_channels
    out = np.empty((K, C, T, F), dtype=np.complex128)
    for c in range(C):
        ctx = build_context(estimates[c], cfg.past_taps, cfg.future_taps)
        ctx_f = np.ascontiguousarray(ctx.transpose(1, 0, 2))      # [F, T, E]
        flt = bank.filters[:, c].conj().transpose(1, 2, 0)        # [F, E, K]
        out[:, c] = (ctx_f @ flt).transpose(2, 1, 0)              # [K, T, F]
    return out


def filter_adjoint(filters: np.ndarray, grad: np.ndarray, cfg: FcpConfig) -> np.ndarray:
    """Adjoint of ``fcp_image`` for packed complex gradients.

    Given the packed gradient of a real loss with respect to the image,
    returns the packed gradient with respect to the estimate. For the
    ℂ-linear map ``image = g(f)ᴴ z̃`` the packed-gradient chain rule
    multiplies by the *unconjugated* coefficients and reverses the shifts,
    which is a context stack with past/future swapped.

    filters : [bins, taps]; grad : [frames, bins]; returns [frames, bins].
    """
    rev = np.asarray(filters)[:, ::-1]
    ctx = build_context(np.asarray(grad), cfg.future_taps, cfg.past_taps)
    return np.einsum("fe,tfe->tf", rev, ctx)


def bank_adjoint(bank: RelativeFilterBank, grads: np.ndarray) -> np.ndarray:
    """Accumulate ``filter_adjoint`` over all channels for every source.

    grads : packed gradients w.r.t. the images, [K, frames, bins].
    Returns packed gradients w.r.t. the estimates, [C, frames, bins].
    """
    cfg = bank.config
    grads = np.asarray(grads)
    K, T, F = grads.shape
    C = bank.num_sources
    E = cfg.num_taps
    ctx = np.empty((F, T, K * E), dtype=np.complex128)
    for k in range(K):
        ck = build_context(grads[k], cfg.future_taps, cfg.past_taps)
        ctx[:, :, k * E:(k + 1) * E] = ck.transpose(1, 0, 2)
    # [K, C, F, E] reversed-tap filters, regrouped as [F, K*E, C]
    rev = bank.filters[..., ::-1].transpose(2, 0, 3, 1).reshape(F, K * E, C)
    return (ctx @ rev).transpose(2, 1, 0)  # [C, T, F]
