"""Direct optimization of complex source spectrograms against the stack loss.

No learned model: the estimates themselves are the optimization variables.
The loop alternates two moves — re-solving all relative filters in closed
form (accepted only if the loss does not increase, which keeps the recorded
history monotone) and gradient descent steps on the estimates with a
backtracking halving rule. Every accepted move appends to the loss history,
so the history is non-increasing by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fcp import FcpConfig, bank_images, solve_filter_bank
from .losses import (
    LossReport,
    LossWeights,
    report_from_images,
    vm_loss_gradient,
)
from .signals import ChannelTag, ConfigError, Spectrogram
from .vmic import AugmentedStack

log = logging.getLogger(__name__)

_EARLY_STOP_WINDOW = 20
_MAX_BACKTRACKS = 10


class NumericalAbortError(RuntimeError):
    """The optimizer hit non-finite numbers and cannot continue."""


@dataclass(frozen=True)
class SeparatorConfig:
    """Optimization settings.

    init : "iva_estimates" starts from demixed sources scaled to the
        reference microphone; "mixture_split" starts from equal shares of
        the reference mixture plus a tiny seeded perturbation.
    step_size : gradient step as a fraction of the mixture RMS (the raw
        gradient is direction-normalized before stepping).
    fcp_refresh_every : solve filters anew every this many steps.
    early_stop_rel_tol : stop when the relative loss decrease over the last
        20 steps falls below this.
    """

    init: str = "iva_estimates"
    max_steps: int = 500
    step_size: float = 0.1
    fcp_refresh_every: int = 10
    loss_weights: LossWeights = field(default_factory=LossWeights)
    fcp: FcpConfig = field(default_factory=FcpConfig)
    isms_enabled: bool = False
    early_stop_rel_tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.init not in ("iva_estimates", "mixture_split"):
            raise ConfigError(f"unknown init scheme {self.init!r}")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be non-negative")
        if self.step_size <= 0:
            raise ConfigError("step_size must be positive")
        if self.fcp_refresh_every < 1:
            raise ConfigError("fcp_refresh_every must be at least 1")


@dataclass
class SeparationResult:
    """Outcome of one optimization run.

    estimates : Spectrogram of C source estimates at the reference mic.
    loss_history : loss after init and after every step (non-increasing).
    refresh_steps : 1-based step indices where a filter refresh was accepted.
    """

    estimates: Spectrogram
    loss_history: np.ndarray
    initial_report: LossReport
    final_report: LossReport
    steps_taken: int
    refresh_steps: list[int] = field(default_factory=list)
    stop_reason: str = "max_steps"


def init_estimates(stack: AugmentedStack, sol=None,
                   cfg: SeparatorConfig | None = None,
                   num_sources: int | None = None) -> Spectrogram:
    """Initial source estimates for the optimizer, [C, frames, bins].

    iva_estimates: the demixer's separated sources (already scaled to the
    reference microphone by the demixer's minimal-distortion step).
    mixture_split: reference mixture divided by C, plus a seeded complex
    perturbation 40 dB below it so the sources are not identical.
    """
    cfg = cfg or SeparatorConfig()
    obs = stack.observations
    if cfg.init == "iva_estimates":
        if sol is None:
            raise ConfigError("iva_estimates initialization needs a demixing solution")
        data = sol.separated.data.copy()
    else:
        if num_sources is None:
            num_sources = sol.separated.num_channels if sol is not None else 2
        ref = obs.data[stack.reference_channel]
        share = ref / num_sources
        rng = np.random.default_rng(cfg.seed)
        level = 10.0 ** (-40.0 / 20.0) * np.sqrt(np.mean(np.abs(share) ** 2))
        noise = rng.standard_normal((num_sources,) + share.shape) \
            + 1j * rng.standard_normal((num_sources,) + share.shape)
        data = share[None] + level / np.sqrt(2.0) * noise
    tags = [ChannelTag(mic=stack.reference_channel, src=c)
            for c in range(data.shape[0])]
    return Spectrogram(data=data, config=obs.config, sample_rate=obs.sample_rate,
                       channel_tags=tags)


def _evaluate(data: np.ndarray, mask: np.ndarray, images: np.ndarray,
              cfg: SeparatorConfig) -> LossReport:
    return report_from_images(data, mask, images, cfg.loss_weights,
                              isms_enabled=cfg.isms_enabled)


def separate(stack: AugmentedStack, cfg: SeparatorConfig,
             sol=None) -> SeparationResult:
    """Minimize the stack loss over the complex source estimates.

    Steps whose index is a multiple of ``fcp_refresh_every`` re-solve the
    filters (kept only if the loss does not increase); all other steps move
    the estimates along the negative gradient, halving the step up to 10
    times if the loss would increase and skipping the move entirely if it
    still does. A skipped move forces a filter refresh on the next step;
    if even that cannot reduce the loss the run stops, as it does when the
    relative loss decrease over 20 steps falls below ``early_stop_rel_tol``.
    The loss history gets one entry per executed step and never increases.
    """
    Z = init_estimates(stack, sol, cfg).data
    data = stack.data
    mask = np.array([t.is_physical for t in stack.observations.channel_tags],
                    dtype=bool)
    bank = solve_filter_bank(data, Z, cfg.fcp)
    images = bank_images(bank, Z)
    report = _evaluate(data, mask, images, cfg)
    initial_report = report
    history = [report.total]
    refresh_steps: list[int] = []
    mix_rms = float(np.sqrt(np.mean(np.abs(data[stack.reference_channel]) ** 2)))

    stop_reason = "max_steps"
    force_refresh = False
    for step in range(1, cfg.max_steps + 1):
        if force_refresh or step % cfg.fcp_refresh_every == 0:
            trial_bank = solve_filter_bank(data, Z, cfg.fcp)
            trial_images = bank_images(trial_bank, Z)
            trial_report = _evaluate(data, mask, trial_images, cfg)
            improved = trial_report.total < history[-1] * (1.0 - 1e-12)
            if trial_report.total <= history[-1]:
                bank = trial_bank
                images = trial_images
                report = trial_report
                refresh_steps.append(step)
            history.append(report.total)
            if force_refresh and not improved:
                # a skipped gradient step sent us here; nothing moved, so
                # the run has converged as far as this scheme can take it
                stop_reason = "stalled"
                break
            force_refresh = False
        else:
            try:
                grad = vm_loss_gradient(stack, Z, cfg.fcp, cfg.loss_weights,
                                        bank, isms_enabled=cfg.isms_enabled,
                                        images=images)
            except FloatingPointError as exc:
                raise NumericalAbortError(
                    f"aborted at step {step}: {exc}") from exc
            grad_rms = float(np.sqrt(np.mean(np.abs(grad) ** 2)))
            if grad_rms <= 0.0:
                history.append(report.total)
                stop_reason = "zero_gradient"
                break
            # the image map is linear in Z for fixed filters, so each trial
            # step costs only an axpy plus the elementwise loss
            grad_images = bank_images(bank, grad)
            eta = cfg.step_size * mix_rms / grad_rms
            accepted = False
            for _ in range(_MAX_BACKTRACKS + 1):
                trial_images = images - eta * grad_images
                trial_report = _evaluate(data, mask, trial_images, cfg)
                if trial_report.total <= history[-1]:
                    Z = Z - eta * grad
                    images = trial_images
                    report = trial_report
                    accepted = True
                    break
                eta *= 0.5
            history.append(report.total)
            if not accepted:
                force_refresh = True  # retry after re-solving the filters

        if len(history) > _EARLY_STOP_WINDOW:
            past = history[-1 - _EARLY_STOP_WINDOW]
            decrease = past - history[-1]
            if decrease < cfg.early_stop_rel_tol * max(abs(past), 1e-30):
                stop_reason = "converged"
                break

    obs = stack.observations
    tags = [ChannelTag(mic=stack.reference_channel, src=c)
            for c in range(Z.shape[0])]
    estimates = Spectrogram(data=Z, config=obs.config,
                            sample_rate=obs.sample_rate, channel_tags=tags)
    log.info("separation stopped after %d steps (%s): loss %.6g -> %.6g",
             len(history) - 1, stop_reason, history[0], history[-1])
    return SeparationResult(estimates=estimates,
                            loss_history=np.array(history),
                            initial_report=initial_report,
                            final_report=report,
                            steps_taken=len(history) - 1,
                            refresh_steps=refresh_steps,
                            stop_reason=stop_reason)
