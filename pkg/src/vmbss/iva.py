"""Auxiliary-function independent vector analysis with a Gaussian source model.

Estimates per-frequency demixing matrices by alternating (a) per-frame source
variances from the current estimates and (b) one-row-at-a-time demixing
updates that exactly minimize the quadratic auxiliary bound. Over-determined
inputs are first reduced to the requested source count by per-frequency PCA
whitening; the reduction is composed into the returned rectangular demixing
map so it always acts on the raw physical channels.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .signals import ConfigError, InvalidInputError, Spectrogram, StftConfig

log = logging.getLogger(__name__)

_POWER_FLOOR = 1e-12


def default_iva_stft(sample_rate: int = 8000) -> StftConfig:
    """The demixer-stage analysis settings: 256 ms window, 32 ms hop."""
    return StftConfig.from_milliseconds(256.0, 32.0, sample_rate)


@dataclass(frozen=True)
class IvaConfig:
    """Settings for one demixing run.

    n_src : number of sources to extract (≤ input channels).
    n_iter : update sweeps.
    eps : relative regularization for rank-deficient covariances.
    drop_lowest_energy : discard the weakest extracted source afterwards.
    stft : analysis settings used when starting from a waveform.
    """

    n_src: int = 2
    n_iter: int = 50
    eps: float = 1e-6
    drop_lowest_energy: bool = False
    stft: StftConfig = field(default_factory=default_iva_stft)

    def __post_init__(self):
        if self.n_src < 1:
            raise ConfigError("n_src must be at least 1")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be at least 1")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")


@dataclass
class DemixingSolution:
    """Per-frequency linear demixer plus its separated components.

    W : complex [F, C', P_r] — row c is the demixing vector of source c
        (estimates are ``W[f] @ Y(t, f)``, no extra conjugation).
    A : complex [F, P_r, C'] — mixing estimate, the pseudo-inverse of W.
    separated : Spectrogram with C' channels, scaled to the reference mic.
    source_energies : Σ|Ŝ|² per kept source.
    kept_indices : original source indices surviving any drop step.
    objective_history : auxiliary negative log-likelihood per sweep.
    """

    W: np.ndarray
    A: np.ndarray
    separated: Spectrogram
    source_energies: np.ndarray
    kept_indices: list[int]
    objective_history: np.ndarray = field(default=None, repr=False)

    @property
    def num_sources(self) -> int:
        return self.W.shape[1]

    @property
    def num_mics(self) -> int:
        return self.W.shape[2]


def _whitening_reduction(Y: np.ndarray, n_src: int) -> np.ndarray:
    """Per-frequency PCA reduction [F, n_src, P] onto the top components."""
    F, P, T = Y.shape[0], Y.shape[1], Y.shape[2]
    cov = np.einsum("fpt,fqt->fpq", Y, Y.conj()) / T
    vals, vecs = np.linalg.eigh(cov)  # ascending
    top = slice(P - n_src, P)
    lam = vals[:, top]  # [F, n_src]
    U = vecs[:, :, top]  # [F, P, n_src]
    floor = np.maximum(1e-12 * vals[:, -1:], 1e-30)
    lam = np.maximum(lam, floor)
    return (U / np.sqrt(lam)[:, None, :]).conj().swapaxes(1, 2)


def _ip1_sweep(W: np.ndarray, X: np.ndarray, power: np.ndarray,
               eps: float) -> np.ndarray:
    """One pass of single-row iterative-projection updates.

    W : [F, C, C]; X : [F, C, T] (whitened observations);
    power : [C, T] per-frame source powers from the current estimates,
    already floored so the weight dynamic range stays within float64.
    """
    F, C, T = X.shape
    weights = 1.0 / power  # [C, T]
    for c in range(C):
        V = np.einsum("fpt,t,fqt->fpq", X, weights[c], X.conj()) / T
        WV = W @ V
        rhs = np.zeros((C, 1), dtype=np.complex128)
        rhs[c, 0] = 1.0
        try:
            u = np.linalg.solve(WV, np.broadcast_to(rhs, (F, C, 1)))[..., 0]
        except np.linalg.LinAlgError:
            warnings.warn("rank-deficient weighted covariance; regularizing",
                          RuntimeWarning, stacklevel=2)
            tr = np.einsum("fpp->f", V).real / C
            V = V + (eps * tr)[:, None, None] * np.eye(C)
            WV = W @ V
            u = np.linalg.solve(WV, np.broadcast_to(rhs, (F, C, 1)))[..., 0]
        denom = np.einsum("fp,fpq,fq->f", u.conj(), V, u).real
        denom = np.maximum(denom, _POWER_FLOOR)
        W[:, c, :] = u.conj() / np.sqrt(denom)[:, None]
    return W


def _frame_powers(S: np.ndarray, floor: float = _POWER_FLOOR) -> np.ndarray:
    """Per-frame source power averaged over frequency; S is [F, C, T].

    The floor caps the dynamic range of the 1/power weights: a frame where
    every source is momentarily silent would otherwise dominate the weighted
    covariance by ~15 orders of magnitude and destroy the row updates.
    """
    return np.mean(np.abs(S) ** 2, axis=0).clip(min=floor)


def _objective(S: np.ndarray, W: np.ndarray,
               floor: float = _POWER_FLOOR) -> float:
    """Model negative log-likelihood (up to an additive constant).

    Per frame and source the variance estimate is the frequency-averaged
    power, floored; the quadratic term is constant (= F) wherever the floor
    is inactive but must be kept so the objective stays exactly monotone
    when silent frames are floored.
    """
    F_bins = S.shape[0]
    T = S.shape[2]
    raw = np.mean(np.abs(S) ** 2, axis=0)  # [C, T]
    power = raw.clip(min=floor)
    quad = F_bins * np.sum(raw / power)
    logdet = np.linalg.slogdet(W)[1]  # log |det W| per frequency
    return float(F_bins * np.sum(np.log(power)) + quad
                 - 2.0 * T * np.sum(logdet))


def auxiva_run(mix: Spectrogram, cfg: IvaConfig) -> DemixingSolution:
    """Run AuxIVA on a multichannel spectrogram.

    Deterministic: identity initialization (in the whitened space for
    over-determined inputs), row-cyclic updates, and minimal-distortion
    scaling to the first microphone at the end. The returned ``A`` is the
    per-frequency Moore–Penrose pseudo-inverse of ``W``, so for determined
    runs ``A(f) @ W(f)`` is the identity.
    """
    P = mix.num_channels
    if cfg.n_src > P:
        raise ConfigError(f"cannot extract {cfg.n_src} sources from {P} channels")
    if cfg.n_src < 2:
        raise ConfigError("need at least 2 sources for separation")
    if mix.num_frames < 2 * cfg.n_src:
        raise InvalidInputError("too few frames for a stable demixing estimate")

    Y = mix.data.transpose(2, 0, 1)  # [F, P, T]
    F_bins = Y.shape[0]
    C = cfg.n_src

    if C < P:
        reduction = _whitening_reduction(Y, C)  # [F, C, P]
        X = reduction @ Y
    else:
        reduction = np.broadcast_to(np.eye(P), (F_bins, P, P))
        X = Y

    W = np.tile(np.eye(C, dtype=np.complex128), (F_bins, 1, 1))
    S = W @ X  # [F, C, T]
    # fixed scale-aware power floor; keeping it constant across iterations
    # keeps the alternating updates exactly monotone in the floored model
    floor = max(1e-6 * float(np.mean(np.abs(S) ** 2)), _POWER_FLOOR)
    history = [_objective(S, W, floor)]
    for _ in range(cfg.n_iter):
        power = _frame_powers(S, floor)
        W = _ip1_sweep(W, X, power, cfg.eps)
        S = W @ X
        history.append(_objective(S, W, floor))

    W_full = W @ reduction  # [F, C, P]
    A_full = np.linalg.pinv(W_full)  # [F, P, C]
    # minimal-distortion scaling: estimates become reference-mic images
    d = A_full[:, 0, :]  # [F, C]
    W_full = d[:, :, None] * W_full
    A_full = np.linalg.pinv(W_full)

    separated = np.einsum("fcp,ptf->ctf", W_full, mix.data)
    energies = np.sum(np.abs(separated) ** 2, axis=(1, 2))
    sep = Spectrogram(data=separated, config=mix.config,
                      sample_rate=mix.sample_rate)
    sol = DemixingSolution(W=W_full, A=A_full, separated=sep,
                           source_energies=energies,
                           kept_indices=list(range(C)),
                           objective_history=np.array(history))
    if cfg.drop_lowest_energy:
        sol = drop_lowest_energy(sol, C - 1)
    return sol


def drop_lowest_energy(sol: DemixingSolution, target_count: int) -> DemixingSolution:
    """Keep the ``target_count`` strongest sources of a solution.

    Rows of W and columns of A are pruned together; on energy ties the
    lower-indexed source is kept. ``kept_indices`` maps back to the original
    source numbering.
    """
    C = sol.num_sources
    if not 1 <= target_count < C:
        raise InvalidInputError(f"target_count must be in [1, {C})")
    order = sorted(range(C), key=lambda c: (-sol.source_energies[c], c))
    kept = sorted(order[:target_count])
    log.debug("dropping sources %s (energies %s)",
              [c for c in range(C) if c not in kept], sol.source_energies)
    sep = Spectrogram(data=sol.separated.data[kept], config=sol.separated.config,
                      sample_rate=sol.separated.sample_rate)
    return DemixingSolution(
        W=sol.W[:, kept, :],
        A=sol.A[:, :, kept],
        separated=sep,
        source_energies=sol.source_energies[kept],
        kept_indices=[sol.kept_indices[c] for c in kept],
        objective_history=sol.objective_history,
    )
