"""Spatial clustering with a complex angular-central-Gaussian mixture model.

Each time-frequency bin's unit-normalized observation vector is explained by
one of K classes, each with a per-frequency Hermitian shape matrix. EM yields
soft per-bin class posteriors (masks). Because classes are fit independently
per frequency, a greedy correlation-based pass afterwards aligns class labels
across frequencies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .signals import ChannelTag, ConfigError, InvalidInputError, Spectrogram, StftConfig

_NORM_FLOOR = 1e-10
_QUAD_FLOOR = 1e-12


def default_sc_stft(sample_rate: int = 8000) -> StftConfig:
    """The clustering-stage analysis settings: 128 ms window, 16 ms hop."""
    return StftConfig.from_milliseconds(128.0, 16.0, sample_rate)


@dataclass(frozen=True)
class ScConfig:
    """Spatial-clustering settings.

    n_classes : mixture components K (sources, possibly plus a noise class).
    n_iter : EM iterations.
    eps : shape-matrix ridge, relative to trace/P, applied when near-singular.
    seed : controls the k-means initialization.
    drop_lowest_energy : discard the weakest class when selecting sources.
    """

    n_classes: int = 2
    n_iter: int = 20
    eps: float = 1e-6
    seed: int = 0
    drop_lowest_energy: bool = False
    stft: StftConfig = field(default_factory=default_sc_stft)

    def __post_init__(self):
        if self.n_classes < 1:
            raise ConfigError("n_classes must be at least 1")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be at least 1")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")


@dataclass
class CacgmmState:
    """Fitted mixture model and its per-bin posteriors.

    weights : [F, K] per-frequency class weights (rows sum to 1).
    shape_mats : [F, K, P, P] Hermitian positive-definite, trace-normalized.
    posteriors : [K, T, F] soft masks (sum to 1 over classes).
    log_likelihood_history : total data log-likelihood per EM iteration.
    """

    weights: np.ndarray
    shape_mats: np.ndarray
    posteriors: np.ndarray
    log_likelihood_history: np.ndarray = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return self.posteriors.shape[0]


def _unit_vectors(mix: Spectrogram) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalized observation vectors [T, F, P] and a validity mask [T, F]."""
    z = mix.data.transpose(1, 2, 0)  # [T, F, P]
    norm = np.linalg.norm(z, axis=2)
    valid = norm > _NORM_FLOOR * max(float(norm.max()), 1.0)
    safe = np.where(valid, norm, 1.0)
    return z / safe[..., None], valid


def _phase_features(z: np.ndarray) -> np.ndarray:
    """Wrap-free inter-channel phase features [T, F, 2(P-1)]."""
    rel = z[..., 1:] * np.conj(z[..., :1])
    mag = np.abs(rel)
    rel = rel / np.where(mag > 0, mag, 1.0)
    return np.concatenate([rel.real, rel.imag], axis=-1)


def _kmeans_labels(feats: np.ndarray, K: int, seed: int, n_iter: int = 10,
                   ) -> np.ndarray:
    """Plain seeded Lloyd iterations; feats is [N, D], returns labels [N]."""
    rng = np.random.default_rng(seed)
    centroids = feats[rng.choice(feats.shape[0], size=K, replace=False)].copy()
    labels = np.zeros(feats.shape[0], dtype=np.intp)
    for _ in range(n_iter):
        d2 = ((feats[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        for k in range(K):
            chosen = labels == k
            if chosen.any():
                centroids[k] = feats[chosen].mean(axis=0)
    return labels


def _init_posteriors(z: np.ndarray, valid: np.ndarray, cfg: ScConfig) -> np.ndarray:
    """Soft one-hot posteriors [K, T, F] from k-means on phase features."""
    T, F_bins, _ = z.shape
    K = cfg.n_classes
    if K == 1:
        return np.ones((1, T, F_bins))
    feats = _phase_features(z).reshape(T * F_bins, -1)
    labels = _kmeans_labels(feats, K, cfg.seed).reshape(T, F_bins)
    smooth = 0.1
    post = np.full((K, T, F_bins), smooth / K)
    for k in range(K):
        post[k][labels == k] += 1.0 - smooth
    post[:, ~valid] = 1.0 / K
    return post


def _e_step(z: np.ndarray, valid: np.ndarray, B: np.ndarray,
            weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Posteriors, quadratic forms, and total log-likelihood for the model.

    z : [T, F, P]; B : [F, K, P, P]; weights : [F, K].
    Returns (posteriors [K, T, F], zᴴB⁻¹z [K, T, F], log-likelihood).
    Invalid bins get the per-frequency weights as posterior and are excluded
    from the likelihood.
    """
    P = z.shape[-1]
    T = z.shape[0]
    Binv = np.linalg.inv(B)
    logdet = np.linalg.slogdet(B)[1]  # [F, K]
    quad = np.einsum("tfp,fkpq,tfq->ktf", z.conj(), Binv, z).real
    quad = np.maximum(quad, _QUAD_FLOOR)
    logd = -logdet.T[:, None, :] - P * np.log(quad)
    joint = logd + np.log(np.maximum(weights.T, 1e-300))[:, None, :]
    lse = logsumexp(joint, axis=0)  # [T, F]
    ll = float(lse[valid].sum())
    post = np.exp(joint - lse[None])
    post[:, ~valid] = np.broadcast_to(weights.T[:, None, :], (post.shape[0], T, post.shape[2]))[:, ~valid]
    return post, quad, ll


def _m_step_shapes(z: np.ndarray, valid: np.ndarray, post: np.ndarray,
                   quad: np.ndarray, eps: float) -> np.ndarray:
    """Fixed-point shape update, trace-normalized, ridged only near singularity.

    B_k(f) ∝ Σ_t γ·(z zᴴ)/(zᴴB_old⁻¹z); ``quad`` carries the previous
    iteration's quadratic forms (ones on the first call, which reduces to a
    weighted scatter). Trace normalization is likelihood-invariant; the ridge
    is applied unconditionally — a threshold-triggered ridge makes the
    iteration map discontinuous, which can limit-cycle on nearly
    rank-deficient classes instead of converging.
    """
    P = z.shape[-1]
    gamma = post * valid[None]  # [K, T, F]
    w = gamma / quad
    num = np.einsum("ktf,tfp,tfq->fkpq", w, z, z.conj())
    denom = np.maximum(gamma.sum(axis=1), 1e-300).T  # [F, K]
    B = P * num / denom[..., None, None]
    B = 0.5 * (B + np.conj(B.swapaxes(2, 3)))  # exact Hermitian symmetry
    tr = np.maximum(np.einsum("fkpp->fk", B).real, 1e-300)
    B = P * B / tr[..., None, None]  # trace now equals P, so trace/P = 1
    return B + eps * np.eye(P)


def cacgmm_em(mix: Spectrogram, cfg: ScConfig) -> CacgmmState:
    """Fit the mixture by EM and return the final state with posteriors.

    Initialization is seeded k-means on inter-channel phase features; each
    iteration runs one E-step and one fixed-point M-step (a
    majorize-minimize step, so the recorded log-likelihood sequence is
    non-decreasing). The returned posteriors correspond to the final
    parameters, and ``log_likelihood_history`` has ``n_iter + 1`` entries.
    """
    if mix.num_channels < 2:
        raise InvalidInputError("spatial clustering needs at least 2 channels")
    K = cfg.n_classes
    z, valid = _unit_vectors(mix)  # [T, F, P], [T, F]
    T, F_bins = valid.shape

    post = _init_posteriors(z, valid, cfg)
    weights = np.full((F_bins, K), 1.0 / K)
    B = _m_step_shapes(z, valid, post, np.ones((K, T, F_bins)), cfg.eps)

    ll_history = []
    for _ in range(cfg.n_iter):
        post, quad, ll = _e_step(z, valid, B, weights)
        ll_history.append(ll)
        gamma = post * valid[None]
        weights = (gamma.sum(axis=1) / np.maximum(valid.sum(axis=0), 1.0)).T
        weights = weights / np.maximum(weights.sum(axis=1, keepdims=True), 1e-300)
        B = _m_step_shapes(z, valid, post, quad, cfg.eps)

    post, _, ll = _e_step(z, valid, B, weights)
    ll_history.append(ll)
    return CacgmmState(weights=weights, shape_mats=B, posteriors=post,
                       log_likelihood_history=np.array(ll_history))


def align_permutations(state: CacgmmState) -> CacgmmState:
    """Resolve per-frequency class label permutations.

    Starting from the frequency whose posterior time-profiles vary the most,
    frequencies are visited in order of distance from that seed; at each one
    the class permutation maximizing the summed Pearson correlation with the
    running mean profile is applied to posteriors, weights, and shape
    matrices alike. Zero-variance profiles correlate as 0.
    """
    post = state.posteriors
    K, T, F_bins = post.shape
    if K == 1:
        return state
    perms = list(itertools.permutations(range(K)))

    var_per_f = post.var(axis=1).sum(axis=0)  # [F]
    seed_f = int(np.argmax(var_per_f))
    order = sorted(range(F_bins), key=lambda f: (abs(f - seed_f), f))

    def _corr(a: np.ndarray, b: np.ndarray) -> float:
        a = a - a.mean()
        b = b - b.mean()
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 0.0
        return float(np.dot(a, b) / (na * nb))

    new_post = post.copy()
    new_weights = state.weights.copy()
    new_B = state.shape_mats.copy()
    centroid = post[:, :, seed_f].astype(np.float64).copy()
    count = 1
    for f in order:
        profiles = post[:, :, f]
        best_perm, best_score = perms[0], -np.inf
        for perm in perms:
            score = sum(_corr(profiles[perm[k]], centroid[k]) for k in range(K))
            if score > best_score:
                best_score, best_perm = score, perm
        perm = list(best_perm)
        new_post[:, :, f] = profiles[perm]
        new_weights[f, :] = state.weights[f, perm]
        new_B[f] = state.shape_mats[f, perm]
        centroid = (centroid * count + new_post[:, :, f]) / (count + 1)
        count += 1
    return CacgmmState(weights=new_weights, shape_mats=new_B,
                       posteriors=new_post,
                       log_likelihood_history=state.log_likelihood_history)


def class_energies(mix: Spectrogram, state: CacgmmState,
                   ref_channel: int = 0) -> np.ndarray:
    """Energy of each class's masked reference channel, for source selection."""
    ref = np.abs(mix.data[ref_channel]) ** 2  # [T, F]
    return np.einsum("ktf,tf->k", state.posteriors ** 2, ref)


def select_classes(mix: Spectrogram, state: CacgmmState, count: int) -> list[int]:
    """Indices of the ``count`` highest-energy classes (ties keep lower index)."""
    energies = class_energies(mix, state)
    K = len(energies)
    if not 1 <= count <= K:
        raise InvalidInputError(f"count must be in [1, {K}]")
    order = sorted(range(K), key=lambda k: (-energies[k], k))
    return sorted(order[:count])


def sc_virtual_channels(mix: Spectrogram, state: CacgmmState,
                        kept: list[int] | None = None) -> Spectrogram:
    """Posterior-masked mixture channels as virtual microphones.

    V_{p,c}(t,f) = posterior_c(t,f) · Y_p(t,f) for each physical p and kept
    class c, ordered p-major / c-minor and tagged accordingly. With all
    classes kept, the virtual channels of one microphone sum back to that
    microphone's mixture (posteriors sum to one).
    """
    if kept is None:
        kept = list(range(state.n_classes))
    chans = []
    tags = []
    for p in range(mix.num_channels):
        for ci, c in enumerate(kept):
            chans.append(state.posteriors[c] * mix.data[p])
            tags.append(ChannelTag(mic=p, src=ci))
    return Spectrogram(data=np.stack(chans), config=mix.config,
                       sample_rate=mix.sample_rate, channel_tags=tags)
