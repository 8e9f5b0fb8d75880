"""Separation quality metrics: scale-invariant SDR and permutation search."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .signals import InvalidInputError

SI_SDR_CAP_DB = 200.0


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is rescaled by the least-squares projection coefficient
    ``<est, ref> / ||ref||^2`` before computing the ratio, so the metric
    ignores any global gain on the estimate. Values are clamped to
    [-200, +200] dB; numerically identical signals score exactly +200. No
    mean removal is applied.
    """
    est = np.asarray(estimate, dtype=np.float64).ravel()
    ref = np.asarray(reference, dtype=np.float64).ravel()
    if est.shape != ref.shape:
        raise InvalidInputError("estimate and reference must have equal length")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise InvalidInputError("reference signal is all zeros")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    err = target - est
    num = float(np.dot(target, target))
    den = float(np.dot(err, err))
    if num == 0.0:  # no target component at all (zero or orthogonal estimate)
        return -SI_SDR_CAP_DB
    if den == 0.0:
        return SI_SDR_CAP_DB
    value = float(10.0 * np.log10(num / den))
    return float(np.clip(value, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


@dataclass
class ScoreCard:
    """Permutation-resolved SI-SDR scores for one scene.

    ``permutation[c]`` is the index of the estimate assigned to reference c;
    ``improvement_over_mixture`` is NaN when no mixture channel was supplied.
    """

    per_source_si_sdr: np.ndarray
    permutation: tuple[int, ...]
    mean_si_sdr: float
    improvement_over_mixture: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "per_source_si_sdr": [float(v) for v in self.per_source_si_sdr],
            "permutation": list(self.permutation),
            "mean_si_sdr": float(self.mean_si_sdr),
            "improvement_over_mixture": float(self.improvement_over_mixture),
        }


def pit_score(estimates: np.ndarray, references: np.ndarray,
              mixture: np.ndarray | None = None) -> ScoreCard:
    """Permutation-invariant SI-SDR: best assignment over all C! pairings.

    Ties are broken toward the lexicographically smallest permutation. When
    ``mixture`` (one channel) is given, the card also reports the gain over
    scoring that same mixture against every reference.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if est.shape[0] != ref.shape[0]:
        raise InvalidInputError("need equally many estimates and references")
    if est.shape[1] != ref.shape[1]:
        raise InvalidInputError("estimate/reference length mismatch")
    C = est.shape[0]
    if C > 6:
        raise InvalidInputError("exhaustive permutation search limited to C <= 6")
    table = np.empty((C, C))
    for i in range(C):
        for j in range(C):
            table[i, j] = si_sdr(est[i], ref[j])
    best_perm = None
    best_mean = -np.inf
    for perm in itertools.permutations(range(C)):  # lexicographic order
        mean = float(np.mean([table[perm[j], j] for j in range(C)]))
        if mean > best_mean:
            best_mean = mean
            best_perm = perm
    per_source = np.array([table[best_perm[j], j] for j in range(C)])

    improvement = float("nan")
    if mixture is not None:
        mix = np.asarray(mixture, dtype=np.float64).ravel()
        baseline = float(np.mean([si_sdr(mix, r) for r in ref]))
        improvement = best_mean - baseline
    return ScoreCard(per_source_si_sdr=per_source, permutation=tuple(best_perm),
                     mean_si_sdr=best_mean, improvement_over_mixture=improvement)
