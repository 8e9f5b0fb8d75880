"""Virtual microphones: back-projection of demixed sources and stack assembly.

A virtual microphone is a synthesized channel carrying (approximately) one
source's image at one physical microphone, obtained by scaling the demixed
source estimate with the corresponding entry of the estimated mixing matrix.
Stacking the physical channels with all virtual ones yields the augmented
observation set the separator's loss is evaluated on: a demixer with C'
sources over P_r mics contributes Q = C'·P_r virtual channels, for
P_r·(1 + C') channels in total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import ChannelTag, InvalidInputError, Spectrogram


@dataclass
class AugmentedStack:
    """Physical channels followed by virtual ones, with channel tags.

    observations : Spectrogram with P_r physical channels first (microphone
        order), then Q virtual channels in (mic-major, source-minor) order.
    """

    observations: Spectrogram
    num_physical: int
    num_virtual: int

    def __post_init__(self):
        if self.num_physical + self.num_virtual != self.observations.num_channels:
            raise InvalidInputError("channel counts do not add up")
        tags = self.observations.channel_tags
        if any(not t.is_physical for t in tags[:self.num_physical]):
            raise InvalidInputError("physical channels must come first")
        if any(t.is_physical for t in tags[self.num_physical:]):
            raise InvalidInputError("virtual channels must follow the physical ones")

    @property
    def num_channels(self) -> int:
        return self.observations.num_channels

    @property
    def reference_channel(self) -> int:
        return 0

    @property
    def data(self) -> np.ndarray:
        return self.observations.data


def backproject(sol) -> Spectrogram:
    """Back-project each separated source to every physical microphone.

    V_{p,c}(t,f) = A_{p,c}(f) · Ŝ_c(t,f), ordered mic-major / source-minor
    and tagged Virtual(p, c). In the determined case A = W⁻¹, so the virtual
    channels of one microphone sum to that microphone's mixture.
    """
    A = np.asarray(sol.A)  # [F, P, C]
    sep = sol.separated  # Spectrogram [C, T, F]
    F_bins, P, C = A.shape
    if sep.num_channels != C:
        raise InvalidInputError(
            f"mixing estimate covers {C} sources, solution has "
            f"{sep.num_channels} separated channels")
    if sep.num_bins != F_bins:
        raise InvalidInputError("mixing estimate and spectra disagree on bins")
    chans = np.empty((P * C, sep.num_frames, F_bins), dtype=np.complex128)
    tags = []
    for p in range(P):
        for c in range(C):
            chans[p * C + c] = A[:, p, c][None, :] * sep.data[c]
            tags.append(ChannelTag(mic=p, src=c))
    return Spectrogram(data=chans, config=sep.config,
                       sample_rate=sep.sample_rate, channel_tags=tags)


def build_stack(physical: Spectrogram, virtual: Spectrogram | None = None,
                ) -> AugmentedStack:
    """Concatenate physical and virtual channels into an AugmentedStack.

    Pass ``virtual=None`` (or an empty spectrogram) for the plain-mixture
    configuration with no augmentation.
    """
    if any(not t.is_physical for t in physical.channel_tags):
        raise InvalidInputError("first argument must contain physical channels only")
    if virtual is None or virtual.num_channels == 0:
        obs = Spectrogram(data=physical.data.copy(), config=physical.config,
                          sample_rate=physical.sample_rate,
                          channel_tags=list(physical.channel_tags))
        return AugmentedStack(observations=obs,
                              num_physical=physical.num_channels, num_virtual=0)
    if virtual.config != physical.config:
        raise InvalidInputError("physical and virtual stacks use different "
                                "analysis settings")
    if virtual.data.shape[1:] != physical.data.shape[1:]:
        raise InvalidInputError("physical and virtual stacks disagree on "
                                "frames or bins")
    if any(t.is_physical for t in virtual.channel_tags):
        raise InvalidInputError("second argument must contain virtual channels only")
    data = np.concatenate([physical.data, virtual.data], axis=0)
    tags = list(physical.channel_tags) + list(virtual.channel_tags)
    obs = Spectrogram(data=data, config=physical.config,
                      sample_rate=physical.sample_rate, channel_tags=tags)
    return AugmentedStack(observations=obs, num_physical=physical.num_channels,
                          num_virtual=virtual.num_channels)
