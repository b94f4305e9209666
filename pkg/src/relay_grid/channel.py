"""Rayleigh block-fading link math.

Channel gains ``g = |h|^2`` are exponential with mean ``lam``.  Energy is
quantized in units of the per-packet relay energy ``E_r = alpha * P_s * T``
with ``T = 1``, so a source transmission charges relay ``j`` by
``floor((rho / alpha) * g_j)`` units; any fractional remainder is lost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChannelParams:
    """Average gain of one link."""

    mean_gain: float = 1.0

    def __post_init__(self):
        if not self.mean_gain > 0:
            raise ValueError(f"mean_gain must be positive, got {self.mean_gain}")


@dataclass(frozen=True)
class PowerParams:
    """Transmit powers, harvesting and rate parameters.

    ``relay_coeff`` is the ratio ``P_r / P_s`` and ``harvest_coeff`` the
    fraction of incident energy converted into stored energy.
    """

    source_power: float = 1.0
    relay_coeff: float = 1.0
    harvest_coeff: float = 0.5
    noise_power: float = 1.0
    target_rate: float = 1.0

    def __post_init__(self):
        if not self.source_power > 0:
            raise ValueError("source_power must be positive")
        if not 0 < self.relay_coeff <= 1:
            raise ValueError(f"relay_coeff must lie in (0, 1], got {self.relay_coeff}")
        if not self.harvest_coeff >= 0:
            raise ValueError("harvest_coeff must be nonnegative")
        if not self.noise_power > 0:
            raise ValueError("noise_power must be positive")
        if not self.target_rate > 0:
            raise ValueError("target_rate must be positive")

    @property
    def relay_power(self) -> float:
        return self.relay_coeff * self.source_power

    @property
    def xi_source(self) -> float:
        """Outage gain threshold for source-to-relay links."""
        return outage_threshold(self.target_rate, self.source_power, self.noise_power)

    @property
    def xi_relay(self) -> float:
        """Outage gain threshold for relay-to-destination links."""
        return outage_threshold(self.target_rate, self.relay_power, self.noise_power)

    @property
    def charge_step(self) -> float:
        """Gain needed per stored energy unit, ``alpha / rho`` (inf if rho == 0)."""
        if self.harvest_coeff == 0:
            return math.inf
        return self.relay_coeff / self.harvest_coeff


def outage_threshold(target_rate: float, tx_power: float, noise_power: float) -> float:
    """Gain below which ``log2(1 + P g / sigma^2)`` falls short of ``target_rate``."""
    return math.expm1(target_rate * math.log(2.0)) * noise_power / tx_power


def capacity(gain, tx_power, noise_power):
    return np.log2(1.0 + tx_power * np.asarray(gain) / noise_power)[()]


def gain_cdf(x: float, mean_gain: float) -> float:
    """CDF of an exponential gain; ``x = inf`` gives 1."""
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return -math.expm1(-x / mean_gain)


def outage_prob(xi: float, mean_gain: float) -> float:
    """Probability that a link with mean gain ``mean_gain`` cannot carry the
    target rate, given its threshold ``xi`` (see :func:`outage_threshold`)."""
    return gain_cdf(xi, mean_gain)


def energy_increment(gain, params: PowerParams):
    """Whole energy units harvested from one source transmission."""
    if params.harvest_coeff == 0:
        return np.zeros_like(np.asarray(gain), dtype=np.int64)[()]
    ratio = params.harvest_coeff / params.relay_coeff
    return np.floor(ratio * np.asarray(gain)).astype(np.int64)[()]


def _check_m(m: int, headroom: int):
    if m < 0 or headroom < 0:
        raise ValueError("m and headroom must be nonnegative")
    if m > headroom:
        raise ValueError(f"increment m={m} exceeds storage headroom {headroom}")


def charge_prob(m: int, headroom: int, mean_gain: float, params: PowerParams) -> float:
    """Probability that a storage with ``headroom`` free units grows by ``m``.

    The top value ``m == headroom`` absorbs every larger harvest (the
    storage saturates).
    """
    _check_m(m, headroom)
    step = params.charge_step
    if math.isinf(step):
        return 1.0 if m == 0 else 0.0
    upper = math.inf if m == headroom else (m + 1) * step
    return gain_cdf(upper, mean_gain) - gain_cdf(m * step, mean_gain)


def charge_and_outage_prob(m: int, headroom: int, mean_gain: float, xi: float,
                           params: PowerParams) -> float:
    """Joint probability of growing the storage by ``m`` while the same
    source link is in outage (gain below ``xi``)."""
    _check_m(m, headroom)
    step = params.charge_step
    if math.isinf(step):
        return gain_cdf(xi, mean_gain) if m == 0 else 0.0
    lower = m * step
    if xi <= lower:
        return 0.0
    upper = xi if m == headroom else min((m + 1) * step, xi)
    return max(0.0, gain_cdf(upper, mean_gain) - gain_cdf(lower, mean_gain))


def charge_prob_vector(headroom: int, mean_gain: float, params: PowerParams,
                       xi: float | None = None) -> np.ndarray:
    """Vector over ``m = 0..headroom`` of :func:`charge_prob`, or of
    :func:`charge_and_outage_prob` when ``xi`` is given."""
    if xi is None:
        return np.array([charge_prob(m, headroom, mean_gain, params)
                         for m in range(headroom + 1)])
    return np.array([charge_and_outage_prob(m, headroom, mean_gain, xi, params)
                     for m in range(headroom + 1)])


def sample_gain(mean_gain, rng: np.random.Generator, size=None):
    """Draw block-fading gains; ``mean_gain`` may be an array broadcast over ``size``."""
    return rng.exponential(mean_gain, size=size)
