"""Joint data-buffer / energy-storage state of the relay network."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from .channel import ChannelParams, PowerParams, outage_prob

DEFAULT_STATE_CAP = 1_000_000


class Direction(IntEnum):
    SOURCE_TO_RELAY = 0
    RELAY_TO_DESTINATION = 1


class Link(NamedTuple):
    """A source-to-relay or relay-to-destination link.

    Tuple ordering (direction first, then relay index) is the deterministic
    tie-break used when two links predict equally available states.
    """

    direction: Direction
    relay: int

    @classmethod
    def source(cls, relay: int) -> "Link":
        return cls(Direction.SOURCE_TO_RELAY, relay)

    @classmethod
    def relay_to_dest(cls, relay: int) -> "Link":
        return cls(Direction.RELAY_TO_DESTINATION, relay)

    @property
    def is_source(self) -> bool:
        return self.direction == Direction.SOURCE_TO_RELAY

    def flat(self, num_relays: int) -> int:
        """Position in a ``2K`` gain vector: source links first."""
        return int(self.direction) * num_relays + self.relay

    @classmethod
    def from_flat(cls, index: int, num_relays: int) -> "Link":
        return cls(Direction(index // num_relays), index % num_relays)

    def __str__(self):
        k = self.relay + 1
        return f"s->{k}" if self.is_source else f"{k}->d"


@dataclass(frozen=True)
class NetworkConfig:
    """K relays with uniform buffer/storage capacities.

    ``source_means[k]`` and ``relay_means[k]`` are the average gains of
    links s->k and k->d.  Omitted means default to 1.
    """

    num_relays: int
    buffer_capacity: int
    storage_capacity: int
    power: PowerParams = field(default_factory=PowerParams)
    source_means: tuple = ()
    relay_means: tuple = ()

    def __post_init__(self):
        if self.num_relays < 1:
            raise ValueError("num_relays must be >= 1")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.storage_capacity < 1:
            raise ValueError("storage_capacity must be >= 1")
        for name in ("source_means", "relay_means"):
            means = tuple(float(v) for v in getattr(self, name)) or (1.0,) * self.num_relays
            if len(means) != self.num_relays:
                raise ValueError(f"{name} needs {self.num_relays} entries, got {len(means)}")
            for v in means:
                ChannelParams(v)
            object.__setattr__(self, name, means)

    @classmethod
    def uniform(cls, num_relays, buffer_capacity, storage_capacity, mean_gain=1.0,
                **power_kwargs) -> "NetworkConfig":
        return cls(num_relays, buffer_capacity, storage_capacity,
                   PowerParams(**power_kwargs),
                   (mean_gain,) * num_relays, (mean_gain,) * num_relays)

    @property
    def K(self) -> int:
        return self.num_relays

    @property
    def num_states(self) -> int:
        return ((self.buffer_capacity + 1) * (self.storage_capacity + 1)) ** self.num_relays

    def with_power(self, **changes) -> "NetworkConfig":
        return replace(self, power=replace(self.power, **changes))

    def with_snr(self, snr_db: float) -> "NetworkConfig":
        """Set ``P_s`` so that ``10 log10(P_s / sigma^2) = snr_db``."""
        return self.with_power(source_power=self.power.noise_power * 10 ** (snr_db / 10))

    def mean_gain(self, link: Link) -> float:
        return (self.source_means if link.is_source else self.relay_means)[link.relay]

    def xi(self, link: Link) -> float:
        return self.power.xi_source if link.is_source else self.power.xi_relay

    def link_outage_prob(self, link: Link) -> float:
        return outage_prob(self.xi(link), self.mean_gain(link))

    def predicted_increments(self) -> tuple:
        """Quantized expected harvest ``floor((rho/alpha) * lambda_j)`` per relay."""
        if self.power.harvest_coeff == 0:
            return (0,) * self.num_relays
        ratio = self.power.harvest_coeff / self.power.relay_coeff
        return tuple(int(np.floor(ratio * lam)) for lam in self.source_means)


_STATE_RE = re.compile(r"^D:\[([\d,\s]*)\];E:\[([\d,\s]*)\]$")


@dataclass(frozen=True)
class SystemState:
    data: tuple
    energy: tuple

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(int(v) for v in self.data))
        object.__setattr__(self, "energy", tuple(int(v) for v in self.energy))
        if len(self.data) != len(self.energy):
            raise ValueError("data and energy vectors differ in length")

    @classmethod
    def empty(cls, num_relays: int) -> "SystemState":
        return cls((0,) * num_relays, (0,) * num_relays)

    def validate(self, config: NetworkConfig) -> "SystemState":
        if len(self.data) != config.num_relays:
            raise ValueError("state size does not match num_relays")
        if any(not 0 <= d <= config.buffer_capacity for d in self.data):
            raise ValueError(f"data lengths out of range: {self.data}")
        if any(not 0 <= e <= config.storage_capacity for e in self.energy):
            raise ValueError(f"energy lengths out of range: {self.energy}")
        return self

    def __str__(self):
        return ("D:[" + ",".join(map(str, self.data)) + "];E:["
                + ",".join(map(str, self.energy)) + "]")

    @classmethod
    def parse(cls, text: str) -> "SystemState":
        match = _STATE_RE.match(text.strip())
        if not match:
            raise ValueError(f"not a state string: {text!r}")
        to_ints = lambda s: tuple(int(v) for v in s.split(",") if v.strip())
        return cls(to_ints(match.group(1)), to_ints(match.group(2)))


def availability_indices(state: SystemState, config: NetworkConfig, relay: int):
    """(distance from empty buffer, distance from full buffer, stored energy)."""
    d = state.data[relay]
    return d, config.buffer_capacity - d, state.energy[relay]


def availability_vector(state: SystemState, config: NetworkConfig) -> tuple:
    """All 3K availability indices, ascending."""
    out = []
    for k in range(config.num_relays):
        out.extend(availability_indices(state, config, k))
    return tuple(sorted(out))


def compare_availability(a: Sequence[int], b: Sequence[int]) -> int:
    """Return 1 if ``a`` is more available than ``b``, -1 if less, 0 if equal.

    Vectors are compared lexicographically from their smallest entry up.
    """
    if len(a) != len(b):
        raise ValueError(f"availability vectors differ in length: {len(a)} vs {len(b)}")
    a, b = tuple(a), tuple(b)
    return (a > b) - (a < b)


def available_links(state: SystemState, config: NetworkConfig) -> list:
    """Available links in canonical order (source links, then relay links)."""
    links = [Link.source(k) for k in range(config.num_relays)
             if state.data[k] < config.buffer_capacity]
    links += [Link.relay_to_dest(k) for k in range(config.num_relays)
              if state.data[k] > 0 and state.energy[k] > 0]
    return links


def is_edge_state(state: SystemState, config: NetworkConfig):
    """Return ``(True, q)`` if all storages are empty, buffer ``q`` holds one
    packet less than capacity and every other buffer is full; else ``(False, None)``."""
    if any(state.energy):
        return False, None
    cap = config.buffer_capacity
    short = [k for k, d in enumerate(state.data) if d != cap]
    if len(short) == 1 and state.data[short[0]] == cap - 1:
        return True, short[0]
    return False, None


def is_deadlock(state: SystemState, config: NetworkConfig) -> bool:
    return not available_links(state, config)


def apply_transition(state: SystemState, link: Link, increments: Sequence[int],
                     config: NetworkConfig) -> SystemState:
    """Successor state after ``link`` carries one packet.

    ``increments[j]`` is the energy harvested at relay ``j`` and must be zero
    for the transmitting relay and for every relay when a relay link fires.
    """
    if link not in available_links(state, config):
        raise ValueError(f"link {link} is not available in state {state}")
    data, energy = list(state.data), list(state.energy)
    k = link.relay
    if link.is_source:
        if increments[k]:
            raise ValueError("the receiving relay cannot harvest in the same slot")
        data[k] = min(data[k] + 1, config.buffer_capacity)
        for j, m in enumerate(increments):
            if m < 0:
                raise ValueError("energy increments must be nonnegative")
            energy[j] = min(energy[j] + int(m), config.storage_capacity)
    else:
        if any(increments):
            raise ValueError("relay transmissions harvest no energy")
        data[k] = max(data[k] - 1, 0)
        energy[k] = max(energy[k] - 1, 0)
    return SystemState(data, energy)


class StateSpace:
    """Mixed-radix indexing of all states of a configuration.

    Digit order, most significant first: ``D_1 .. D_K`` (radix L_D + 1) then
    ``E_1 .. E_K`` (radix L_E + 1).  The all-empty state has index 0.
    """

    def __init__(self, config: NetworkConfig, cap: int = DEFAULT_STATE_CAP):
        if config.num_states > cap:
            raise ValueError(f"{config.num_states} states exceed the analytical cap {cap}")
        self.config = config
        K = config.num_relays
        rd, re_ = config.buffer_capacity + 1, config.storage_capacity + 1
        self.energy_strides = np.array([re_ ** (K - 1 - k) for k in range(K)], dtype=np.int64)
        self.data_strides = np.array([re_ ** K * rd ** (K - 1 - k) for k in range(K)],
                                     dtype=np.int64)
        self.size = config.num_states

    def __len__(self):
        return self.size

    def index(self, state: SystemState) -> int:
        return int(np.dot(state.data, self.data_strides) + np.dot(state.energy, self.energy_strides))

    def state_of(self, index: int) -> SystemState:
        if not 0 <= index < self.size:
            raise IndexError(index)
        K = self.config.num_relays
        rd, re_ = self.config.buffer_capacity + 1, self.config.storage_capacity + 1
        digits = np.unravel_index(index, (rd,) * K + (re_,) * K)
        return SystemState(digits[:K], digits[K:])

    def arrays(self):
        """``(data, energy)`` integer arrays of shape ``(n_states, K)``."""
        K = self.config.num_relays
        rd, re_ = self.config.buffer_capacity + 1, self.config.storage_capacity + 1
        grid = np.unravel_index(np.arange(self.size), (rd,) * K + (re_,) * K)
        stacked = np.stack(grid, axis=1).astype(np.int64)
        return stacked[:, :K], stacked[:, K:]

    def __iter__(self):
        for i in range(self.size):
            yield self.state_of(i)


def enumerate_states(config: NetworkConfig, cap: int = DEFAULT_STATE_CAP) -> StateSpace:
    return StateSpace(config, cap)


def deadlock_state(config: NetworkConfig) -> SystemState:
    K = config.num_relays
    return SystemState((config.buffer_capacity,) * K, (0,) * K)
