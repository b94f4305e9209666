"""Link priorities and selection rules.

The proposed rule ranks every available link by how available the state
it would lead to is, then picks the highest-ranked link whose capacity
clears the target rate.  Baseline rules exist only for simulated
comparison curves.
"""

from __future__ import annotations

from enum import Enum
from functools import cmp_to_key

import numpy as np

from .channel import energy_increment
from .state import (
    Link,
    NetworkConfig,
    SystemState,
    apply_transition,
    availability_vector,
    available_links,
    compare_availability,
    is_edge_state,
)


class PolicyKind(str, Enum):
    PROPOSED = "proposed"
    MAX_LINK = "maxlink"
    MAX_MIN = "maxmin"
    ALTERNATING = "alternating"

    @property
    def code(self) -> int:
        return list(PolicyKind).index(self)


def predicted_next_state(state: SystemState, link: Link, config: NetworkConfig) -> SystemState:
    """State reached if ``link`` fires and every other relay harvests its
    quantized expected energy."""
    K = config.num_relays
    if not link.is_source:
        return apply_transition(state, link, (0,) * K, config)
    increments = list(config.predicted_increments())
    increments[link.relay] = 0
    return apply_transition(state, link, increments, config)


def rank_links(state: SystemState, config: NetworkConfig) -> list:
    """Available links, highest priority first.

    Ties in predicted availability fall back to canonical link order
    (source links first, then ascending relay index).
    """
    links = available_links(state, config)
    if not links:
        raise ValueError(f"no available links in deadlock state {state}")
    keyed = [(availability_vector(predicted_next_state(state, l, config), config), l)
             for l in links]

    def cmp(a, b):
        c = compare_availability(b[0], a[0])
        return c if c else (a[1] > b[1]) - (a[1] < b[1])

    return [l for _, l in sorted(keyed, key=cmp_to_key(cmp))]


def _supports_rate(link: Link, gains, config: NetworkConfig) -> bool:
    # capacity > target rate  <=>  gain > xi for the transmitter's power
    return gains[link.flat(config.num_relays)] > config.xi(link)


def _charges_any_other(q: int, gains, config: NetworkConfig) -> bool:
    return any(energy_increment(gains[i], config.power) >= 1
               for i in range(config.num_relays) if i != q)


def select_link(state: SystemState, gains, config: NetworkConfig, ranking=None):
    """Link chosen by the proposed rule for realized ``gains`` or ``None`` on outage.

    ``gains`` is a length-2K sequence: source links first, then relay links.
    """
    links = available_links(state, config)
    if not links:
        return None
    edge, q = is_edge_state(state, config)
    if edge:
        lone = Link.source(q)
        if _supports_rate(lone, gains, config) and _charges_any_other(q, gains, config):
            return lone
        return None
    for link in ranking if ranking is not None else rank_links(state, config):
        if _supports_rate(link, gains, config):
            return link
    return None


def _best(links, gains, config, normalized=True):
    K = config.num_relays
    if not links:
        return None
    score = [gains[l.flat(K)] / config.xi(l) if normalized else gains[l.flat(K)]
             for l in links]
    return links[int(np.argmax(score))]


def select_link_baseline(kind: PolicyKind, state: SystemState, gains,
                         config: NetworkConfig, cycle_flag: int = 0):
    """Selection under a baseline rule; returns a link, a relay index pair
    for max-min (see below) or ``None`` on outage.

    MAX_LINK picks the available link with the largest gain-to-threshold
    ratio.  ALTERNATING serves source links when ``cycle_flag`` is 0 and
    relay links when it is 1, falling back to the other direction when the
    current one has no available link.  MAX_MIN returns
    ``("maxmin", k)`` for a two-hop s->k->d transaction through the relay
    maximizing ``min(g_sk / xi_s, g_kd / xi_r)`` among relays with a free
    buffer slot and stored energy; when no relay has energy it charges the
    network with the best available source link instead.
    """
    kind = PolicyKind(kind)
    if kind is PolicyKind.PROPOSED:
        return select_link(state, gains, config)
    links = available_links(state, config)
    if kind is PolicyKind.MAX_LINK:
        best = _best(links, gains, config)
        return best if best is not None and _supports_rate(best, gains, config) else None
    if kind is PolicyKind.ALTERNATING:
        src = [l for l in links if l.is_source]
        rel = [l for l in links if not l.is_source]
        phase = src if cycle_flag == 0 else rel
        if not phase:
            phase = rel if cycle_flag == 0 else src
        best = _best(phase, gains, config, normalized=False)
        return best if best is not None and _supports_rate(best, gains, config) else None
    if kind is PolicyKind.MAX_MIN:
        K = config.num_relays
        ok = [k for k in range(K)
              if state.data[k] < config.buffer_capacity and state.energy[k] > 0]
        if ok:
            xs, xr = config.power.xi_source, config.power.xi_relay
            score = [min(gains[k] / xs, gains[K + k] / xr) for k in ok]
            j = int(np.argmax(score))
            return ("maxmin", ok[j]) if score[j] > 1 else None
        src = [l for l in links if l.is_source]
        best = _best(src, gains, config)
        return best if best is not None and _supports_rate(best, gains, config) else None
    raise ValueError(f"unknown policy {kind}")
