"""Slot-synchronous Monte Carlo simulation of the relay network.

Each slot draws 2K independent exponential gains (source links first),
lets the policy pick a link and applies the buffer/energy update.  A slot
with no selection is an outage and leaves the state unchanged.

The hot loop is a numba kernel; :func:`simulate_reference` replays the
same gains through the pure-Python policy code and is used to check it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
from scipy.stats import t as student_t

from .markov import DEFAULT_STATE_CAP, OutageCurve, analytical_curve
from .policy import PolicyKind, select_link_baseline
from .state import Link, NetworkConfig, SystemState, apply_transition, deadlock_state

Z95 = 1.959963984540054
OCCUPANCY_LIMIT = 5_000_000
TRANSITION_LIMIT = 2000
RANK_CACHE_BYTES = 200_000_000
CHUNK_GAINS = 1 << 21
NUM_BATCHES = 32

THREADS_ENV = "RELAY_GRID_THREADS"


@dataclass(frozen=True)
class SimulationSpec:
    config: NetworkConfig
    policy: PolicyKind = PolicyKind.PROPOSED
    snr_db: float = 10.0
    num_slots: int = 1_000_000
    seed: int | np.random.SeedSequence = 0
    warmup_slots: int = 10_000
    record_occupancy: bool = True
    record_transitions: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", PolicyKind(self.policy))
        if not self.num_slots > self.warmup_slots >= 0:
            raise ValueError("need num_slots > warmup_slots >= 0")


@dataclass
class SimulationResult:
    slots: int
    outages: int
    delivered: int
    admitted: int
    deadlock_visits: int
    final_state: SystemState
    occupancy: np.ndarray | None = None
    transition_counts: sp.coo_array | None = None
    extra: dict = field(default_factory=dict)
    batch_outages: np.ndarray | None = None
    batch_slots: np.ndarray | None = None

    @property
    def outage_fraction(self) -> float:
        return self.outages / self.slots

    @property
    def ci_halfwidth(self) -> float:
        """95% normal-approximation binomial half-width."""
        p = self.outage_fraction
        return Z95 * math.sqrt(p * (1 - p) / self.slots)

    @property
    def ci_batch_halfwidth(self) -> float:
        """95% batch-means half-width.

        Consecutive slots share the buffer/energy state, so outage
        indicators are positively correlated and the binomial interval is
        too narrow; this one treats contiguous batches as independent.
        """
        if self.batch_slots is None:
            return float("nan")
        keep = self.batch_slots > 0
        frac = self.batch_outages[keep] / self.batch_slots[keep]
        b = len(frac)
        if b < 2:
            return float("nan")
        return float(student_t.ppf(0.975, b - 1) * frac.std(ddof=1) / math.sqrt(b))

    @property
    def throughput(self) -> float:
        return self.delivered / self.slots


# ---------------------------------------------------------------- kernel ---

@numba.njit(cache=True)
def _state_index(data, energy, dstride, estride):
    idx = 0
    for k in range(data.shape[0]):
        idx += data[k] * dstride[k] + energy[k] * estride[k]
    return idx


@numba.njit(cache=True)
def _edge_relay(data, energy, LD):
    """Relay index q of an edge state, -1 otherwise."""
    K = data.shape[0]
    q = -1
    for k in range(K):
        if energy[k] != 0:
            return -1
        if data[k] != LD:
            if q != -1 or data[k] != LD - 1:
                return -1
            q = k
    return q


@numba.njit(cache=True)
def _vec_greater(vecs, a, b):
    for t in range(vecs.shape[1]):
        if vecs[a, t] != vecs[b, t]:
            return vecs[a, t] > vecs[b, t]
    return False


@numba.njit(cache=True)
def _rank(data, energy, LD, LE, pred_inc, out):
    """Write the proposed-rule ranking of flat link ids into ``out``;
    returns the number of available links."""
    K = data.shape[0]
    vecs = np.empty((2 * K, 3 * K), dtype=np.int64)
    links = np.empty(2 * K, dtype=np.int64)
    pd = np.empty(K, dtype=np.int64)
    pe = np.empty(K, dtype=np.int64)
    n = 0
    for l in range(2 * K):
        k = l % K
        src = l < K
        if src and data[k] >= LD:
            continue
        if not src and (data[k] == 0 or energy[k] == 0):
            continue
        for j in range(K):
            pd[j] = data[j]
            pe[j] = energy[j]
        if src:
            pd[k] += 1
            for j in range(K):
                if j != k:
                    pe[j] = min(pe[j] + pred_inc[j], LE)
        else:
            pd[k] -= 1
            pe[k] -= 1
        for j in range(K):
            vecs[n, 3 * j] = pd[j]
            vecs[n, 3 * j + 1] = LD - pd[j]
            vecs[n, 3 * j + 2] = pe[j]
        vecs[n, :].sort()
        links[n] = l
        n += 1
    order = np.arange(n)
    # stable insertion sort, most available first; ties keep ascending link id
    for i in range(1, n):
        cur = order[i]
        j = i - 1
        while j >= 0 and _vec_greater(vecs, cur, order[j]):
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = cur
    for i in range(n):
        out[i] = links[order[i]]
    return n


@numba.njit(cache=True)
def _argmax_link(gains, xis, data, energy, LD, K, lo, hi):
    best = -1
    best_score = -1.0
    for l in range(lo, hi):
        k = l % K
        if l < K:
            if data[k] >= LD:
                continue
        elif data[k] == 0 or energy[k] == 0:
            continue
        s = gains[l] / xis[l]
        if s > best_score:
            best_score = s
            best = l
    return best


@numba.njit(cache=True, nogil=True)
def _run_chunk(gains, data, energy, LD, LE, xis, ratio, pred_inc, policy,
               dstride, estride, rank_tab, rank_len, carry, counters,
               occupancy, trans, warmup, batches, batch_len):
    """Advance the simulation over ``gains.shape[0]`` slots.

    ``carry`` = [slot counter, alternating phase, pending max-min relay,
    pending max-min outage]; ``counters`` = [outages, delivered, admitted,
    deadlock visits, delivered total, admitted total, counted slots];
    ``batches[b]`` = [outages, slots] of counted batch ``b``.
    """
    K = data.shape[0]
    nslots = gains.shape[0]
    ranking = np.empty(2 * K, dtype=np.int64)
    use_cache = rank_tab.shape[0] > 0
    rec_occ = occupancy.shape[0] > 0
    rec_trans = trans.shape[0] > 0
    for t in range(nslots):
        g = gains[t]
        counted = carry[0] >= warmup
        idx = _state_index(data, energy, dstride, estride)
        if counted and rec_occ:
            occupancy[idx] += 1
        sel = -1
        mm_relay = -1
        if carry[2] >= 0:
            # second hop of a max-min transaction
            sel = K + carry[2]
            carry[2] = -1
        elif carry[3] > 0:
            carry[3] = 0
        elif policy == 0:
            q = _edge_relay(data, energy, LD)
            if q >= 0:
                if g[q] > xis[q]:
                    for i in range(K):
                        if i != q and math.floor(ratio * g[i]) >= 1:
                            sel = q
                            break
            else:
                if use_cache:
                    n = rank_len[idx]
                    if n < 0:
                        n = _rank(data, energy, LD, LE, pred_inc, ranking)
                        rank_len[idx] = n
                        for i in range(n):
                            rank_tab[idx, i] = ranking[i]
                    else:
                        for i in range(n):
                            ranking[i] = rank_tab[idx, i]
                else:
                    n = _rank(data, energy, LD, LE, pred_inc, ranking)
                for i in range(n):
                    l = ranking[i]
                    if g[l] > xis[l]:
                        sel = l
                        break
        elif policy == 1:
            l = _argmax_link(g, xis, data, energy, LD, K, 0, 2 * K)
            if l >= 0 and g[l] > xis[l]:
                sel = l
        elif policy == 3:
            if carry[1] == 0:
                l = _argmax_link(g, xis, data, energy, LD, K, 0, K)
                if l < 0:
                    l = _argmax_link(g, xis, data, energy, LD, K, K, 2 * K)
            else:
                l = _argmax_link(g, xis, data, energy, LD, K, K, 2 * K)
                if l < 0:
                    l = _argmax_link(g, xis, data, energy, LD, K, 0, K)
            if l >= 0 and g[l] > xis[l]:
                sel = l
        else:
            best = -1
            best_score = -1.0
            for k in range(K):
                if data[k] < LD and energy[k] > 0:
                    s = min(g[k] / xis[k], g[K + k] / xis[K + k])
                    if s > best_score:
                        best_score = s
                        best = k
            if best >= 0:
                if best_score > 1.0:
                    sel = best
                    mm_relay = best
                else:
                    carry[3] = 1
            else:
                l = _argmax_link(g, xis, data, energy, LD, K, 0, K)
                if l >= 0 and g[l] > xis[l]:
                    sel = l
        if policy == 3:
            carry[1] = 1 - carry[1]

        if counted:
            b = (carry[0] - warmup) // batch_len
            batches[b, 1] += 1
        if sel < 0:
            if counted:
                counters[0] += 1
                batches[b, 0] += 1
        else:
            k = sel % K
            if sel < K:
                if data[k] >= LD:
                    raise RuntimeError("selected a source link into a full buffer")
                data[k] += 1
                for j in range(K):
                    if j != k:
                        energy[j] = min(energy[j] + int(math.floor(ratio * g[j])), LE)
                counters[5] += 1
                if counted:
                    counters[2] += 1
                if mm_relay >= 0:
                    carry[2] = mm_relay
            else:
                if data[k] == 0 or energy[k] == 0:
                    raise RuntimeError("selected a relay link without data or energy")
                data[k] -= 1
                energy[k] -= 1
                counters[4] += 1
                if counted:
                    counters[1] += 1
        nidx = _state_index(data, energy, dstride, estride)
        if counted:
            counters[6] += 1
            if rec_trans:
                trans[nidx, idx] += 1
        dead = True
        for k in range(K):
            if data[k] != LD or energy[k] != 0:
                dead = False
                break
        if dead:
            counters[3] += 1
        carry[0] += 1


# ------------------------------------------------------------- wrappers ---

def _strides(config: NetworkConfig):
    K = config.num_relays
    rd, re_ = config.buffer_capacity + 1, config.storage_capacity + 1
    estride = np.array([re_ ** (K - 1 - k) for k in range(K)], dtype=np.int64)
    dstride = np.array([re_ ** K * rd ** (K - 1 - k) for k in range(K)], dtype=np.int64)
    return dstride, estride


def _gain_means(config: NetworkConfig) -> np.ndarray:
    return np.array(config.source_means + config.relay_means)


def _thresholds(config: NetworkConfig) -> np.ndarray:
    K = config.num_relays
    p = config.power
    return np.array([p.xi_source] * K + [p.xi_relay] * K)


def _ratio(config: NetworkConfig) -> float:
    p = config.power
    return 0.0 if p.harvest_coeff == 0 else p.harvest_coeff / p.relay_coeff


def run_simulation(spec: SimulationSpec) -> SimulationResult:
    """Simulate ``spec.num_slots`` slots from the all-empty state.

    Statistics skip the first ``warmup_slots`` slots.  The result is a
    deterministic function of ``spec`` (including its seed).
    """
    config = spec.config.with_snr(spec.snr_db)
    K = config.num_relays
    n_states = config.num_states
    rng = np.random.default_rng(spec.seed)
    dstride, estride = _strides(config)
    xis = _thresholds(config)
    means = _gain_means(config)
    pred_inc = np.array(config.predicted_increments(), dtype=np.int64)
    policy = spec.policy.code

    cache_ok = policy == 0 and n_states * (2 * K + 8) <= RANK_CACHE_BYTES
    rank_tab = np.zeros((n_states if cache_ok else 0, 2 * K), dtype=np.int8)
    rank_len = np.full(n_states if cache_ok else 0, -1, dtype=np.int8)
    record_occ = spec.record_occupancy and n_states <= OCCUPANCY_LIMIT
    occupancy = np.zeros(n_states if record_occ else 0, dtype=np.int64)
    record_trans = spec.record_transitions and n_states <= TRANSITION_LIMIT
    tn = n_states if record_trans else 0
    trans = np.zeros((tn, tn), dtype=np.int64)

    data = np.zeros(K, dtype=np.int64)
    energy = np.zeros(K, dtype=np.int64)
    carry = np.array([0, 0, -1, 0], dtype=np.int64)
    counters = np.zeros(7, dtype=np.int64)
    batch_len = -(-(spec.num_slots - spec.warmup_slots) // NUM_BATCHES)
    batches = np.zeros((NUM_BATCHES, 2), dtype=np.int64)
    chunk = max(1, CHUNK_GAINS // (2 * K))
    remaining = spec.num_slots
    while remaining > 0:
        n = min(chunk, remaining)
        gains = rng.exponential(means, size=(n, 2 * K))
        _run_chunk(gains, data, energy, config.buffer_capacity, config.storage_capacity,
                   xis, _ratio(config), pred_inc, policy, dstride, estride,
                   rank_tab, rank_len, carry, counters, occupancy, trans,
                   spec.warmup_slots, batches, batch_len)
        remaining -= n

    counted = int(counters[6])
    result = SimulationResult(
        slots=counted,
        outages=int(counters[0]),
        delivered=int(counters[1]),
        admitted=int(counters[2]),
        deadlock_visits=int(counters[3]),
        final_state=SystemState(data.tolist(), energy.tolist()),
        occupancy=occupancy / counted if record_occ else None,
        transition_counts=sp.coo_array(trans) if record_trans else None,
        extra={"total_delivered": int(counters[4]), "total_admitted": int(counters[5])},
        batch_outages=batches[:, 0].copy(),
        batch_slots=batches[:, 1].copy(),
    )
    return result


def simulate_reference(config: NetworkConfig, policy, gains: np.ndarray,
                       start: SystemState | None = None, check=None):
    """Pure-Python replay of ``gains`` (shape ``(slots, 2K)``) under ``policy``.

    ``config`` must already carry the desired source power.  Returns the
    list of visited states (length ``slots + 1``) and the per-slot
    selection (``None`` for an outage).  ``check`` is called with
    ``(state, selection, gains_row)`` for every slot.
    """
    policy = PolicyKind(policy)
    K = config.num_relays
    state = start or SystemState.empty(K)
    states, choices = [state], []
    phase, pending, pending_outage = 0, None, False
    for row in gains:
        if pending is not None:
            sel, pending = Link.relay_to_dest(pending), None
        elif pending_outage:
            sel, pending_outage = None, False
        else:
            sel = select_link_baseline(policy, state, row, config, phase)
            if isinstance(sel, tuple) and sel and sel[0] == "maxmin":
                pending, sel = sel[1], Link.source(sel[1])
            elif sel is None and policy is PolicyKind.MAX_MIN and any(
                    state.data[k] < config.buffer_capacity and state.energy[k] > 0
                    for k in range(K)):
                pending_outage = True
        if policy is PolicyKind.ALTERNATING:
            phase = 1 - phase
        if check is not None:
            check(state, sel, row)
        if sel is not None:
            if sel.is_source:
                inc = [0 if j == sel.relay else int(math.floor(_ratio(config) * row[j]))
                       for j in range(K)]
            else:
                inc = [0] * K
            state = apply_transition(state, sel, inc, config)
        states.append(state)
        choices.append(sel)
    return states, choices


def derive_seeds(seed, count: int) -> list:
    """Independent child seed sequences, one per sweep point."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(count)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_many(specs, threads: int | None = None) -> list:
    """Run independent specs, in parallel threads when configured; results
    come back in input order."""
    threads = threads or thread_count()
    if threads == 1 or len(specs) == 1:
        return [run_simulation(s) for s in specs]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(run_simulation, specs))


def is_deadlock_index(config: NetworkConfig, index: int) -> bool:
    dstride, estride = _strides(config)
    d = deadlock_state(config)
    return index == int(np.dot(d.data, dstride) + np.dot(d.energy, estride))


def sweep(config: NetworkConfig, policy, snr_list, slots_schedule=1_000_000, seed=0,
          warmup_slots: int = 10_000, analytical: bool | None = None,
          state_cap: int = DEFAULT_STATE_CAP, threads: int | None = None) -> OutageCurve:
    """Simulated outage curve over ``snr_list``.

    ``slots_schedule`` is a slot count, a sequence aligned with
    ``snr_list``, or a callable ``snr_db -> slots``.  Each point gets its
    own child seed of ``seed``.  The analytical series is attached for the
    proposed policy whenever the state space fits ``state_cap`` (or when
    ``analytical`` forces it on/off).
    """
    snrs = [float(s) for s in snr_list]
    if not snrs:
        raise ValueError("empty SNR list")
    if sorted(snrs) != snrs or len(set(snrs)) != len(snrs):
        raise ValueError("SNR list must be strictly increasing")
    if callable(slots_schedule):
        slots = [int(slots_schedule(s)) for s in snrs]
    elif np.ndim(slots_schedule) == 0:
        slots = [int(slots_schedule)] * len(snrs)
    else:
        slots = [int(n) for n in slots_schedule]
        if len(slots) != len(snrs):
            raise ValueError("slots_schedule must align with snr_list")
    policy = PolicyKind(policy)
    seeds = derive_seeds(seed, len(snrs))
    specs = [SimulationSpec(config, policy, s, n, sd, warmup_slots, record_occupancy=False)
             for s, n, sd in zip(snrs, slots, seeds)]
    results = run_many(specs, threads)
    curve = OutageCurve(snrs, [r.outage_fraction for r in results], "simulated",
                        policy.value, np.array([r.ci_halfwidth for r in results]),
                        ci_batch=np.array([r.ci_batch_halfwidth for r in results]))
    if analytical is None:
        analytical = policy is PolicyKind.PROPOSED and config.num_states <= state_cap
    if analytical:
        curve.analytical = analytical_curve(config, snrs, cap=state_cap)
    return curve
