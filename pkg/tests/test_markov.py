import io
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import norm

from relay_grid.markov import (
    OutageCurve,
    ReducibleChainError,
    analyze,
    build_transition_matrix,
    closed_form_outage,
    estimate_diversity,
    overall_outage,
    state_outage_prob,
    stationary_distribution,
    transition_column,
)
from relay_grid.policy import rank_links
from relay_grid.simulation import SimulationSpec, run_simulation
from relay_grid.state import (
    Link,
    NetworkConfig,
    StateSpace,
    SystemState,
    available_links,
    deadlock_state,
    is_edge_state,
)

DEFAULT = NetworkConfig.uniform(2, 3, 2, harvest_coeff=0.5, relay_coeff=1.0)


def test_state_outage_all_links_available():
    s = SystemState((1, 1), (1, 1))
    assert len(available_links(s, DEFAULT)) == 4
    # 0 dB, rate 1: xi = 1 on every link
    assert state_outage_prob(s, DEFAULT) == pytest.approx((1 - math.exp(-1)) ** 4)
    tiny = DEFAULT.with_power(target_rate=1e-12)
    assert state_outage_prob(s, tiny) == pytest.approx(0.0, abs=1e-40)
    assert state_outage_prob(deadlock_state(DEFAULT), DEFAULT) == 1.0


def test_edge_state_outage_against_sampling():
    edge = SystemState((2, 3), (0, 0))
    want = 1 - math.exp(-1) * math.exp(-2)
    assert want == pytest.approx(0.9502129316)
    assert state_outage_prob(edge, DEFAULT) == pytest.approx(want)
    g = np.random.default_rng(3).exponential(1.0, size=(1_000_000, 2))
    sent = (g[:, 0] > 1.0) & (np.floor(0.5 * g[:, 1]) >= 1)
    freq = 1 - sent.mean()
    assert abs(freq - want) < 3 * math.sqrt(want * (1 - want) / len(g))


GRID = [
    NetworkConfig.uniform(K, LD, LE, harvest_coeff=rho, relay_coeff=a).with_snr(snr)
    for K, LD, LE in [(1, 2, 1), (2, 2, 2), (2, 3, 2), (3, 2, 1)]
    for rho, a in [(0.0, 1.0), (0.3, 0.4), (0.5, 1.0), (2.0, 0.4)]
    for snr in (0, 10)
]


@pytest.mark.parametrize("cfg", GRID, ids=lambda c: f"K{c.K}LD{c.buffer_capacity}LE{c.storage_capacity}"
                         f"rho{c.power.harvest_coeff}a{c.power.relay_coeff}P{c.power.source_power:g}")
def test_every_column_is_stochastic(cfg):
    T = build_transition_matrix(cfg)
    assert np.all(T.built)
    assert np.max(np.abs(T.column_sums() - 1)) < 1e-10
    assert T.matrix.data.min() >= 0 and T.matrix.data.max() <= 1 + 1e-15
    space = T.space
    for i in range(len(space)):
        assert T.matrix[i, i] == pytest.approx(state_outage_prob(space.state_of(i), cfg), abs=1e-15)


def test_no_harvesting_gives_single_successor_per_source_link():
    cfg = DEFAULT.with_power(harvest_coeff=0.0)
    space = StateSpace(cfg)
    for s in space:
        links = available_links(s, cfg)
        if not links or is_edge_state(s, cfg)[0]:
            continue
        rows, probs = transition_column(s, cfg, space)
        succ = {int(r) for r, p in zip(rows, probs) if p > 0 and r != space.index(s)}
        assert len(succ) == len(links)


def test_deadlock_column_is_identity():
    space = StateSpace(DEFAULT)
    d = deadlock_state(DEFAULT)
    rows, probs = transition_column(d, DEFAULT, space)
    assert rows.tolist() == [space.index(d)] and probs.tolist() == [1.0]


def sampled_column(state, cfg, space, n, rng):
    """Successor frequencies of ``state`` from ``n`` independent gain draws."""
    K, LD, LE = cfg.num_relays, cfg.buffer_capacity, cfg.storage_capacity
    p = cfg.power
    g = rng.exponential(np.array(cfg.source_means + cfg.relay_means), size=(n, 2 * K))
    xi = np.array([p.xi_source] * K + [p.xi_relay] * K)
    inc = np.floor(p.harvest_coeff / p.relay_coeff * g[:, :K]).astype(np.int64)
    sel = np.full(n, -1)
    edge, q = is_edge_state(state, cfg)
    if edge:
        others = [k for k in range(K) if k != q]
        ok = (g[:, q] > xi[q]) & np.any(inc[:, others] >= 1, axis=1)
        sel[ok] = q
    elif available_links(state, cfg):
        for link in rank_links(state, cfg):
            f = link.flat(K)
            sel[(sel < 0) & (g[:, f] > xi[f])] = f
    data = np.tile(np.array(state.data), (n, 1))
    energy = np.tile(np.array(state.energy), (n, 1))
    rows = np.arange(n)
    src = (sel >= 0) & (sel < K)
    rel = sel >= K
    inc[rows, np.where(src, sel, 0)] = np.where(src, 0, inc[rows, 0])
    energy[src] = np.minimum(energy[src] + inc[src], LE)
    data[rows[src], sel[src]] += 1
    data[rows[rel], sel[rel] - K] -= 1
    energy[rows[rel], sel[rel] - K] -= 1
    assert np.all((data >= 0) & (data <= LD) & (energy >= 0))
    idx = data @ space.data_strides + energy @ space.energy_strides
    return np.bincount(idx, minlength=len(space)) / n


@pytest.mark.parametrize("cfg,n", [
    (NetworkConfig.uniform(1, 3, 2, harvest_coeff=0.5, relay_coeff=1.0).with_snr(5), 400_000),
    (NetworkConfig.uniform(2, 3, 2, harvest_coeff=0.5, relay_coeff=0.4).with_snr(8), 200_000),
])
def test_columns_match_sampled_transitions(cfg, n):
    T = build_transition_matrix(cfg)
    A = T.matrix.toarray()
    rng = np.random.default_rng(99)
    # 3 sigma per entry, widened to a 1% family-wise level over all entries
    z = max(3.0, norm.isf(0.005 / np.count_nonzero(A)))
    for i in range(len(T.space)):
        freq = sampled_column(T.space.state_of(i), cfg, T.space, n, rng)
        p = A[:, i]
        assert np.all(freq[p == 0] == 0), f"column {i}: support mismatch"
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= z * sigma + 1e-12), f"column {i}"


def test_stationary_matches_simulated_occupancy():
    cfg = DEFAULT
    a = analyze(cfg, 8.0)
    r = run_simulation(SimulationSpec(cfg, snr_db=8.0, num_slots=10_000_000, seed=5))
    tv = 0.5 * np.abs(a.pi - r.occupancy).sum()
    assert tv < 0.01
    assert r.occupancy.sum() == pytest.approx(1.0, abs=1e-9)


def test_stationary_invariants():
    a = analyze(NetworkConfig.uniform(3, 2, 2, harvest_coeff=0.5, relay_coeff=0.4), 5.0)
    pi, A = a.pi, a.transitions.matrix
    assert pi.min() >= 0 and pi.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(A @ pi - pi)) < 1e-8
    outside = np.setdiff1d(np.arange(len(pi)), a.stationary.recurrent)
    assert np.all(pi[outside] == 0)
    assert a.p_out == pytest.approx(a.closed_form, abs=1e-10)


def test_one_and_two_state_chains():
    one = stationary_distribution(sp.csc_array(np.array([[1.0]])), 0)
    assert one.pi.tolist() == [1.0]
    p = 0.3
    two = stationary_distribution(sp.csc_array(np.array([[1 - p, p], [p, 1 - p]])), 0)
    assert two.pi == pytest.approx([0.5, 0.5])
    # transient start state feeding a 2-cycle
    A = np.array([[0.0, 0.0, 0.0], [0.5, 0.0, 1.0], [0.5, 1.0, 0.0]])
    s = stationary_distribution(sp.csc_array(A), 0)
    assert s.pi == pytest.approx([0.0, 0.5, 0.5])


def test_reducible_chain_is_reported():
    A = np.array([[0.5, 0.0, 0.0], [0.25, 1.0, 0.0], [0.25, 0.0, 1.0]])
    with pytest.raises(ReducibleChainError):
        stationary_distribution(sp.csc_array(A), 0)


def test_power_iteration_and_sparse_closed_form_match_dense():
    cfg = NetworkConfig.uniform(2, 3, 2, harvest_coeff=0.5, relay_coeff=0.4).with_snr(6)
    T = build_transition_matrix(cfg, SystemState.empty(2))
    dense = stationary_distribution(T.matrix, 0)
    power = stationary_distribution(T.matrix, 0, dense_limit=0)
    assert dense.method == "dense" and power.method.startswith("power")
    assert np.max(np.abs(dense.pi - power.pi)) < 1e-9
    d = T.diagonal()
    assert closed_form_outage(T.matrix, dense.recurrent) == pytest.approx(dense.pi @ d, abs=1e-10)
    assert closed_form_outage(T.matrix, dense.recurrent, dense_limit=0) == \
        pytest.approx(dense.pi @ d, abs=1e-10)


def test_outage_limits():
    huge_rate = DEFAULT.with_power(target_rate=60.0)
    assert overall_outage(huge_rate, 0) == pytest.approx(1.0, abs=1e-12)
    # with rate -> 0 only the edge-state charging condition can still fail;
    # strong harvesting makes that vanish as well
    tiny_rate = NetworkConfig.uniform(2, 3, 2, harvest_coeff=100.0, relay_coeff=1.0, target_rate=1e-9)
    assert overall_outage(tiny_rate, 0) < 1e-9


def test_single_relay_never_recovers():
    cfg = NetworkConfig.uniform(1, 3, 2, harvest_coeff=0.5, relay_coeff=1.0)
    for snr in (0, 20, 40):
        assert overall_outage(cfg, snr) == pytest.approx(1.0, abs=1e-12)


def test_diversity_examples():
    c = OutageCurve([6, 7], [1e-3, 10 ** -4.155], "simulated")
    assert estimate_diversity(c, 6, 7) == pytest.approx(11.55)
    assert estimate_diversity(OutageCurve([0, 5], [0.2, 0.2], "analytical"), 0, 5) == 0.0
    with pytest.raises(ValueError):
        estimate_diversity(OutageCurve([0, 5], [0.2, 0.0], "analytical"), 0, 5)
    with pytest.raises(ValueError):
        estimate_diversity(c, 6, 8)


def test_curve_requires_increasing_snr():
    with pytest.raises(ValueError):
        OutageCurve([5, 5], [0.1, 0.1], "analytical")


def test_matrix_dump_triplets():
    cfg = NetworkConfig.uniform(1, 1, 1, harvest_coeff=0.5, relay_coeff=1.0)
    T = build_transition_matrix(cfg)
    buf = io.StringIO()
    T.dump(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == T.matrix.nnz
    total = np.zeros(len(T.space))
    for line in lines:
        i, j, p = line.split()
        assert T.matrix[int(j), int(i)] == float(p)
        total[int(i)] += float(p)
    assert total == pytest.approx(np.ones(4))
