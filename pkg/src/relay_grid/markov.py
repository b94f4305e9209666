"""Exact Markov-chain outage analysis of the proposed selection rule.

Column ``i`` of the transition matrix holds ``P(s_j | s_i)``; its diagonal
entry is the outage probability of state ``i`` because an outage slot
leaves the state untouched.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .channel import charge_prob, charge_prob_vector
from .policy import rank_links
from .state import (
    DEFAULT_STATE_CAP,
    Link,
    NetworkConfig,
    StateSpace,
    SystemState,
    available_links,
    is_edge_state,
)

log = logging.getLogger(__name__)

DENSE_LIMIT = 5000
AGREEMENT_TOL = 1e-10


class ReducibleChainError(RuntimeError):
    """The chain restricted to the start state's reach has no unique
    stationary distribution."""


def state_outage_prob(state: SystemState, config: NetworkConfig) -> float:
    links = available_links(state, config)
    if not links:
        return 1.0
    edge, q = is_edge_state(state, config)
    if edge:
        p = config.power
        lone = Link.source(q)
        no_charge = math.prod(
            charge_prob(0, config.storage_capacity - state.energy[k], config.source_means[k], p)
            for k in range(config.num_relays) if k != q)
        return 1.0 - (1.0 - config.link_outage_prob(lone)) * (1.0 - no_charge)
    return math.prod(config.link_outage_prob(l) for l in links)


def _outer(vectors, op):
    return reduce(op.outer, vectors).ravel() if vectors else np.array([0.0 if op is np.add else 1.0])


def _harvest_terms(state, q, config, space, outage_relays=frozenset(), require_charge=False):
    """Successor offsets and probabilities of the energy increments of all
    relays other than ``q`` during a source transmission to ``q``.

    Relays in ``outage_relays`` have a higher-priority source link that
    must itself be in outage.
    """
    p = config.power
    probs, offsets = [], []
    for k in range(config.num_relays):
        if k == q:
            continue
        headroom = config.storage_capacity - state.energy[k]
        xi = p.xi_source if k in outage_relays else None
        probs.append(charge_prob_vector(headroom, config.source_means[k], p, xi))
        offsets.append(np.arange(headroom + 1, dtype=np.int64) * space.energy_strides[k])
    prob = _outer(probs, np.multiply)
    offset = _outer(offsets, np.add).astype(np.int64)
    if require_charge:
        # offset 0 is the all-zero increment vector
        prob = np.where(offset == 0, 0.0, prob)
    return offset, prob


def transition_column(state: SystemState, config: NetworkConfig, space: StateSpace,
                      ranking=None):
    """Return ``(rows, probs)`` of the column for ``state`` (duplicates summed)."""
    idx = space.index(state)
    links = available_links(state, config)
    if not links:
        return np.array([idx]), np.array([1.0])
    rows, vals = [np.array([idx])], [np.array([state_outage_prob(state, config)])]

    edge, q = is_edge_state(state, config)
    if edge:
        lone = Link.source(q)
        offset, prob = _harvest_terms(state, q, config, space, require_charge=True)
        rows.append(idx + space.data_strides[q] + offset)
        vals.append((1.0 - config.link_outage_prob(lone)) * prob)
        return np.concatenate(rows), np.concatenate(vals)

    if ranking is None:
        ranking = rank_links(state, config)
    relay_outage = 1.0   # product of F over higher-priority relay links
    source_outage = 1.0  # product of F over higher-priority source links
    outaged_sources = set()
    for link in ranking:
        success = 1.0 - config.link_outage_prob(link)
        k = link.relay
        if link.is_source:
            offset, prob = _harvest_terms(state, k, config, space, frozenset(outaged_sources))
            rows.append(idx + space.data_strides[k] + offset)
            vals.append(success * relay_outage * prob)
            outaged_sources.add(k)
            source_outage *= config.link_outage_prob(link)
        else:
            succ = idx - space.data_strides[k] - space.energy_strides[k]
            rows.append(np.array([succ]))
            vals.append(np.array([success * relay_outage * source_outage]))
            relay_outage *= config.link_outage_prob(link)
    return np.concatenate(rows), np.concatenate(vals)


@dataclass
class TransitionMatrix:
    """Column-stochastic transition matrix over a :class:`StateSpace`.

    ``built`` marks the columns that were constructed; with a BFS build
    only states reachable from the start state are populated.
    """

    matrix: sp.csc_array
    space: StateSpace
    built: np.ndarray

    @property
    def config(self) -> NetworkConfig:
        return self.space.config

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def dump(self, fh, tol: float = 0.0):
        """Write ``state_i state_j prob`` triplets (``A_ji``), one per line."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.row, coo.col))
        for n in order:
            if coo.data[n] > tol:
                fh.write(f"{coo.col[n]} {coo.row[n]} {coo.data[n]:.17g}\n")


def build_transition_matrix(config: NetworkConfig, start: SystemState | None = None,
                            cap: int = DEFAULT_STATE_CAP) -> TransitionMatrix:
    """Construct the transition matrix.

    With ``start`` given, only columns of states reachable from it are
    built (breadth-first); otherwise every state gets its column.
    """
    space = StateSpace(config, cap)
    n = space.size
    built = np.zeros(n, dtype=bool)
    rows, cols, vals = [], [], []

    def add(state, i):
        r, v = transition_column(state, config, space)
        keep = v > 0
        rows.append(r[keep])
        vals.append(v[keep])
        cols.append(np.full(keep.sum(), i, dtype=np.int64))
        built[i] = True
        return r[keep]

    if start is None:
        for i in range(n):
            add(space.state_of(i), i)
    else:
        s0 = space.index(start.validate(config))
        queue = deque([s0])
        seen = {s0}
        while queue:
            i = queue.popleft()
            for j in add(space.state_of(i), i):
                j = int(j)
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
    A = sp.csc_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                     shape=(n, n))
    A.sum_duplicates()
    return TransitionMatrix(A, space, built)


@dataclass
class StationaryDistribution:
    pi: np.ndarray
    recurrent: np.ndarray   # state indices of the closed class
    method: str
    residual: float


def recurrent_class(A, start: int) -> np.ndarray:
    """Closed communicating class reachable from ``start``.

    Raises :class:`ReducibleChainError` when more than one closed class is
    reachable.
    """
    A = sp.csr_array(A)
    graph = sp.csr_array(A.T)  # edge i -> j where A[j, i] > 0
    reach = np.sort(breadth_first_order(graph, start, directed=True, return_predecessors=False))
    sub = graph[reach][:, reach].tocoo()
    ncomp, labels = connected_components(sub, directed=True, connection="strong")
    leaks = labels[sub.row] != labels[sub.col]
    open_comps = set(labels[sub.row[leaks]].tolist())
    closed = [c for c in range(ncomp) if c not in open_comps]
    if len(closed) != 1:
        raise ReducibleChainError(
            f"{len(closed)} closed classes reachable from state {start}; "
            "stationary distribution is not unique")
    return reach[labels == closed[0]]


def _power_iteration(Ac, tol=1e-12, max_iter=1_000_000):
    n = Ac.shape[0]
    pi = np.full(n, 1.0 / n)
    for it in range(max_iter):
        nxt = Ac @ pi
        nxt /= nxt.sum()
        res = np.max(np.abs(nxt - pi))
        pi = nxt
        if res < tol:
            return pi, it + 1
    raise RuntimeError(f"power iteration did not reach {tol} in {max_iter} steps")


def stationary_distribution(A, start: int, dense_limit: int = DENSE_LIMIT) -> StationaryDistribution:
    """Stationary vector of the closed class reachable from ``start``.

    Small classes solve ``(A - I + B) pi = b`` directly (``B`` all ones);
    larger ones use power iteration.  States outside the class get zero.
    """
    A = sp.csc_array(A)
    n = A.shape[0]
    cls = recurrent_class(A, start)
    Ac = sp.csc_array(A[cls][:, cls])
    m = len(cls)
    if m <= dense_limit:
        M = Ac.toarray() - np.eye(m) + 1.0
        try:
            pic = scipy.linalg.solve(M, np.ones(m))
        except scipy.linalg.LinAlgError as err:
            raise ReducibleChainError(str(err)) from err
        method = "dense"
    else:
        pic, iters = _power_iteration(Ac)
        method = f"power({iters})"
    pic = np.clip(pic, 0.0, None)
    pic /= pic.sum()
    residual = float(np.max(np.abs(Ac @ pic - pic)))
    pi = np.zeros(n)
    pi[cls] = pic
    return StationaryDistribution(pi, cls, method, residual)


def closed_form_outage(A, cls: np.ndarray, dense_limit: int = DENSE_LIMIT) -> float:
    """``diag(A)^T (A - I + B)^{-1} b`` on the recurrent class.

    Evaluated through the transposed system so that it shares no solve
    with :func:`stationary_distribution`; large classes use a sparse LU of
    the bordered system instead.
    """
    A = sp.csc_array(A)
    Ac = sp.csc_array(A[cls][:, cls])
    d = Ac.diagonal()
    m = len(cls)
    if m <= dense_limit:
        M = Ac.toarray() - np.eye(m) + 1.0
        y = scipy.linalg.solve(M.T, d)
        return float(y.sum())
    Q = sp.lil_array(Ac - sp.eye_array(m, format="csc"))
    Q[0, :] = 1.0
    rhs = np.zeros(m)
    rhs[0] = 1.0
    pi = spla.spsolve(sp.csc_array(Q), rhs)
    return float(d @ pi)


@dataclass
class OutageAnalysis:
    p_out: float
    closed_form: float
    stationary: StationaryDistribution
    transitions: TransitionMatrix

    @property
    def pi(self) -> np.ndarray:
        return self.stationary.pi


def analyze(config: NetworkConfig, snr_db: float | None = None,
            start: SystemState | None = None, cap: int = DEFAULT_STATE_CAP,
            dense_limit: int = DENSE_LIMIT) -> OutageAnalysis:
    """Full analytical pipeline: build, solve, and cross-check the outage."""
    if snr_db is not None:
        config = config.with_snr(snr_db)
    start = start or SystemState.empty(config.num_relays)
    T = build_transition_matrix(config, start, cap)
    s0 = T.space.index(start)
    stat = stationary_distribution(T.matrix, s0, dense_limit)
    diag = T.diagonal()
    p_out = float(stat.pi @ diag)
    closed = closed_form_outage(T.matrix, stat.recurrent, dense_limit)
    if abs(p_out - closed) > AGREEMENT_TOL:
        raise RuntimeError(f"stationary outage {p_out!r} and closed form {closed!r} disagree")
    return OutageAnalysis(min(max(p_out, 0.0), 1.0), closed, stat, T)


def overall_outage(config: NetworkConfig, snr_db: float | None = None, **kwargs) -> float:
    return analyze(config, snr_db, **kwargs).p_out


@dataclass
class OutageCurve:
    """One outage-vs-SNR series.

    ``source`` is ``"analytical"`` or ``"simulated"``; ``ci`` holds 95%
    binomial half-widths for simulated series and ``ci_batch`` the
    batch-means ones.  A simulated sweep may carry the
    matching analytical series in ``analytical``.
    """

    snr_db: np.ndarray
    p_out: np.ndarray
    source: str
    policy: str = "proposed"
    ci: np.ndarray | None = None
    analytical: "OutageCurve | None" = None
    ci_batch: np.ndarray | None = None

    def __post_init__(self):
        self.snr_db = np.asarray(self.snr_db, dtype=float)
        self.p_out = np.asarray(self.p_out, dtype=float)
        if self.snr_db.shape != self.p_out.shape:
            raise ValueError("snr_db and p_out differ in length")
        if np.any(np.diff(self.snr_db) <= 0):
            raise ValueError("snr_db must be strictly increasing")

    def at(self, snr_db: float) -> float:
        hit = np.flatnonzero(np.isclose(self.snr_db, snr_db, rtol=0, atol=1e-9))
        if not hit.size:
            raise ValueError(f"SNR point {snr_db} dB not on the curve")
        return float(self.p_out[hit[0]])


def analytical_curve(config: NetworkConfig, snr_list, **kwargs) -> OutageCurve:
    snrs = sorted(float(s) for s in snr_list)
    return OutageCurve(snrs, [overall_outage(config, s, **kwargs) for s in snrs], "analytical")


def estimate_diversity(curve: OutageCurve, snr_lo: float, snr_hi: float) -> float:
    """Slope of ``-log10 P_out`` per 10 dB between two points of ``curve``."""
    lo, hi = curve.at(snr_lo), curve.at(snr_hi)
    if lo <= 0 or hi <= 0:
        raise ValueError("outage probabilities must be positive to take logs")
    return (math.log10(lo) - math.log10(hi)) / ((snr_hi - snr_lo) / 10.0)
