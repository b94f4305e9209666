"""Buffer-aided relay selection with energy harvesting.

Analytical (Markov chain) and simulated outage of a state-dependent link
selection rule for networks whose relays hold both a data buffer and an
energy storage.
"""

from .channel import (
    ChannelParams,
    PowerParams,
    capacity,
    charge_and_outage_prob,
    charge_prob,
    energy_increment,
    outage_prob,
    outage_threshold,
    sample_gain,
)
from .markov import (
    OutageCurve,
    ReducibleChainError,
    analyze,
    build_transition_matrix,
    estimate_diversity,
    overall_outage,
    stationary_distribution,
    state_outage_prob,
    transition_column,
)
from .policy import PolicyKind, predicted_next_state, rank_links, select_link, select_link_baseline
from .simulation import SimulationResult, SimulationSpec, run_simulation, sweep
from .state import (
    Direction,
    Link,
    NetworkConfig,
    StateSpace,
    SystemState,
    apply_transition,
    availability_indices,
    availability_vector,
    available_links,
    compare_availability,
    enumerate_states,
    is_deadlock,
    is_edge_state,
)

__version__ = "0.1.0"
