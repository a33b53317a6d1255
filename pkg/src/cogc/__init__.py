"""Cooperative gradient coding over intermittent networks."""

from .analysis import (
    OutageBreakdown,
    Theorem1Bound,
    Theorem1Params,
    cost_efficient_s,
    expected_retries,
    full_recovery_lower_bound,
    k_star,
    lmip_bits,
    outage_probability,
    polylog_neg,
    theorem1_bound,
    transmissions_per_round,
)
from .channel import NetworkModel, RoundConnectivity, RoundKey, draw_round, neighbor_sets
from .gc_code import (
    CodeParams,
    CombinationRow,
    CyclicCode,
    RankReport,
    combination_vector,
    count_nonconflicting,
    generate_code,
    predicted_stack_rank,
    rank_after_client_outages,
)
from .linalg import numerical_rank
from .protocol import (
    DecodeOutcome,
    OutcomeKind,
    RoundTranscript,
    gc_decode,
    gc_plus_decode,
    gradient_share,
    stack_transcripts,
)

__version__ = "0.1.0"
