"""One CoGC communication attempt and the two decoders.

Client ``m`` forms ``s_m = sum_k B[m, k] T[m, k] dg_k`` from whatever
neighbour updates reached it and sends it to the server if its uplink is up.
The standard decoder needs ``M - s`` *complete* sums from one attempt; the
complementary (GC+) decoder also uses incomplete sums, stacked across
attempts, and recovers whichever individual updates are linearly solvable.
"""

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Tuple

import numpy as np

from .channel import RoundConnectivity
from .errors import InvalidInputError, NumericalInconsistencyError
from .gc_code import CyclicCode, combination_vector
from .linalg import RANK_TOL, in_row_space, rref

#: Relative residual tolerated when solving the stacked system.
CONSISTENCY_TOL = 1e-6


class OutcomeKind(str, enum.Enum):
    FULL_VIA_GC = "FullViaGC"
    FULL_VIA_PLUS = "FullViaPlus"
    PARTIAL = "Partial"
    FAILURE = "Failure"

    @property
    def is_full(self):
        return self in (OutcomeKind.FULL_VIA_GC, OutcomeKind.FULL_VIA_PLUS)


class DecodeMode(str, enum.Enum):
    EXACT = "exact"
    PAPER_APPROX = "paper_approx"


@dataclass(frozen=True, eq=False)
class PartialSum:
    owner: int
    coeffs: np.ndarray
    value: np.ndarray
    complete: bool


@dataclass(frozen=True, eq=False)
class RoundTranscript:
    code: CyclicCode
    connectivity: RoundConnectivity
    b_hat: np.ndarray
    received: Tuple[PartialSum, ...]
    K3: FrozenSet[int]
    attempt: int = 0

    @property
    def M(self):
        return self.code.M

    @property
    def dim(self):
        return self.received[0].value.shape[0] if self.received else None


@dataclass(frozen=True, eq=False)
class DecodeOutcome:
    kind: OutcomeKind
    K4: FrozenSet[int]
    recovered: Dict[int, np.ndarray] = field(default_factory=dict)
    global_update: Optional[np.ndarray] = None
    attempt: Optional[int] = None

    @property
    def success(self):
        return self.kind is not OutcomeKind.FAILURE


def _failure(attempt=None):
    return DecodeOutcome(kind=OutcomeKind.FAILURE, K4=frozenset(), attempt=attempt)


def _check_updates(M, updates):
    updates = np.asarray(updates, dtype=float)
    if updates.ndim == 1:
        updates = updates[:, None]
    if updates.ndim != 2 or updates.shape[0] != M:
        raise InvalidInputError(f"expected {M} update vectors, got shape {updates.shape}")
    if not np.all(np.isfinite(updates)):
        raise InvalidInputError("local updates must be finite")
    return updates


def gradient_share(
    code: CyclicCode,
    conn: RoundConnectivity,
    updates,
    transmit_incomplete=True,
    attempt=0,
) -> RoundTranscript:
    """Run the sharing phase and uplink of one attempt.

    ``b_hat`` is ``(B * T)`` with rows of failed uplinks zeroed. With
    ``transmit_incomplete=False`` (standard CoGC) only owners of complete
    sums transmit; ``b_hat`` still reflects every uplink draw.
    """
    M = code.M
    updates = _check_updates(M, updates)
    T = np.asarray(conn.T)
    tau = np.asarray(conn.tau)
    if T.shape != (M, M) or tau.shape != (M,):
        raise InvalidInputError("connectivity shape does not match the code")

    perturbed = code.B * T
    missing = (code.B != 0) & (T == 0)
    K3 = frozenset(np.flatnonzero(~missing.any(axis=1)).tolist())
    sums = perturbed @ updates

    received = []
    for m in range(M):
        if not tau[m]:
            continue
        is_complete = m in K3
        if not (is_complete or transmit_incomplete):
            continue
        coeffs = perturbed[m].copy()
        value = sums[m].copy()
        coeffs.setflags(write=False)
        value.setflags(write=False)
        received.append(PartialSum(owner=m, coeffs=coeffs, value=value, complete=is_complete))

    b_hat = perturbed * tau[:, None]
    b_hat.setflags(write=False)
    return RoundTranscript(
        code=code,
        connectivity=conn,
        b_hat=b_hat,
        received=tuple(received),
        K3=K3,
        attempt=attempt,
    )


def gc_decode(code: CyclicCode, transcript: RoundTranscript) -> DecodeOutcome:
    """Standard decoder: exact mean from ``M - s`` complete sums, or nothing.

    When more than ``M - s`` complete sums arrive, the lowest-indexed
    ``M - s`` are used and the rest are treated as stragglers.
    """
    M, s = code.M, code.s
    complete = {ps.owner: ps for ps in transcript.received if ps.complete}
    if len(complete) < M - s:
        return _failure(transcript.attempt)
    used = sorted(complete)[: M - s]
    stragglers = [m for m in range(M) if m not in used]
    a = combination_vector(code, stragglers).a
    total = sum(a[m] * complete[m].value for m in used)
    return DecodeOutcome(
        kind=OutcomeKind.FULL_VIA_GC,
        K4=frozenset(range(M)),
        global_update=total / M,
        attempt=transcript.attempt,
    )


@dataclass(frozen=True, eq=False)
class StackedTranscript:
    transcripts: Tuple[RoundTranscript, ...]
    b_hat: np.ndarray
    values: np.ndarray
    received_rows: np.ndarray

    @property
    def M(self):
        return self.b_hat.shape[1]


def stack_transcripts(transcripts) -> StackedTranscript:
    """Stack ``b_hat`` blocks and their received sums in attempt order.

    Rows that never reached the server stay in place as zero rows and are
    flagged ``False`` in ``received_rows``.
    """
    transcripts = tuple(transcripts)
    if not transcripts:
        raise InvalidInputError("need at least one transcript")
    M = transcripts[0].M
    dims = {t.dim for t in transcripts if t.dim is not None}
    if any(t.M != M for t in transcripts) or len(dims) > 1:
        raise InvalidInputError("transcripts disagree on M or update dimension")
    D = dims.pop() if dims else 1
    n = len(transcripts)
    b_hat = np.zeros((n * M, M))
    values = np.zeros((n * M, D))
    got = np.zeros(n * M, dtype=bool)
    for i, t in enumerate(transcripts):
        b_hat[i * M:(i + 1) * M] = t.b_hat
        for ps in t.received:
            values[i * M + ps.owner] = ps.value
            got[i * M + ps.owner] = True
    # rows not transmitted carry no coefficients at the server
    b_hat[~got] = 0.0
    for arr in (b_hat, values, got):
        arr.setflags(write=False)
    return StackedTranscript(transcripts=transcripts, b_hat=b_hat, values=values, received_rows=got)


def _solve(rows, sums, tol=CONSISTENCY_TOL):
    x, *_ = np.linalg.lstsq(rows, sums, rcond=None)
    resid = np.linalg.norm(rows @ x - sums)
    scale = np.linalg.norm(sums) + np.linalg.norm(rows) * np.linalg.norm(x)
    if resid > tol * max(scale, 1e-300):
        raise NumericalInconsistencyError(
            f"stacked partial sums are inconsistent (residual {resid:.3g})"
        )
    return x


def _decodable_exact(rows, tol):
    echelon, pivots = rref(rows, tol)
    return [i for i in range(rows.shape[1]) if in_row_space(echelon, pivots, i, tol)]


def _decodable_approx(b_hat, tol):
    echelon, _ = rref(b_hat, tol)
    nonzero_cols = [i for i in range(b_hat.shape[1]) if np.any(echelon[:, i] != 0)]
    nonzero_rows = int(np.count_nonzero(np.any(echelon != 0, axis=1)))
    if len(nonzero_cols) < nonzero_rows:
        return nonzero_cols
    return []


def gc_plus_decode(stacked: StackedTranscript, mode="exact", tol=RANK_TOL) -> DecodeOutcome:
    """Complementary decoder over a stack of attempts.

    Any attempt that the standard decoder can handle on its own yields
    ``FullViaGC``. Otherwise the decodable set ``K4`` is found from the
    stacked coefficients (``exact``: standard basis rows in the row space;
    ``paper_approx``: nonzero columns/rows of the RREF) and the global update
    is the mean of the recovered updates.
    """
    mode = DecodeMode(mode)
    for t in stacked.transcripts:
        outcome = gc_decode(t.code, t)
        if outcome.success:
            return outcome

    last = stacked.transcripts[-1].attempt
    rows = stacked.b_hat[stacked.received_rows]
    sums = stacked.values[stacked.received_rows]
    if rows.shape[0] == 0:
        return _failure(last)

    if mode is DecodeMode.EXACT:
        K4 = _decodable_exact(rows, tol)
    else:
        K4 = _decodable_approx(stacked.b_hat, tol)
    if not K4:
        return _failure(last)

    x = _solve(rows, sums)
    recovered = {}
    for i in K4:
        v = x[i].copy()
        v.setflags(write=False)
        recovered[i] = v
    update = np.mean([recovered[i] for i in K4], axis=0)
    kind = OutcomeKind.FULL_VIA_PLUS if len(K4) == stacked.M else OutcomeKind.PARTIAL
    return DecodeOutcome(
        kind=kind,
        K4=frozenset(K4),
        recovered=recovered,
        global_update=update,
        attempt=last,
    )


def transcript_to_dict(transcript: RoundTranscript, outcome: Optional[DecodeOutcome] = None):
    out = {
        "attempt": int(transcript.attempt),
        "T": np.asarray(transcript.connectivity.T).astype(int).tolist(),
        "tau": np.asarray(transcript.connectivity.tau).astype(int).tolist(),
        "b_hat": transcript.b_hat.tolist(),
        "K3": sorted(transcript.K3),
    }
    if outcome is not None:
        out["outcome"] = outcome.kind.value
        out["K4"] = sorted(outcome.K4)
    return out


def transcript_to_json(transcript, outcome=None):
    return json.dumps(transcript_to_dict(transcript, outcome), sort_keys=True)
