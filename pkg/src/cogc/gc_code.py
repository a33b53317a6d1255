"""Cyclic gradient codes: construction, combination rows and rank analytics.

A code is the pair ``(B, H)``: ``H`` is an ``s x M`` random matrix whose
null space contains the all-ones vector, and every row of ``B`` is the
null vector of ``H`` restricted to a cyclic window of ``s + 1`` columns.
Any ``M - s`` rows of ``B`` then span ``null(H)``, which is what lets the
parameter server rebuild ``1^T`` from any ``M - s`` partial sums.
"""

import functools
import itertools
import json
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import (
    CodeGenerationError,
    DecodeInfeasibleError,
    InvalidInputError,
    InvalidMaskError,
    InvalidParamsError,
    TooManyStragglersError,
)
from .linalg import RANK_TOL, numerical_rank

#: Residual above which a combination row is declared infeasible.
INFEASIBLE_RESIDUAL = 1e-6


@dataclass(frozen=True)
class CodeParams:
    M: int
    s: int
    seed: int = 0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise InvalidParamsError(f"M must be a positive integer, got {self.M}")
        if int(self.s) != self.s or self.s < 0:
            raise InvalidParamsError(f"s must be a nonnegative integer, got {self.s}")
        if self.s + 1 > self.M:
            raise InvalidParamsError(f"need s + 1 <= M, got M={self.M}, s={self.s}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParamsError("seed must fit in an unsigned 64-bit integer")


@functools.lru_cache(maxsize=256)
def cyclic_support(M, s):
    """Column indices ``(m, m+1, ..., m+s) mod M`` of each row."""
    return tuple(tuple((m + j) % M for j in range(s + 1)) for m in range(M))


@functools.lru_cache(maxsize=256)
def support_mask(M, s):
    mask = np.zeros((M, M), dtype=bool)
    for m, cols in enumerate(cyclic_support(M, s)):
        mask[m, list(cols)] = True
    mask.setflags(write=False)
    return mask


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CyclicCode:
    M: int
    s: int
    seed: int
    B: np.ndarray
    H: np.ndarray
    support: Tuple[Tuple[int, ...], ...] = field(repr=False)

    def to_dict(self):
        return {
            "M": self.M,
            "s": self.s,
            "seed": int(self.seed),
            "B": self.B.tolist(),
            "H": self.H.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data, verify=True):
        """Rebuild a code from its serialized form.

        With ``verify`` the code is regenerated from ``(M, s, seed)`` and the
        serialized matrices must match it byte for byte.
        """
        code = cls(
            M=int(data["M"]),
            s=int(data["s"]),
            seed=int(data["seed"]),
            B=_frozen(data["B"]).reshape(int(data["M"]), int(data["M"])),
            H=_frozen(data["H"]).reshape(int(data["s"]), int(data["M"])),
            support=cyclic_support(int(data["M"]), int(data["s"])),
        )
        if verify:
            fresh = generate_code(CodeParams(code.M, code.s, code.seed))
            if fresh.to_json() != code.to_json():
                raise InvalidInputError(
                    "serialized matrices do not match regeneration from (M, s, seed)"
                )
        return code

    @classmethod
    def from_json(cls, text, verify=True):
        return cls.from_dict(json.loads(text), verify=verify)


def generate_code(params: CodeParams) -> CyclicCode:
    """Draw ``H`` with i.i.d. standard normal entries (last column set to
    minus the sum of the others) and solve each row of ``B`` inside its
    cyclic window, with the leading window coefficient fixed to 1.
    """
    M, s = params.M, params.s
    rng = np.random.default_rng(int(params.seed))
    H = rng.standard_normal((s, M))
    if s > 0:
        H[:, -1] = -H[:, :-1].sum(axis=1)
    support = cyclic_support(M, s)
    B = np.zeros((M, M))
    rows = np.arange(M)
    B[rows, rows] = 1.0
    if s > 0:
        tails = np.array([cols[1:] for cols in support])  # (M, s)
        lhs = np.transpose(H[:, tails], (1, 0, 2))  # (M, s, s)
        rhs = -H[:, rows].T  # (M, s)
        try:
            x = np.linalg.solve(lhs, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise CodeGenerationError(f"singular window system for seed {params.seed}") from exc
        B[rows[:, None], tails] = x
    return CyclicCode(M=M, s=s, seed=int(params.seed), B=_frozen(B), H=_frozen(H), support=support)


@dataclass(frozen=True, eq=False)
class CombinationRow:
    a: np.ndarray
    straggler_set: FrozenSet[int]
    residual: float


def _check_clients(M, clients):
    out = frozenset(int(c) for c in clients)
    if any(c < 0 or c >= M for c in out):
        raise InvalidInputError(f"client indices must lie in [0, {M})")
    return out


def combination_vector(code: CyclicCode, stragglers) -> CombinationRow:
    """Row ``a`` with zeros on ``stragglers`` and ``a^T B = 1^T``.

    Solved on demand from the non-straggler rows of ``B`` by least squares
    on row-normalized rows, so with more than ``M - s`` rows available the
    solution is one valid choice among many.
    """
    stragglers = _check_clients(code.M, stragglers)
    if len(stragglers) > code.s:
        raise TooManyStragglersError(
            f"{len(stragglers)} stragglers exceed tolerance s={code.s}"
        )
    keep = np.array([m for m in range(code.M) if m not in stragglers], dtype=int)
    sub = code.B[keep]
    # row scaling plus one refinement pass keeps the residual small for badly scaled codes
    scale = np.max(np.abs(sub), axis=1)
    scaled = (sub / scale[:, None]).T
    target = np.ones(code.M)
    coeffs, *_ = np.linalg.lstsq(scaled, target, rcond=None)
    fix, *_ = np.linalg.lstsq(scaled, target - scaled @ coeffs, rcond=None)
    coeffs = (coeffs + fix) / scale
    a = np.zeros(code.M)
    a[keep] = coeffs
    residual = float(np.max(np.abs(a @ code.B - 1.0)))
    if not np.isfinite(residual) or residual > INFEASIBLE_RESIDUAL:
        raise DecodeInfeasibleError(
            f"restricted system is numerically singular (residual {residual:.3g})"
        )
    a.setflags(write=False)
    return CombinationRow(a=a, straggler_set=stragglers, residual=residual)


@dataclass(frozen=True)
class RankReport:
    numerical_rank: int
    predicted_rank: Optional[int]
    n_ir: Optional[int]
    pivot_tolerance: float
    unperturbed_rows: int = 0

    @property
    def agrees(self):
        return self.predicted_rank is None or self.predicted_rank == self.numerical_rank


def erased_pattern(code: CyclicCode, mask):
    """Boolean ``M x M`` matrix marking support entries zeroed by ``mask``."""
    mask = np.asarray(mask)
    if mask.shape != (code.M, code.M):
        raise InvalidMaskError(f"mask must be {code.M}x{code.M}, got {mask.shape}")
    if not np.all(np.diag(mask) == 1):
        raise InvalidMaskError("mask diagonal must be all ones (no self-link erasure)")
    return support_mask(code.M, code.s) & (mask == 0)


def count_nonconflicting(pattern, rank_cap=None) -> int:
    """Maximum number of nonzeros of ``pattern`` lying in distinct rows and
    distinct columns.

    Rows sharing an identical nonzero pattern are first deduplicated: a group
    of ``n_r`` rows with ``n_c`` nonzeros keeps ``min(n_r, n_c, rank_cap)``
    copies. The count is then a maximum bipartite matching between rows and
    columns.
    """
    pattern = np.asarray(pattern, dtype=bool)
    if pattern.ndim != 2 or pattern.size == 0:
        return 0
    pattern = pattern[pattern.any(axis=1)]
    if pattern.shape[0] == 0:
        return 0
    groups = {}
    for row in pattern:
        key = row.tobytes()
        groups.setdefault(key, [row, 0])[1] += 1
    kept = []
    for row, n_r in groups.values():
        k = min(n_r, int(row.sum()))
        if rank_cap is not None:
            k = min(k, int(rank_cap))
        kept.extend([row] * k)
    if not kept:
        return 0
    graph = csr_matrix(np.array(kept, dtype=np.int8))
    matched = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.count_nonzero(matched >= 0))


def rank_after_client_outages(code: CyclicCode, mask, tol=RANK_TOL) -> RankReport:
    """Numerical rank of ``B * mask`` and, when at least ``M - s`` rows are
    untouched, the combinatorial prediction ``min(M, M - s + n_ir)``.

    ``agrees`` on the report tells whether the two coincide; the prediction
    is a generic-position count and can overshoot on structured erasures.
    """
    erased = erased_pattern(code, mask)
    perturbed = erased.any(axis=1)
    unperturbed = int(code.M - perturbed.sum())
    rank = numerical_rank(code.B * np.asarray(mask, dtype=float), tol)
    predicted = n_ir = None
    if unperturbed >= code.M - code.s:
        n_ir = count_nonconflicting(erased[perturbed], rank_cap=code.M - code.s)
        predicted = min(code.M, code.M - code.s + n_ir)
    return RankReport(
        numerical_rank=rank,
        predicted_rank=predicted,
        n_ir=n_ir,
        pivot_tolerance=tol,
        unperturbed_rows=unperturbed,
    )


def predicted_stack_rank(M: int, s: int, t_r: int) -> int:
    if t_r < 1:
        raise InvalidParamsError("t_r must be at least 1")
    return min((M - s - 1) * t_r + 1, M)


def all_straggler_sets(M, s):
    """Every subset of ``range(M)`` of size at most ``s``."""
    for k in range(s + 1):
        yield from itertools.combinations(range(M), k)
