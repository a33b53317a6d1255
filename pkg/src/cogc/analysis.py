"""Closed-form reliability, design, convergence and leakage formulas."""

import enum
import itertools
import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .channel import NetworkModel
from .errors import (
    BoundInapplicableError,
    DivergentRetriesError,
    DomainError,
    InfeasibleTargetError,
    InfiniteLeakageError,
    InvalidInputError,
    InvalidParamsError,
    UndefinedBoundError,
)
from .gc_code import cyclic_support

# --------------------------------------------------------------------------
# Outage of the standard decoder
# --------------------------------------------------------------------------


class OutageFormula(str, enum.Enum):
    """Which reading of the subcase formulas to evaluate.

    ``semantic``: a client's sum is incomplete when any of the ``s`` links it
    *hears* over fails, and the uplink stage uses uplink probabilities.
    ``printed``: the formulas exactly as typeset, indexing each client's
    links by the set it *sends* to and reusing client-to-client terms in
    the uplink stage of subcase 3.
    """

    SEMANTIC = "semantic"
    PRINTED = "printed"


@dataclass(frozen=True)
class OutageBreakdown:
    s: int
    P1: float
    P2: float
    P3: float
    P_O: float
    P11: Tuple[float, ...] = field(repr=False)
    P21: float = 0.0
    P22: float = 0.0

    @property
    def expected_complete(self):
        return float(sum(1.0 - q for q in self.P11))


def incomplete_probabilities(network: NetworkModel, s: int, formula="semantic"):
    """Per-client probability that its partial sum is incomplete."""
    formula = OutageFormula(formula)
    M = network.M
    q = np.zeros(M)
    for m, cols in enumerate(cyclic_support(M, s)):
        if formula is OutageFormula.SEMANTIC:
            senders = cols[1:]
        else:
            senders = [(m - j) % M for j in range(1, s + 1)]
        ok = 1.0
        for k in senders:
            ok *= 1.0 - network.p_c2c[m, k]
        q[m] = 1.0 - ok
    return q


def _check_s(network, s):
    if network.M < 2:
        raise InvalidParamsError("outage analysis needs M >= 2")
    if not 0 <= s <= network.M - 1:
        raise InvalidParamsError(f"s must lie in [0, {network.M - 1}]")


def _state_dp(q, w_ok, w_fail):
    """``dist[v, f]``: weight of ``v`` incomplete clients and ``f`` complete
    clients in state "fail", each client contributing ``q``, ``(1-q) w_ok``
    or ``(1-q) w_fail``."""
    M = len(q)
    dist = np.zeros((M + 1, M + 1))
    dist[0, 0] = 1.0
    for m in range(M):
        new = np.zeros_like(dist)
        new[1:, :] += dist[:-1, :] * q[m]
        new[:, :] += dist * (1.0 - q[m]) * w_ok[m]
        new[:, 1:] += dist[:, :-1] * (1.0 - q[m]) * w_fail[m]
        dist = new
    return dist


def _tail(pmf, above):
    """Sum of ``pmf[k]`` for ``k > above``."""
    start = max(0, above + 1)
    return float(np.sum(pmf[start:])) if start < len(pmf) else 0.0


def _outage_dp(network, s, q, formula):
    M = network.M
    p = network.p_up
    if formula is OutageFormula.SEMANTIC:
        dist = _state_dp(q, 1.0 - p, p)
    else:
        dist = _state_dp(q, np.ones(M), q)
    incomplete = _state_dp(q, np.ones(M), np.zeros(M))[:, 0]
    P1 = _tail(incomplete, s)
    P21 = float(np.prod(1.0 - q))
    up_fail = _state_dp(np.zeros(M), 1.0 - p, p)[0, :]
    P22 = _tail(up_fail, s)
    P3 = 0.0
    for v in range(1, s + 1):
        P3 += _tail(dist[v, :], s - v)
    return P1, P21, P22, P3


def _subset_weight(members, outside, inside_p, outside_p):
    w = 1.0
    for m in members:
        w *= inside_p[m]
    for m in outside:
        w *= outside_p[m]
    return w


def _outage_enumerate(network, s, q, formula):
    M = network.M
    p = network.p_up
    everyone = frozenset(range(M))

    def over(pool, more_than, inside, outside):
        pool = sorted(pool)
        total = 0.0
        for k in range(more_than + 1, len(pool) + 1):
            for S in itertools.combinations(pool, k):
                rest = set(pool).difference(S)
                total += _subset_weight(S, rest, inside, outside)
        return total

    ones = np.ones(M)
    P1 = over(everyone, s, q, 1.0 - q)
    P21 = float(np.prod(1.0 - q))
    P22 = over(everyone, s, p, 1.0 - p)
    P3 = 0.0
    for v1 in range(1, s + 1):
        for S1 in itertools.combinations(range(M), v1):
            rest = everyone.difference(S1)
            P31 = _subset_weight(S1, rest, q, 1.0 - q)
            if formula is OutageFormula.SEMANTIC:
                P32 = over(rest, s - v1, p, 1.0 - p)
            else:
                P32 = over(rest, s - v1, q, ones)
            P3 += P31 * P32
    return P1, P21, P22, P3


def outage_probability(network: NetworkModel, s: int, method="dp", formula="semantic") -> OutageBreakdown:
    """Overall outage probability of the standard decoder and its subcases.

    ``P1``: more than ``s`` incomplete sums. ``P2``: every sum complete but
    more than ``s`` uplinks down. ``P3``: ``v`` incomplete sums
    (``1 <= v <= s``) and more than ``s - v`` of the remaining uplinks down.

    ``method="dp"`` evaluates the subset sums by convolution over clients;
    ``method="enumerate"`` iterates the subsets literally (slow beyond M ~ 12).
    """
    _check_s(network, s)
    formula = OutageFormula(formula)
    q = incomplete_probabilities(network, s, formula)
    if method == "dp":
        P1, P21, P22, P3 = _outage_dp(network, s, q, formula)
    elif method == "enumerate":
        P1, P21, P22, P3 = _outage_enumerate(network, s, q, formula)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    P2 = P21 * P22
    return OutageBreakdown(
        s=s,
        P1=P1,
        P2=P2,
        P3=P3,
        P_O=P1 + P2 + P3,
        P11=tuple(float(x) for x in q),
        P21=P21,
        P22=P22,
    )


def expected_retries(P_O: float) -> float:
    """Mean of the geometric number of attempts until the first recovery.

    Evaluated on the decimal value of ``P_O`` so that e.g. 0.9 gives 10.
    """
    if not 0.0 <= P_O <= 1.0:
        raise DomainError("P_O must lie in [0, 1]")
    if P_O == 1.0:
        raise DivergentRetriesError("P_O = 1: recovery never happens")
    return float(1 / (1 - Fraction(repr(float(P_O)))))


def transmissions_per_round(M: int, s: int, K3_size: int) -> int:
    """``s M`` sharing messages plus one uplink per complete sum."""
    if not 0 <= K3_size <= M:
        raise InvalidInputError("K3_size must lie in [0, M]")
    return s * M + K3_size


@dataclass(frozen=True)
class DesignRow:
    s: int
    P1: float
    P2: float
    P3: float
    P_O: float
    E_retries: float
    tx_max: int
    tx_expected: float

    def as_dict(self):
        return {
            "s": self.s,
            "P1": self.P1,
            "P2": self.P2,
            "P3": self.P3,
            "P_O": self.P_O,
            "E_retries": self.E_retries,
            "tx_max": self.tx_max,
            "tx_expected": self.tx_expected,
        }


def design_row(network: NetworkModel, s: int) -> DesignRow:
    br = outage_probability(network, s)
    M = network.M
    retries = math.inf if br.P_O >= 1.0 else expected_retries(br.P_O)
    return DesignRow(
        s=s,
        P1=br.P1,
        P2=br.P2,
        P3=br.P3,
        P_O=br.P_O,
        E_retries=retries,
        tx_max=transmissions_per_round(M, s, M),
        tx_expected=s * M + br.expected_complete,
    )


def design_table(network: NetworkModel):
    return [design_row(network, s) for s in range(network.M)]


def cost_efficient_s(network: NetworkModel, target: float) -> int:
    """Smallest ``s`` whose outage probability does not exceed ``target``.

    ``P_O`` is not monotone in ``s``, so every ``s`` in ``0..M-1`` is scanned.
    """
    if not 0.0 < target <= 1.0:
        raise DomainError(f"target must lie in (0, 1], got {target}")
    for s in range(network.M):
        if outage_probability(network, s).P_O <= target:
            return s
    raise InfeasibleTargetError(f"no s in [0, {network.M - 1}] reaches P_O <= {target}")


# --------------------------------------------------------------------------
# GC+ bounds
# --------------------------------------------------------------------------


def full_recovery_lower_bound(M: int, s: int, t_r: int, p: float) -> float:
    """Binomial tail: at least ``M`` of the ``(M - s) t_r`` extracted rows survive."""
    if not 0.0 <= p <= 1.0:
        raise DomainError("p must lie in [0, 1]")
    n = (M - s) * t_r
    return float(sum(math.comb(n, v) * p ** (n - v) * (1.0 - p) ** v for v in range(M, n + 1)))


def k_star_inverse(M: int, s: int, t_r: int, p: float, P_O: float) -> float:
    pm = full_recovery_lower_bound(M, s, t_r, p)
    denom = 1.0 - min(P_O**t_r, 1.0 - pm)
    if denom <= 0.0:
        raise UndefinedBoundError("1 - min(P_O^t_r, 1 - P_M) is zero")
    harmonic = sum(1.0 / m for m in range(1, M))
    return pm * harmonic / denom + 1.0 / M


def k_star(M: int, s: int, t_r: int, p: float, P_O: float) -> float:
    """Lower bound on the effective averaging size of partial recovery;
    ``1 / k_star`` upper-bounds ``E[1 / |K4|]`` given ``K4`` non-empty."""
    return 1.0 / k_star_inverse(M, s, t_r, p, P_O)


# --------------------------------------------------------------------------
# Convergence bound for binary recovery
# --------------------------------------------------------------------------


def polylog_neg(v: int, z: float) -> float:
    """``Li_{-v}(z) = sum_k k^v z^k`` for ``v`` in 1..4 and ``0 <= z < 1``."""
    if not 0.0 <= z < 1.0:
        raise DomainError(f"z must lie in [0, 1), got {z}")
    w = 1.0 - z
    if v == 1:
        return z / w**2
    if v == 2:
        return z * (1.0 + z) / w**3
    if v == 3:
        return z * (1.0 + 4.0 * z + z * z) / w**4
    if v == 4:
        return z * (1.0 + z) * (1.0 + 10.0 * z + z * z) / w**5
    raise DomainError(f"order v must be in 1..4, got {v}")


def geometric_moment(v: int, P_O: float) -> float:
    """``E[R^v]`` for ``R ~ Geo(1 - P_O)`` on ``{1, 2, ...}``."""
    if P_O == 0.0:
        return 1.0
    return (1.0 - P_O) / P_O * polylog_neg(v, P_O)


@dataclass(frozen=True, eq=False)
class Theorem1Params:
    M: int
    I: int
    T: int
    L: float
    sigma2: float
    D2: np.ndarray
    p_up: np.ndarray
    P_O: float
    F_gap: float

    def __post_init__(self):
        D2 = np.broadcast_to(np.asarray(self.D2, dtype=float), (self.M,)).copy()
        p_up = np.broadcast_to(np.asarray(self.p_up, dtype=float), (self.M,)).copy()
        object.__setattr__(self, "D2", D2)
        object.__setattr__(self, "p_up", p_up)
        if min(self.M, self.I, self.T) < 1:
            raise InvalidParamsError("M, I, T must be positive")
        if self.L < 0 or self.sigma2 < 0 or self.F_gap < 0 or np.any(D2 < 0):
            raise InvalidParamsError("L, sigma2, D2 and F_gap must be nonnegative")
        if not 0.0 <= self.P_O < 1.0:
            raise DomainError("P_O must lie in [0, 1)")


@dataclass(frozen=True)
class Theorem1Bound:
    mu_J1: float
    mu_J2: float
    sigma_J1: float
    sigma_J2: float
    epsilon: float
    E_J1_sq: float
    mu_J3: float
    E_J3_sq: float
    ratio_term: float
    variance_terms: Tuple[float, float, float]


def theorem1_bound(params: Theorem1Params, printed_j3=False) -> Theorem1Bound:
    """Three-sigma bound ``epsilon(P_O)`` on ``min_r E||grad F||^2``.

    With ``eta = sqrt(M/T) / L`` the per-round factors are
    ``J1(R) = R/2 - 2 I sqrt(M/T) R^2`` and
    ``J3(R) = 2 I sqrt(M/T) (sum p D^2) R^2 + (sigma^2/2) sqrt(M/T) (sum p^2) R``
    with ``R`` geometric; their moments come from negative-order polylogs.

    ``printed_j3`` reproduces the typeset ``E[J3^2]``, whose coefficients
    differ from the square of ``J3`` (``I`` for ``I^2`` and a missing
    ``sigma^2`` in the cross term).
    """
    M, I, T, P = params.M, params.I, params.T, params.P_O
    r = math.sqrt(M / T)
    c = 2.0 * I * r
    E = [None] + [geometric_moment(v, P) for v in range(1, 5)]

    mu_J1 = 0.5 * E[1] - c * E[2]
    E_J1_sq = 0.25 * E[2] - c * E[3] + c * c * E[4]
    var_J1 = max(E_J1_sq - mu_J1**2, 0.0)

    sp2 = float(np.sum(params.p_up**2))
    spd = float(np.sum(params.p_up * params.D2))
    a = c * spd
    b = 0.5 * params.sigma2 * r * sp2
    mu_J3 = b * E[1] + a * E[2]
    if printed_j3:
        E_J3_sq = (
            M * params.sigma2**2 / (4.0 * T) * sp2**2 * E[2]
            + 4.0 * M * I / T * spd**2 * E[4]
            + 2.0 * M * I / T * sp2 * spd * E[3]
        )
    else:
        E_J3_sq = b * b * E[2] + 2.0 * a * b * E[3] + a * a * E[4]
    var_J3 = E_J3_sq - mu_J3**2
    if not printed_j3:
        var_J3 = max(var_J3, 0.0)

    mu_J2 = params.L / (T * I) * math.sqrt(T / M) * params.F_gap + mu_J3
    if mu_J1 <= 0.0:
        raise BoundInapplicableError(
            f"mu_J1 = {mu_J1:.4g} <= 0: T is too small for this approximation"
        )
    sigma_J1 = math.sqrt(var_J1)
    sigma_J2 = math.sqrt(var_J3) if var_J3 >= 0 else math.nan
    t1 = sigma_J2**2 / (mu_J1**2 * T)
    t2 = mu_J2**2 * sigma_J1**2 / (mu_J1**4 * T)
    t3 = 2.0 * mu_J2 * sigma_J1 * sigma_J2 / (mu_J1**3 * T)
    ratio = mu_J2 / mu_J1
    return Theorem1Bound(
        mu_J1=mu_J1,
        mu_J2=mu_J2,
        sigma_J1=sigma_J1,
        sigma_J2=sigma_J2,
        epsilon=ratio + 3.0 * (t1 + t2 + t3),
        E_J1_sq=E_J1_sq,
        mu_J3=mu_J3,
        E_J3_sq=E_J3_sq,
        ratio_term=ratio,
        variance_terms=(t1, t2, t3),
    )


def theorem1_coefficients(R, eta, I, L, p_up):
    """Per-round coefficients ``(H1, H2, H3, H4)`` before the large-T
    approximation, for ``R`` consecutive local phases."""
    p_up = np.asarray(p_up, dtype=float)
    RI = R * I
    denom = 1.0 - RI * (RI + 1) * eta**2 * L**2
    if denom <= 0:
        raise BoundInapplicableError("step size too large: 1 - RI(RI+1) eta^2 L^2 <= 0")
    grow = 0.5 + eta * RI * L
    H3 = 2 * eta * R**2 * I * L + eta**2 * (2.0 / 3.0) * L**2 * R * (RI + 1) * (2 * RI + 1) * grow / denom
    H1 = 0.5 * R - H3
    H2 = 1.0 / (eta * I)
    H4 = 0.5 * eta * R * L * np.sum(p_up**2) + eta**2 * 0.5 * L**2 * R * (RI + 1) * grow / denom
    return H1, H2, H3, float(H4)


# --------------------------------------------------------------------------
# Convergence bound for GC+ (formula evaluation only)
# --------------------------------------------------------------------------


def theorem2_step_size(K_star, L, T, I):
    return K_star / math.sqrt(8.0 * L * T * I)


def theorem2_bound(L, T, I, K_star, f_gap, J_sq_sum, sigma2, batch, D2):
    """Right-hand side of the GC+ optimality-gap bound.

    ``J_sq_sum`` is ``sum_r sum_m J_{m,r}^2 / M``; ``D2`` the per-client
    heterogeneity bounds. Returns ``(bound, step_size_admissible)``, the
    second item checking ``I <= (T I)^(1/4) / K*^(3/4)``.
    """
    TI = T * I
    a = math.sqrt(TI * K_star)
    q = (TI * K_star) ** 0.75
    D_mean = float(np.mean(np.asarray(D2, dtype=float)))
    bound = (
        496.0 * L / (11.0 * a) * f_gap
        + 31.0 / (88.0 * TI**1.5 * math.sqrt(K_star)) * J_sq_sum
        + (39.0 / (88.0 * a) + 1.0 / (88.0 * q)) * sigma2 / batch
        + (4.0 / (11.0 * a) + 1.0 / (22.0 * q) + 31.0 / (22.0 * TI**0.25 * K_star**1.25)) * D_mean
    )
    admissible = I <= TI**0.25 / K_star**0.75
    return bound, admissible


# --------------------------------------------------------------------------
# Leakage of one complete partial sum
# --------------------------------------------------------------------------


def _as_covariances(sigmas, M):
    arr = np.asarray(sigmas, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None, None]
    elif arr.ndim == 2:
        arr = np.stack([np.diag(row) for row in arr])
    if arr.ndim != 3 or arr.shape[0] != M or arr.shape[1] != arr.shape[2]:
        raise InvalidInputError("sigmas must be M scalars, M diagonals or M square matrices")
    for cov in arr:
        if not np.allclose(cov, cov.T) or np.min(np.linalg.eigvalsh(cov)) < -1e-12:
            raise InvalidInputError("covariances must be symmetric positive semidefinite")
    return arr


def lmip_bits(b, sigmas, m: int, d: int) -> float:
    """Leakage in bits about client ``m``'s model from ``sum_k b_k g_k``:
    ``(d/2) log2( det(sum_k b_k^2 S_k) / det(sum_{k != m} b_k^2 S_k) )``."""
    b = np.asarray(b, dtype=float)
    M = b.shape[0]
    if not 0 <= m < M:
        raise InvalidInputError(f"client index {m} outside [0, {M})")
    covs = _as_covariances(sigmas, M)
    w = b**2
    total = np.tensordot(w, covs, axes=1)
    rest = total - w[m] * covs[m]
    if w[m] == 0.0:
        return 0.0
    sign_r, logdet_r = np.linalg.slogdet(rest)
    if sign_r <= 0 or not np.isfinite(logdet_r):
        raise InfiniteLeakageError("the other terms carry no noise: leakage is unbounded")
    sign_t, logdet_t = np.linalg.slogdet(total)
    return 0.5 * d * (logdet_t - logdet_r) / math.log(2.0)
