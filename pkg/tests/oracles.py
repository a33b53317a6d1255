"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np


def outage_by_enumeration(p_c2c, p_up, s, full=None):
    """Outage probability by summing over every link realization.

    With ``full=True`` every off-diagonal link and uplink is enumerated;
    otherwise only the ``s`` links each client hears over plus the uplinks,
    since no other link affects the standard decoder.
    """
    p_c2c = np.asarray(p_c2c, dtype=float)
    p_up = np.asarray(p_up, dtype=float)
    M = p_up.size
    if full is None:
        full = M <= 4
    needed = {(m, (m + j) % M) for m in range(M) for j in range(1, s + 1)}
    if full:
        links = [(m, k) for m in range(M) for k in range(M) if m != k]
    else:
        links = sorted(needed)
    n_bits = len(links) + M
    if n_bits > 22:
        raise ValueError("enumeration too large")
    states = np.arange(2**n_bits, dtype=np.int64)
    bits = ((states[:, None] >> np.arange(n_bits)) & 1).astype(bool)  # True = up
    p_down = np.array([p_c2c[m, k] for m, k in links] + list(p_up))
    prob = np.prod(np.where(bits, 1.0 - p_down, p_down), axis=1)

    col = {link: i for i, link in enumerate(links)}
    delivered = np.zeros(states.size, dtype=int)
    for m in range(M):
        complete = np.ones(states.size, dtype=bool)
        for j in range(1, s + 1):
            complete &= bits[:, col[(m, (m + j) % M)]]
        delivered += complete & bits[:, len(links) + m]
    return float(np.sum(prob[delivered < M - s]))


def max_nonconflicting_bruteforce(pattern):
    """Largest set of nonzeros with pairwise distinct rows and columns."""
    pattern = np.asarray(pattern, dtype=bool)
    rows, cols = pattern.shape
    best = 0
    for k in range(min(rows, cols), 0, -1):
        for rsel in itertools.combinations(range(rows), k):
            for perm in itertools.permutations(range(cols), k):
                if all(pattern[r, c] for r, c in zip(rsel, perm)):
                    return k
    return best


def polylog_series(v, z, tol=1e-15):
    total, k = 0.0, 1
    while True:
        term = k**v * z**k
        total += term
        if term < tol and k > 5:
            return total
        k += 1


def rank_svd(a, rtol=1e-10):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0
    sv = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(sv > rtol * max(sv[0], 1e-300))) if sv.size else 0


def binomial_tail_exact(M, s, t_r, p):
    from fractions import Fraction
    from math import comb

    p = Fraction(p).limit_denominator(10**6)
    n = (M - s) * t_r
    return sum(comb(n, v) * p ** (n - v) * (1 - p) ** v for v in range(M, n + 1))
