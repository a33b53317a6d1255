import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cogc.errors import InvalidInputError
from cogc.linalg import in_row_space, numerical_rank, rref
from oracles import rank_svd


def test_identity_and_zero():
    assert numerical_rank(np.eye(4), 1e-10) == 4
    assert numerical_rank(np.zeros((3, 5)), 1e-10) == 0


def test_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        numerical_rank(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidInputError):
        rref(np.eye(2), tol=0)


def test_rref_shape():
    a = np.array([[0.0, 2.0, 4.0], [1.0, 1.0, 1.0], [1.0, 3.0, 5.0]])
    e, piv = rref(a)
    assert piv == [0, 1]
    np.testing.assert_allclose(e[:2], [[1, 0, -1], [0, 1, 2]], atol=1e-12)
    assert not e[2].any()


def test_row_space_membership():
    e, piv = rref(np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    assert in_row_space(e, piv, 2)
    assert not in_row_space(e, piv, 0)
    assert not in_row_space(e, piv, 1)


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 8),
    m=st.integers(1, 8),
    r=st.integers(0, 8),
    seed=st.integers(0, 2**32 - 1),
)
def test_rank_matches_svd_and_permutation(n, m, r, seed):
    rng = np.random.default_rng(seed)
    r = min(r, n, m)
    a = rng.standard_normal((n, r)) @ rng.standard_normal((r, m))
    k = numerical_rank(a)
    assert k == rank_svd(a) == r
    assert numerical_rank(a[rng.permutation(n)]) == k


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.sampled_from([0.0, 1.0, -2.0, 0.5])))
def test_rank_bounds_on_sparse(a):
    k = numerical_rank(a)
    assert 0 <= k <= 4
    assert k == rank_svd(a)
