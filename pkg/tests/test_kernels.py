import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bamgp.kernels import (CholeskyError, LinearKernelParams, SeArdParams, gram, jitter_cholesky,
                           kernel_from_dict, linear, se_ard)


def test_se_ard_values():
    assert se_ard([0.3, 0.1], [0.3, 0.1], SeArdParams(2.0, (1.0, 1.0))) == 2.0
    assert se_ard([0.0], [1.0], SeArdParams(1.0, (1.0,))) == pytest.approx(0.6065306597126334, rel=1e-15)
    assert se_ard([0.0], [1e3], SeArdParams(1.0, (1.0,))) == 0.0


def test_linear_values():
    assert linear([0.0, 0.0], [0.0, 0.0], LinearKernelParams(1.0, 0.0)) == 0.0
    assert linear([1, 0], [1, 0], LinearKernelParams(1.0, 0.0)) == 1.0
    assert linear([1, 2], [3, 4], LinearKernelParams(2.0, 1.0)) == 23.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        se_ard([0.0, 1.0], [0.0], SeArdParams(1.0, (1.0, 1.0)))
    with pytest.raises(ValueError):
        linear([1.0], [1.0, 2.0], LinearKernelParams(1.0))
    with pytest.raises(ValueError):
        SeArdParams(1.0, (1.0,))(np.zeros((2, 2)), np.zeros((2, 2)))


@pytest.mark.parametrize("bad", [dict(signal_variance=0.0, length_scales=(1.0,)),
                                 dict(signal_variance=1.0, length_scales=(1.0, -1.0)),
                                 dict(signal_variance=np.inf, length_scales=(1.0,))])
def test_se_params_validation(bad):
    with pytest.raises(ValueError):
        SeArdParams(**bad)


def test_linear_params_validation():
    with pytest.raises(ValueError):
        LinearKernelParams(0.0)
    with pytest.raises(ValueError):
        LinearKernelParams(1.0, -0.1)


def test_gram_small_cases():
    k = SeArdParams(2.0, (1.0,))
    np.testing.assert_array_equal(gram([[0.5]], k, jitter=1e-8), [[2.0 + 1e-8]])
    K = gram([[0.5], [0.5]], k, jitter=1e-8)
    assert K[0, 1] == 2.0 and K[0, 0] == 2.0 + 1e-8
    np.linalg.cholesky(K)
    with pytest.raises(ValueError):
        gram(np.zeros((0, 1)), k)


def test_gram_matches_pairwise_calls():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 3))
    for k, f in ((SeArdParams(1.3, (0.5, 1.0, 2.0)), se_ard), (LinearKernelParams(0.7, 0.2), linear)):
        K = gram(X, k)
        ref = np.array([[f(a, b, k) for b in X] for a in X])
        np.testing.assert_allclose(K, ref, rtol=1e-14, atol=1e-15)


def test_linear_gram_orthonormal():
    K = gram(np.eye(3), LinearKernelParams(1.5, 0.25))
    np.testing.assert_allclose(K, 1.5 * np.eye(3) + 0.25)


def test_jitter_escalation():
    K = np.ones((3, 3))
    L, jit = jitter_cholesky(K, scale=1.0)
    assert jit >= 1e-8
    np.testing.assert_allclose(L @ L.T, K + jit * np.eye(3), atol=1e-12)
    with pytest.raises(CholeskyError):
        jitter_cholesky(-np.eye(2))


def test_kernel_dict_round_trip():
    for k in (SeArdParams(2.0, (1.0, 3.0)), LinearKernelParams(1.0, 0.5)):
        assert kernel_from_dict(k.to_dict()) == k
    assert kernel_from_dict({"signal_variance": 1.0, "length_scales": [2.0]}) == SeArdParams(1.0, (2.0,))


pos = st.floats(0.05, 20.0)


@settings(max_examples=60, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 40), st.just(3)), elements=st.floats(-3, 3)),
       pos, st.lists(pos, min_size=3, max_size=3))
def test_gram_symmetric_psd(X, s2, ls):
    k = SeArdParams(s2, tuple(ls))
    K = gram(X, k)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * s2


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.lists(pos, min_size=2, max_size=2), st.integers(0, 1), st.floats(1.01, 10.0))
def test_ard_monotone(x, x2, ls, d, factor):
    k1 = SeArdParams(1.0, tuple(ls))
    ls2 = list(ls)
    ls2[d] *= factor
    k2 = SeArdParams(1.0, tuple(ls2))
    assert se_ard(x, x2, k2) >= se_ard(x, x2, k1)
    assert se_ard(x, x2, k1) == se_ard(x2, x, k1)
    assert 0.0 <= se_ard(x, x2, k1) <= 1.0
