import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rsa2c.kernels import (KernelSpec, SingularGramError, factor_gram, gram_solve, mahalanobis_eval,
                           ovk_eval, product_kernel_eval, rbf_eval)

finite = st.floats(-5, 5, allow_nan=False)


def test_rbf_identical_points_is_one():
    assert rbf_eval([0.3, -1.0], [0.3, -1.0], 0.7) == 1.0


def test_rbf_unit_distance():
    # exp(-1/2) for distance 1, lengthscale 1
    assert rbf_eval([0.0], [1.0], 1.0) == pytest.approx(0.6065306597126334, abs=1e-15)


def test_rbf_rejects_bad_input():
    with pytest.raises(ValueError):
        rbf_eval([0.0, 1.0], [0.0], 1.0)
    with pytest.raises(ValueError):
        rbf_eval([0.0], [1.0], 0.0)


def test_mahalanobis_uniform_weights_match_rbf():
    s, s2, l = np.array([0.1, 2.0, -1.0]), np.array([1.0, 0.5, 0.0]), 0.9
    assert mahalanobis_eval(s, s2, np.full(3, 1 / l**2)) == pytest.approx(rbf_eval(s, s2, l), rel=1e-14)


def test_mahalanobis_requires_positive_weights():
    with pytest.raises(ValueError):
        mahalanobis_eval([0.0, 0.0], [1.0, 1.0], [1.0, 0.0])


def test_mahalanobis_small_weight_ignores_dimension():
    a = mahalanobis_eval([0.0, 0.0], [0.0, 10.0], [1.0, 1e-12])
    assert a == pytest.approx(1.0, abs=1e-9)


def test_ovk_scales_output_covariance():
    spec = KernelSpec(1.0, [1.0, 1.0], [[2.0, 0.5], [0.5, 1.0]])
    K = ovk_eval([0.0, 0.0], [1.0, 0.0], spec)
    assert np.allclose(K, math.exp(-0.5) * spec.output_cov)


def test_product_kernel_empty_and_range():
    assert product_kernel_eval([1.0, 2.0], [3.0, -4.0], [], 1.0) == 1.0
    with pytest.raises(ValueError):
        product_kernel_eval([1.0, 2.0], [3.0, -4.0], [2], 1.0)


def test_product_kernel_full_coalition_is_rbf():
    s, s2 = [0.2, -0.4, 1.0], [1.0, 0.0, 0.5]
    assert product_kernel_eval(s, s2, {0, 1, 2}, 0.8) == pytest.approx(rbf_eval(s, s2, 0.8), rel=1e-14)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 3, elements=st.floats(0.01, 5)))
def test_mahalanobis_symmetric_and_bounded(s, s2, W):
    a = mahalanobis_eval(s, s2, W)
    assert a == mahalanobis_eval(s2, s, W)
    assert 0.0 <= a <= 1.0


@given(arrays(float, (6, 2), elements=finite), st.floats(0.2, 3.0))
def test_scalar_gram_is_psd(X, l):
    G = KernelSpec.rbf(2, l).scalar(X, X)
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() > -1e-10


def test_kernel_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec(0.0, [1.0], [[1.0]])
    with pytest.raises(ValueError):
        KernelSpec(1.0, [1e-3], [[1.0]], eps0=1e-2)
    with pytest.raises(ValueError):
        KernelSpec(1.0, [1.0], [[1.0, 2.0], [0.0, 1.0]])


def test_kernel_spec_is_immutable():
    spec = KernelSpec.rbf(2, 1.0)
    with pytest.raises(ValueError):
        spec.mahalanobis_weights[0] = 3.0


def test_rbf_spec_sets_uniform_weights():
    spec = KernelSpec.rbf(3, 0.5, action_dim=2)
    assert np.allclose(spec.mahalanobis_weights, 4.0)
    assert spec.action_dim == 2 and spec.state_dim == 3


def test_factor_gram_well_conditioned_has_no_jitter(rng):
    X = rng.uniform(-3, 3, (10, 2))
    G = KernelSpec.rbf(2, 0.5).scalar(X, X)
    f = factor_gram(G)
    assert f.jitter == 0.0
    b = rng.normal(size=10)
    assert np.allclose((G + f.jitter * np.eye(10)) @ f.solve(b), b)


def test_factor_gram_escalates_on_duplicates():
    X = np.zeros((4, 2))
    G = KernelSpec.rbf(2, 1.0).scalar(X, X)  # rank one
    f = factor_gram(G)
    assert f.jitter > 0
    x = gram_solve(G, np.ones(4))
    assert np.all(np.isfinite(x))


def test_factor_gram_raises_when_not_factorizable():
    G = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(SingularGramError):
        factor_gram(G)


def test_factor_gram_empty():
    f = factor_gram(np.zeros((0, 0)))
    assert f.size == 0 and f.solve(np.zeros(0)).shape == (0,)
