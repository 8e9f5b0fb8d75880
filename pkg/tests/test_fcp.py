"""Relative-filter solves: planted recovery, optimality, equivariance, adjoint."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmbss.fcp import (
    FcpConfig,
    RelativeFilterBank,
    bank_adjoint,
    bank_images,
    fcp_image,
    fcp_solve,
    filter_adjoint,
    solve_filter_bank,
)
from vmbss.signals import ConfigError, InvalidInputError


def _random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _residual(obs, est, filters, cfg):
    return float(np.sum(np.abs(obs - fcp_image(est, filters, cfg)) ** 2))


def test_scalar_filter_recovery(rng):
    cfg = FcpConfig(past_taps=0, future_taps=0, tikhonov=0.0)
    est = _random_complex(rng, 16, 4)
    g = fcp_solve(2.0 * est, est, cfg)
    np.testing.assert_allclose(g, 2.0, atol=1e-12)


def test_scalar_filter_tikhonov_bias_bound(rng):
    tik = 1e-4
    cfg = FcpConfig(past_taps=0, future_taps=0, tikhonov=tik)
    est = _random_complex(rng, 64, 4)
    g = fcp_solve(2.0 * est, est, cfg)
    assert np.all(np.abs(g - 2.0) <= 2.0 * tik)


def test_planted_filter_recovery(rng):
    cfg = FcpConfig(past_taps=1, future_taps=1, tikhonov=0.0)
    for _ in range(5):
        est = _random_complex(rng, 32, 8)
        planted = _random_complex(rng, 8, 3)
        obs = fcp_image(est, planted, cfg)
        solved = fcp_solve(obs, est, cfg)
        np.testing.assert_allclose(solved, planted, atol=1e-8)


def test_solution_beats_perturbations(rng):
    cfg = FcpConfig(past_taps=1, future_taps=1, tikhonov=0.0)
    est = _random_complex(rng, 32, 8)
    obs = _random_complex(rng, 32, 8)  # generic target, nonzero residual
    solved = fcp_solve(obs, est, cfg)
    base = _residual(obs, est, solved, cfg)
    for _ in range(50):
        bumped = solved + 1e-3 * _random_complex(rng, 8, 3)
        assert base <= _residual(obs, est, bumped, cfg) + 1e-12


def test_estimate_scaling_equivariance(rng):
    cfg = FcpConfig(past_taps=2, future_taps=0, tikhonov=0.0)
    est = _random_complex(rng, 24, 5)
    obs = _random_complex(rng, 24, 5)
    g = fcp_solve(obs, est, cfg)
    a = 0.7 - 1.3j
    g_scaled = fcp_solve(obs, a * est, cfg)
    np.testing.assert_allclose(g_scaled, g / np.conj(a), atol=1e-8)
    np.testing.assert_allclose(fcp_image(a * est, g_scaled, cfg),
                               fcp_image(est, g, cfg), atol=1e-8)


def test_self_prediction_fixed_point(rng):
    cfg = FcpConfig(past_taps=1, future_taps=1, tikhonov=0.0)
    est = _random_complex(rng, 40, 6)
    g = fcp_solve(est, est, cfg)
    np.testing.assert_allclose(fcp_image(est, g, cfg), est, atol=1e-8)


def test_identity_filter_image(rng):
    cfg = FcpConfig(past_taps=0, future_taps=0)
    est = _random_complex(rng, 10, 3)
    image = fcp_image(est, np.ones((3, 1), dtype=complex), cfg)
    np.testing.assert_allclose(image, est, atol=1e-14)


def test_image_linearity_in_filters(rng):
    cfg = FcpConfig(past_taps=1, future_taps=1)
    est = _random_complex(rng, 12, 4)
    g1 = _random_complex(rng, 4, 3)
    g2 = _random_complex(rng, 4, 3)
    np.testing.assert_allclose(
        fcp_image(est, g1 + g2, cfg),
        fcp_image(est, g1, cfg) + fcp_image(est, g2, cfg), atol=1e-12)


def test_zero_estimate_degenerate_contract(rng):
    cfg = FcpConfig(past_taps=1, future_taps=0, tikhonov=0.0)
    obs = _random_complex(rng, 20, 4)
    g = fcp_solve(obs, np.zeros_like(obs), cfg)
    np.testing.assert_array_equal(g, 0.0)
    assert _residual(obs, np.zeros_like(obs), g, cfg) == pytest.approx(
        float(np.sum(np.abs(obs) ** 2)))


def test_silent_frequency_gets_zero_filter(rng):
    cfg = FcpConfig(past_taps=1, future_taps=0, tikhonov=0.0)
    est = _random_complex(rng, 20, 4)
    est[:, 2] = 0.0
    g = fcp_solve(_random_complex(rng, 20, 4), est, cfg)
    np.testing.assert_array_equal(g[2], 0.0)
    assert np.all(np.isfinite(g))


def test_singular_autocorrelation_falls_back(rng):
    # more taps than frames: rank-deficient normal equations at tikhonov=0
    cfg = FcpConfig(past_taps=3, future_taps=3, tikhonov=0.0)
    est = _random_complex(rng, 4, 2)
    obs = _random_complex(rng, 4, 2)
    g = fcp_solve(obs, est, cfg)
    assert np.all(np.isfinite(g))
    # the fit must still be a least-squares optimum: in-span perturbations
    # cannot do better
    base = _residual(obs, est, g, cfg)
    for _ in range(20):
        bumped = g + 1e-3 * _random_complex(rng, 2, 7)
        assert base <= _residual(obs, est, bumped, cfg) + 1e-10


def test_bank_matches_per_pair_solves(rng):
    cfg = FcpConfig(past_taps=1, future_taps=1, tikhonov=1e-4)
    stack = _random_complex(rng, 3, 16, 5)
    ests = _random_complex(rng, 2, 16, 5)
    bank = solve_filter_bank(stack, ests, cfg)
    assert bank.filters.shape == (3, 2, 5, 3)
    images = bank_images(bank, ests)
    assert images.shape == (3, 2, 16, 5)
    for k in range(3):
        for c in range(2):
            g = fcp_solve(stack[k], ests[c], cfg)
            np.testing.assert_allclose(bank.filters[k, c], g, atol=1e-10)
            np.testing.assert_allclose(images[k, c],
                                       fcp_image(ests[c], g, cfg), atol=1e-10)


def test_adjoint_inner_product_identity(rng):
    # <grad, image(dz)>_packed-real == <adjoint(grad), dz>_packed-real
    cfg = FcpConfig(past_taps=2, future_taps=1)
    filters = _random_complex(rng, 4, 4)
    grad = _random_complex(rng, 9, 4)
    dz = _random_complex(rng, 9, 4)
    lhs = np.sum((filter_adjoint(filters, grad, cfg).conj() * dz).real)
    img = fcp_image(dz, filters, cfg)
    rhs = np.sum((grad.conj() * img).real)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1),
       past=st.integers(min_value=0, max_value=3),
       future=st.integers(min_value=0, max_value=3))
def test_bank_adjoint_identity_property(seed, past, future):
    rng = np.random.default_rng(seed)
    cfg = FcpConfig(past_taps=past, future_taps=future)
    K, C, T, F = 3, 2, 7, 3
    bank = RelativeFilterBank(filters=_random_complex(rng, K, C, F, cfg.num_taps),
                              config=cfg)
    grads = _random_complex(rng, K, T, F)
    dz = _random_complex(rng, C, T, F)
    lhs = np.sum((bank_adjoint(bank, grads).conj() * dz).real)
    rhs = sum(np.sum((grads[k].conj() * bank_images(bank, dz)[k, c]).real)
              for k in range(K) for c in range(C))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_config_and_shape_validation(rng):
    with pytest.raises(ConfigError):
        FcpConfig(past_taps=-1)
    with pytest.raises(ConfigError):
        FcpConfig(tikhonov=-0.5)
    assert FcpConfig(past_taps=2, future_taps=3).num_taps == 6
    cfg = FcpConfig(past_taps=1, future_taps=1)
    with pytest.raises(InvalidInputError):
        fcp_solve(np.zeros((4, 3), dtype=complex), np.zeros((5, 3), dtype=complex), cfg)
    with pytest.raises(InvalidInputError):
        fcp_image(np.zeros((4, 3), dtype=complex), np.zeros((3, 7), dtype=complex), cfg)
    with pytest.raises(InvalidInputError):
        solve_filter_bank(np.zeros((2, 4, 3), dtype=complex),
                          np.zeros((2, 5, 3), dtype=complex), cfg)
    with pytest.raises(InvalidInputError):
        RelativeFilterBank(filters=np.zeros((2, 2, 3), dtype=complex), config=cfg)
    bad = np.full((2, 2, 3, 3), np.nan, dtype=complex)
    with pytest.raises(InvalidInputError):
        RelativeFilterBank(filters=bad, config=cfg)
