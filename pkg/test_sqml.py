#!/usr/bin/env python3
"""
Test the sample-splitting shrinkage QML estimator.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.exceptions import DayPoolEmpty, InvalidConfig
from core.spectral import SpectralTools
from core.sqml import ShrinkageQML, SqmlConfig, SqmlVariant
from core.sync import ReturnsMatrix, SyncPanel, SyncScheme

SIGMA = np.array([
    [2.0, 0.6, 0.2, 0.0],
    [0.6, 1.5, 0.3, 0.1],
    [0.2, 0.3, 1.0, 0.2],
    [0.0, 0.1, 0.2, 0.5],
])


def day_panel(rng, n, sigma=SIGMA, a2=0.0):
    """Refresh panel of one unit-length day with n equal steps."""
    dX = np.linalg.cholesky(sigma) @ rng.standard_normal((sigma.shape[0], n)) / np.sqrt(n)
    X = np.hstack([np.zeros((sigma.shape[0], 1)), np.cumsum(dX, axis=1)])
    Y = X + np.sqrt(a2) * rng.standard_normal(X.shape)
    return SyncPanel(np.linspace(0.0, 1.0, n + 1), Y, SyncScheme.REFRESH_TIME)


def test_config_validation():
    cfg = SqmlConfig(SqmlVariant.SQRM, J=6, J1=5)
    assert cfg.dense_days == 1 and cfg.fifteen_min
    assert not SqmlConfig(J=10, J1=5).fifteen_min
    for J, J1 in ((5, 5), (12, 6), (5, 0)):
        with pytest.raises(InvalidConfig):
            SqmlConfig(J=J, J1=J1)
    with pytest.raises(InvalidConfig):
        SqmlConfig(J=6, J1=5, holding_days=0.0)


def test_single_asset_basis():
    R = ReturnsMatrix(np.array([[0.1, -0.2, 0.05]]), np.arange(4))
    assert_array_equal(ShrinkageQML.eigenbasis_from_history(R), [[1.0]])


def test_basis_is_sign_fixed_tva_eigenvectors():
    rng = np.random.default_rng(0)
    history = day_panel(rng, 300)
    U = ShrinkageQML.eigenbasis_from_history(history)
    assert_allclose(U.T @ U, np.eye(4), atol=1e-12)
    for k in range(4):
        assert U[np.argmax(np.abs(U[:, k])), k] > 0


def test_dense_day_count_must_match():
    rng = np.random.default_rng(1)
    cfg = SqmlConfig(J=7, J1=5)
    with pytest.raises(InvalidConfig):
        ShrinkageQML.sqml_estimate(cfg, day_panel(rng, 50), [day_panel(rng, 50)])


def test_all_days_too_short():
    rng = np.random.default_rng(2)
    cfg = SqmlConfig(J=7, J1=5)
    with pytest.raises(DayPoolEmpty):
        ShrinkageQML.sqml_estimate(cfg, day_panel(rng, 50), [day_panel(rng, 3), day_panel(rng, 2)])


def test_short_day_is_dropped_and_scaling_uses_kept_days():
    rng = np.random.default_rng(3)
    cfg = SqmlConfig(J=7, J1=5)
    history = day_panel(rng, 200)
    good = day_panel(rng, 500)
    est = ShrinkageQML.sqml_estimate(cfg, history, [good, day_panel(rng, 3)])
    assert est.dropped_days == [1]
    assert est.day_v_hat.shape == (1, 4)
    assert_allclose(est.v_hat, est.day_v_hat[0])

    alone = ShrinkageQML.sqml_estimate(SqmlConfig(J=6, J1=5), history, [good])
    assert_allclose(alone.v_hat, est.v_hat)


def test_holding_period_scales_v_hat():
    rng = np.random.default_rng(4)
    history, day = day_panel(rng, 200), day_panel(rng, 400)
    one = ShrinkageQML.sqml_estimate(SqmlConfig(J=6, J1=5), history, [day])
    five = ShrinkageQML.sqml_estimate(SqmlConfig(J=6, J1=5, holding_days=5.0), history, [day])
    assert_allclose(five.v_hat, 5.0 * one.v_hat)


def test_threads_do_not_change_result():
    rng = np.random.default_rng(5)
    history = day_panel(rng, 200)
    days = [day_panel(rng, 300), day_panel(rng, 300)]
    cfg = SqmlConfig(J=7, J1=5)
    serial = ShrinkageQML.sqml_estimate(cfg, history, days, threads=1)
    pooled = ShrinkageQML.sqml_estimate(cfg, history, days, threads=3)
    assert_array_equal(serial.v_hat, pooled.v_hat)
    assert_array_equal(serial.basis, pooled.basis)


def test_estimate_and_inverse():
    rng = np.random.default_rng(6)
    est = ShrinkageQML.sqml_estimate(SqmlConfig(J=6, J1=5), day_panel(rng, 200), [day_panel(rng, 400)])
    assert np.all(est.v_hat > 0)
    assert_allclose(est.sigma_hat, est.sigma_hat.T)
    assert_allclose(est.sigma_hat @ est.sigma_inv_hat, np.eye(4), atol=1e-9)
    eig = np.sort(np.linalg.eigvalsh(est.sigma_hat))
    assert_allclose(eig, np.sort(est.v_hat), rtol=1e-9)


def test_v_hat_tracks_oracle_shrinkage():
    rng = np.random.default_rng(7)
    history = day_panel(rng, 100)
    days = [day_panel(rng, 5_000, a2=1e-8) for _ in range(2)]
    est = ShrinkageQML.sqml_estimate(SqmlConfig(J=7, J1=5), history, days)
    oracle = ShrinkageQML.oracle_shrinkage(est.basis, SIGMA)
    assert_allclose(est.v_hat, oracle, rtol=0.1)


def test_oracle_shrinkage():
    rng = np.random.default_rng(8)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    assert_allclose(ShrinkageQML.oracle_shrinkage(Q, SIGMA), np.diag(Q.T @ SIGMA @ Q))
    eig = SpectralTools.sym_eig(SIGMA)
    assert_allclose(ShrinkageQML.oracle_shrinkage(eig.vectors, SIGMA), eig.values, atol=1e-12)


def test_naive_eigenvalues_are_in_sample_and_spread():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((40, 60)) / np.sqrt(60)
    R = ReturnsMatrix(X, np.arange(61))
    U = SpectralTools.sym_eig(X @ X.T).vectors
    naive = ShrinkageQML.naive_realized_eigenvalues(U, R)
    assert_allclose(naive, np.diag(U.T @ X @ X.T @ U))
    assert_allclose(ShrinkageQML.naive_realized_eigenvalues(U, X), naive)
    # the in-sample spectrum is spread well beyond the identity
    assert naive.max() - naive.min() > 1.0


def test_oracle_is_frobenius_optimal_for_its_basis():
    rng = np.random.default_rng(10)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    oracle = ShrinkageQML.oracle_shrinkage(Q, SIGMA)
    best = np.linalg.norm((Q * oracle) @ Q.T - SIGMA)
    for _ in range(100):
        d = oracle + rng.normal(0.0, 0.3, 4)
        assert best <= np.linalg.norm((Q * d) @ Q.T - SIGMA) + 1e-12


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
