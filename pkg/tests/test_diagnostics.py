import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from csid.diagnostics import (ks_critical_value, ks_normality_diagnostic, ks_statistic,
                              residual_diagnostics)
from csid.embedding import FitConfig
from csid.errors import InsufficientDataError
from csid.synthetic import embedded_pair


def test_critical_value_at_five_percent():
    assert ks_critical_value(100) == pytest.approx(0.1358, abs=1e-4)
    assert ks_critical_value(10_000) == pytest.approx(1.358 / 100, rel=1e-3)


def test_statistic_matches_scipy():
    x = np.random.default_rng(0).standard_normal(500) * 0.3
    ours = ks_statistic(x, 0.3)
    ref = stats.kstest(x, stats.norm(scale=0.3).cdf).statistic
    assert ours == pytest.approx(ref, abs=1e-12)


@given(st.integers(0, 2 ** 31), st.integers(8, 400))
@settings(max_examples=50, deadline=None)
def test_statistic_bounded(seed, n):
    x = np.random.default_rng(seed).standard_t(3, n)
    rep = ks_normality_diagnostic(x)
    assert 0.0 <= rep.statistic <= 1.0
    assert rep.n == n


def test_gaussian_false_positive_rate():
    rejects = sum(ks_normality_diagnostic(np.random.default_rng(s).standard_normal(2000)).reject
                  for s in range(200))
    assert rejects / 200 <= 0.10


def test_laplace_is_rejected_with_positive_kurtosis():
    rep = ks_normality_diagnostic(np.random.default_rng(1).laplace(size=10_000))
    assert rep.reject
    assert rep.excess_kurtosis == pytest.approx(3.0, abs=0.5)


def test_constant_residuals_degenerate():
    rep = ks_normality_diagnostic(np.zeros(50))
    assert rep.reject and rep.degenerate


def test_too_few_samples():
    with pytest.raises(InsufficientDataError):
        ks_normality_diagnostic(np.ones(7))


def test_residual_diagnostics_on_pure_embedding():
    s = embedded_pair(shape=(48, 48), J=1, pi0=1.0, seed=2)
    out = residual_diagnostics(s.plane_k1, s.plane_k2, s.pair, 1, M=2, cfg=FitConfig(restarts=1))
    assert not out["full"]["reject"]
    assert out["gaussian_fraction"] > 0.9
    assert out["embeddable"] is not None
