import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import rdp_oracle
from dpcgan.dpsgd import (
    DEFAULT_ORDERS,
    AccountantState,
    PrivacySpec,
    account_step,
    audit_record,
    calibrate_sigma,
    clip_gradient,
    epsilon_at,
    epsilon_for,
    privatize,
    rdp_subsampled_gaussian,
    replay_audit_log,
)
from dpcgan.errors import NumericError, ValidationError
from dpcgan.numerics import GradientSet, sum_gradients


def gs(*vals):
    """Single-layer GradientSet whose flattened form is ``vals`` (last entry is the bias)."""
    v = np.asarray(vals, dtype=float)
    return GradientSet((v[:-1].reshape(1, -1),), (v[-1:],))


def test_clip_examples():
    g = gs(6.0, 8.0)  # norm 10
    c = clip_gradient(g, 1.0)
    assert c.norm() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(c.flat(), [0.6, 0.8])
    small = gs(0.3, 0.4)
    assert clip_gradient(small, 1.0).flat().tolist() == small.flat().tolist()
    edge = gs(3.0, 4.0)
    assert clip_gradient(edge, 5.0).flat().tolist() == [3.0, 4.0]


def test_clip_rejects_non_finite():
    with pytest.raises(NumericError):
        clip_gradient(gs(np.nan, 1.0), 1.0)
    with pytest.raises(ValidationError):
        clip_gradient(gs(1.0, 1.0), 0.0)


def test_privatize_no_noise_is_clipped_mean():
    rng = np.random.default_rng(0)
    grads = [gs(*(rng.standard_normal(5) * 0.1)) for _ in range(4)]
    assert all(g.norm() <= 1 for g in grads)
    out = privatize(grads, 1.0, 0.0, np.random.default_rng(1))
    np.testing.assert_allclose(out.flat(), sum_gradients(grads).flat() / 4, rtol=0, atol=1e-15)
    doubled = privatize(grads, 2.0, 0.0, np.random.default_rng(1))
    np.testing.assert_array_equal(doubled.flat(), out.flat())


def test_privatize_pure_noise_statistics():
    draws = np.array([privatize([gs(0.0, 0.0, 0.0)], 1.0, 1.0, np.random.default_rng(s)).flat()
                      for s in range(4000)])
    assert abs(draws.mean()) < 0.05
    assert abs(draws.std() - 1.0) < 0.03


def test_privatize_deterministic_and_validates():
    grads = [gs(1.0, 2.0), gs(-3.0, 0.5)]
    a = privatize(grads, 1.0, 1.0, np.random.default_rng(7))
    b = privatize(grads, 1.0, 1.0, np.random.default_rng(7))
    np.testing.assert_array_equal(a.flat(), b.flat())
    with pytest.raises(ValidationError):
        privatize([], 1.0, 1.0, np.random.default_rng(0))


def test_q1_rdp_is_analytic():
    st_ = account_step(AccountantState(1.0, 2.0))
    assert st_.rdp[DEFAULT_ORDERS.index(4.0)] == 0.5
    for a, r in zip(DEFAULT_ORDERS, st_.rdp):
        assert r == a / (2 * 2.0 ** 2)


def test_composition_is_additive():
    one = account_step(AccountantState(0.05, 1.3))
    many = AccountantState(0.05, 1.3)
    for _ in range(50):
        many = account_step(many)
    np.testing.assert_allclose(many.rdp, 50 * np.asarray(one.rdp), rtol=1e-12)
    np.testing.assert_allclose(account_step(AccountantState(0.05, 1.3), 50).rdp, many.rdp, rtol=1e-12)


def test_matches_independent_series_oracle():
    eps = epsilon_for(0.01, 1.1, 1000, 1e-5)
    ref = rdp_oracle.epsilon(0.01, 1.1, 1000, 1e-5, DEFAULT_ORDERS)
    assert abs(eps - ref) / ref < 0.02
    for q, s, a in [(0.01, 1.1, 2.0), (0.01, 1.1, 2.5), (0.2, 0.8, 7.75), (0.5, 2.0, 40.0)]:
        assert rdp_subsampled_gaussian(q, s, a) == pytest.approx(rdp_oracle.rdp(q, s, a), rel=1e-6)


def test_epsilon_edge_cases():
    assert epsilon_at(AccountantState(0.1, 1.0), 1e-5) == 0.0
    st_ = account_step(AccountantState(0.02, 1.0), 200)
    assert epsilon_at(st_, 1e-5) >= epsilon_at(st_, 1e-3)
    with pytest.raises(ValidationError):
        epsilon_at(st_, 1.5)


def test_huge_noise_gives_negligible_epsilon():
    # On the default grid (orders <= 64) epsilon cannot drop below the conversion
    # floor log(1/delta)/63, however large sigma is.
    st_ = account_step(AccountantState(1.0, 1e6))
    floor = math.log(1 / 1e-5) / 63
    assert max(st_.rdp) < 1e-10
    assert epsilon_at(st_, 1e-5) - floor < 1e-6
    # With orders reaching the optimum (~sigma * sqrt(2 log(1/delta))) the bound is
    # ~2 sqrt(log(1/delta) / (2 sigma^2)): 4.8e-6 at sigma=1e6, 4.8e-7 at sigma=1e7.
    wide = tuple(10.0 ** k for k in np.arange(0.25, 9.01, 0.05))
    st_ = account_step(AccountantState(1.0, 1e7, wide))
    assert epsilon_at(st_, 1e-5) < 1e-6


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0.001, 0.5), st.floats(0.5, 5.0), st.integers(1, 2000),
    st.floats(1.01, 2.0), st.floats(1.01, 2.0), st.integers(1, 1000),
)
def test_accountant_monotonicity(q, sigma, steps, qf, sf, extra):
    base = epsilon_for(q, sigma, steps, 1e-5)
    assert epsilon_for(q, sigma, steps + extra, 1e-5) >= base
    assert epsilon_for(min(1.0, q * qf), sigma, steps, 1e-5) >= base
    assert epsilon_for(q, sigma * sf, steps, 1e-5) <= base


def test_calibrate_sigma_hits_target():
    s = calibrate_sigma(0.01, 1000, 2.0, 1e-5)
    assert epsilon_for(0.01, s, 1000, 1e-5) <= 2.0
    assert epsilon_for(0.01, s / 1.01, 1000, 1e-5) > 2.0


def test_audit_log_replay_is_exact(tmp_path):
    p = tmp_path / "audit.jsonl"
    st_ = AccountantState(0.03, 0.9)
    with open(p, "w") as fh:
        for _ in range(25):
            st_ = account_step(st_)
            fh.write(json.dumps(audit_record(st_, 1e-5)) + "\n")
    replayed, eps = replay_audit_log(p)
    assert eps == epsilon_at(st_, 1e-5)
    assert replayed.rdp == st_.rdp


def test_privacy_spec_validation():
    with pytest.raises(ValidationError):
        PrivacySpec(target_delta=1.0)
    with pytest.raises(ValidationError):
        PrivacySpec(clip=0)
    with pytest.warns(UserWarning):
        PrivacySpec(target_delta=0.1).check_delta(100)
