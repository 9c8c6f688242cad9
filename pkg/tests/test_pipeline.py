import numpy as np
import pytest

import rcvsub.pipeline as pipeline
from rcvsub.dataset import split_halves
from rcvsub.errors import ConfigError, ConvergenceError, InputError, SizeError
from rcvsub.pipeline import (RcvConfig, combine, confidence_interval, rcv_estimate,
                             rcv_from_split, z_value)
from rcvsub.sampler import SamplerConfig, child_rng, child_seed
from rcvsub.simulate import SimDesign, generate


def test_combine_examples():
    b, s = combine(0.7, 0.7, 0.1, 0.1)
    assert b == 0.7 and s == pytest.approx(0.1 / np.sqrt(2), rel=1e-15)
    b, s = combine(0.1, 0.3, 0.02, 0.04)
    assert b == pytest.approx(0.2, abs=1e-15)
    assert s == pytest.approx(np.sqrt(0.0005), rel=1e-14)
    assert s == pytest.approx(0.022360, abs=1e-6)


def test_confidence_interval():
    lo, hi = confidence_interval(0.2, 0.05, 0.95)
    assert (lo, hi) == (pytest.approx(0.102, abs=1e-15), pytest.approx(0.298, abs=1e-15))
    assert z_value(0.95) == 1.96
    assert z_value(0.90) == pytest.approx(1.6449, abs=1e-4)
    lo, hi = confidence_interval(0.0, 1.0, 0.90)
    assert hi - lo == pytest.approx(2 * z_value(0.90))
    with pytest.raises(InputError):
        confidence_interval(0.2, 0.0)
    with pytest.raises(InputError):
        z_value(1.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        RcvConfig(level=1.5)
    with pytest.raises(ConfigError):
        RcvConfig(rho=2.0)
    assert RcvConfig(model="logistic").model.family == "logistic"


@pytest.fixture(scope="module")
def linear_data():
    design = SimDesign("linear", 1, n=20_000, p=20, seed=4)
    return design, generate(design, child_rng(4, "pipe"))


def test_end_to_end_invariants(linear_data):
    design, d = linear_data
    res = rcv_estimate(d, RcvConfig(sampler=SamplerConfig(r=500), seed=1))
    assert len(res.coefs) == 20 and not res.degraded
    np.testing.assert_array_equal(res.active1, np.arange(5))
    for c in res.coefs:
        assert c.beta_hat == (c.beta1 + c.beta2) / 2
        assert c.sigma_hat == np.sqrt((c.sigma1 ** 2 + c.sigma2 ** 2) / 4)
        assert c.ci_hi - c.ci_lo == pytest.approx(2 * 1.96 * c.sigma_hat, rel=1e-12)
        assert c.selected_fold1 == (c.j < 5)
    # loose sanity: every truth inside a 4-sigma band
    assert (np.abs(res.beta - design.beta_true) <= 4 * res.sigma).all()


def test_seed_determinism(linear_data):
    _, d = linear_data
    cfg = RcvConfig(sampler=SamplerConfig(r=400), seed=11)
    np.testing.assert_array_equal(rcv_estimate(d, cfg).beta, rcv_estimate(d, cfg).beta)
    other = rcv_estimate(d, RcvConfig(sampler=SamplerConfig(r=400), seed=12)).beta
    assert not np.array_equal(other, rcv_estimate(d, cfg).beta)


@pytest.mark.parametrize("kind", ["osp", "unif"])
def test_fold_symmetry(linear_data, kind):
    _, d = linear_data
    cfg = RcvConfig(sampler=SamplerConfig(kind=kind, r=400))
    split = split_halves(d, child_rng(3, "split"))
    seeds = (child_seed(3, "fold", 1), child_seed(3, "fold", 2))
    a = rcv_from_split(d, split, cfg, seeds)
    b = rcv_from_split(d, split.swapped(), cfg, seeds[::-1])
    np.testing.assert_array_equal(a.beta1, b.beta2)
    np.testing.assert_array_equal(a.sigma1, b.sigma2)
    np.testing.assert_array_equal(a.beta, b.beta)
    np.testing.assert_array_equal(a.sigma, b.sigma)


def test_too_small_rejected(linear_data):
    _, d = linear_data
    with pytest.raises(SizeError):
        rcv_estimate(d, RcvConfig(sampler=SamplerConfig(r=6000)))


def test_degraded_mode(linear_data, monkeypatch):
    _, d = linear_data
    real = pipeline.fit_scad
    calls = []

    def flaky(*a, **k):
        calls.append(1)
        if len(calls) == 1:
            raise ConvergenceError("no lambda converged", stage="scad")
        return real(*a, **k)

    monkeypatch.setattr(pipeline, "fit_scad", flaky)
    res = rcv_estimate(d, RcvConfig(sampler=SamplerConfig(r=400), seed=2))
    assert res.degraded
    assert np.isnan(res.beta1).all() and np.isfinite(res.beta2).all()
    np.testing.assert_array_equal(res.beta, res.beta2)
    np.testing.assert_array_equal(res.sigma, res.sigma2)
    assert all("degraded" in c.status for c in res.coefs)


def test_both_folds_failing_raises(linear_data, monkeypatch):
    _, d = linear_data

    def broken(*a, **k):
        raise ConvergenceError("no lambda converged", stage="scad")

    monkeypatch.setattr(pipeline, "fit_scad", broken)
    with pytest.raises(ConvergenceError):
        rcv_estimate(d, RcvConfig(sampler=SamplerConfig(r=400)))


def test_logistic_and_cox_run():
    for family, c0 in (("logistic", None), ("cox", 7.75)):
        design = SimDesign(family, 1, n=12_000, p=10, seed=6)
        d = generate(design, child_rng(6, family), c0=c0)
        res = rcv_estimate(d, RcvConfig(model=family, sampler=SamplerConfig(r=500), seed=3))
        assert np.isfinite(res.beta).all() and (res.sigma > 0).all()
        assert (np.abs(res.beta - design.beta_true) <= 5 * res.sigma).all()
