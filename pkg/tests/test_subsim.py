import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.stats

from gradsens.model import ModelSpec, ResponseModel, SampleRecord, evaluate
from gradsens.numkit import RngStream
from gradsens.responses import NormalResponse
from gradsens.subsim import (SsConfig, ThresholdTieWarning, correlation_param, mcmc_step,
                             run_subset_simulation)

DEFAULT = dict(m=3, p0=0.1, n_per_level=1000)


class TestCorrelationParam:
    def test_level_one(self):
        a, s = correlation_param(1, 0.1)
        assert a == pytest.approx(0.77544, abs=1e-5)
        assert s == pytest.approx(math.sqrt(1.0 - a * a), rel=1e-15)

    def test_level_two(self):
        a, _ = correlation_param(2, 0.1)
        assert a == pytest.approx(0.87640, abs=1e-5)

    def test_against_scipy_quantiles(self):
        for i in (1, 2, 3):
            u = scipy.stats.norm.isf(0.1**i)
            v = scipy.stats.norm.isf(0.1 ** (i + 1))
            assert correlation_param(i, 0.1)[0] == pytest.approx(0.5 * (1 + u / v), rel=1e-12)

    def test_quantile_ratio_tends_to_one_as_p0_grows(self):
        # the a-formula's quantile ratio u/v approaches 1 as p0 -> 1
        gaps = []
        for p in (0.9, 0.99, 0.999):
            ratio = scipy.stats.norm.isf(p) / scipy.stats.norm.isf(p * p)
            gaps.append(abs(ratio - 1.0))
        assert np.all(np.diff(gaps) < 0.0)
        assert gaps[-1] < 0.08
        # beyond p0 = 0.5 the parameter itself would leave (0,1): rejected
        with pytest.raises(ValueError):
            correlation_param(1, 0.9)

    def test_inside_unit_interval_on_valid_domain(self):
        for p in (0.02, 0.1, 0.25, 0.5):
            for i in (1, 2, 3):
                a, s = correlation_param(i, p)
                assert 0.0 < a < 1.0
                assert 0.0 < s < 1.0

    def test_level_zero_rejected(self):
        with pytest.raises(ValueError):
            correlation_param(0, 0.1)


class TestSsConfig:
    def test_defaults_valid(self):
        cfg = SsConfig(**DEFAULT, seed=1)
        assert cfg.n_chains == 100
        assert cfg.chain_len == 10
        assert cfg.model_evaluations == 2800

    @pytest.mark.parametrize("kwargs", [
        dict(m=0), dict(p0=0.0), dict(p0=1.0), dict(p0=0.123), dict(p0=0.3),
        dict(n_per_level=1), dict(correlation_rule="other"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SsConfig(**{**DEFAULT, **kwargs})


class TestMcmcStep:
    def test_degenerate_a_keeps_state(self):
        m = NormalResponse()
        rng = RngStream(40)
        rec = evaluate(m, np.array([2.5, 0.3]))
        for _ in range(5):
            new = mcmc_step(m, rec, threshold=rec.y - 1.0, a=1.0, rng=rng)
            assert new.y == rec.y
            assert np.array_equal(new.x, rec.x)
            rec = new

    def test_replay_is_bit_exact(self):
        m = NormalResponse()
        rec0 = evaluate(m, np.array([2.0, 1.0]))
        chains = []
        for _ in range(2):
            rng = RngStream(41, 7)
            rec, ys = rec0, []
            for _ in range(20):
                rec = mcmc_step(m, rec, threshold=1.5, a=0.7754, rng=rng)
                ys.append(rec.y)
            chains.append(ys)
        assert chains[0] == chains[1]

    def test_rejected_candidate_returns_current(self):
        m = NormalResponse()
        rec = evaluate(m, np.array([10.0, 0.0]))  # y = 1 + sqrt(.75)*10
        out = mcmc_step(m, rec, threshold=rec.y - 1e-9, a=0.1, rng=RngStream(42))
        # candidate pulled hard toward the origin: nearly surely below threshold
        assert out is rec

    def test_state_below_threshold_rejected(self):
        m = NormalResponse()
        rec = evaluate(m, np.zeros(2))
        with pytest.raises(ValueError):
            mcmc_step(m, rec, threshold=rec.y + 1.0, a=0.5, rng=RngStream(43))

    def test_stationarity_on_exact_conditional_start(self):
        # start chains from exact samples of X | Y >= b and verify the response
        # distribution is preserved after 10 steps (the proposal/accept kernel
        # leaves the conditional law invariant)
        m = NormalResponse()
        beta = math.sqrt(m.scale**2 - m.mix**2)
        nu = np.array([beta, m.mix]) / m.scale
        orth = np.array([-nu[1], nu[0]])
        p0 = 0.1
        b = m.loc + m.scale * scipy.stats.norm.isf(p0)
        gen = RngStream(44)
        n_chains = 3000
        uni = gen._gen.random(n_chains)
        z_tail = scipy.stats.norm.isf(uni * p0)  # exact conditional response scores
        xi = gen.standard_normal(n_chains)
        x = z_tail[:, None] * nu[None, :] + xi[:, None] * orth[None, :]
        records = [SampleRecord(x=x[i], y=m.response_batch(x[i][None, :])[0],
                                g=np.zeros(3)) for i in range(n_chains)]
        a, _ = correlation_param(1, p0)
        for i, rec in enumerate(records):
            rng = RngStream(45, i)
            for _ in range(10):
                rec = mcmc_step(m, rec, threshold=b, a=a, rng=rng)
            records[i] = rec
        y_final = np.array([r.y for r in records])
        assert np.all(y_final >= b)
        for z_probe in (1.5, 2.0, 2.3263):
            target = scipy.stats.norm.sf(z_probe) / p0
            observed = np.mean(y_final >= m.loc + m.scale * z_probe)
            se = math.sqrt(target * (1.0 - target) / n_chains)
            assert abs(observed - target) < 4.0 * se


class StaircaseModel(ResponseModel):
    """Coarsely discrete response: forces massive threshold ties."""

    def __init__(self):
        self.spec = ModelSpec(name="stairs", input_dim=1,
                              params=(("a", 1.0),), sensitivity_params=("a",))

    def response_batch(self, x, a=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.round(x[:, 0])

    def evaluate_batch(self, x):
        y = self.response_batch(x)
        return y, np.ones((y.shape[0], 1))


class TestRunSubsetSimulation:
    def test_single_level_is_direct_mc(self):
        m = NormalResponse()
        cfg = SsConfig(m=1, p0=0.1, n_per_level=500, seed=7)
        bins, ccdf = run_subset_simulation(m, cfg)
        assert len(bins.bins) == 1
        assert bins.bins[0].count == 500
        assert bins.bins[0].probability == 1.0
        order = np.sort(bins.bins[0].y)
        # empirical exceedance k/N at every sample value
        for i in (0, 99, 499):
            v = order[i]
            assert ccdf.f[np.searchsorted(ccdf.y, v)] == (500 - np.searchsorted(order, v)) / 500

    def test_default_run_structure(self):
        m = NormalResponse()
        bins, ccdf = run_subset_simulation(m, SsConfig(**DEFAULT, seed=11))
        assert [b.count for b in bins.bins] == [900, 900, 1000]
        assert bins.probability_sum_exact == Fraction(1)
        assert [b.probability for b in bins.bins] == pytest.approx([0.9, 0.09, 0.01], rel=1e-15)
        assert ccdf.y.shape == (3000,)
        assert np.all(np.diff(ccdf.f[np.argsort(ccdf.y, kind="stable")]) <= 0.0 + 1e-18)
        assert np.all((ccdf.f > 0.0) & (ccdf.f <= 1.0))

    def test_ccdf_hits_p0_powers_at_thresholds(self):
        m = NormalResponse()
        bins, ccdf = run_subset_simulation(m, SsConfig(**DEFAULT, seed=12))
        for j, b in enumerate(bins.thresholds, start=1):
            i = np.searchsorted(ccdf.y, b)
            assert ccdf.f[i] == 0.1**j

    def test_bin_membership(self):
        m = NormalResponse()
        bins, _ = run_subset_simulation(m, SsConfig(**DEFAULT, seed=13))
        edges = [-np.inf, *bins.thresholds, np.inf]
        for i, b in enumerate(bins.bins):
            assert np.all(b.y >= edges[i])
            assert np.all(b.y <= edges[i + 1])

    def test_bit_reproducible(self):
        m = NormalResponse()
        runs = [run_subset_simulation(m, SsConfig(**DEFAULT, seed=99)) for _ in range(2)]
        (b1, c1), (b2, c2) = runs
        assert np.array_equal(b1.thresholds, b2.thresholds)
        assert np.array_equal(c1.y, c2.y)
        assert np.array_equal(c1.f, c2.f)
        for x, y in zip(b1.bins, b2.bins):
            assert np.array_equal(x.y, y.y)
            assert np.array_equal(x.g, y.g)

    def test_gradients_stored_for_all_records(self):
        m = NormalResponse()
        bins, _ = run_subset_simulation(m, SsConfig(**DEFAULT, seed=14))
        for b in bins.bins:
            assert b.g.shape == (b.count, 3)
            assert np.all(np.isfinite(b.g))

    def test_level0_estimator_unbiased(self):
        # mean of F-hat at the decile over 1000 independent direct-MC runs
        m = NormalResponse()
        y_probe = m.loc + m.scale * scipy.stats.norm.isf(0.1)
        n, runs = 1000, 1000
        total = 0.0
        for r in range(runs):
            bins, _ = run_subset_simulation(m, SsConfig(m=1, p0=0.1, n_per_level=n,
                                                        seed=500 + r))
            total += np.mean(bins.bins[0].y >= y_probe)
        mean_f = total / runs
        se = math.sqrt(0.1 * 0.9 / n / runs)
        assert abs(mean_f - 0.1) < 3.0 * se

    def test_threshold_tie_warning(self):
        with pytest.warns(ThresholdTieWarning):
            bins, ccdf = run_subset_simulation(StaircaseModel(),
                                               SsConfig(m=2, p0=0.1, n_per_level=200, seed=3))
        # the CCDF stays a valid exceedance curve even under massive ties
        order = np.argsort(ccdf.y, kind="stable")
        assert np.all(np.diff(ccdf.f[order]) <= 0.0)
        assert np.all((ccdf.f > 0.0) & (ccdf.f <= 1.0))
        assert [b.count for b in bins.bins] == [180, 200]

    def test_seed_changes_results(self):
        m = NormalResponse()
        _, c1 = run_subset_simulation(m, SsConfig(**DEFAULT, seed=1))
        _, c2 = run_subset_simulation(m, SsConfig(**DEFAULT, seed=2))
        assert not np.array_equal(c1.y, c2.y)
