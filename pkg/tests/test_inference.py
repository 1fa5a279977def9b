import math

import numpy as np
import pytest

from kallele import (
    Homozygosity,
    IntervalEstimate,
    JointMleConfig,
    MleConfig,
    MonotoneCiConfig,
    MutationParams,
    PosteriorConfig,
    SimplexPoint,
    bootstrap,
    homozygosity,
    mle_joint,
    mle_sigma,
    monotone_ci,
    parse_frequencies,
    posterior_sample,
    posterior_summary,
)
from kallele.density import g_sigma
from kallele.inference import (
    BootstrapConfig,
    GSigmaTable,
    _quantile_with_inf,
    _selection_arrays,
)
from kallele.sampler import SamplerConfig


class TestMleSigma:
    def test_root_at_pool_mean(self, pool_k4):
        h = Homozygosity(value=float(pool_k4.h.mean()), k=4)
        res = mle_sigma(h, pool_k4)
        assert res.converged
        assert abs(res.sigma_hat) < 1e-5

    def test_bracket_sign_change(self, mixture_pool_k4):
        for hv in (0.27, 0.3, 0.36, 0.5, 0.75):
            res = mle_sigma(Homozygosity(hv, 4), mixture_pool_k4)
            assert res.converged
            lo, hi = res.bracket
            assert lo <= res.sigma_hat <= hi
            s_lo = g_sigma(mixture_pool_k4, lo) - hv
            s_hi = g_sigma(mixture_pool_k4, hi) - hv
            assert s_lo >= 0.0 >= s_hi

    def test_convergence_criteria(self, mixture_pool_k4):
        res = mle_sigma(Homozygosity(0.3, 4), mixture_pool_k4)
        lo, hi = res.bracket
        assert abs(res.score_at_solution) < 1e-8 or hi - lo < 1e-6
        assert res.ess_at_solution > 1.0

    def test_unbounded_above_at_pool_floor(self, pool_k4):
        h = Homozygosity(value=pool_k4.h_min, k=4)
        res = mle_sigma(h, pool_k4)
        assert res.status == "unbounded_above"
        assert res.sigma_hat == math.inf
        assert res.notes

    def test_unbounded_below_at_pool_ceiling(self, pool_k4):
        h = Homozygosity(value=pool_k4.h_max, k=4)
        res = mle_sigma(h, pool_k4)
        assert res.status == "unbounded_below"
        assert res.sigma_hat == -math.inf

    def test_uniform_h_is_unbounded(self, pool_k4):
        res = mle_sigma(Homozygosity(0.25, 4), pool_k4)
        assert res.status == "unbounded_above"

    def test_outside_pool_range_with_tiny_cap(self, mixture_pool_k4):
        cfg = MleConfig(sigma_cap=10.0, bracket_init=4.0)
        res = mle_sigma(Homozygosity(0.27, 4), mixture_pool_k4, cfg)
        assert res.status == "outside_pool_range"
        assert "above-cap" in res.notes

    def test_warm_table_matches_cold(self, mixture_pool_k4):
        table = GSigmaTable(mixture_pool_k4, 1e5, 256)
        for hv in (0.28, 0.33, 0.45):
            h = Homozygosity(hv, 4)
            cold = mle_sigma(h, mixture_pool_k4)
            warm = mle_sigma(h, mixture_pool_k4, table=table)
            # each run brackets the same root to within bracket_tol
            assert warm.sigma_hat == pytest.approx(cold.sigma_hat, abs=2e-6)
            assert warm.status == cold.status

    def test_monotone_in_data(self, mixture_pool_k4):
        hs = np.linspace(0.265, 0.6, 20)
        sigmas = [mle_sigma(Homozygosity(float(hv), 4), mixture_pool_k4).sigma_hat for hv in hs]
        assert all(a >= b for a, b in zip(sigmas, sigmas[1:]))


class TestMleJoint:
    def test_lyme_desk_scale(self):
        res = mle_joint(parse_frequencies("lyme"), seed=3, config=JointMleConfig(pool_n=60_000))
        assert res.converged
        assert res.theta_hat == pytest.approx(4.8, abs=0.8)
        assert res.sigma_hat == pytest.approx(35.1, abs=6.0)

    def test_uniform_unbounded_at_every_theta(self):
        res = mle_joint(SimplexPoint((0.25,) * 4), seed=3, config=JointMleConfig(pool_n=10_000))
        assert res.status == "unbounded_above"
        assert any("every theta" in n for n in res.notes)

    def test_null_generator_self_consistency(self):
        # data simulated with no selection: joint estimates center on zero
        theta = MutationParams.symmetric(5.0, 4)
        draws, _ = _selection_arrays(theta, 0.0, 50, 12345, SamplerConfig())
        cfg = JointMleConfig(pool_n=10_000, theta_tol=0.01, coarse_points=8)
        sigmas = []
        for j, row in enumerate(draws):
            res = mle_joint(SimplexPoint(row), seed=j, config=cfg)
            if res.converged:
                sigmas.append(res.sigma_hat)
        sigmas = np.asarray(sigmas)
        assert len(sigmas) >= 40
        assert np.median(np.abs(sigmas)) <= 3.0 * sigmas.std()


class TestBootstrap:
    def test_requires_minimum_replicates(self):
        with pytest.raises(ValueError, match="m >= 100"):
            bootstrap(5.0, 0.0, 4, 50, seed=1)

    def test_null_interval_contains_zero(self):
        cfg = BootstrapConfig(pool_n=30_000)
        res = bootstrap(5.0, 0.0, 4, 300, seed=2, config=cfg)
        iv = res.percentile_interval
        assert iv.lower < 0.0 < iv.upper
        assert iv.method == "bootstrap_percentile"
        assert not res.heavy_tail

    def test_deterministic(self):
        cfg = BootstrapConfig(pool_n=20_000)
        r1 = bootstrap(4.8, 35.1, 4, 150, seed=5, config=cfg)
        r2 = bootstrap(4.8, 35.1, 4, 150, seed=5, config=cfg)
        assert r1.standard_error == r2.standard_error
        assert r1.percentile_interval.lower == r2.percentile_interval.lower

    def test_workers_do_not_change_results(self):
        base = BootstrapConfig(pool_n=20_000, workers=1)
        par = BootstrapConfig(pool_n=20_000, workers=3)
        r1 = bootstrap(4.8, 35.1, 4, 120, seed=5, config=base)
        r2 = bootstrap(4.8, 35.1, 4, 120, seed=5, config=par)
        assert [e.sigma_hat for e in r1.estimates] == [e.sigma_hat for e in r2.estimates]

    def test_heavy_right_tail_under_strong_selection(self):
        # strong heterozygote advantage at high allele count: the sampling
        # distribution's far tail dwarfs its median
        cfg = BootstrapConfig(pool_n=60_000)
        res = bootstrap(5.0, 100.0, 10, 400, seed=3, config=cfg)
        conv = np.asarray([e.sigma_hat for e in res.estimates if e.converged])
        assert np.percentile(conv, 99) > 3.0 * np.median(conv)

    def test_unbounded_replicates_counted_not_hidden(self):
        cfg = BootstrapConfig(pool_n=5_000)
        res = bootstrap(5.0, 200.0, 10, 150, seed=4, config=cfg)
        statuses = {e.status for e in res.estimates}
        assert res.n_unbounded == sum(
            e.status in ("unbounded_above", "unbounded_below") for e in res.estimates
        )
        assert statuses  # at least ran

    def test_joint_refit_smoke(self):
        cfg = BootstrapConfig(
            pool_n=10_000,
            joint_refit=True,
            joint=JointMleConfig(pool_n=5_000, theta_tol=0.05, coarse_points=6),
        )
        res = bootstrap(4.8, 35.1, 4, 100, seed=6, config=cfg)
        assert all(e.theta_hat is not None for e in res.estimates if e.converged)


class TestQuantileWithInf:
    def test_plain(self):
        v = np.sort(np.array([1.0, 2.0, 3.0, 4.0]))
        assert _quantile_with_inf(v, 0.5) == pytest.approx(2.5)

    def test_upper_inf(self):
        v = np.sort(np.array([1.0, 2.0, 3.0, math.inf]))
        assert _quantile_with_inf(v, 0.9) == math.inf
        assert _quantile_with_inf(v, 0.5) == pytest.approx(2.5)

    def test_lower_neg_inf(self):
        v = np.sort(np.array([-math.inf, 2.0, 3.0, 4.0]))
        assert _quantile_with_inf(v, 0.1) == -math.inf


class TestMonotoneCi:
    def test_alpha_validation(self, pool_k4):
        h = Homozygosity(0.3, 4)
        with pytest.raises(ValueError):
            monotone_ci(h, pool_k4, 0.0, 0.025)
        with pytest.raises(ValueError):
            monotone_ci(h, pool_k4, 0.6, 0.6)

    def test_degenerate_alphas_collapse_to_median_match(self, mixture_pool_k4):
        h = Homozygosity(0.3, 4)
        iv = monotone_ci(h, mixture_pool_k4, 0.5, 0.5, MonotoneCiConfig(tol=1e-8))
        assert iv.upper - iv.lower < 1e-6
        assert iv.level == pytest.approx(0.0)

    def test_interval_ordering_and_level(self, mixture_pool_k4):
        h = homozygosity(parse_frequencies("lyme"))
        iv = monotone_ci(h, mixture_pool_k4, 0.025, 0.025)
        assert iv.lower < iv.upper
        assert iv.level == pytest.approx(0.95)
        assert iv.method == "monotone_exact"

    def test_range_bound_advisory(self, mixture_pool_k4):
        h = homozygosity(parse_frequencies("lyme"))
        iv = monotone_ci(h, mixture_pool_k4, 0.025, 0.025, MonotoneCiConfig(sigma_range=(-1.0, 5.0)))
        assert iv.lower == -1.0
        assert iv.upper == 5.0
        assert any("widen" in n for n in iv.notes)

    def test_narrower_alpha_nests(self, mixture_pool_k4):
        h = homozygosity(parse_frequencies("lyme"))
        wide = monotone_ci(h, mixture_pool_k4, 0.025, 0.025)
        narrow = monotone_ci(h, mixture_pool_k4, 0.25, 0.25)
        assert wide.lower <= narrow.lower <= narrow.upper <= wide.upper


class TestIntervalEstimate:
    def test_rejects_disorder(self):
        with pytest.raises(ValueError):
            IntervalEstimate(lower=2.0, upper=1.0, level=0.9, method="credible", alpha_split=(0.05, 0.05))


@pytest.fixture(scope="module")
def lyme_chain():
    return posterior_sample(
        parse_frequencies("lyme"),
        chain_length=6000,
        seed=17,
        config=PosteriorConfig(pool_n=30_000, pilot_pool_n=20_000, burn_in=500),
    )


class TestPosterior:

    def test_draws_inside_prior_box(self, lyme_chain):
        (t_lo, t_hi), (s_lo, s_hi) = lyme_chain.prior_bounds
        assert np.all(lyme_chain.thetas > t_lo)
        assert np.all(lyme_chain.thetas <= t_hi + 1e-12)
        assert np.all(lyme_chain.sigmas >= s_lo)
        assert np.all(lyme_chain.sigmas <= s_hi)

    def test_log_posterior_finite(self, lyme_chain):
        assert np.all(np.isfinite(lyme_chain.log_posterior))

    def test_acceptance_rate_in_open_interval(self, lyme_chain):
        assert 0.0 < lyme_chain.acceptance_rate < 1.0

    def test_nested_levels(self, lyme_chain):
        wide, _ = posterior_summary(lyme_chain, 0.95)
        narrow, _ = posterior_summary(lyme_chain, 0.5)
        assert wide.lower <= narrow.lower <= narrow.upper <= wide.upper

    def test_mode_matches_joint_mle(self, lyme_chain):
        # flat prior: interior posterior mode == constrained joint MLE
        _, (t_mode, s_mode) = posterior_summary(lyme_chain, 0.95)
        mle = mle_joint(parse_frequencies("lyme"), seed=3, config=JointMleConfig(pool_n=60_000))
        assert t_mode == pytest.approx(mle.theta_hat, abs=1.0)
        assert s_mode == pytest.approx(mle.sigma_hat, abs=6.0)

    def test_fixed_theta_mode(self):
        chain = posterior_sample(
            parse_frequencies("lyme"),
            chain_length=4000,
            seed=23,
            config=PosteriorConfig(pool_n=20_000, pilot_pool_n=15_000, theta_fixed=4.8, burn_in=500),
        )
        assert chain.theta_fixed == 4.8
        assert np.all(chain.thetas == 4.8)
        _, (t_mode, _) = posterior_summary(chain, 0.9)
        assert t_mode == 4.8

    def test_summary_requires_length(self, lyme_chain):
        short = posterior_sample(
            parse_frequencies("lyme"),
            chain_length=1200,
            seed=29,
            config=PosteriorConfig(pool_n=10_000, pilot_pool_n=10_000, burn_in=500),
        )
        with pytest.raises(ValueError, match="1000"):
            posterior_summary(short, 0.95)

    def test_chain_csv(self, lyme_chain, tmp_path):
        path = tmp_path / "chain.csv"
        lyme_chain.to_csv(str(path))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "iteration,theta,sigma,log_posterior,accepted"
        assert len(lines) == len(lyme_chain) + 1

    def test_proper_prior_required(self):
        with pytest.raises(ValueError, match="proper"):
            posterior_sample(
                parse_frequencies("lyme"),
                prior_bounds=((0.0, 50.0), (0.0, math.inf)),
                chain_length=2000,
                seed=1,
            )

    def test_provenance_stamped(self, lyme_chain):
        d = lyme_chain.as_dict()
        assert d["prior_bounds"] == [[0.0, 50.0], [0.0, 1000.0]]
        assert d["proposal_spec"]["sigma"]["kind"] == "laplace"
        assert d["pool"]["n"] == 30_000
