"""Network generators: density calibration, censoring, preset definitions."""

from dataclasses import replace

import numpy as np
import pytest

from commnet.initializers import residual_init, spectral_init
from commnet.model import ABSENT, CoefficientSet
from commnet.simulate import (ScenarioSpec, UnreachableDensityError,
                              generate_censored_network, generate_network,
                              scenario_presets)

from oracles import contingency_ari


def _null_spec(n=150, rho=0.9, target=None):
    return ScenarioSpec(
        name="null",
        n=n,
        community_sizes=(n,),
        coefficients=CoefficientSet(
            intercept=0.0,
            row=np.zeros((0, 1)), col=np.zeros((0, 1)),
            dyad_row=np.zeros((0, 1)), dyad_col=np.zeros((0, 1)),
        ),
        affinity=np.zeros((1, 1)),
        reciprocity=rho,
        effect_covariance=np.eye(2) * 1e-18,
        target_density=target,
    )


class TestScenarioSpec:
    def test_sizes_must_sum(self):
        with pytest.raises(ValueError, match="sum to n"):
            replace(_null_spec(), community_sizes=(100,))

    def test_reciprocity_bounds(self):
        with pytest.raises(ValueError, match="reciprocity"):
            _null_spec(rho=1.0)

    def test_density_bounds(self):
        with pytest.raises(ValueError, match="density"):
            _null_spec(target=1.5)


class TestGenerateNetwork:
    def test_symmetric_threshold_gives_half_density(self):
        soc, covs, truth = generate_network(_null_spec(), seed=0)
        assert abs(soc.density() - 0.5) < 0.02

    def test_binary_preset_hits_target_density(self):
        spec = scenario_presets()["binary-k3"]
        for seed in range(5):
            soc, _, _ = generate_network(spec, seed=seed)
            assert abs(soc.density() - 0.30) < 0.02, seed

    def test_unreachable_density_raises(self):
        spec = replace(_null_spec(target=0.5), target_density=1e-34)
        with pytest.raises(UnreachableDensityError):
            generate_network(spec, seed=0)

    def test_reciprocity_above_independent_baseline(self):
        soc, _, _ = generate_network(scenario_presets()["binary-k3"], seed=3)
        n = soc.n
        iu, ju = np.triu_indices(n, 1)
        fwd = soc.y[iu, ju] == 1
        bwd = soc.y[ju, iu] == 1
        both = float((fwd & bwd).mean())
        indep = float(fwd.mean()) * float(bwd.mean())
        se = np.sqrt(both * (1 - both) / iu.size)
        assert both - indep > 3 * se

    def test_bit_exact_reproducibility(self):
        spec = scenario_presets()["binary-k3"]
        a = generate_network(spec, seed=7)
        b = generate_network(spec, seed=7)
        assert np.array_equal(a[0].y, b[0].y)
        assert np.array_equal(a[1].row[1].values, b[1].row[1].values)
        assert np.array_equal(a[2].latent.propensity, b[2].latent.propensity)
        c = generate_network(spec, seed=8)
        assert not np.array_equal(a[0].y, c[0].y)

    def test_truth_state_consistent_with_network(self):
        soc, covs, truth = generate_network(scenario_presets()["binary-k3"], seed=1)
        z = truth.latent.propensity
        off = ~np.eye(soc.n, dtype=bool)
        assert np.array_equal(soc.y[off] == 1, z[off] > 0)

    def test_misspec_preset_runs(self):
        soc, covs, truth = generate_network(scenario_presets()["misspec-continuous"],
                                            seed=0)
        assert abs(soc.density() - 0.30) < 0.02
        assert truth.community.n_communities == 1
        assert len(covs.row) == 1 and len(covs.col) == 1
        # row and col covariates drawn separately in this scenario
        assert not np.array_equal(covs.row[0].values, covs.col[0].values)


class TestGenerateCensored:
    def test_loose_cap_matches_uncensored(self):
        spec = replace(scenario_presets()["censored-k3"], censor_cap=149)
        censored, _, _ = generate_censored_network(spec, seed=2)
        plain, _, _ = generate_network(spec, seed=2)
        assert np.array_equal(censored.y, plain.y)
        assert not censored.censored.any()

    def test_out_degrees_capped(self):
        spec = scenario_presets()["censored-k3"]
        soc, _, _ = generate_censored_network(spec, seed=0)
        assert (soc.out_degrees() <= spec.censor_cap).all()

    def test_censored_fraction_near_ten_percent(self):
        spec = scenario_presets()["censored-k3"]
        fractions = []
        for seed in range(8):
            soc, _, truth = generate_censored_network(spec, seed=seed)
            z = truth.latent.propensity.copy()
            np.fill_diagonal(z, -np.inf)
            true_ties = float((z > 0).sum())
            kept = float((soc.y > 0).sum())
            fractions.append((true_ties - kept) / true_ties)
        assert abs(np.mean(fractions) - 0.10) < 0.03

    def test_flags_only_at_cap_and_truncated(self):
        spec = scenario_presets()["censored-k3"]
        soc, _, truth = generate_censored_network(spec, seed=4)
        at_cap = soc.out_degrees() == spec.censor_cap
        assert (soc.censored <= at_cap).all()
        z = truth.latent.propensity.copy()
        np.fill_diagonal(z, -np.inf)
        exceeded = (z > 0).sum(axis=1) > spec.censor_cap
        assert np.array_equal(soc.censored, exceeded)

    def test_kept_ties_are_the_strongest(self):
        spec = scenario_presets()["censored-k3"]
        soc, _, truth = generate_censored_network(spec, seed=5)
        z = truth.latent.propensity
        for i in np.flatnonzero(soc.censored):
            kept = soc.y[i] == 1
            dropped = (z[i] > 0) & ~kept
            dropped[i] = False
            if dropped.any():
                assert z[i][kept].min() > z[i][dropped].max()

    def test_missing_cap_rejected(self):
        with pytest.raises(ValueError, match="cap"):
            generate_censored_network(scenario_presets()["binary-k3"], seed=0)


class TestPresets:
    def test_binary_preset_fields(self):
        spec = scenario_presets()["binary-k3"]
        assert spec.n == 150 and spec.community_sizes == (50, 50, 50)
        assert np.array_equal(spec.coefficients.row,
                              [[1.0, 1.0, 1.0], [1.0, 0.0, -1.0]])
        assert np.array_equal(spec.coefficients.col,
                              [[2.0, 2.0, 2.0], [0.0, -2.0, 2.0]])
        assert spec.reciprocity == 0.9
        assert np.array_equal(spec.effect_covariance, [[1.0, 0.5], [0.5, 1.0]])
        assert spec.target_density == 0.30
        assert spec.row_flags == (False, True)
        assert spec.shared_covariates

    def test_censored_preset_fields(self):
        spec = scenario_presets()["censored-k3"]
        assert spec.censor_cap == 15
        assert np.array_equal(spec.coefficients.row,
                              [[-1.0, -1.0, -1.0], [0.5, 0.0, -0.5]])
        assert np.array_equal(spec.coefficients.col,
                              [[1.0, 1.0, 1.0], [0.0, -1.5, 1.5]])
        assert spec.row_flags == (True, True) and spec.col_flags == (True, True)

    def test_misspec_preset_fields(self):
        spec = scenario_presets()["misspec-continuous"]
        assert spec.latent_dim == 3
        assert not spec.shared_covariates
        assert np.array_equal(spec.coefficients.row, [[1.0]])
        assert np.array_equal(spec.coefficients.col, [[2.0]])

    def test_shared_covariates_identical_across_roles(self):
        soc, covs, _ = generate_network(scenario_presets()["binary-k3"], seed=0)
        for r, c in zip(covs.row, covs.col):
            assert np.array_equal(r.values, c.values)


class TestInitializerRecovery:
    """Planted-partition recovery for both starts on the binary scenario."""

    def test_spectral_recovery_rate(self):
        spec = scenario_presets()["binary-k3"]
        hits = 0
        for seed in range(10):
            soc, _, truth = generate_network(spec, seed=seed)
            got = spectral_init(soc, 3)
            if contingency_ari(got.labels, truth.community.labels) >= 0.8:
                hits += 1
        assert hits >= 9

    def test_residual_recovery_rate(self):
        spec = scenario_presets()["binary-k3"]
        hits = 0
        for seed in range(10):
            soc, covs, truth = generate_network(spec, seed=seed)
            got = residual_init(soc, covs, 3)
            if contingency_ari(got.labels, truth.community.labels) >= 0.6:
                hits += 1
        assert hits >= 8
