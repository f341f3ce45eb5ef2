"""k-means kernel and the spectral / probit-residual community starts."""

import numpy as np
import pytest

import commnet.initializers as ci
from commnet.initializers import kmeans, residual_init, spectral_init
from commnet.model import (ABSENT, CommunityAssignment, CovariateSet, DyadCovariate,
                           NodeCovariate, Sociomatrix)

from oracles import contingency_ari


def two_cliques(size=10):
    n = 2 * size
    y = np.zeros((n, n), dtype=np.int8)
    y[:size, :size] = 1
    y[size:, size:] = 1
    np.fill_diagonal(y, ABSENT)
    return Sociomatrix(y)


class TestKMeans:
    def test_two_point_clusters_exact(self):
        res = kmeans(np.array([0.0, 0.0, 10.0, 10.0]), 2, seed=0)
        assert res.within_ss == 0.0
        assert res.labels[0] == res.labels[1]
        assert res.labels[2] == res.labels[3]
        assert res.labels[0] != res.labels[2]

    def test_k_equals_n_zero_ss(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(6, 3))
        res = kmeans(pts, 6, seed=1)
        assert res.within_ss == pytest.approx(0.0, abs=1e-20)
        assert sorted(res.labels) == list(range(6))

    def test_well_separated_mixture_all_seeds(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            a = rng.normal(size=(30, 2))
            b = rng.normal(size=(30, 2)) + np.array([10.0, 0.0])
            pts = np.vstack([a, b])
            truth = np.repeat([0, 1], 30)
            res = kmeans(pts, 2, seed=seed)
            assert contingency_ari(res.labels, truth) == 1.0, seed

    def test_within_ss_matches_assignment(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(40, 3))
        res = kmeans(pts, 4, seed=3)
        direct = sum(((pts[res.labels == c] - res.centers[c]) ** 2).sum()
                     for c in range(4))
        assert res.within_ss == pytest.approx(direct, rel=1e-12)

    def test_no_empty_clusters(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            pts = rng.normal(size=(12, 2))
            res = kmeans(pts, 5, seed=trial)
            assert set(res.labels) == set(range(5))

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(50, 2))
        r1 = kmeans(pts, 3, seed=42)
        r2 = kmeans(pts, 3, seed=42)
        assert np.array_equal(r1.labels, r2.labels)
        assert r1.within_ss == r2.within_ss

    def test_identical_points_still_k_clusters(self):
        pts = np.zeros((8, 2))
        res = kmeans(pts, 3, seed=0)
        assert res.within_ss == 0.0
        assert set(res.labels) == set(range(3))

    def test_k_larger_than_n_rejected(self):
        with pytest.raises(ValueError, match="k"):
            kmeans(np.zeros((3, 2)), 4, seed=0)


class TestSpectralInit:
    def test_two_cliques_split_perfectly(self):
        got = spectral_init(two_cliques(), 2)
        truth = np.repeat([0, 1], 10)
        assert contingency_ari(got.labels, truth) == 1.0

    def test_single_community(self):
        got = spectral_init(two_cliques(), 1)
        assert np.array_equal(got.labels, np.zeros(20, dtype=int))

    def test_empty_network_warns(self):
        y = np.zeros((6, 6), dtype=np.int8)
        np.fill_diagonal(y, ABSENT)
        with pytest.warns(UserWarning, match="no edges"):
            got = spectral_init(Sociomatrix(y), 2)
        assert np.array_equal(got.labels, np.zeros(6, dtype=int))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        soc = two_cliques()
        base = spectral_init(soc, 2)
        perm = rng.permutation(20)
        soc_p = Sociomatrix(soc.y[np.ix_(perm, perm)])
        moved = spectral_init(soc_p, 2)
        assert contingency_ari(moved.labels, base.labels[perm]) == 1.0

    def test_too_many_communities_rejected(self):
        with pytest.raises(ValueError, match="communities"):
            spectral_init(two_cliques(2), 5)

    def test_returns_valid_assignment(self):
        rng = np.random.default_rng(7)
        y = (rng.random((15, 15)) < 0.3).astype(np.int8)
        np.fill_diagonal(y, ABSENT)
        got = spectral_init(Sociomatrix(y), 3)
        assert isinstance(got, CommunityAssignment)
        assert got.labels.shape == (15,)
        assert got.onehot.sum(axis=1).tolist() == [1] * 15


def _covs_with(n, row=(), col=(), dyad=()):
    return CovariateSet(
        n=n,
        row=tuple(NodeCovariate(f"r{i}", v) for i, v in enumerate(row)),
        col=tuple(NodeCovariate(f"c{i}", v) for i, v in enumerate(col)),
        dyad=tuple(DyadCovariate(f"d{i}", v) for i, v in enumerate(dyad)),
    )


class TestResidualInit:
    def test_no_covariates_reduces_to_centered_svd(self):
        # generic network so the singular values are distinct (a clique
        # block pattern has a degenerate spectrum and an ill-defined basis)
        rng = np.random.default_rng(10)
        n = 16
        y = (rng.random((n, n)) < 0.4).astype(np.int8)
        np.fill_diagonal(y, ABSENT)
        soc = Sociomatrix(y)
        got = residual_init(soc, _covs_with(n), 2, seed=11)
        # intercept-only probit fits the overall density, so the residual
        # matrix is the centered adjacency; replicate that path directly
        a = np.where(soc.y > 0, 1.0, 0.0)
        mask = ~np.eye(n, dtype=bool)
        centered = a - a[mask].mean()
        np.fill_diagonal(centered, 0.0)
        left = np.linalg.svd(centered)[0]
        want = kmeans(left[:, :2], 2, seed=11).labels
        assert contingency_ari(got.labels, want) == 1.0

    def test_cliques_recovered(self):
        soc = two_cliques()
        got = residual_init(soc, _covs_with(20), 2)
        assert contingency_ari(got.labels, np.repeat([0, 1], 10)) == 1.0

    def test_fully_explaining_covariate_still_valid(self):
        rng = np.random.default_rng(8)
        n = 12
        x = rng.normal(size=(n, n))
        y = (x > 0).astype(np.int8)
        np.fill_diagonal(y, ABSENT)
        covs = _covs_with(n, dyad=(x,))
        got = residual_init(Sociomatrix(y), covs, 2)
        assert got.labels.shape == (n,)
        assert got.n_communities == 2

    def test_nonconvergence_falls_back_to_spectral(self, monkeypatch):
        monkeypatch.setattr(ci, "IRLS_MAX_ITER", 1)
        soc = two_cliques()
        covs = _covs_with(20, row=(np.linspace(-1, 1, 20),))
        with pytest.warns(UserWarning, match="did not converge"):
            got = residual_init(soc, covs, 2, seed=11)
        want = spectral_init(soc, 2, seed=11)
        assert contingency_ari(got.labels, want.labels) == 1.0

    def test_intercept_recovers_density(self):
        # the plain probit with no covariates should fit the edge rate
        from scipy.special import ndtr
        soc = two_cliques(6)
        design, response, offdiag = ci._probit_design(soc, _covs_with(12))
        beta = ci._probit_irls(design[offdiag], response[offdiag])
        assert ndtr(beta[0]) == pytest.approx(soc.density(), abs=1e-8)
