"""Synthetic directed-network generators with known community structure.

Each scenario draws standard-normal covariates, bivariate node effects,
and correlated dyad errors, then thresholds the latent affinities at
zero. The intercept is calibrated by bisection so the realized density
lands on the scenario's target. A top-m nomination variant truncates
each sender's edge list the way capped surveys do.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from commnet.model import (ABSENT, CoefficientSet, CommunityAssignment, CovariateSet,
                           DyadCovariate, LatentState, ModelState, NodeCovariate,
                           RandomEffects, Sociomatrix, mean_matrix)

DENSITY_TOLERANCE = 0.02
_INTERCEPT_SPAN = 12.0


class UnreachableDensityError(ValueError):
    """Raised when no intercept achieves the requested density."""


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything needed to draw one synthetic network, seed included."""

    name: str
    n: int
    community_sizes: tuple[int, ...]
    coefficients: CoefficientSet
    affinity: np.ndarray
    reciprocity: float
    effect_covariance: np.ndarray
    target_density: float | None = 0.3
    shared_covariates: bool = True
    row_flags: tuple[bool, ...] = ()
    col_flags: tuple[bool, ...] = ()
    dyad_flags: tuple[bool, ...] = ()
    censor_cap: int | None = None
    latent_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if sum(self.community_sizes) != self.n:
            raise ValueError("community sizes must sum to n")
        if not -1.0 < self.reciprocity < 1.0:
            raise ValueError("reciprocity must lie in (-1, 1)")
        if self.target_density is not None and not 0.0 < self.target_density < 1.0:
            raise ValueError("target density must lie in (0, 1)")
        p_row = self.coefficients.row.shape[0]
        p_col = self.coefficients.col.shape[0]
        if self.shared_covariates and p_row != p_col:
            raise ValueError("shared covariates need matching row/col counts")
        object.__setattr__(self, "affinity", np.asarray(self.affinity, dtype=float))
        object.__setattr__(self, "effect_covariance",
                           np.asarray(self.effect_covariance, dtype=float))

    @property
    def n_communities(self) -> int:
        return len(self.community_sizes)


def _flags(stated: tuple[bool, ...], count: int) -> tuple[bool, ...]:
    if stated and len(stated) != count:
        raise ValueError("one dependence flag per covariate")
    return stated if stated else (True,) * count


def _draw_covariates(spec: ScenarioSpec, rng: np.random.Generator) -> CovariateSet:
    p_row = spec.coefficients.row.shape[0]
    p_col = spec.coefficients.col.shape[0]
    p_dyad = spec.coefficients.dyad_row.shape[0]
    row_flags = _flags(spec.row_flags, p_row)
    col_flags = _flags(spec.col_flags, p_col)
    dyad_flags = _flags(spec.dyad_flags, p_dyad)
    if spec.shared_covariates:
        shared = rng.normal(size=(spec.n, p_row))
        row_vals = col_vals = shared
    else:
        row_vals = rng.normal(size=(spec.n, p_row))
        col_vals = rng.normal(size=(spec.n, p_col))
    row = tuple(NodeCovariate(f"x{l + 1}", row_vals[:, l], row_flags[l])
                for l in range(p_row))
    col = tuple(NodeCovariate(f"x{l + 1}", col_vals[:, l], col_flags[l])
                for l in range(p_col))
    dyad = tuple(DyadCovariate(f"w{l + 1}", rng.normal(size=(spec.n, spec.n)),
                               dyad_flags[l])
                 for l in range(p_dyad))
    return CovariateSet(n=spec.n, row=row, col=col, dyad=dyad)


def _draw_effects(spec: ScenarioSpec, rng: np.random.Generator) -> RandomEffects:
    chol = np.linalg.cholesky(spec.effect_covariance)
    ab = rng.normal(size=(spec.n, 2)) @ chol.T
    return RandomEffects(ab[:, 0].copy(), ab[:, 1].copy(), spec.effect_covariance)


def _draw_errors(n: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    i_upper, j_upper = np.triu_indices(n, 1)
    raw = rng.normal(size=(2, i_upper.size))
    e = np.zeros((n, n))
    e[i_upper, j_upper] = raw[0]
    e[j_upper, i_upper] = rho * raw[0] + np.sqrt(1.0 - rho * rho) * raw[1]
    return e


def _multiplicative_term(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.latent_dim is None:
        return np.zeros((spec.n, spec.n))
    positions = rng.normal(size=(spec.n, spec.latent_dim))
    return positions @ positions.T


def _base_state(spec: ScenarioSpec, intercept: float) -> ModelState:
    labels = np.repeat(np.arange(spec.n_communities), spec.community_sizes)
    return ModelState(
        coeffs=replace(spec.coefficients, intercept=intercept),
        community=CommunityAssignment(labels, spec.n_communities),
        affinity=spec.affinity,
        effects=RandomEffects(np.zeros(spec.n), np.zeros(spec.n),
                              spec.effect_covariance),
        latent=LatentState(np.zeros((spec.n, spec.n)), spec.reciprocity),
    )


def _offdiag_mean(values: np.ndarray) -> float:
    n = values.shape[0]
    return float((values.sum() - np.trace(values)) / (n * (n - 1)))


def calibrate_intercept(base_mean: np.ndarray, target: float) -> float:
    """Bisect the intercept until the expected density hits the target.

    base_mean is the realized latent mean matrix without its intercept;
    the unit-variance errors integrate out in closed form, so each probe
    is an exact conditional edge probability. Calibrating against the
    realized covariates and effects (rather than their distribution)
    keeps every generated network within tolerance of the target, not
    just the average one.
    """

    def expected_density(intercept: float) -> float:
        return _offdiag_mean(ndtr(base_mean + intercept))

    lo, hi = -_INTERCEPT_SPAN, _INTERCEPT_SPAN
    if not expected_density(lo) < target < expected_density(hi):
        raise UnreachableDensityError(
            f"no intercept in [{lo}, {hi}] gives density {target}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if expected_density(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _generate(spec: ScenarioSpec, seed):
    data_rng = np.random.default_rng(spec.seed if seed is None else seed)
    covs = _draw_covariates(spec, data_rng)
    effects = _draw_effects(spec, data_rng)
    state = replace(_base_state(spec, spec.coefficients.intercept), effects=effects)
    base = mean_matrix(state, covs) + _multiplicative_term(spec, data_rng)
    if spec.target_density is not None:
        off = base - spec.coefficients.intercept
        intercept = calibrate_intercept(off, spec.target_density)
        base = off + intercept
        state = replace(state, coeffs=replace(state.coeffs, intercept=intercept))
    z = base + _draw_errors(spec.n, spec.reciprocity, data_rng)
    np.fill_diagonal(z, 0.0)
    truth = replace(state, latent=LatentState(z, spec.reciprocity))
    return z, covs, truth


def generate_network(spec: ScenarioSpec, seed=None):
    """Draw one network; returns (observed, covariates, generating state).

    The generating state carries the continuous latent affinities, so a
    continuous-response variant of the data is available as
    ``truth.latent.propensity``.
    """
    z, covs, truth = _generate(spec, seed)
    y = np.where(z > 0, 1, 0).astype(np.int8)
    np.fill_diagonal(y, ABSENT)
    return Sociomatrix(y), covs, truth


def generate_censored_network(spec: ScenarioSpec, seed=None):
    """Draw one network, then keep only each sender's top-m affinities.

    A node with more than ``censor_cap`` positive latent affinities
    reports only the strongest cap-many and is flagged censored. The
    offset model fitted to such data is a deliberate approximation of
    this truncation mechanism, so the generating state carries no
    offsets.
    """
    if spec.censor_cap is None:
        raise ValueError("scenario has no censor cap")
    cap = spec.censor_cap
    z, covs, truth = _generate(spec, seed)
    n = spec.n
    y = np.zeros((n, n), dtype=np.int8)
    flags = np.zeros(n, dtype=bool)
    masked = np.where(np.eye(n, dtype=bool), -np.inf, z)
    for i in range(n):
        positive = np.flatnonzero(masked[i] > 0)
        if positive.size > cap:
            keep = positive[np.argsort(masked[i, positive])[-cap:]]
            flags[i] = True
        else:
            keep = positive
        y[i, keep] = 1
    np.fill_diagonal(y, ABSENT)
    return Sociomatrix(y, censor_cap=cap, censored=flags), covs, truth


def scenario_presets() -> dict[str, ScenarioSpec]:
    """The three study designs, keyed by name."""
    sigma_ab = np.array([[1.0, 0.5], [0.5, 1.0]])
    # strong homophily: large enough that the spectral start recovers the
    # planted blocks essentially every time at n = 150
    k3 = np.diag([4.0, 4.0, 4.0])
    binary = ScenarioSpec(
        name="binary-k3",
        n=150,
        community_sizes=(50, 50, 50),
        coefficients=CoefficientSet(
            intercept=0.0,
            row=np.array([[1.0, 1.0, 1.0], [1.0, 0.0, -1.0]]),
            col=np.array([[2.0, 2.0, 2.0], [0.0, -2.0, 2.0]]),
            dyad_row=np.zeros((0, 3)),
            dyad_col=np.zeros((0, 3)),
        ),
        affinity=k3,
        reciprocity=0.9,
        effect_covariance=sigma_ab,
        target_density=0.30,
        row_flags=(False, True),
        col_flags=(False, True),
    )
    censored = ScenarioSpec(
        name="censored-k3",
        n=150,
        community_sizes=(50, 50, 50),
        coefficients=CoefficientSet(
            intercept=0.0,
            row=np.array([[-1.0, -1.0, -1.0], [0.5, 0.0, -0.5]]),
            col=np.array([[1.0, 1.0, 1.0], [0.0, -1.5, 1.5]]),
            dyad_row=np.zeros((0, 3)),
            dyad_col=np.zeros((0, 3)),
        ),
        affinity=k3,
        reciprocity=0.9,
        effect_covariance=sigma_ab,
        # sparse enough that a cap of 15 nominations trims about a tenth
        # of the true ties
        target_density=0.035,
        row_flags=(True, True),
        col_flags=(True, True),
        censor_cap=15,
    )
    misspec = ScenarioSpec(
        name="misspec-continuous",
        n=150,
        community_sizes=(150,),
        coefficients=CoefficientSet(
            intercept=0.0,
            row=np.array([[1.0]]),
            col=np.array([[2.0]]),
            dyad_row=np.zeros((0, 1)),
            dyad_col=np.zeros((0, 1)),
        ),
        affinity=np.zeros((1, 1)),
        reciprocity=0.9,
        effect_covariance=sigma_ab,
        target_density=0.30,
        shared_covariates=False,
        row_flags=(True,),
        col_flags=(True,),
        latent_dim=3,
    )
    return {s.name: s for s in (binary, censored, misspec)}
