"""Metropolis-within-Gibbs engine for the community probit network model.

One iteration visits, in order: the community-affinity block, a batch of
single-node membership moves, the reciprocity correlation, the intercept
and every coefficient block, a full Gibbs refresh of the latent
propensities, the additive node effects, their covariance, and (for
capped data) the per-sender censoring offsets with their variance.

All Gaussian conditionals are conjugate after the whitening transform of
the propensity residuals, so no step ever factors anything larger than
the 2n x 2n additive-effects system.  Update functions are pure: each
takes the current state and returns the refreshed component, and
`run_chain` does the threading, thinning, and bookkeeping.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.stats import invwishart

from .initializers import residual_init, spectral_init
from .likelihood import (_lower_trunc_std, network_loglik, node_loglik,
                         node_pair_means, sample_dyad_z, sample_truncnorm)
from .model import (CommunityAssignment, CovariateSet, LatentState, ModelState,
                    RandomEffects, Sociomatrix, CoefficientSet, _pair_swap,
                    decorrelate, decorrelation_constants, design_dyadic,
                    mean_matrix, node_coefficients, unvec, vec)

# Relative diagonal ridges tried in turn when a posterior precision fails
# its Cholesky factorization; exhausting them aborts the chain.
_PRECISION_RIDGES = (0.0, 1e-10, 1e-8, 1e-6)

_INIT_METHODS = ("spectral", "residual", "random", "provided")

# Truncated-Gibbs sweeps inside the censoring-offset update.  Any fixed
# count leaves the truncated-normal target invariant; a few sweeps just
# mix the block faster between outer iterations.
_OFFSET_SWEEPS = 4


class ChainNumericalError(RuntimeError):
    """A conditional update lost positive definiteness beyond repair.

    Carries the iteration index and the state current at the failure so
    a run can be inspected or restarted nearby.
    """

    def __init__(self, message: str, iteration: int | None = None,
                 state: ModelState | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
        self.state = state


def _as_spd(name: str, m: np.ndarray, dim: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (dim, dim) or not np.allclose(m, m.T):
        raise ValueError(f"{name} must be a symmetric {dim}x{dim} matrix")
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return m


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters for every sampled block.

    Membership labels carry a uniform prior over communities and the
    reciprocity correlation an arc sine prior on (-1, 1); neither has a
    tunable hyperparameter, so they do not appear here.  The additive
    effects use an inverse-Wishart prior on their 2x2 covariance and the
    censoring-offset variance an inverse-gamma prior.
    """

    intercept_mean: float
    intercept_var: float
    coefficient_mean: np.ndarray
    coefficient_cov: np.ndarray
    affinity_mean: np.ndarray
    affinity_cov: np.ndarray
    effect_scale: np.ndarray
    effect_df: float
    offset_var_shape: float
    offset_var_scale: float

    def __post_init__(self):
        if self.intercept_var <= 0:
            raise ValueError("intercept variance must be positive")
        mean = np.asarray(self.coefficient_mean, dtype=float).ravel()
        k = mean.shape[0]
        if k < 1:
            raise ValueError("coefficient prior mean must have at least one slot")
        object.__setattr__(self, "coefficient_mean", mean)
        object.__setattr__(self, "coefficient_cov",
                           _as_spd("coefficient prior covariance",
                                   self.coefficient_cov, k))
        aff_mean = np.asarray(self.affinity_mean, dtype=float).ravel()
        if aff_mean.shape[0] != k * k:
            raise ValueError(f"affinity prior mean must have {k * k} entries "
                             f"for {k} communities")
        object.__setattr__(self, "affinity_mean", aff_mean)
        object.__setattr__(self, "affinity_cov",
                           _as_spd("affinity prior covariance",
                                   self.affinity_cov, k * k))
        object.__setattr__(self, "effect_scale",
                           _as_spd("effect covariance scale", self.effect_scale, 2))
        if self.effect_df <= 1:
            raise ValueError("effect covariance degrees of freedom must exceed 1")
        if self.offset_var_shape <= 0 or self.offset_var_scale <= 0:
            raise ValueError("offset variance prior parameters must be positive")

    @property
    def n_communities(self) -> int:
        return self.coefficient_mean.shape[0]

    @classmethod
    def default(cls, n_communities: int) -> "PriorSpec":
        """Weakly informative defaults on the probit scale."""
        k = n_communities
        return cls(0.0, 25.0, np.zeros(k), 25.0 * np.eye(k),
                   np.zeros(k * k), 25.0 * np.eye(k * k), np.eye(2), 4.0,
                   2.0, 1.0)

    def tied_coefficient_prior(self) -> tuple[float, float]:
        """Scalar (mean, variance) for a community-independent block.

        Restricting the K-variate coefficient prior to the line where
        all slots agree gives a normal in the shared value.
        """
        prec = np.linalg.inv(self.coefficient_cov)
        ones = np.ones(self.n_communities)
        p = float(ones @ prec @ ones)
        return float(ones @ prec @ self.coefficient_mean) / p, 1.0 / p


@dataclass(frozen=True)
class FitConfig:
    """Run-length, seeding, and initialization knobs for one chain."""

    n_communities: int
    n_iter: int = 150_000
    burn_in: int = 10_000
    thin: int = 10
    seed: int = 0
    init_method: str = "spectral"
    initial_labels: np.ndarray | None = None
    censored_mode: bool | None = None
    dependence_flags: dict[str, bool] | None = None
    membership_attempts: int | None = None
    rho_proposal_sd: float = 0.05
    reproducible_reduction: bool = True

    def __post_init__(self):
        if self.n_communities < 1:
            raise ValueError("need at least one community")
        if self.n_iter < 1:
            raise ValueError("iteration count must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError(f"burn-in must lie in [0, n_iter), got "
                             f"{self.burn_in} of {self.n_iter}")
        if self.thin < 1:
            raise ValueError("thinning stride must be at least 1")
        if self.init_method not in _INIT_METHODS:
            raise ValueError(f"unknown init method {self.init_method!r}; "
                             f"expected one of {_INIT_METHODS}")
        if self.init_method == "provided":
            if self.initial_labels is None:
                raise ValueError("init method 'provided' needs initial labels")
            object.__setattr__(self, "initial_labels",
                               np.asarray(self.initial_labels, dtype=np.int64))
        if self.membership_attempts is not None and self.membership_attempts < 0:
            raise ValueError("membership attempt count cannot be negative")
        if self.rho_proposal_sd <= 0:
            raise ValueError("reciprocity proposal sd must be positive")

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def digest(self) -> str:
        """Stable hash of the configuration, for output provenance."""
        payload = {
            "n_communities": self.n_communities,
            "n_iter": self.n_iter,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": self.seed,
            "init_method": self.init_method,
            "initial_labels": None if self.initial_labels is None
            else [int(v) for v in self.initial_labels],
            "censored_mode": self.censored_mode,
            "dependence_flags": None if self.dependence_flags is None
            else dict(sorted(self.dependence_flags.items())),
            "membership_attempts": self.membership_attempts,
            "rho_proposal_sd": self.rho_proposal_sd,
            "reproducible_reduction": self.reproducible_reduction,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ChainOutput:
    """Thinned posterior draws plus the bookkeeping needed to resume.

    Coefficient draws are stored as per-node products (the coefficient a
    node actually feels given its current community), which is the scale
    inference happens on; community-level summaries are recovered by the
    post-processing step after aligning labels across draws.
    """

    config_digest: str
    seed: int
    iteration_index: np.ndarray
    intercept: np.ndarray
    sender_coefficients: np.ndarray
    receiver_coefficients: np.ndarray
    dyad_sender_coefficients: np.ndarray
    dyad_receiver_coefficients: np.ndarray
    affinity: np.ndarray
    reciprocity: np.ndarray
    effect_covariance: np.ndarray
    sender_effects: np.ndarray
    receiver_effects: np.ndarray
    labels: np.ndarray
    loglik: np.ndarray
    censor_offsets: np.ndarray | None
    censor_offset_var: np.ndarray | None
    membership_acceptance: float
    reciprocity_acceptance: float
    seconds_elapsed: float
    iterations_run: int
    final_state: ModelState

    @property
    def n_draws(self) -> int:
        return self.intercept.shape[0]

    @property
    def iterations_per_second(self) -> float:
        if self.seconds_elapsed <= 0:
            return float("inf")
        return self.iterations_run / self.seconds_elapsed


@dataclass
class ChainCheckpoint:
    """Mid-run snapshot; everything `run_chain` needs to pick up again.

    Handed to the checkpoint hook with live references: serialize or
    copy it before returning, because the arrays keep mutating as the
    chain advances.
    """

    config_digest: str
    completed_iterations: int
    n_stored: int
    state: ModelState
    rng_state: dict
    draws: dict[str, np.ndarray]
    tally: dict[str, int]


def _spd_factor(precision: np.ndarray, context: str):
    """Cholesky factor with an escalating diagonal ridge fallback."""
    scale = float(np.mean(np.diag(precision)))
    if not np.isfinite(scale) or scale <= 0:
        raise ChainNumericalError(f"{context}: posterior precision is degenerate")
    for ridge in _PRECISION_RIDGES:
        shifted = precision if ridge == 0.0 else \
            precision + ridge * scale * np.eye(precision.shape[0])
        try:
            return cho_factor(shifted, lower=True)
        except LinAlgError:
            continue
    raise ChainNumericalError(
        f"{context}: posterior precision is not positive definite")


def _gaussian_from_precision(precision: np.ndarray, shift: np.ndarray,
                             rng: np.random.Generator, context: str) -> np.ndarray:
    """One draw from the normal with the given precision and linear term."""
    factor = _spd_factor(precision, context)
    mean = cho_solve(factor, shift)
    noise = rng.standard_normal(shift.shape[0])
    chol, lower = factor
    return mean + solve_triangular(chol, noise, lower=lower, trans=1)


def _moments_from_system(precision: np.ndarray, shift: np.ndarray):
    cov = np.linalg.inv(precision)
    cov = (cov + cov.T) / 2.0
    return cov @ shift, cov


def _full_mean(state: ModelState, covs: CovariateSet) -> np.ndarray:
    return mean_matrix(state, covs, censored=state.censor_offsets is not None)


def _whitened_residual(state: ModelState, covs: CovariateSet,
                       keep) -> np.ndarray:
    """Decorrelated propensity residual with one mean component retained.

    `keep` is the contribution of the block about to be updated; adding
    it back after subtracting the full mean leaves the residual that
    block must explain.  The diagonal is zeroed so the structurally
    absent self-pairs drop out of every inner product.
    """
    resid = state.latent.propensity - _full_mean(state, covs)
    if keep is not None:
        resid = resid + keep
    resid = np.array(resid, dtype=float)
    np.fill_diagonal(resid, 0.0)
    return decorrelate(resid, state.latent.reciprocity)


def _affinity_system(state: ModelState, covs: CovariateSet, priors: PriorSpec):
    labels = state.community.labels
    keep = state.affinity[np.ix_(labels, labels)]
    white = _whitened_residual(state, covs, keep)
    s, t = decorrelation_constants(state.latent.reciprocity)
    k = state.community.n_communities
    onehot = state.community.onehot
    # The design columns are indicators of community pairs, so the normal
    # equations collapse to community block sums: a column's squared norm
    # counts the pairs in its block, and distinct columns only meet where
    # whitening couples a block with its transpose.
    sizes = state.community.sizes().astype(float)
    pair_counts = np.outer(sizes, sizes) - np.diag(sizes)
    counts_vec = vec(pair_counts)
    precision = (s * s + t * t) * np.diag(counts_vec)
    precision[np.arange(k * k), _pair_swap(k)] += 2.0 * s * t * counts_vec
    block_sums = onehot.T @ white @ onehot
    shift = vec(s * block_sums + t * block_sums.T)
    prior_prec = np.linalg.inv(priors.affinity_cov)
    precision = precision + prior_prec
    shift = shift + prior_prec @ priors.affinity_mean
    return precision, shift


def affinity_conditional(state: ModelState, covs: CovariateSet,
                         priors: PriorSpec):
    """Posterior mean and covariance of the vectorized affinity block."""
    return _moments_from_system(*_affinity_system(state, covs, priors))


def update_affinity(state: ModelState, covs: CovariateSet, priors: PriorSpec,
                    rng: np.random.Generator) -> np.ndarray:
    """Conjugate draw of the community-affinity matrix."""
    precision, shift = _affinity_system(state, covs, priors)
    k = state.community.n_communities
    draw = _gaussian_from_precision(precision, shift, rng, "affinity update")
    return unvec(draw, k, k)


def _intercept_system(state: ModelState, covs: CovariateSet, priors: PriorSpec):
    white = _whitened_residual(state, covs, state.coeffs.intercept)
    s, t = decorrelation_constants(state.latent.reciprocity)
    n = state.n
    gain = s + t
    precision = gain * gain * n * (n - 1) + 1.0 / priors.intercept_var
    shift = gain * float(white.sum()) + priors.intercept_mean / priors.intercept_var
    return precision, shift


def intercept_conditional(state: ModelState, covs: CovariateSet,
                          priors: PriorSpec) -> tuple[float, float]:
    """Posterior mean and variance of the shared intercept."""
    precision, shift = _intercept_system(state, covs, priors)
    return shift / precision, 1.0 / precision


def update_intercept(state: ModelState, covs: CovariateSet, priors: PriorSpec,
                     rng: np.random.Generator) -> float:
    """Conjugate draw of the shared intercept."""
    mean, var = intercept_conditional(state, covs, priors)
    return float(mean + math.sqrt(var) * rng.standard_normal())


_BLOCK_ROLES = ("row", "col", "dyad_row", "dyad_col")


def _rowcol_normal_equations(state: ModelState, values: np.ndarray,
                             white: np.ndarray, role: str):
    """Gram and linear term for one node-covariate block, closed form.

    The block's design columns vanish outside one community, so their
    inner products reduce to within-community sums of the covariate and
    its square, and the whitening couples a column with its mirror
    through the plain covariate totals.
    """
    s, t = decorrelation_constants(state.latent.reciprocity)
    onehot = state.community.onehot
    n = state.n
    totals = onehot.T @ values
    squares = onehot.T @ (values * values)
    gram = (s * s + t * t) * (n - 1) * np.diag(squares) \
        + 2.0 * s * t * (np.outer(totals, totals) - np.diag(squares))
    row_sums = white.sum(axis=1)
    col_sums = white.sum(axis=0)
    if role == "row":
        lin = onehot.T @ (values * (s * row_sums + t * col_sums))
    else:
        lin = onehot.T @ (values * (s * col_sums + t * row_sums))
    return gram, lin


def _coefficient_system(state: ModelState, covs: CovariateSet,
                        priors: PriorSpec, role: str, index: int):
    labels = state.community.labels
    co = state.coeffs
    if role == "row":
        cov = covs.row[index]
        keep = (cov.values * co.row[index][labels])[:, None]
        white = _whitened_residual(state, covs, keep)
        gram, lin = _rowcol_normal_equations(state, cov.values, white, role)
    elif role == "col":
        cov = covs.col[index]
        keep = (cov.values * co.col[index][labels])[None, :]
        white = _whitened_residual(state, covs, keep)
        gram, lin = _rowcol_normal_equations(state, cov.values, white, role)
    elif role in ("dyad_row", "dyad_col"):
        cov = covs.dyad[index]
        sender_side = co.dyad_row[index][labels]
        receiver_side = co.dyad_col[index][labels]
        keep = (sender_side[:, None] * cov.values) * receiver_side[None, :]
        if role == "dyad_row":
            h = design_dyadic(covs, state.community, co.dyad_col[index],
                              state.latent.reciprocity, "dr", index)
        else:
            h = design_dyadic(covs, state.community, co.dyad_row[index],
                              state.latent.reciprocity, "dc", index)
        white_vec = vec(_whitened_residual(state, covs, keep))
        gram = h.T @ h
        lin = h.T @ white_vec
    else:
        raise ValueError(f"unknown coefficient block role {role!r}; "
                         f"expected one of {_BLOCK_ROLES}")
    if cov.community_dependent:
        prior_prec = np.linalg.inv(priors.coefficient_cov)
        precision = gram + prior_prec
        shift = lin + prior_prec @ priors.coefficient_mean
        return precision, shift, False
    # Community-independent: one shared value, so the per-community
    # columns collapse into their sum and the prior restricts to the
    # equal-slots line.
    tied_mean, tied_var = priors.tied_coefficient_prior()
    precision = np.array([[float(gram.sum()) + 1.0 / tied_var]])
    shift = np.array([float(lin.sum()) + tied_mean / tied_var])
    return precision, shift, True


def coefficient_conditional(state: ModelState, covs: CovariateSet,
                            priors: PriorSpec, role: str, index: int):
    """Posterior moments of one coefficient block (1-dim when tied)."""
    precision, shift, _ = _coefficient_system(state, covs, priors, role, index)
    return _moments_from_system(precision, shift)


def update_coefficient(state: ModelState, covs: CovariateSet, priors: PriorSpec,
                       rng: np.random.Generator, role: str,
                       index: int) -> np.ndarray:
    """Conjugate draw of one block, replicated across slots when tied."""
    precision, shift, tied = _coefficient_system(state, covs, priors, role, index)
    draw = _gaussian_from_precision(precision, shift, rng,
                                    f"{role} coefficient update")
    if tied:
        return np.full(state.community.n_communities, draw[0])
    return draw


def _refresh_sweeps(rho: float) -> int:
    """Sub-iterations for a near-exact constrained pair redraw.

    The interleaved truncated-conditional sampler contracts toward its
    target at rate rho squared per sweep, so strong correlations need
    more than the shared default of ten.
    """
    r2 = rho * rho
    if r2 <= 0.9025:
        return 10
    return min(200, math.ceil(math.log(1e-4) / math.log(r2)))


def _refresh_node_pairs(state: ModelState, y: Sociomatrix, covs: CovariateSet,
                        node: int, rng: np.random.Generator) -> ModelState:
    censored = y.censor_cap is not None
    others, outgoing, incoming = node_pair_means(state, covs, node,
                                                censored=censored)
    rho = state.latent.reciprocity
    yy = y.y
    z = state.latent.propensity.copy()
    z_out, z_in = sample_dyad_z(outgoing, incoming, rho, yy[node, others],
                                yy[others, node], rng,
                                sweeps=_refresh_sweeps(rho))
    z[node, others] = z_out
    z[others, node] = z_in
    return replace(state, latent=LatentState(z, rho))


def update_membership(state: ModelState, y: Sociomatrix, covs: CovariateSet,
                      rng: np.random.Generator,
                      node: int) -> tuple[bool, ModelState]:
    """One Metropolis move on a single node's community label.

    The proposal is uniform over communities and the acceptance ratio
    marginalizes the node's latent pairs, so only the observed dyad
    probabilities involving the node enter.  An accepted move (which
    includes proposing the current label) redraws the node's latent
    pairs from their constrained conditionals; a rejected move leaves
    the state untouched.
    """
    community = state.community
    proposal = int(rng.integers(community.n_communities))
    current = int(community.labels[node])
    if proposal != current:
        gain = node_loglik(state, y, covs, node, label=proposal) \
            - node_loglik(state, y, covs, node)
        if np.log(rng.uniform()) >= gain:
            return False, state
        labels = community.labels.copy()
        labels[node] = proposal
        state = replace(state, community=CommunityAssignment(
            labels, community.n_communities))
    return True, _refresh_node_pairs(state, y, covs, node, rng)


def residual_pair_moments(state: ModelState,
                          covs: CovariateSet) -> tuple[float, float, int]:
    """Sufficient statistics of the dyad residuals for the correlation.

    Returns the total squared residual over ordered pairs, the sum of
    mirror-entry cross products over unordered pairs, and the unordered
    pair count.
    """
    resid = state.latent.propensity - _full_mean(state, covs)
    resid = np.array(resid, dtype=float)
    np.fill_diagonal(resid, 0.0)
    sum_squares = float(np.sum(resid * resid))
    cross_sum = 0.5 * float(np.sum(resid * resid.T))
    n = state.n
    return sum_squares, cross_sum, n * (n - 1) // 2


def reciprocity_log_density(rho: float, sum_squares: float, cross_sum: float,
                            n_pairs: int) -> float:
    """Log target for the correlation given the current residuals.

    Bivariate normal density of every residual pair under correlation
    rho, times the arc sine prior; unnormalized only by terms free of
    rho.  Values outside (-1, 1) get probability zero.
    """
    if not -1.0 < rho < 1.0:
        return -np.inf
    comp = 1.0 - rho * rho
    gauss = -n_pairs * math.log(2.0 * math.pi) \
        - 0.5 * n_pairs * math.log(comp) \
        - (sum_squares - 2.0 * rho * cross_sum) / (2.0 * comp)
    prior = -math.log(math.pi) - 0.5 * math.log(comp)
    return gauss + prior


def update_reciprocity(state: ModelState, covs: CovariateSet,
                       proposal_sd: float,
                       rng: np.random.Generator) -> tuple[float, bool]:
    """Random-walk Metropolis step on the reciprocity correlation."""
    rho = state.latent.reciprocity
    proposal = rho + proposal_sd * rng.standard_normal()
    if not -1.0 < proposal < 1.0:
        return rho, False
    stats = residual_pair_moments(state, covs)
    gain = reciprocity_log_density(proposal, *stats) \
        - reciprocity_log_density(rho, *stats)
    if np.log(rng.uniform()) >= gain:
        return rho, False
    return float(proposal), True


def update_propensities(state: ModelState, y: Sociomatrix, covs: CovariateSet,
                        rng: np.random.Generator) -> np.ndarray:
    """Gibbs refresh of the latent matrix in two triangular half sweeps.

    Each entry is normal about its mean plus the correlation-scaled
    residual of its mirror entry, truncated to the side its observed
    edge dictates.  The lower triangle conditions on the upper, then
    the upper on the refreshed lower, so the whole matrix is exact
    Gibbs in two vectorized passes.
    """
    censored = y.censor_cap is not None
    m = mean_matrix(state, covs, censored=censored)
    rho = state.latent.reciprocity
    sd = math.sqrt(1.0 - rho * rho)
    z = state.latent.propensity.copy()
    yy = y.y
    iu, ju = np.triu_indices(state.n, 1)
    for target, mirror in (((ju, iu), (iu, ju)), ((iu, ju), (ju, iu))):
        center = m[target] + rho * (z[mirror] - m[mirror])
        sign = np.where(yy[target] == 1, 1.0, -1.0)
        z[target] = center + sd * sign * _lower_trunc_std(-sign * center / sd, rng)
    return z


def _additive_system(state: ModelState, covs: CovariateSet):
    keep = state.effects.sender[:, None] + state.effects.receiver[None, :]
    white = _whitened_residual(state, covs, keep)
    s, t = decorrelation_constants(state.latent.reciprocity)
    rows = white.sum(axis=1)
    cols = white.sum(axis=0)
    shift = np.concatenate([s * rows + t * cols, s * cols + t * rows])
    n = state.n
    # Design inner products have closed forms: a sender column meets
    # another sender column only at their two shared dyads, and meets a
    # receiver column along a whole row or column of the matrix.
    st = s * t
    ss = s * s + t * t
    same = np.full((n, n), 2.0 * st)
    np.fill_diagonal(same, (n - 1) * ss)
    cross = np.full((n, n), ss)
    np.fill_diagonal(cross, 2.0 * st * (n - 1))
    omega = np.linalg.inv(state.effects.covariance)
    eye = np.eye(n)
    precision = np.block([[same + omega[0, 0] * eye, cross + omega[0, 1] * eye],
                          [cross + omega[1, 0] * eye, same + omega[1, 1] * eye]])
    return precision, shift


def additive_effects_conditional(state: ModelState, covs: CovariateSet):
    """Posterior moments of the stacked sender then receiver effects."""
    return _moments_from_system(*_additive_system(state, covs))


def update_additive_effects(state: ModelState, covs: CovariateSet,
                            rng: np.random.Generator):
    """Joint conjugate draw of all sender and receiver effects."""
    precision, shift = _additive_system(state, covs)
    draw = _gaussian_from_precision(precision, shift, rng,
                                    "additive effects update")
    n = state.n
    return draw[:n], draw[n:]


def update_effect_covariance(state: ModelState, priors: PriorSpec,
                             rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw for the additive-effect covariance."""
    pairs = np.stack([state.effects.sender, state.effects.receiver], axis=1)
    scale = priors.effect_scale + pairs.T @ pairs
    df = priors.effect_df + state.n
    draw = invwishart.rvs(df=df, scale=scale, random_state=rng)
    return np.asarray(draw, dtype=float).reshape(2, 2)


def _offset_system(state: ModelState, y: Sociomatrix, covs: CovariateSet):
    flagged = np.flatnonzero(y.censored)
    white = _whitened_residual(state, covs, state.censor_offsets[:, None])
    s, t = decorrelation_constants(state.latent.reciprocity)
    shift = (s * white.sum(axis=1) + t * white.sum(axis=0))[flagged]
    c = flagged.shape[0]
    st = s * t
    ss = s * s + t * t
    gram = np.full((c, c), 2.0 * st)
    np.fill_diagonal(gram, (state.n - 1) * ss)
    precision = gram + np.eye(c) / state.censor_offset_var
    return flagged, precision, shift


def censor_offsets_conditional(state: ModelState, y: Sociomatrix,
                               covs: CovariateSet):
    """Flagged node indices and their untruncated Gaussian moments.

    The actual conditional is this normal restricted to the negative
    orthant; the untruncated moments are what an oracle needs to build
    that target independently.
    """
    flagged, precision, shift = _offset_system(state, y, covs)
    mean, cov = _moments_from_system(precision, shift)
    return flagged, mean, cov


def update_censor_offsets(state: ModelState, y: Sociomatrix,
                          covs: CovariateSet, priors: PriorSpec,
                          rng: np.random.Generator,
                          sweeps: int = _OFFSET_SWEEPS):
    """Truncated draw of the censoring offsets, then their variance.

    Offsets of flagged senders follow their joint normal conditional
    restricted to the negative orthant, sampled by coordinatewise
    truncated draws within the block (each an exact full-conditional
    Gibbs step, so the restriction stays invariant).  Unflagged nodes
    keep offset zero.  The offset variance then takes its conjugate
    inverse-gamma draw.
    """
    if state.censor_offsets is None:
        raise ValueError("state carries no censoring offsets to update")
    flagged, precision, shift = _offset_system(state, y, covs)
    offsets = state.censor_offsets.copy()
    count = flagged.shape[0]
    if count:
        mean = cho_solve(_spd_factor(precision, "censoring offset update"), shift)
        current = offsets[flagged].copy()
        diag = np.diag(precision)
        for _ in range(sweeps):
            for k in range(count):
                coupling = precision[k] @ (current - mean) \
                    - diag[k] * (current[k] - mean[k])
                center = mean[k] - coupling / diag[k]
                current[k] = sample_truncnorm(center, 1.0 / math.sqrt(diag[k]),
                                              -np.inf, 0.0, rng)
        offsets[flagged] = current
    shape = priors.offset_var_shape + 0.5 * count
    scale = priors.offset_var_scale + 0.5 * float(offsets @ offsets)
    variance = scale / rng.gamma(shape)
    return offsets, float(variance)


def initial_state(y: Sociomatrix, covs: CovariateSet, config: FitConfig,
                  priors: PriorSpec, rng: np.random.Generator) -> ModelState:
    """Starting configuration: labels per the chosen method, everything
    else at its prior mean, and propensities at sign-consistent values
    half a unit from zero."""
    k = config.n_communities
    method = config.init_method
    if method == "spectral":
        community = spectral_init(y, k, seed=rng)
    elif method == "residual":
        community = residual_init(y, covs, k, seed=rng)
    elif method == "random":
        community = CommunityAssignment(rng.integers(k, size=y.n), k)
    else:
        if config.initial_labels.shape != (y.n,):
            raise ValueError("provided labels must be one per node")
        community = CommunityAssignment(config.initial_labels, k)

    tied_mean, _ = priors.tied_coefficient_prior()

    def start_rows(cov_list):
        if not cov_list:
            return np.zeros((0, k))
        return np.stack([priors.coefficient_mean if cov.community_dependent
                         else np.full(k, tied_mean) for cov in cov_list])

    coeffs = CoefficientSet(priors.intercept_mean, start_rows(covs.row),
                            start_rows(covs.col), start_rows(covs.dyad),
                            start_rows(covs.dyad))
    affinity = unvec(priors.affinity_mean.copy(), k, k)
    if priors.effect_df > 3:
        effect_cov = priors.effect_scale / (priors.effect_df - 3.0)
    else:
        effect_cov = priors.effect_scale.copy()
    effects = RandomEffects(np.zeros(y.n), np.zeros(y.n), effect_cov)
    z = np.where(y.y == 1, 0.5, -0.5)
    np.fill_diagonal(z, 0.0)
    latent = LatentState(z, 0.0)
    if y.censor_cap is not None:
        if priors.offset_var_shape > 1:
            var0 = priors.offset_var_scale / (priors.offset_var_shape - 1.0)
        else:
            var0 = priors.offset_var_scale
        return ModelState(coeffs, community, affinity, effects, latent,
                          censor_offsets=np.zeros(y.n),
                          censor_offset_var=var0)
    return ModelState(coeffs, community, affinity, effects, latent)


def _advance(state: ModelState, y: Sociomatrix, covs: CovariateSet,
             priors: PriorSpec, config: FitConfig, rng: np.random.Generator,
             attempts: int, tally: dict[str, int]) -> ModelState:
    """One full iteration over every update step, in the fixed order."""
    state = replace(state, affinity=update_affinity(state, covs, priors, rng))

    n = state.n
    for _ in range(attempts):
        node = int(rng.integers(n))
        accepted, state = update_membership(state, y, covs, rng, node)
        tally["membership_accepted"] += int(accepted)
        tally["membership_attempted"] += 1

    rho, accepted = update_reciprocity(state, covs, config.rho_proposal_sd, rng)
    tally["reciprocity_accepted"] += int(accepted)
    tally["reciprocity_attempted"] += 1
    if accepted:
        state = replace(state, latent=LatentState(state.latent.propensity, rho))

    intercept = update_intercept(state, covs, priors, rng)
    state = replace(state, coeffs=replace(state.coeffs, intercept=intercept))
    for index in range(len(covs.row)):
        block = update_coefficient(state, covs, priors, rng, "row", index)
        rows = state.coeffs.row.copy()
        rows[index] = block
        state = replace(state, coeffs=replace(state.coeffs, row=rows))
    for index in range(len(covs.col)):
        block = update_coefficient(state, covs, priors, rng, "col", index)
        cols = state.coeffs.col.copy()
        cols[index] = block
        state = replace(state, coeffs=replace(state.coeffs, col=cols))
    for index in range(len(covs.dyad)):
        block = update_coefficient(state, covs, priors, rng, "dyad_row", index)
        senders = state.coeffs.dyad_row.copy()
        senders[index] = block
        state = replace(state, coeffs=replace(state.coeffs, dyad_row=senders))
        block = update_coefficient(state, covs, priors, rng, "dyad_col", index)
        receivers = state.coeffs.dyad_col.copy()
        receivers[index] = block
        state = replace(state, coeffs=replace(state.coeffs, dyad_col=receivers))

    z = update_propensities(state, y, covs, rng)
    state = replace(state, latent=LatentState(z, state.latent.reciprocity))

    sender, receiver = update_additive_effects(state, covs, rng)
    state = replace(state, effects=RandomEffects(sender, receiver,
                                                 state.effects.covariance))
    cov_ab = update_effect_covariance(state, priors, rng)
    state = replace(state, effects=RandomEffects(state.effects.sender,
                                                 state.effects.receiver, cov_ab))

    if state.censor_offsets is not None:
        offsets, variance = update_censor_offsets(state, y, covs, priors, rng)
        state = replace(state, censor_offsets=offsets,
                        censor_offset_var=variance)
    return state


def _allocate_draws(config: FitConfig, n: int, covs: CovariateSet,
                    censored: bool) -> dict[str, np.ndarray]:
    d = config.n_draws
    k = config.n_communities
    draws = {
        "iteration_index": np.zeros(d, dtype=np.int64),
        "intercept": np.zeros(d),
        "sender_coefficients": np.zeros((d, n, len(covs.row))),
        "receiver_coefficients": np.zeros((d, n, len(covs.col))),
        "dyad_sender_coefficients": np.zeros((d, n, len(covs.dyad))),
        "dyad_receiver_coefficients": np.zeros((d, n, len(covs.dyad))),
        "affinity": np.zeros((d, k, k)),
        "reciprocity": np.zeros(d),
        "effect_covariance": np.zeros((d, 2, 2)),
        "sender_effects": np.zeros((d, n)),
        "receiver_effects": np.zeros((d, n)),
        "labels": np.zeros((d, n), dtype=np.int64),
        "loglik": np.zeros(d),
    }
    if censored:
        draws["censor_offsets"] = np.zeros((d, n))
        draws["censor_offset_var"] = np.zeros(d)
    return draws


def _store_draw(draws: dict[str, np.ndarray], slot: int, iteration: int,
                state: ModelState, y: Sociomatrix, covs: CovariateSet) -> None:
    labels = state.community.labels
    co = state.coeffs
    draws["iteration_index"][slot] = iteration
    draws["intercept"][slot] = co.intercept
    draws["sender_coefficients"][slot] = node_coefficients(co.row, labels)
    draws["receiver_coefficients"][slot] = node_coefficients(co.col, labels)
    draws["dyad_sender_coefficients"][slot] = node_coefficients(co.dyad_row, labels)
    draws["dyad_receiver_coefficients"][slot] = node_coefficients(co.dyad_col, labels)
    draws["affinity"][slot] = state.affinity
    draws["reciprocity"][slot] = state.latent.reciprocity
    draws["effect_covariance"][slot] = state.effects.covariance
    draws["sender_effects"][slot] = state.effects.sender
    draws["receiver_effects"][slot] = state.effects.receiver
    draws["labels"][slot] = labels
    draws["loglik"][slot] = network_loglik(state, y, covs)
    if "censor_offsets" in draws:
        draws["censor_offsets"][slot] = state.censor_offsets
        draws["censor_offset_var"][slot] = state.censor_offset_var


def run_chain(y: Sociomatrix, covs: CovariateSet, config: FitConfig,
              priors: PriorSpec | None = None, *,
              checkpoint_hook=None, checkpoint_every: int = 1000,
              resume_from: ChainCheckpoint | None = None) -> ChainOutput:
    """Run one chain end to end and return its thinned draws.

    Deterministic given the configuration: the seed drives a single
    generator through initialization and every update.  A checkpoint
    hook, when given, receives a resumable snapshot every
    `checkpoint_every` iterations; passing such a snapshot back as
    `resume_from` continues the identical trajectory.  Numerical
    failure of any conditional raises ChainNumericalError carrying the
    iteration index and the state at failure.
    """
    if priors is None:
        priors = PriorSpec.default(config.n_communities)
    if priors.n_communities != config.n_communities:
        raise ValueError(f"priors are for {priors.n_communities} communities, "
                         f"configuration says {config.n_communities}")
    if covs.n != y.n:
        raise ValueError(f"covariates are for {covs.n} nodes, network has {y.n}")
    if config.dependence_flags:
        covs = covs.with_flags(config.dependence_flags)
    capped = y.censor_cap is not None
    censored = capped if config.censored_mode is None else config.censored_mode
    if censored and not capped:
        raise ValueError("censored mode needs a network with a censor cap")
    if capped and not censored:
        raise ValueError("network carries a censor cap; fit with censored "
                         "mode or rebuild the data without the cap")

    digest = config.digest()
    if resume_from is None:
        rng = np.random.default_rng(config.seed)
        state = initial_state(y, covs, config, priors, rng)
        start = 0
        stored = 0
        draws = _allocate_draws(config, y.n, covs, censored)
        tally = {"membership_accepted": 0, "membership_attempted": 0,
                 "reciprocity_accepted": 0, "reciprocity_attempted": 0}
    else:
        if resume_from.config_digest != digest:
            raise ValueError("checkpoint belongs to a different configuration")
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = resume_from.rng_state
        state = resume_from.state
        start = resume_from.completed_iterations
        stored = resume_from.n_stored
        draws = resume_from.draws
        tally = dict(resume_from.tally)

    if config.membership_attempts is None:
        attempts = max(1, math.ceil(y.n / 10))
    else:
        attempts = config.membership_attempts

    began = time.perf_counter()
    for iteration in range(start + 1, config.n_iter + 1):
        try:
            state = _advance(state, y, covs, priors, config, rng, attempts,
                             tally)
        except ChainNumericalError as err:
            raise ChainNumericalError(str(err), iteration=iteration,
                                      state=state) from err
        past_burn = iteration - config.burn_in
        if past_burn > 0 and past_burn % config.thin == 0:
            _store_draw(draws, stored, iteration, state, y, covs)
            stored += 1
        if checkpoint_hook is not None and iteration < config.n_iter \
                and iteration % checkpoint_every == 0:
            checkpoint_hook(ChainCheckpoint(
                config_digest=digest, completed_iterations=iteration,
                n_stored=stored, state=state,
                rng_state=rng.bit_generator.state, draws=draws,
                tally=dict(tally)))
    seconds = time.perf_counter() - began

    def rate(which):
        done = tally[f"{which}_attempted"]
        return tally[f"{which}_accepted"] / done if done else 0.0

    return ChainOutput(
        config_digest=digest,
        seed=config.seed,
        iteration_index=draws["iteration_index"],
        intercept=draws["intercept"],
        sender_coefficients=draws["sender_coefficients"],
        receiver_coefficients=draws["receiver_coefficients"],
        dyad_sender_coefficients=draws["dyad_sender_coefficients"],
        dyad_receiver_coefficients=draws["dyad_receiver_coefficients"],
        affinity=draws["affinity"],
        reciprocity=draws["reciprocity"],
        effect_covariance=draws["effect_covariance"],
        sender_effects=draws["sender_effects"],
        receiver_effects=draws["receiver_effects"],
        labels=draws["labels"],
        loglik=draws["loglik"],
        censor_offsets=draws.get("censor_offsets"),
        censor_offset_var=draws.get("censor_offset_var"),
        membership_acceptance=rate("membership"),
        reciprocity_acceptance=rate("reciprocity"),
        seconds_elapsed=seconds,
        iterations_run=config.n_iter - start,
        final_state=state,
    )
