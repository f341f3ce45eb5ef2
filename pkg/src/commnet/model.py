"""Core model objects and design-matrix algebra.

The observation model is a probit network regression: an edge i -> j is
present when a latent propensity z_ij crosses zero.  The propensity mean
stacks an intercept, sender-side and receiver-side covariate effects whose
coefficients depend on the sender's (resp. receiver's) community, dyadic
covariate effects scaled on both sides, a community-affinity term, and
additive sender/receiver random effects.  Reciprocal pairs (z_ij, z_ji)
share a correlated error, so conditional updates work on a decorrelated
transform of the propensity matrix; the design builders here produce the
matching n^2 x K regression designs without ever forming an n^2 x n^2
object.

Vectorization is column-major throughout: vec(M)[j*n + i] = M[i, j].
Diagonal (self-pair) coordinates are structurally absent; design builders
return zero rows there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# Diagonal marker for adjacency matrices: self-ties are absent, never 0/1.
ABSENT = -1

# Relative singular-value cutoff when factoring dyadic covariates.
_SVD_RTOL = 1e-10


def vec(m: np.ndarray) -> np.ndarray:
    """Column-major flatten, so vec(A @ X @ B.T) == kron(B, A) @ vec(X)."""
    return np.asarray(m).ravel(order="F")


def unvec(v: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
    return np.asarray(v).reshape((n_rows, n_cols), order="F")


def _offdiag_zeroed(h: np.ndarray, n: int) -> np.ndarray:
    """Zero the rows of a vectorized design that sit on the diagonal."""
    h[np.arange(n) * (n + 1)] = 0.0
    return h


@dataclass(frozen=True)
class Sociomatrix:
    """Directed binary adjacency data.

    y holds 0/1 off the diagonal and ABSENT (-1) on it.  When the network
    was collected with a cap on nameable partners, censor_cap gives the cap
    and censored flags the truncated senders.  A flagged node is always at
    the cap; a node at the cap need not be flagged (it may genuinely have
    exactly cap-many ties).  When no flags are given, every at-cap node is
    flagged, which is all an observer of the adjacency alone can say.
    """

    y: np.ndarray
    censor_cap: int | None = None
    censored: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {y.shape}")
        n = y.shape[0]
        if not np.all(np.diag(y) == ABSENT):
            raise ValueError("adjacency diagonal must carry the absent marker")
        off = y[~np.eye(n, dtype=bool)]
        if not np.isin(off, (0, 1)).all():
            raise ValueError("off-diagonal adjacency entries must be 0 or 1")
        object.__setattr__(self, "y", y.astype(np.int8))
        if self.censor_cap is not None:
            if self.censor_cap < 1:
                raise ValueError("censor cap must be a positive count")
            at_cap = self.out_degrees() == self.censor_cap
            if (self.out_degrees() > self.censor_cap).any():
                raise ValueError("out-degrees exceed the censor cap")
            flags = np.asarray(self.censored, dtype=bool) if self.censored is not None \
                else at_cap
            if flags.shape != (n,):
                raise ValueError("censored flags must be one per node")
            if (flags & ~at_cap).any():
                raise ValueError("a censored node must sit exactly at the cap")
            object.__setattr__(self, "censored", flags)
        elif self.censored is not None:
            raise ValueError("censored flags given without a censor cap")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def out_degrees(self) -> np.ndarray:
        return np.where(self.y > 0, 1, 0).sum(axis=1)

    def in_degrees(self) -> np.ndarray:
        return np.where(self.y > 0, 1, 0).sum(axis=0)

    def density(self) -> float:
        n = self.n
        return float(np.where(self.y > 0, 1, 0).sum()) / (n * (n - 1))


@dataclass(frozen=True)
class NodeCovariate:
    """Per-node covariate used on the sender or receiver side."""

    name: str
    values: np.ndarray
    community_dependent: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValueError(f"covariate {self.name!r} must be a flat per-node vector")
        if not np.isfinite(v).all():
            raise ValueError(f"covariate {self.name!r} has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DyadCovariate:
    """Pairwise covariate; entry (i, j) scales the i -> j edge.  Diagonal ignored."""

    name: str
    values: np.ndarray
    community_dependent: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"dyadic covariate {self.name!r} must be square")
        if not np.isfinite(v).all():
            raise ValueError(f"dyadic covariate {self.name!r} has non-finite entries")
        object.__setattr__(self, "values", v)

    @cached_property
    def factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Truncated SVD (sigma, q, w) with values ~= q @ diag(sigma) @ w.T."""
        q, sig, wt = np.linalg.svd(self.values, full_matrices=False)
        keep = sig > _SVD_RTOL * (sig[0] if sig.size else 0.0)
        return sig[keep], q[:, keep], wt[keep].T

    @cached_property
    def outer_vector(self) -> np.ndarray | None:
        """x such that values == outer(x, x), or None when not a symmetric outer product."""
        sig, q, w = self.factors
        if sig.size != 1:
            return None
        if not np.allclose(q[:, 0], w[:, 0], atol=1e-12):
            return None
        return np.sqrt(sig[0]) * q[:, 0]


@dataclass(frozen=True)
class CovariateSet:
    """All covariates for one network, with per-covariate dependence flags."""

    n: int
    row: tuple[NodeCovariate, ...] = ()
    col: tuple[NodeCovariate, ...] = ()
    dyad: tuple[DyadCovariate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "row", tuple(self.row))
        object.__setattr__(self, "col", tuple(self.col))
        object.__setattr__(self, "dyad", tuple(self.dyad))
        for cov in self.row + self.col:
            if cov.values.shape != (self.n,):
                raise ValueError(f"covariate {cov.name!r} has length "
                                 f"{cov.values.shape[0]}, expected {self.n}")
        for cov in self.dyad:
            if cov.values.shape != (self.n, self.n):
                raise ValueError(f"dyadic covariate {cov.name!r} has shape "
                                 f"{cov.values.shape}, expected ({self.n}, {self.n})")
        for role in (self.row, self.col, self.dyad):
            names = [c.name for c in role]
            if len(set(names)) != len(names):
                raise ValueError("covariate names must be unique within a role")

    def with_flags(self, flags: dict[str, bool]) -> "CovariateSet":
        """Copy with dependence flags overridden; keys are 'name' or 'name:role'."""

        def pick(cov, role):
            for key in (f"{cov.name}:{role}", cov.name):
                if key in flags:
                    return flags[key]
            return cov.community_dependent

        from dataclasses import replace
        return CovariateSet(
            n=self.n,
            row=tuple(replace(c, community_dependent=pick(c, "row")) for c in self.row),
            col=tuple(replace(c, community_dependent=pick(c, "col")) for c in self.col),
            dyad=tuple(replace(c, community_dependent=pick(c, "dyad")) for c in self.dyad),
        )


@dataclass(frozen=True)
class CommunityAssignment:
    """Hard one-community-per-node labels, 0-based."""

    labels: np.ndarray
    n_communities: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1:
            raise ValueError("labels must be a flat vector")
        if self.n_communities < 1:
            raise ValueError("need at least one community")
        if lab.size and (lab.min() < 0 or lab.max() >= self.n_communities):
            raise ValueError(f"labels must lie in [0, {self.n_communities})")
        object.__setattr__(self, "labels", lab.astype(np.int64))

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @cached_property
    def onehot(self) -> np.ndarray:
        u = np.zeros((self.n, self.n_communities))
        u[np.arange(self.n), self.labels] = 1.0
        return u

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_communities)


@dataclass(frozen=True)
class CoefficientSet:
    """Regression coefficients: one K-vector per covariate and side.

    Community-independent covariates keep their single value replicated
    across the K slots so every code path sees the same shapes.
    """

    intercept: float
    row: np.ndarray
    col: np.ndarray
    dyad_row: np.ndarray
    dyad_col: np.ndarray

    def __post_init__(self):
        for name in ("row", "col", "dyad_row", "dyad_col"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        ks = {a.shape[1] for a in (self.row, self.col, self.dyad_row, self.dyad_col)
              if a.size}
        if len(ks) > 1:
            raise ValueError(f"inconsistent community counts across blocks: {sorted(ks)}")
        if self.dyad_row.shape[0] != self.dyad_col.shape[0] and \
                self.dyad_row.size and self.dyad_col.size:
            raise ValueError("dyadic blocks need matching covariate counts on both sides")

    @classmethod
    def zeros(cls, n_row: int, n_col: int, n_dyad: int, n_communities: int) -> "CoefficientSet":
        k = n_communities
        return cls(0.0, np.zeros((n_row, k)), np.zeros((n_col, k)),
                   np.zeros((n_dyad, k)), np.zeros((n_dyad, k)))

    def validate_ties(self, covs: CovariateSet) -> None:
        """Check that independent-flagged covariates really carry tied values."""
        pairs = [(self.row, covs.row, "row"), (self.col, covs.col, "col"),
                 (self.dyad_row, covs.dyad, "dyad_row"), (self.dyad_col, covs.dyad, "dyad_col")]
        for block, cov_list, label in pairs:
            for l, cov in enumerate(cov_list):
                if not cov.community_dependent and block.shape[1] > 1:
                    if np.ptp(block[l]) != 0.0:
                        raise ValueError(
                            f"{label} coefficients for independent covariate "
                            f"{cov.name!r} must be tied across communities")


@dataclass(frozen=True)
class RandomEffects:
    """Additive sender/receiver effects and their shared 2x2 covariance."""

    sender: np.ndarray
    receiver: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.sender, dtype=float)
        b = np.asarray(self.receiver, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("sender/receiver effects must be equal-length vectors")
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T):
            raise ValueError("effect covariance must be symmetric 2x2")
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise ValueError("effect covariance must be positive definite")
        object.__setattr__(self, "sender", a)
        object.__setattr__(self, "receiver", b)
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class LatentState:
    """Latent edge propensities and the reciprocity correlation.

    propensity[i, j] is the utility of the i -> j edge; the diagonal is
    structurally absent and kept at zero.  reciprocity is the correlation
    between the (i, j) and (j, i) errors, strictly inside (-1, 1).
    """

    propensity: np.ndarray
    reciprocity: float

    def __post_init__(self):
        z = np.asarray(self.propensity, dtype=float)
        if z.ndim != 2 or z.shape[0] != z.shape[1]:
            raise ValueError("propensity matrix must be square")
        if not -1.0 < self.reciprocity < 1.0:
            raise ValueError(f"reciprocity must be inside (-1, 1), got {self.reciprocity}")
        object.__setattr__(self, "propensity", z)


@dataclass(frozen=True)
class ModelState:
    """One full parameter configuration of the model."""

    coeffs: CoefficientSet
    community: CommunityAssignment
    affinity: np.ndarray
    effects: RandomEffects
    latent: LatentState
    censor_offsets: np.ndarray | None = None
    censor_offset_var: float = 1.0

    def __post_init__(self):
        aff = np.asarray(self.affinity, dtype=float)
        k = self.community.n_communities
        if aff.shape != (k, k):
            raise ValueError(f"affinity must be {k}x{k}, got {aff.shape}")
        object.__setattr__(self, "affinity", aff)
        if self.censor_offsets is not None:
            h = np.asarray(self.censor_offsets, dtype=float)
            if h.shape != (self.community.n,):
                raise ValueError("censor offsets must be one per node")
            if np.any(h > 0):
                raise ValueError("censor offsets must be non-positive")
            object.__setattr__(self, "censor_offsets", h)
        if self.censor_offset_var <= 0:
            raise ValueError("censor offset variance must be positive")

    @property
    def n(self) -> int:
        return self.community.n


def _check_dims(state: ModelState, covs: CovariateSet) -> None:
    n = state.n
    if covs.n != n:
        raise ValueError(f"covariates are for {covs.n} nodes, state has {n}")
    if state.effects.sender.shape[0] != n:
        raise ValueError("random effects length does not match node count")
    if state.latent.propensity.shape[0] != n:
        raise ValueError("propensity matrix does not match node count")
    if state.coeffs.row.shape[0] != len(covs.row):
        raise ValueError(f"{state.coeffs.row.shape[0]} row coefficient blocks for "
                         f"{len(covs.row)} row covariates")
    if state.coeffs.col.shape[0] != len(covs.col):
        raise ValueError(f"{state.coeffs.col.shape[0]} col coefficient blocks for "
                         f"{len(covs.col)} col covariates")
    if state.coeffs.dyad_row.shape[0] != len(covs.dyad):
        raise ValueError("dyadic coefficient blocks do not match dyadic covariates")


def node_coefficients(block: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-node effective coefficients: entry (i, l) = block[l, labels[i]]."""
    if block.size == 0:
        return np.zeros((labels.shape[0], block.shape[0]))
    return block[:, labels].T


def mean_matrix(state: ModelState, covs: CovariateSet, censored: bool = False) -> np.ndarray:
    """Latent propensity means for every ordered pair.

    Entry (i, j) combines the intercept, sender i's covariates scaled by
    coefficients for i's community, receiver j's covariates scaled by
    coefficients for j's community, dyadic covariates scaled on both
    sides, the community affinity, additive effects, and (in censored
    mode) sender i's censoring offset.  The diagonal is computed but
    carries no meaning downstream.
    """
    _check_dims(state, covs)
    n = state.n
    labels = state.community.labels
    co = state.coeffs

    row_part = np.full(n, co.intercept) + state.effects.sender
    for l, cov in enumerate(covs.row):
        row_part = row_part + cov.values * co.row[l, labels]
    if censored:
        if state.censor_offsets is None:
            raise ValueError("censored mode requires censor offsets in the state")
        row_part = row_part + state.censor_offsets

    col_part = state.effects.receiver.copy()
    for l, cov in enumerate(covs.col):
        col_part = col_part + cov.values * co.col[l, labels]

    m = row_part[:, None] + col_part[None, :]
    m += state.affinity[np.ix_(labels, labels)]
    for l, cov in enumerate(covs.dyad):
        m += (co.dyad_row[l, labels][:, None] * cov.values) * co.dyad_col[l, labels][None, :]
    return m


def decorrelation_constants(rho: float) -> tuple[float, float]:
    """Constants (s, t) whitening a correlated reciprocal pair.

    For E with unit-variance entries and corr(e_ij, e_ji) = rho, the map
    sE + tE^T has iid standard-normal off-diagonal entries.
    """
    if not -1.0 < rho < 1.0:
        raise ValueError(f"correlation must be inside (-1, 1), got {rho}")
    p, q = (1.0 + rho) ** -0.5, (1.0 - rho) ** -0.5
    return (p + q) / 2.0, (p - q) / 2.0


def decorrelate(m: np.ndarray, rho: float) -> np.ndarray:
    """Apply the whitening map s*M + t*M^T."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("decorrelation needs a square matrix")
    s, t = decorrelation_constants(rho)
    return s * m + t * m.T


def _kron_rows_tile(g: np.ndarray, n: int) -> np.ndarray:
    """kron(1_n, G): vec row j*n+i maps to G row i."""
    return np.tile(g, (n, 1))


def _kron_rows_repeat(g: np.ndarray, n: int) -> np.ndarray:
    """kron(G, 1_n): vec row j*n+i maps to G row j."""
    return np.repeat(g, n, axis=0)


def design_rowcol(covs: CovariateSet, community: CommunityAssignment, rho: float,
                  role: str, index: int) -> np.ndarray:
    """Decorrelated design for one sender- or receiver-side covariate.

    Returns H of shape (n^2, K) with H @ b = vec(decorrelate(C)) where C
    is the covariate's mean contribution under per-community coefficients
    b.  Diagonal rows are zeroed.
    """
    if role not in ("row", "col"):
        raise ValueError(f"role must be 'row' or 'col', got {role!r}")
    cov_list = covs.row if role == "row" else covs.col
    if not 0 <= index < len(cov_list):
        raise ValueError(f"no {role} covariate at index {index}")
    n = covs.n
    s, t = decorrelation_constants(rho)
    g = cov_list[index].values[:, None] * community.onehot
    if role == "row":
        h = s * _kron_rows_tile(g, n) + t * _kron_rows_repeat(g, n)
    else:
        h = s * _kron_rows_repeat(g, n) + t * _kron_rows_tile(g, n)
    return _offdiag_zeroed(h, n)


def _pair_swap(n: int) -> np.ndarray:
    """Vec-index permutation sending coordinate (i, j) to (j, i)."""
    r = np.arange(n * n)
    return (r % n) * n + r // n


def design_affinity(community: CommunityAssignment, rho: float) -> np.ndarray:
    """Decorrelated design for the K x K community-affinity block.

    H has shape (n^2, K^2), columns matching the column-major vec of the
    affinity matrix: the coordinate (i, j) row carries s at the sender
    community x receiver community slot and t at the mirrored slot, so
    H @ vec(A) = vec(decorrelate(affinity contribution)) holds for
    asymmetric A as well.  Diagonal rows zeroed.
    """
    u = community.onehot
    n = u.shape[0]
    s, t = decorrelation_constants(rho)
    base = np.kron(u, u)
    h = s * base + t * base[_pair_swap(n)]
    return _offdiag_zeroed(h, n)


def design_dyadic(covs: CovariateSet, community: CommunityAssignment,
                  other_coeffs: np.ndarray, rho: float, side: str,
                  index: int) -> np.ndarray:
    """Decorrelated design for one side of a dyadic covariate.

    The dyadic contribution scales entry (i, j) of the covariate by a
    sender-side coefficient for i's community and a receiver-side one for
    j's community.  Holding the opposing side fixed (other_coeffs) makes
    the free side linear, and the design follows from the covariate's SVD
    one rank at a time; a symmetric outer product collapses to a single
    closed-form term.  side='dr' frees the sender side, 'dc' the receiver
    side.  Shape (n^2, K), diagonal rows zeroed.
    """
    if side not in ("dr", "dc"):
        raise ValueError(f"side must be 'dr' or 'dc', got {side!r}")
    if not 0 <= index < len(covs.dyad):
        raise ValueError(f"no dyadic covariate at index {index}")
    n = covs.n
    u = community.onehot
    s, t = decorrelation_constants(rho)
    other_per_node = np.asarray(other_coeffs, dtype=float)[community.labels]
    cov = covs.dyad[index]

    def one_term(left_vec, right_vec):
        # contribution (free-side coeffs b): outer(free, fixed) with
        # free = Diag(left_vec) U b; accumulate s*vec(.) + t*vec(.^T)
        free = left_vec[:, None] * u
        fixed = (other_per_node * right_vec)[:, None]
        if side == "dc":
            return s * np.kron(free, fixed) + t * np.kron(fixed, free)
        return s * np.kron(fixed, free) + t * np.kron(free, fixed)

    x = cov.outer_vector
    if x is not None:
        h = one_term(x, x)
    else:
        sig, q, w = cov.factors
        h = np.zeros((n * n, u.shape[1]))
        for r in range(sig.size):
            if side == "dc":
                h += one_term(w[:, r], sig[r] * q[:, r])
            else:
                h += one_term(sig[r] * q[:, r], w[:, r])
    return _offdiag_zeroed(h, n)


def design_censoring(y: Sociomatrix, rho: float) -> np.ndarray:
    """Decorrelated design for per-sender censoring offsets.

    One column per censored node (in node order); column for node i has s
    on the off-diagonal coordinates of row i of the vectorized matrix and
    t on those of column i.  Offsets of uncensored nodes are pinned to
    zero and get no column.
    """
    if y.censor_cap is None:
        raise ValueError("network carries no censoring information")
    n = y.n
    s, t = decorrelation_constants(rho)
    idx = np.flatnonzero(y.censored)
    h = np.zeros((n * n, idx.size))
    cols = np.arange(n)
    for c, i in enumerate(idx):
        h[cols * n + i, c] = s       # row i of the matrix
        h[i * n + cols, c] += t      # column i of the matrix
    return _offdiag_zeroed(h, n)
