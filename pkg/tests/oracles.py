"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way (scalar loops, dense
unit-vector design construction, brute-force enumeration) so that the
vectorized package code is checked against a genuinely different route.
"""

import numpy as np


def naive_mean(state, covs, censored=False):
    """Entry-by-entry mean matrix via scalar loops."""
    n = state.n
    lab = state.community.labels
    co = state.coeffs
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            v = co.intercept
            for l, cov in enumerate(covs.row):
                v += cov.values[i] * co.row[l, lab[i]]
            for l, cov in enumerate(covs.col):
                v += cov.values[j] * co.col[l, lab[j]]
            for l, cov in enumerate(covs.dyad):
                v += co.dyad_row[l, lab[i]] * cov.values[i, j] * co.dyad_col[l, lab[j]]
            v += state.affinity[lab[i], lab[j]]
            v += state.effects.sender[i] + state.effects.receiver[j]
            if censored:
                v += state.censor_offsets[i]
            m[i, j] = v
    return m


def naive_decorrelate(m, rho):
    s = ((1 + rho) ** -0.5 + (1 - rho) ** -0.5) / 2
    t = ((1 + rho) ** -0.5 - (1 - rho) ** -0.5) / 2
    n = m.shape[0]
    out = np.zeros_like(m, dtype=float)
    for i in range(n):
        for j in range(n):
            out[i, j] = s * m[i, j] + t * m[j, i]
    return out


def vec_colmajor(m):
    n, p = m.shape
    v = np.zeros(n * p)
    for j in range(p):
        for i in range(n):
            v[j * n + i] = m[i, j]
    return v


def dense_design(contribution, dim, n, rho, mask_diag=True):
    """Design by probing with unit vectors.

    contribution(theta) must return the n x n mean contribution for the
    coefficient vector theta; the result maps theta to the decorrelated,
    vectorized contribution with diagonal coordinates zeroed.
    """
    h = np.zeros((n * n, dim))
    for d in range(dim):
        e = np.zeros(dim)
        e[d] = 1.0
        col = vec_colmajor(naive_decorrelate(contribution(e), rho))
        h[:, d] = col
    if mask_diag:
        for i in range(n):
            h[i * n + i, :] = 0.0
    return h


def gls_posterior(h, z_vec, prior_mean, prior_cov):
    """Conjugate normal posterior for unit-noise regression z = H theta + e."""
    prior_prec = np.linalg.inv(prior_cov)
    post_cov = np.linalg.inv(h.T @ h + prior_prec)
    post_mean = post_cov @ (h.T @ z_vec + prior_prec @ prior_mean)
    return post_mean, post_cov


def orthant_prob_mc(m1, m2, rho, y1, y2, n_draws, rng):
    """Monte Carlo orthant mass for one pair."""
    cov = np.array([[1.0, rho], [rho, 1.0]])
    draws = rng.multivariate_normal([m1, m2], cov, size=n_draws)
    hit = ((draws[:, 0] > 0) == bool(y1)) & ((draws[:, 1] > 0) == bool(y2))
    return hit.mean()


def contingency_ari(a, b):
    """Adjusted Rand index from the contingency table (direct formula)."""
    a = np.asarray(a)
    b = np.asarray(b)
    ua, ub = np.unique(a), np.unique(b)
    table = np.array([[(np.logical_and(a == x, b == y)).sum() for y in ub] for x in ua])

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(a.size)
    expected = sum_rows * sum_cols / total
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def continuous_ols_pieces(x, z, labels, k):
    """Least-squares fits for the single-predictor continuous model.

    Each of the n^2 responses z[i, j] (self-pairs included) is regressed
    on the sender value x[i], once with a separate slope per sender
    community and once pooled.  Returns the per-community slopes, the
    community sizes, the within-community and overall spread of the
    predictor, and the pooled slope.
    """
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    n = x.size
    row_sums = z.sum(axis=1)
    per = np.empty(k)
    sizes = np.empty(k)
    spread = np.empty(k)
    for c in range(k):
        members = labels == c
        per[c] = (x[members] * row_sums[members]).sum() / (n * (x[members] ** 2).sum())
        sizes[c] = members.sum()
        spread[c] = (x[members] ** 2).sum() / members.sum()
    pooled = (x * row_sums).sum() / (n * (x ** 2).sum())
    overall = (x ** 2).sum() / n
    return per, sizes, spread, overall, pooled


def batch_means_se(x, n_batches=50):
    """Standard error of the mean of a correlated series via batch means."""
    x = np.asarray(x, float)
    size = x.size // n_batches
    if size < 1:
        raise ValueError("series too short for that many batches")
    trimmed = x[: size * n_batches].reshape(n_batches, size)
    means = trimmed.mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)


def random_problem(rng, n=6, k=2, p_row=1, p_col=1, p_dyad=0, rho=None,
                   censored=False, cap=None):
    """Random small ModelState + CovariateSet + Sociomatrix for oracle tests."""
    from commnet.model import (CoefficientSet, CommunityAssignment, CovariateSet,
                               DyadCovariate, LatentState, ModelState, NodeCovariate,
                               RandomEffects, Sociomatrix, ABSENT)

    labels = rng.integers(0, k, size=n)
    m = min(n, k)
    labels[:m] = np.arange(m)  # fill communities when there are enough nodes
    rng.shuffle(labels)
    comm = CommunityAssignment(labels, k)
    row = tuple(NodeCovariate(f"r{l}", rng.standard_normal(n)) for l in range(p_row))
    col = tuple(NodeCovariate(f"c{l}", rng.standard_normal(n)) for l in range(p_col))
    dyads = []
    for l in range(p_dyad):
        if l % 2 == 0:
            x = rng.standard_normal(n)
            dyads.append(DyadCovariate(f"d{l}", np.outer(x, x)))
        else:
            dyads.append(DyadCovariate(f"d{l}", rng.standard_normal((n, n))))
    covs = CovariateSet(n=n, row=row, col=col, dyad=tuple(dyads))
    coeffs = CoefficientSet(
        rng.standard_normal() * 0.5,
        rng.standard_normal((p_row, k)),
        rng.standard_normal((p_col, k)),
        rng.standard_normal((p_dyad, k)),
        rng.standard_normal((p_dyad, k)),
    )
    if rho is None:
        rho = float(rng.uniform(-0.9, 0.9))
    base = rng.standard_normal((2, 2)) * 0.3
    cov_ab = base @ base.T + 0.5 * np.eye(2)
    effects = RandomEffects(rng.standard_normal(n) * 0.5, rng.standard_normal(n) * 0.5,
                            cov_ab)
    z = rng.standard_normal((n, n))
    np.fill_diagonal(z, 0.0)
    y = np.where(z > 0, 1, 0).astype(np.int8)
    np.fill_diagonal(y, ABSENT)
    offsets = None
    if censored:
        if cap is not None:
            # Cut random excess edges down to the cap; the cut senders sit
            # exactly at the cap and are flagged by the default rule.
            for i in range(n):
                recipients = np.flatnonzero(y[i] == 1)
                extra = recipients.shape[0] - cap
                if extra > 0:
                    drop = rng.choice(recipients, size=extra, replace=False)
                    y[i, drop] = 0
                    z[i, drop] = -np.abs(z[i, drop])
        soc = Sociomatrix(y, censor_cap=cap)
        offsets = np.zeros(n)
        if cap is not None:
            flagged = np.flatnonzero(soc.censored)
            offsets[flagged] = -np.abs(rng.standard_normal(flagged.shape[0]))
    else:
        soc = Sociomatrix(y)
    state = ModelState(coeffs, comm, rng.standard_normal((k, k)), effects,
                       LatentState(z, rho), censor_offsets=offsets)
    return state, covs, soc
