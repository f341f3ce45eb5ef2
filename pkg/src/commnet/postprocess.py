"""Community-level summaries from label-ambiguous chain output.

The sampler stores coefficient draws as per-node products, which are
meaningful even when community labels drift or swap across iterations.
The functions here recover community-level statements from those
products: nodes are clustered on their posterior mean products, each
recovered cluster is summarized by averaging its members' credible
interval endpoints, and community-dependent estimates can be collapsed
into the single pooled coefficient they imply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from commnet.initializers import kmeans
from commnet.sampler import ChainOutput

_PRODUCT_FIELDS = (
    ("sender", "sender_coefficients"),
    ("receiver", "receiver_coefficients"),
    ("dyad_sender", "dyad_sender_coefficients"),
    ("dyad_receiver", "dyad_receiver_coefficients"),
)


@dataclass(frozen=True)
class CoefficientSummary:
    """Per-node and per-community credible intervals for the coefficient
    products, plus the cluster map that ties them together.

    Columns of every table follow ``slots``: one entry per stored
    coefficient column, tagged with the role it came from ("sender",
    "receiver", "dyad_sender", or "dyad_receiver") and its index within
    that role.
    """

    slots: tuple[tuple[str, int], ...]
    cluster_map: np.ndarray
    sizes: np.ndarray
    node_mean: np.ndarray
    node_lower: np.ndarray
    node_upper: np.ndarray
    community_mean: np.ndarray
    community_lower: np.ndarray
    community_upper: np.ndarray
    level: float
    pooled_draws: bool

    def __post_init__(self):
        tables = (
            (self.node_lower, self.node_mean, self.node_upper),
            (self.community_lower, self.community_mean, self.community_upper),
        )
        for lower, mean, upper in tables:
            slack = 1e-12 * (1.0 + np.abs(mean))
            if np.any(lower > mean + slack) or np.any(mean > upper + slack):
                raise ValueError("interval endpoints must bracket the mean")

    @property
    def n_communities(self) -> int:
        return self.community_mean.shape[0]


def _stacked_products(chain: ChainOutput) -> tuple[np.ndarray, tuple]:
    """All stored coefficient product draws as one (draws, nodes,
    columns) array, with a slot descriptor per column."""
    blocks = []
    slots = []
    for role, field in _PRODUCT_FIELDS:
        arr = np.asarray(getattr(chain, field), dtype=float)
        blocks.append(arr)
        slots.extend((role, j) for j in range(arr.shape[2]))
    stacked = np.concatenate(blocks, axis=2)
    if stacked.shape[2] == 0:
        raise ValueError("chain stores no coefficient products to summarize")
    return stacked, tuple(slots)


def resolve_labels(
    chain: ChainOutput,
    n_communities: int,
    *,
    level: float = 0.95,
    pooled_draws: bool = False,
    seed=0,
) -> CoefficientSummary:
    """Cluster nodes on their posterior mean products and summarize the
    coefficients of each recovered community.

    Because products are attached to nodes rather than to community
    labels, relabeling the communities inside the chain leaves this
    summary unchanged.  The community interval for a coefficient is the
    average of its members' per-node interval endpoints; passing
    ``pooled_draws`` instead pools the members' draws before taking
    quantiles, which typically gives wider intervals when members
    disagree.
    """
    draws, slots = _stacked_products(chain)
    n_draws, n, _ = draws.shape
    if n_draws == 0:
        raise ValueError("chain has no stored draws")
    if not 1 <= n_communities <= n:
        raise ValueError(
            f"need 1 <= communities <= {n} nodes, got {n_communities}"
        )
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie strictly inside (0, 1), got {level}")

    node_mean = draws.mean(axis=0)
    flat = node_mean.reshape(n, -1)
    clusters = kmeans(flat, n_communities, seed).labels
    sizes = np.bincount(clusters, minlength=n_communities)

    lo_q = (1.0 - level) / 2.0
    hi_q = 1.0 - lo_q
    node_lower = np.quantile(draws, lo_q, axis=0, method="linear")
    node_upper = np.quantile(draws, hi_q, axis=0, method="linear")

    q = draws.shape[2]
    community_mean = np.empty((n_communities, q))
    community_lower = np.empty((n_communities, q))
    community_upper = np.empty((n_communities, q))
    for c in range(n_communities):
        members = clusters == c
        community_mean[c] = node_mean[members].mean(axis=0)
        if pooled_draws:
            pool = draws[:, members, :].reshape(-1, q)
            community_lower[c] = np.quantile(pool, lo_q, axis=0, method="linear")
            community_upper[c] = np.quantile(pool, hi_q, axis=0, method="linear")
        else:
            community_lower[c] = node_lower[members].mean(axis=0)
            community_upper[c] = node_upper[members].mean(axis=0)

    return CoefficientSummary(
        slots=slots,
        cluster_map=clusters,
        sizes=sizes,
        node_mean=node_mean,
        node_lower=node_lower,
        node_upper=node_upper,
        community_mean=community_mean,
        community_lower=community_lower,
        community_upper=community_upper,
        level=level,
        pooled_draws=pooled_draws,
    )


def community_weighted_average(
    estimates, sizes, community_variability, overall_variability
) -> float:
    """Collapse community-dependent coefficients into the pooled value.

    Given per-community estimates b_k, community sizes |c_k|, the
    within-community predictor variability S_k^2, and the overall
    predictor variability S^2, returns

        n * sum_k S_k^2 * b_k * |c_k| / (n^2 * S^2)

    with n the total node count.  When the variabilities come from the
    same predictor the result equals the coefficient a single regression
    with one shared slope would have estimated on the same data.
    """
    b = np.asarray(estimates, dtype=float)
    c = np.asarray(sizes, dtype=float)
    s2 = np.asarray(community_variability, dtype=float)
    if b.ndim != 1 or b.shape != c.shape or b.shape != s2.shape:
        raise ValueError(
            "estimates, sizes, and variabilities must be vectors of equal length"
        )
    if b.size == 0:
        raise ValueError("need at least one community")
    if np.any(c <= 0):
        raise ValueError("community sizes must be positive")
    if np.any(s2 < 0):
        raise ValueError("community variability cannot be negative")
    overall = float(overall_variability)
    if overall <= 0:
        raise ValueError("overall predictor variability must be positive")
    n = c.sum()
    return float(n * np.sum(s2 * b * c) / (n * n * overall))
