"""Clustered synthetic datasets where co-interacted items share content."""

from __future__ import annotations

import numpy as np

from featprop.errors import ParameterError
from featprop.features import FeatureBundle, ModalityFeatureSet, make_rng
from featprop.graph import InteractionMatrix

IN_CLUSTER_SHARE = 0.9


def default_modality_names(count: int) -> list:
    if count == 2:
        return ["visual", "textual"]
    return [f"m{i}" for i in range(count)]


def generate_synthetic(num_users: int, num_items: int, num_clusters: int,
                       interactions_per_user: int, dims=(32, 16), noise_sigma: float = 0.1,
                       seed: int = 0, modalities=None):
    """Generate ``(interactions, true_features)``.

    Items are dealt round-robin into ``num_clusters`` clusters (after a seeded
    shuffle) and every user is assigned a cluster uniformly. A user draws
    ``round(0.9 * interactions_per_user)`` distinct items from their own
    cluster and the rest from other clusters. Each modality gets a standard
    normal centroid per cluster; an item's vector is its centroid plus
    ``N(0, noise_sigma^2)`` noise, stored as float32.
    """
    dims = [int(d) for d in dims]
    modalities = list(modalities) if modalities else default_modality_names(len(dims))
    if num_users < 1 or num_items < 1:
        raise ParameterError("num_users and num_items must be >= 1")
    if not 1 <= num_clusters <= num_items:
        raise ParameterError("num_clusters must lie in [1, num_items]")
    if not 1 <= interactions_per_user <= num_items:
        raise ParameterError("interactions_per_user must lie in [1, num_items]")
    if not dims or min(dims) < 1 or len(modalities) != len(dims):
        raise ParameterError("need one positive dim per modality")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")

    rng = make_rng(seed)
    item_cluster = rng.permutation(np.arange(num_items) % num_clusters)
    user_cluster = rng.integers(0, num_clusters, size=num_users)
    members = [np.flatnonzero(item_cluster == c) for c in range(num_clusters)]

    users, items = [], []
    for u in range(num_users):
        own = members[user_cluster[u]]
        others = np.flatnonzero(item_cluster != user_cluster[u])
        n_in = min(int(np.floor(IN_CLUSTER_SHARE * interactions_per_user + 0.5)), own.size)
        n_out = min(interactions_per_user - n_in, others.size)
        chosen = np.concatenate([
            rng.choice(own, size=n_in, replace=False),
            rng.choice(others, size=n_out, replace=False),
        ])
        users.append(np.full(chosen.size, u))
        items.append(chosen)
    matrix = InteractionMatrix.from_pairs(
        np.concatenate(users), np.concatenate(items), num_users, num_items
    )

    sets = []
    for name, dim in zip(modalities, dims):
        centroids = rng.standard_normal((num_clusters, dim))
        noise = rng.standard_normal((num_items, dim)) * noise_sigma
        sets.append(ModalityFeatureSet(name, (centroids[item_cluster] + noise).astype(np.float32)))
    return matrix, FeatureBundle(sets)
