"""Synthetic interaction data with both co-occurrence and order structure.

Items are partitioned into clusters. Each user has a small set of
preferred clusters and moves in bursts: within a burst, consecutive items
tend to follow the cluster's fixed cyclic chain (a sequence-friendly
signal); burst switches land in another preferred cluster (predictable
only from the user's whole history, i.e. a graph-friendly signal, since
a short attention window rarely shows all preferred clusters).
"""

from __future__ import annotations

import numpy as np

from .data import SplitDataset


def generate_clustered_markov(n_users: int = 600, n_items: int = 240,
                              n_clusters: int = 12, n_preferred: int = 3,
                              min_len: int = 30, max_len: int = 50,
                              p_switch: float = 0.25, p_chain: float = 0.6,
                              seed: int = 0) -> SplitDataset:
    """Build a SplitDataset directly (sequences are already chronological).

    Each step: with ``p_switch`` jump to a random item of one of the user's
    preferred clusters (weighted toward the primary); otherwise stay in the
    current cluster and take the chain-next item with ``p_chain`` or a
    uniform cluster item.
    """
    if n_items % n_clusters != 0:
        raise ValueError("n_items must be divisible by n_clusters")
    if n_preferred > n_clusters:
        raise ValueError("n_preferred cannot exceed n_clusters")
    cluster_size = n_items // n_clusters
    pref_weights = np.array([0.5, 0.3, 0.2][:n_preferred], dtype=np.float64)
    pref_weights /= pref_weights.sum()
    rng = np.random.Generator(np.random.PCG64(seed))
    train, val, test = [], [], []
    for _ in range(n_users):
        preferred = rng.choice(n_clusters, size=n_preferred, replace=False)
        length = int(rng.integers(min_len, max_len + 1))
        g = int(preferred[0])
        base = g * cluster_size
        item = base + int(rng.integers(cluster_size))
        seq = [item]
        for _ in range(length - 1):
            if rng.random() < p_switch:
                g = int(preferred[rng.choice(n_preferred, p=pref_weights)])
                base = g * cluster_size
                item = base + int(rng.integers(cluster_size))
            elif rng.random() < p_chain:
                item = base + (item - base + 1) % cluster_size
            else:
                item = base + int(rng.integers(cluster_size))
            seq.append(item)
        train.append(seq[:-2])
        val.append(seq[-2])
        test.append(seq[-1])
    return SplitDataset(
        n_users=n_users, n_items=n_items, train=train, val=val, test=test,
        user_tokens=[f"u{i}" for i in range(n_users)],
        item_tokens=[f"i{i}" for i in range(n_items)])


def popularity_hr_at_k(dataset: SplitDataset, k: int = 10) -> float:
    """Hit rate of always recommending the k globally most frequent train items.

    Baseline for learnability checks; cluster/chain structure should beat it.
    """
    counts = np.zeros(dataset.n_items, dtype=np.int64)
    for seq in dataset.train:
        for item in seq:
            counts[item] += 1
    top = set(np.argsort(-counts, kind="stable")[:k].tolist())
    hits = sum(1 for t in dataset.test if t in top)
    return hits / dataset.n_users
