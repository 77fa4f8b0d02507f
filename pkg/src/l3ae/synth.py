"""Clustered synthetic interactions and item embeddings.

Users and items belong to latent clusters. Each user draws most interactions
from their own cluster, picking items by a power-law popularity, so every
cluster has a few head items and a long tail. Item embeddings are the cluster
centroid plus isotropic noise, which gives the embedding matrix an effective
rank equal to the number of clusters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datasets import write_embeddings, write_interactions, write_tags
from .errors import ParameterError


@dataclass(frozen=True)
class SynthConfig:
    users: int = 2000
    items: int = 500
    clusters: int = 8
    dim: int = 64
    noise: float = 0.05
    min_activity: int = 12
    max_activity: int = 30
    in_cluster: float = 0.6
    popularity_exponent: float = 1.0
    low_rating_rate: float = 0.1
    tags_per_item: int = 3
    vocabulary: int = 40
    seed: int = 0

    def validate(self) -> None:
        if self.users < 1 or self.items < 1:
            raise ParameterError("users and items must be positive")
        if not 1 <= self.clusters <= self.items:
            raise ParameterError("clusters must lie in [1, items]")
        if self.dim < 1:
            raise ParameterError("dim must be positive")
        if not 1 <= self.min_activity <= self.max_activity:
            raise ParameterError("need 1 <= min_activity <= max_activity")
        if self.max_activity > self.items:
            raise ParameterError("max_activity cannot exceed the item count")
        if not 0.0 <= self.in_cluster <= 1.0 or not 0.0 <= self.low_rating_rate < 1.0:
            raise ParameterError("probabilities must lie in [0, 1]")
        if self.noise < 0:
            raise ParameterError("noise must be non-negative")


@dataclass
class SynthData:
    config: SynthConfig
    records: list[tuple[str, str, float, int]]
    user_ids: list[str]
    item_ids: list[str]
    user_cluster: np.ndarray
    item_cluster: np.ndarray
    embeddings: np.ndarray  # d x n
    tags: dict[str, list[str]]

    def stats(self) -> dict:
        kept = sum(1 for r in self.records if r[2] > 3)
        return {"users": len(self.user_ids), "items": len(self.item_ids),
                "records": len(self.records), "records_above_3": kept,
                "density": len(self.records) / (len(self.user_ids) * len(self.item_ids))}


def generate(cfg: SynthConfig) -> SynthData:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    width_u, width_i = len(str(cfg.users - 1)), len(str(cfg.items - 1))
    user_ids = [f"u{j:0{width_u}d}" for j in range(cfg.users)]
    item_ids = [f"i{j:0{width_i}d}" for j in range(cfg.items)]

    item_cluster = rng.permutation(np.arange(cfg.items) % cfg.clusters)
    user_cluster = rng.integers(0, cfg.clusters, size=cfg.users)
    members = [np.flatnonzero(item_cluster == c) for c in range(cfg.clusters)]
    weights = []
    for idx in members:
        ranks = rng.permutation(idx.size) + 1
        w = ranks.astype(np.float64) ** -cfg.popularity_exponent
        weights.append(w / w.sum())
    global_w = np.ones(cfg.items) / cfg.items

    records = []
    ts = 0
    for u in range(cfg.users):
        c = user_cluster[u]
        n_act = int(rng.integers(cfg.min_activity, cfg.max_activity + 1))
        n_in = int(rng.binomial(n_act, cfg.in_cluster))
        n_in = min(n_in, members[c].size)
        chosen = set(rng.choice(members[c], size=n_in, replace=False, p=weights[c]).tolist())
        while len(chosen) < n_act:
            chosen.add(int(rng.choice(cfg.items, p=global_w)))
        for i in sorted(chosen):
            if rng.random() < cfg.low_rating_rate:
                rating = float(rng.integers(1, 4))
            else:
                rating = float(rng.integers(4, 6))
            records.append((user_ids[u], item_ids[i], rating, ts))
            ts += 1

    centroids = rng.standard_normal((cfg.dim, cfg.clusters))
    emb = centroids[:, item_cluster] + cfg.noise * rng.standard_normal((cfg.dim, cfg.items))

    vocab = [f"t{j:03d}" for j in range(cfg.vocabulary)]
    tags = {}
    for j, item in enumerate(item_ids):
        own = f"cluster{item_cluster[j]}"
        extra = rng.choice(vocab, size=max(cfg.tags_per_item - 1, 0), replace=False).tolist()
        tags[item] = [own] + sorted(extra)
    return SynthData(cfg, records, user_ids, item_ids, user_cluster, item_cluster, emb, tags)


def write(data: SynthData, out_dir) -> dict[str, Path]:
    """Write interactions, embeddings (f64), tags and the ground-truth file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": out / "interactions.tsv",
        "embeddings": out / "embeddings.bin",
        "embeddings_header": out / "embeddings.bin.json",
        "tags": out / "tags.tsv",
        "truth": out / "truth.json",
    }
    write_interactions(paths["interactions"], data.records)
    write_embeddings(data.embeddings, data.item_ids, paths["embeddings"],
                     paths["embeddings_header"], dtype="f64")
    write_tags(paths["tags"], data.tags)
    truth = {
        "config": asdict(data.config),
        "stats": data.stats(),
        "user_cluster": dict(zip(data.user_ids, data.user_cluster.tolist())),
        "item_cluster": dict(zip(data.item_ids, data.item_cluster.tolist())),
        "latent_rank": data.config.clusters,
    }
    paths["truth"].write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths
