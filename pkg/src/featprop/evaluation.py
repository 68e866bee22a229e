"""Downstream evaluation of imputed features.

The probe recommender is a content-only item kNN: for each modality the item
cosine-similarity matrix is pruned to every candidate's ``k_items`` nearest
neighbours, a user's score for item ``i`` is the mean pruned similarity
between ``i`` and the user's training items, and modalities are averaged.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from featprop.errors import DataError, FeatPropError, ParameterError, ShapeError, SweepCellError
from featprop.features import (
    FeatureBundle,
    MissingMask,
    ModalityFeatureSet,
    as_bundle,
    blank_missing,
    make_rng,
    sample_missing,
)
from featprop.graph import InteractionMatrix, build_item_graph
from featprop.impute import Fallback, Method, PropagationConfig, impute

log = logging.getLogger(__name__)

DEFAULT_RATES = tuple(round(0.1 * i, 1) for i in range(1, 10))
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
ALL_METHODS = tuple(Method)

# sub-stream tags mixed into cell seeds
_RANDOM_STREAM = 1


@dataclass(frozen=True)
class InteractionSplit:
    train: InteractionMatrix
    valid: InteractionMatrix
    test: InteractionMatrix


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_interactions(r: InteractionMatrix, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> InteractionSplit:
    """Per-user random train/valid/test partition.

    Users with fewer than three interactions keep everything in train. Other
    users get ``round(ratio * count)`` items in valid and test (at least one
    each) and the rest in train.
    """
    ratios = tuple(float(x) for x in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    rng = make_rng(seed)
    parts = ([], [], [])
    for u in range(r.num_users):
        items = r.user_items(u)
        count = items.shape[0]
        if count < 3:
            parts[0].append((u, items))
            continue
        perm = items[rng.permutation(count)]
        n_test = max(1, _round_half_up(ratios[2] * count))
        n_valid = max(1, _round_half_up(ratios[1] * count))
        while n_test + n_valid > count - 1:
            if n_valid >= n_test:
                n_valid -= 1
            else:
                n_test -= 1
        parts[2].append((u, perm[:n_test]))
        parts[1].append((u, perm[n_test:n_test + n_valid]))
        parts[0].append((u, perm[n_test + n_valid:]))

    def build(chunks):
        if not chunks:
            return InteractionMatrix.from_pairs([], [], r.num_users, r.num_items)
        users = np.concatenate([np.full(len(i), u, dtype=np.int64) for u, i in chunks])
        items = np.concatenate([i for _, i in chunks])
        return InteractionMatrix.from_pairs(users, items, r.num_users, r.num_items)

    return InteractionSplit(*(build(p) for p in parts))


def _unit_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    out = np.zeros_like(x)
    nz = norms > 0
    out[nz] = x[nz] / norms[nz, None]
    return out


def knn_similarity(features: np.ndarray, k_items: int, chunk: int = 1024) -> sp.csr_matrix:
    """Cosine similarities pruned to each row's ``k_items`` nearest neighbours.

    Self-similarity is excluded. Every neighbour whose similarity equals the
    k-th largest value is kept, so pruning never depends on item order.
    Zero vectors have similarity 0 with everything.
    """
    unit = _unit_rows(features)
    n = unit.shape[0]
    k = min(k_items, n - 1)
    blocks = []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sims = unit[start:stop] @ unit.T
        sims[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        if k <= 0:
            sims[:] = 0.0
        else:
            kth = np.partition(sims, n - k, axis=1)[:, n - k]
            sims[sims < kth[:, None]] = 0.0
            sims[np.isneginf(sims)] = 0.0
        blocks.append(sp.csr_matrix(sims))
    if not blocks:
        return sp.csr_matrix((0, 0))
    return sp.vstack(blocks, format="csr")


def score_matrix(train: InteractionMatrix, bundle, k_items: int = 50) -> sp.csr_matrix:
    """Sparse ``users x items`` content scores (before excluding train items)."""
    bundle = as_bundle(bundle)
    if bundle.num_items != train.num_items:
        raise ShapeError(f"features cover {bundle.num_items} items, interactions {train.num_items}")
    sim = None
    for s in bundle:
        w = knn_similarity(s.data, k_items)
        sim = w if sim is None else sim + w
    sim = sim / len(bundle)
    counts = np.diff(train.indptr).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    profile = sp.diags(inv) @ train.to_csr(np.float64)
    return (profile @ sim.T).tocsr()


def rank_items(scores: np.ndarray, exclude, top_k: int) -> np.ndarray:
    """Indices of the ``top_k`` best-scoring items not in ``exclude``.

    Equal scores are ordered by ascending item index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    eligible = np.ones(scores.shape[0], dtype=bool)
    eligible[np.asarray(exclude, dtype=np.int64)] = False
    cand = np.flatnonzero(eligible)
    order = np.argsort(-scores[cand], kind="stable")
    return cand[order[:top_k]]


def knn_recommend(train: InteractionMatrix, bundle, k_items: int = 50, top_k: int = 20,
                  users: Sequence[int] | None = None) -> list[np.ndarray]:
    """Top-``top_k`` item lists for every user (or the given ``users``).

    Users with an empty training profile get an empty list.
    """
    if top_k < 1 or k_items < 1:
        raise ParameterError("top_k and k_items must be >= 1")
    scores = score_matrix(train, bundle, k_items)
    users = np.arange(train.num_users) if users is None else np.asarray(users, dtype=np.int64)
    out = []
    for start in range(0, users.size, 512):
        block_users = users[start:start + 512]
        block = scores[block_users].toarray()
        for row, u in zip(block, block_users):
            hist = train.user_items(u)
            if hist.size == 0:
                out.append(np.zeros(0, dtype=np.int64))
            else:
                out.append(rank_items(row, hist, top_k))
    return out


def recall_at_k(ranked: Sequence[np.ndarray], test: InteractionMatrix, k: int = 20) -> float:
    """Mean over users with test items of ``|top-k & test(u)| / |test(u)|``."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    if len(ranked) != test.num_users:
        raise ShapeError(f"{len(ranked)} ranked lists for {test.num_users} users")
    total, users = 0.0, 0
    for u in range(test.num_users):
        truth = test.user_items(u)
        if truth.size == 0:
            continue
        hits = np.intersect1d(np.asarray(ranked[u])[:k], truth).size
        total += hits / truth.size
        users += 1
    if users == 0:
        raise DataError("no user has test interactions")
    return total / users


def reconstruction_cosine(imputed: ModalityFeatureSet, truth: ModalityFeatureSet,
                          mask: MissingMask) -> float:
    """Mean cosine between imputed and true vectors of the missing items.

    A zero vector on either side contributes cosine 0.
    """
    if imputed.data.shape != truth.data.shape:
        raise ShapeError(f"shape mismatch {imputed.data.shape} vs {truth.data.shape}")
    mask.check(truth.num_items)
    if mask.num_missing == 0:
        raise DataError("reconstruction cosine needs at least one missing item")
    a = _unit_rows(imputed.data[mask.missing])
    b = _unit_rows(truth.data[mask.missing])
    cos = np.clip(np.sum(a * b, axis=1), -1.0, 1.0)
    return float(cos.mean())


@dataclass
class MetricReport:
    method: str
    missing_rate: float
    seed: int
    k: int
    recall_at_k: float
    cosine: dict
    runtime_ms: float

    def __post_init__(self):
        if not 0.0 <= self.recall_at_k <= 1.0:
            raise ValueError(f"recall out of range: {self.recall_at_k}")
        for m, c in self.cosine.items():
            if not -1.0 <= c <= 1.0:
                raise ValueError(f"cosine for {m} out of range: {c}")


@dataclass
class SweepConfig:
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    k: int = 20
    k_items: int = 50
    split_ratios: tuple = (0.8, 0.1, 0.1)
    split_seed: int = 0
    random_low: float = 0.0
    random_high: float = 1.0
    fallback: str = "none"
    jobs: int = 1

    def to_dict(self):
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d


@dataclass
class SweepReport:
    modalities: tuple
    rows: list
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class Dataset:
    interactions: InteractionMatrix
    features: FeatureBundle


def _rate_key(rate: float) -> int:
    return int(round(rate * 1_000_000))


def cell_random_seed(seed: int, rate: float) -> int:
    """Seed of the Random baseline's stream for one (rate, seed) cell."""
    return int(make_rng(seed, _rate_key(rate), _RANDOM_STREAM).integers(2**63))


def evaluate_cell(method, rate: float, seed: int, data: Dataset, split: InteractionSplit,
                  graph, cfg: SweepConfig) -> MetricReport:
    t0 = time.perf_counter()
    truth = data.features
    mask = sample_missing(truth.num_items, rate, seed)
    blanked = truth.map(lambda s: blank_missing(s, mask))
    result = impute(
        method, blanked, mask, graph=graph, cfg=cfg.propagation,
        seed=cell_random_seed(seed, rate), low=cfg.random_low, high=cfg.random_high,
        fallback=Fallback(cfg.fallback),
    )
    ranked = knn_recommend(split.train, result.features, cfg.k_items, cfg.k)
    recall = recall_at_k(ranked, split.test, cfg.k)
    cosine = {
        s.modality: reconstruction_cosine(result.features[s.modality], s, mask) for s in truth
    }
    elapsed = (time.perf_counter() - t0) * 1000.0
    return MetricReport(str(Method(method)), rate, seed, cfg.k, recall, cosine, elapsed)


def run_sweep(data: Dataset, methods=ALL_METHODS, rates=DEFAULT_RATES, seeds=DEFAULT_SEEDS,
              cfg: SweepConfig | None = None) -> SweepReport:
    """Evaluate every (method, rate, seed) cell.

    Rows come out in method-major, then rate, then seed order whatever the
    number of jobs. The item graph is built once from the training split.
    """
    cfg = cfg or SweepConfig()
    methods = [Method(m) for m in methods]
    rates, seeds = list(rates), list(seeds)
    if not methods or not rates or not seeds:
        raise ParameterError("methods, rates and seeds must all be non-empty")
    split = split_interactions(data.interactions, cfg.split_ratios, cfg.split_seed)
    graph = None
    if Method.FEATPROP in methods:
        graph = build_item_graph(split.train, cfg.propagation.sparsification_n,
                                 cfg.propagation.exclude_diagonal)
    cells = [(m, r, s) for m in methods for r in rates for s in seeds]

    def run(cell):
        m, r, s = cell
        try:
            return evaluate_cell(m, r, s, data, split, graph, cfg)
        except (FeatPropError, ValueError, ArithmeticError) as exc:
            raise SweepCellError(str(m), r, s, exc) from exc

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(run, cells))
    else:
        rows = []
        for cell in cells:
            rows.append(run(cell))
            log.debug("cell %s rate=%s seed=%s done", *cell)
    config = cfg.to_dict()
    config.update(methods=[str(m) for m in methods], rates=rates, seeds=seeds)
    return SweepReport(data.features.modalities, rows, config)
