"""Imputation strategies for items missing all modal features.

``featprop`` diffuses known features over the normalized item-item graph and
clamps known rows after every step. The three baselines fill missing rows
with zeros, the known-row mean, or uniform noise.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from featprop.errors import DataError, ParameterError, ShapeError
from featprop.features import (
    FeatureBundle,
    MissingMask,
    as_bundle,
    check_known_finite,
    known_mean,
    make_rng,
)
from featprop.graph import (
    InteractionMatrix,
    ItemItemGraph,
    Stage,
    _require_stage,
    build_item_graph,
    unreachable_items,
)

log = logging.getLogger(__name__)


class Method(str, enum.Enum):
    ZEROS = "zeros"
    MEAN = "mean"
    RANDOM = "random"
    FEATPROP = "featprop"

    def __str__(self):
        return self.value


class Fallback(str, enum.Enum):
    NONE = "none"
    MEAN = "mean"


@dataclass(frozen=True)
class PropagationConfig:
    max_layers: int = 20
    tolerance: float = 1e-6
    sparsification_n: int = 20
    exclude_diagonal: bool = True

    def __post_init__(self):
        if int(self.max_layers) != self.max_layers or self.max_layers < 1:
            raise ParameterError(f"max_layers must be >= 1, got {self.max_layers!r}")
        if not self.tolerance >= 0:
            raise ParameterError(f"tolerance must be >= 0, got {self.tolerance!r}")
        if int(self.sparsification_n) != self.sparsification_n or self.sparsification_n < 1:
            raise ParameterError(f"sparsification_n must be >= 1, got {self.sparsification_n!r}")


@dataclass
class ImputationResult:
    features: FeatureBundle
    layers_run: dict = field(default_factory=dict)
    final_residual: dict = field(default_factory=dict)
    unreachable_items: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def _fill(bundle: FeatureBundle, mask: MissingMask, fill) -> FeatureBundle:
    """Copy each modality and write ``fill(modality_set, n_missing)`` into missing rows."""
    miss = mask.missing

    def one(s):
        data = np.array(s.data)
        if mask.num_missing:
            data[miss] = fill(s, mask.num_missing)
        return s.with_data(data)

    return bundle.map(one)


def _baseline_result(bundle, features):
    zeros = {m: 0 for m in bundle.modalities}
    return ImputationResult(features, dict(zeros), {m: 0.0 for m in bundle.modalities})


def impute_zeros(bundle, mask: MissingMask) -> ImputationResult:
    bundle = as_bundle(bundle)
    mask.check(bundle.num_items)
    return _baseline_result(bundle, _fill(bundle, mask, lambda s, k: 0))


def impute_mean(bundle, mask: MissingMask) -> ImputationResult:
    bundle = as_bundle(bundle)
    mask.check(bundle.num_items)
    if mask.num_missing and mask.num_known == 0:
        raise DataError("mean imputation needs at least one known item")
    return _baseline_result(bundle, _fill(bundle, mask, lambda s, k: known_mean(s, mask)))


def impute_random(bundle, mask: MissingMask, seed: int = 0, low: float = 0.0,
                  high: float = 1.0) -> ImputationResult:
    """Uniform ``[low, high)`` noise; modalities are filled in bundle order from one stream."""
    if not low < high:
        raise ParameterError(f"random bounds need low < high, got ({low}, {high})")
    bundle = as_bundle(bundle)
    mask.check(bundle.num_items)
    rng = make_rng(seed)
    return _baseline_result(
        bundle, _fill(bundle, mask, lambda s, k: rng.uniform(low, high, size=(k, s.dim)))
    )


def converged(delta: float, current: np.ndarray, tolerance: float) -> bool:
    """Relative L-inf stopping rule with an absolute floor."""
    scale = float(np.max(np.abs(current))) if current.size else 0.0
    return delta < tolerance * (1.0 + scale)


def propagate_masked(graph: ItemItemGraph, x: np.ndarray, known: np.ndarray,
                     max_layers: int = 20, tolerance: float = 1e-6, init=None):
    """Masked fixed-point diffusion on a single feature matrix.

    Iterates ``X <- A X`` followed by ``X[known] <- X0[known]`` until the L-inf
    change drops below ``tolerance * (1 + |X|_inf)`` or ``max_layers`` steps
    have run.

    Parameters
    ----------
    graph : ItemItemGraph
        Normalized propagation operator.
    x : ndarray, shape (num_items, dim)
        Features; rows of unknown items are ignored.
    known : ndarray of bool
        Rows whose values are clamped.
    init : ndarray, optional
        Starting values for unknown rows (zeros by default).

    Returns
    -------
    out : ndarray of float64
    layers_run : int
    final_delta : float
        L-inf change produced by the last step.
    """
    _require_stage(graph, Stage.NORMALIZED, "propagate_masked")
    x = np.asarray(x)
    known = np.asarray(known, dtype=bool)
    if x.ndim != 2 or x.shape[0] != graph.num_items or known.shape != (graph.num_items,):
        raise ShapeError(
            f"features {x.shape} / mask {known.shape} do not match {graph.num_items} items"
        )
    missing = ~known
    clamp = x[known].astype(np.float64)
    out = np.zeros(x.shape, dtype=np.float64)
    out[known] = clamp
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        out[missing] = init[missing] if init.shape == x.shape else init
    adj = graph.adjacency

    layers, delta = 0, 0.0
    for layers in range(1, max_layers + 1):
        nxt = adj @ out
        nxt[known] = clamp
        delta = float(np.max(np.abs(nxt - out))) if out.size else 0.0
        out = nxt
        if converged(delta, out, tolerance):
            break
    return out, layers, delta


def propagate_features(graph: ItemItemGraph, bundle, mask: MissingMask,
                       cfg: PropagationConfig = PropagationConfig(),
                       fallback: Fallback | str = Fallback.NONE, jobs: int = 1,
                       init=None) -> ImputationResult:
    """Run the masked diffusion independently for every modality of ``bundle``.

    Missing items that cannot reach any known item keep their initial value
    and are listed in ``unreachable_items``; with ``fallback="mean"`` they
    receive the known mean instead.
    """
    bundle = as_bundle(bundle)
    fallback = Fallback(fallback)
    mask.check(bundle.num_items)
    if graph.num_items != bundle.num_items:
        raise ShapeError(
            f"graph has {graph.num_items} items, features have {bundle.num_items}"
        )
    if mask.num_known == 0:
        raise DataError("feature propagation needs at least one known item")
    check_known_finite(bundle, mask)
    lost = unreachable_items(graph, mask.known)
    if lost.size:
        log.info("%d missing items have no path to a known item", lost.size)

    def one(s):
        start = None if init is None else init[s.modality]
        out, layers, delta = propagate_masked(
            graph, s.data, mask.known, cfg.max_layers, cfg.tolerance, start
        )
        if fallback is Fallback.MEAN and lost.size:
            out[lost] = known_mean(s, mask)
        result = out.astype(s.data.dtype, copy=False)
        # known rows come from the caller's array, not a float round trip
        result[mask.known] = s.data[mask.known]
        return s.with_data(result), layers, delta

    if jobs > 1 and len(bundle) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(one, bundle))
    else:
        parts = [one(s) for s in bundle]

    return ImputationResult(
        FeatureBundle(p[0] for p in parts),
        {s.modality: p[1] for s, p in zip(bundle, parts)},
        {s.modality: p[2] for s, p in zip(bundle, parts)},
        lost,
    )


def featprop_impute(bundle, mask: MissingMask, interactions: InteractionMatrix,
                    cfg: PropagationConfig = PropagationConfig(),
                    fallback: Fallback | str = Fallback.NONE, jobs: int = 1) -> ImputationResult:
    """Build the item graph from ``interactions`` and propagate every modality."""
    bundle = as_bundle(bundle)
    if interactions.num_items != bundle.num_items:
        raise ShapeError(
            f"interactions cover {interactions.num_items} items, features "
            f"{bundle.num_items}"
        )
    if mask.num_known == 0:
        raise DataError("feature propagation needs at least one known item")
    graph = build_item_graph(interactions, cfg.sparsification_n, cfg.exclude_diagonal)
    return propagate_features(graph, bundle, mask, cfg, fallback, jobs)


def impute(method, bundle, mask: MissingMask, *, interactions=None, graph=None,
           cfg: PropagationConfig = PropagationConfig(), seed: int = 0, low: float = 0.0,
           high: float = 1.0, fallback=Fallback.NONE, jobs: int = 1) -> ImputationResult:
    """Dispatch on ``method``; featprop takes a prebuilt ``graph`` or raw ``interactions``."""
    method = Method(method)
    if method is Method.ZEROS:
        return impute_zeros(bundle, mask)
    if method is Method.MEAN:
        return impute_mean(bundle, mask)
    if method is Method.RANDOM:
        return impute_random(bundle, mask, seed, low, high)
    if graph is not None:
        return propagate_features(graph, bundle, mask, cfg, fallback, jobs)
    if interactions is None:
        raise ParameterError("featprop needs an interaction matrix or a graph")
    return featprop_impute(bundle, mask, interactions, cfg, fallback, jobs)


def dirichlet_energy(g: ItemItemGraph, f: np.ndarray) -> float:
    """Smoothness of ``f`` over the sparsified graph.

    E(f) = 1/2 * sum over undirected edges {i, j} of w_ij * |f_i/sqrt(d_i) - f_j/sqrt(d_j)|^2

    with binary weights ``w`` and raw degrees ``d`` of the sparsified graph
    (recovered from the normalized weights as ``a_ij * sqrt(d_i d_j)``). On
    missing rows its gradient is ``f - A f``, so the propagation fixed point
    minimizes it under the known-row constraint.
    """
    _require_stage(g, Stage.NORMALIZED, "dirichlet_energy")
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != g.num_items:
        raise ShapeError(f"features have {f.shape[0]} rows, graph has {g.num_items} items")
    coo = g.adjacency.tocoo()
    upper = coo.row < coo.col
    i, j = coo.row[upper], coo.col[upper]
    sqrt_d = np.sqrt(g.degree)
    w = coo.data[upper] * sqrt_d[i] * sqrt_d[j]
    diff = f[i] / sqrt_d[i, None] - f[j] / sqrt_d[j, None]
    return 0.5 * float(np.sum(w * np.sum(diff * diff, axis=1)))


def harmonic_residual(g: ItemItemGraph, f: np.ndarray, mask: MissingMask) -> float:
    """Largest L-inf gap between a missing row and its propagated value."""
    _require_stage(g, Stage.NORMALIZED, "harmonic_residual")
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != g.num_items or mask.num_items != g.num_items:
        raise ShapeError("features, mask and graph disagree on num_items")
    if mask.num_missing == 0:
        return 0.0
    miss = mask.missing
    gap = f[miss] - (g.adjacency @ f)[miss]
    return float(np.max(np.abs(gap))) if gap.size else 0.0
