"""End-to-end training and evaluation built from the module operations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bit_selection import MapSelection, select_map_bits
from .dataset_io import PairDataset, load_patches
from .descriptor import DescriptorModel, GroupLayout, get_geometry
from .feature_maps import MAP_NAMES, feature_map
from .group_optimizer import (
    WeightFit,
    build_subgroups,
    group_distances,
    ranking_instances,
    train_l1_rda,
    train_l2,
)
from .match_eval import ScoredPairs, WeightedHamming, describe_ids, fpr_at_recall
from .ring_geometry import region_means

log = logging.getLogger(__name__)


def _patch_pixels(patches, ids, patch_size, sigma, kernel):
    if isinstance(patches, np.ndarray):
        return np.asarray(patches[ids], dtype=np.float64)
    return load_patches(patches, ids, patch_size, sigma, kernel)


@dataclass
class BitTraining:
    model: DescriptorModel
    selections: dict = field(default_factory=dict)


def train_bits(patches, pairs: PairDataset, maps=MAP_NAMES, n_bits: int = 256, patch_size: int = 32,
               divisions: int = 8, t_c: float = 0.25, folds: int = 4, literal_eq2: bool = False,
               literal_phi_sign: bool = False, cycle_folds: bool = True, reweight_rejected: bool = False,
               sigma: float = 2.0, kernel: int = 7, seed: int = 0, memory_cap: int | None = None,
               provenance: dict | None = None) -> BitTraining:
    """Select ``n_bits`` region pairs per map on the training pairs.

    ``patches`` is a :class:`RawPatchSource` or an array of preprocessed
    patches indexed by patch id.
    """
    geom = get_geometry(patch_size, divisions)
    ids = pairs.patch_ids()
    pixels = _patch_pixels(patches, ids, patch_size, sigma, kernel)
    pa = np.searchsorted(ids, pairs.a)
    pb = np.searchsorted(ids, pairs.b)
    selected = {}
    selections: dict[str, MapSelection] = {}
    for m in maps:
        means = region_means(feature_map(pixels, m), geom)
        sel = select_map_bits(means, geom, m, pa, pb, pairs.label, n_bits, t_c=t_c, folds=folds,
                              literal_eq2=literal_eq2, literal_phi_sign=literal_phi_sign,
                              cycle_folds=cycle_folds, reweight_rejected=reweight_rejected, seed=seed,
                              memory_cap=memory_cap)
        log.info("map %s: %d bits from %d survivors of %d candidates in %d rounds", m,
                 len(sel.candidate_ids), sel.n_survivors, sel.n_candidates, len(sel.result.records))
        selected[m] = [geom.pair_from_candidate(c) for c in sel.candidate_ids]
        selections[m] = sel
    model = DescriptorModel(patch_size, divisions, selected, provenance=dict(provenance or {}))
    return BitTraining(model, selections)


def random_model(maps=("Int",), n_bits: int = 256, patch_size: int = 32, divisions: int = 8,
                 seed: int = 0) -> DescriptorModel:
    """Uniformly random region pairs per map, the untrained baseline."""
    geom = get_geometry(patch_size, divisions)
    rng = np.random.default_rng(seed)
    chosen = {}
    for m in maps:
        cands = np.sort(rng.choice(geom.n_pairs, size=n_bits, replace=False))
        chosen[m] = [geom.pair_from_candidate(int(c)) for c in cands]
    return DescriptorModel(patch_size, divisions, chosen)


class DescriptorCache:
    """Packed descriptors of the patches a pair set refers to, computed once."""

    def __init__(self, model: DescriptorModel, patches, ids, sigma: float = 2.0, kernel: int = 7):
        self.model = model
        self.ids = np.asarray(ids, dtype=np.int64)
        self.layout = GroupLayout.from_model(model)
        self.packed = describe_ids(self.ids, model, patches, sigma, kernel)

    @classmethod
    def for_pairs(cls, model, patches, pairs: PairDataset, sigma=2.0, kernel=7) -> "DescriptorCache":
        return cls(model, patches, pairs.patch_ids(), sigma, kernel)

    def rows(self, patch_ids) -> np.ndarray:
        pos = np.searchsorted(self.ids, patch_ids)
        if np.any(pos >= len(self.ids)) or np.any(self.ids[np.minimum(pos, len(self.ids) - 1)] != patch_ids):
            raise KeyError("patch id not in descriptor cache")
        return pos

    def group_distances(self, pairs: PairDataset) -> np.ndarray:
        A = self.packed[self.rows(pairs.a)]
        B = self.packed[self.rows(pairs.b)]
        return group_distances(A, B, self.layout)

    def score(self, pairs: PairDataset, weights=None) -> ScoredPairs:
        W = self.model.effective_weights() if weights is None else np.asarray(weights, dtype=np.float64)
        scorer = WeightedHamming(self.layout, W)
        P = scorer.prepare(self.packed)
        return ScoredPairs(scorer(P[self.rows(pairs.a)], P[self.rows(pairs.b)]), pairs.label)


@dataclass
class WeightTraining:
    model: DescriptorModel
    fit: WeightFit | None


def train_weights(model: DescriptorModel, patches, pairs: PairDataset, regularizer: str = "l1",
                  subgroups: int = 1, allow_uneven_subgroups: bool = False, mu1: float = 0.05, mu2: float = 1.0, gamma: float = 1000.0,
                  budget: int = 500_000, iterations: int | None = None, epochs: int = 1,
                  sigma: float = 2.0, kernel: int = 7, seed: int = 0) -> WeightTraining:
    """Learn group weights; ``regularizer="none"`` gives equal weights."""
    if subgroups > 1:
        model = build_subgroups(model, subgroups, allow_uneven_subgroups)
    if regularizer == "none":
        return WeightTraining(model.with_weights(np.ones(model.n_groups)), None)
    if regularizer not in ("l1", "l2"):
        raise ValueError(f"unknown regularizer {regularizer!r}")
    cache = DescriptorCache.for_pairs(model, patches, pairs, sigma, kernel)
    D = cache.group_distances(pairs)
    inst = ranking_instances(D[pairs.label == 1], D[pairs.label == 0], budget, seed)
    if regularizer == "l1":
        fit = train_l1_rda(inst, mu1=mu1, gamma=gamma, iterations=iterations, seed=seed)
    else:
        fit = train_l2(inst, mu2=mu2, epochs=epochs, seed=seed)
    return WeightTraining(model.with_weights(fit.weights), fit)


def evaluate(model: DescriptorModel, patches, pairs: PairDataset, recall: float = 0.95,
             sigma: float = 2.0, kernel: int = 7) -> tuple[ScoredPairs, float]:
    sp = DescriptorCache.for_pairs(model, patches, pairs, sigma, kernel).score(pairs)
    return sp, fpr_at_recall(sp, recall)
