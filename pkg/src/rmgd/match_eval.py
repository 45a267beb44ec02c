"""Patch-pair verification metrics and weighted-Hamming matching."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .dataset_io import PairDataset, RawPatchSource, load_patches
from .descriptor import Descriptor, DescriptorModel, GroupLayout, extract_descriptors
from .errors import DataError


@dataclass
class ScoredPairs:
    distance: np.ndarray
    label: np.ndarray

    def __post_init__(self):
        self.distance = np.asarray(self.distance, dtype=np.float64)
        self.label = np.asarray(self.label, dtype=np.int64)
        if self.distance.shape != self.label.shape:
            raise DataError("distance and label arrays differ in length")
        if not np.all(np.isfinite(self.distance)) or np.any(self.distance < 0):
            raise DataError("distances must be finite and non-negative")

    def counts(self) -> tuple[int, int]:
        pos = int((self.label == 1).sum())
        neg = len(self.label) - pos
        if pos == 0 or neg == 0:
            raise DataError(f"need both positives and negatives, got {pos} and {neg}")
        return pos, neg


@dataclass
class RocCurve:
    """Operating points at every distinct distance, threshold ascending.

    A pair is called a match when its distance is at most the threshold.
    """

    threshold: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    def at(self, threshold: float) -> tuple[float, float]:
        i = int(np.searchsorted(self.threshold, threshold, side="right")) - 1
        if i < 0:
            return 0.0, 0.0
        return float(self.tpr[i]), float(self.fpr[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "tpr", "fpr"])
        for row in zip(self.threshold, self.tpr, self.fpr):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def roc(sp: ScoredPairs) -> RocCurve:
    pos, neg = sp.counts()
    order = np.argsort(sp.distance, kind="stable")
    d = sp.distance[order]
    y = sp.label[order]
    tp = np.cumsum(y == 1)
    fp = np.cumsum(y != 1)
    # last index of every run of equal distances
    last = np.flatnonzero(np.r_[d[1:] != d[:-1], True])
    return RocCurve(d[last], tp[last] / pos, fp[last] / neg)


def fpr_at_recall(sp: ScoredPairs, recall: float = 0.95) -> float:
    """FPR at the smallest threshold whose TPR reaches ``recall`` (no interpolation)."""
    if not 0.0 < recall <= 1.0:
        raise ValueError(f"recall must lie in (0, 1], got {recall}")
    curve = roc(sp)
    i = int(np.argmax(curve.tpr >= recall))
    return float(curve.fpr[i])


class WeightedHamming:
    """Batch weighted Hamming distance for one descriptor layout and weight vector.

    Groups with zero weight are dropped before any bit is touched.  Packed
    bytes are viewed as the widest unsigned word that no group boundary splits.
    """

    def __init__(self, layout: GroupLayout, weights):
        W = np.asarray(weights, dtype=np.float64)
        if W.shape != (layout.n_groups,):
            raise DataError(f"{W.size} weights for {layout.n_groups} groups")
        if np.any(W < 0):
            raise DataError("weights must be non-negative")
        self.layout = layout
        self.weights = W
        keep = np.flatnonzero(W > 0)
        self.byte_cols = np.concatenate(
            [np.arange(layout.byte_offsets[m], layout.byte_offsets[m + 1]) for m in keep]
        ) if len(keep) else np.empty(0, dtype=np.int64)
        byte_w = np.repeat(W[keep], np.diff(layout.byte_offsets)[keep])
        bounds = np.concatenate([[0], np.cumsum(np.diff(layout.byte_offsets)[keep])])
        self.word = next(w for w in (8, 4, 2, 1) if np.all(bounds % w == 0))
        self.word_weights = byte_w[::self.word].copy()
        self.contiguous = len(keep) == layout.n_groups

    def prepare(self, packed: np.ndarray) -> np.ndarray:
        """Keep only weighted groups and view as words; do this once per descriptor set."""
        packed = np.atleast_2d(np.asarray(packed, dtype=np.uint8))
        sub = packed if self.contiguous else packed[:, self.byte_cols]
        return np.ascontiguousarray(sub).view(np.dtype(f"u{self.word}"))

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Distances between prepared rows ``A[i]`` and ``B[i]``."""
        if A.shape[1] == 0:
            return np.zeros(len(A))
        return np.bitwise_count(A ^ B) @ self.word_weights

    def cross(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """All-pairs distances ``(len(A), len(B))`` between prepared rows."""
        out = np.empty((len(A), len(B)))
        for i in range(len(A)):
            out[i] = self(np.broadcast_to(A[i], B.shape), B)
        return out


def describe_ids(ids, model: DescriptorModel, patches, sigma: float = 2.0, kernel: int = 7) -> np.ndarray:
    """Packed descriptors for patch ids, from a dataset source or an array indexed by id."""
    ids = np.asarray(ids, dtype=np.int64)
    if isinstance(patches, RawPatchSource):
        if len(ids) and (ids.min() < 0 or ids.max() >= patches.patch_count):
            raise DataError(f"patch id out of range [0, {patches.patch_count})")
        out = np.empty((len(ids), GroupLayout.from_model(model).n_bytes), dtype=np.uint8)
        for lo in range(0, len(ids), 4096):
            px = load_patches(patches, ids[lo:lo + 4096], model.patch_size, sigma, kernel)
            out[lo:lo + 4096] = extract_descriptors(px, model)
        return out
    arr = np.asarray(patches)
    if len(ids) and (ids.min() < 0 or ids.max() >= len(arr)):
        raise DataError(f"patch id out of range [0, {len(arr)})")
    return extract_descriptors(arr[ids], model)


def score_dataset(ds: PairDataset, model: DescriptorModel, patches, sigma: float = 2.0,
                  kernel: int = 7) -> ScoredPairs:
    """Weighted distances of every pair; each distinct patch is described once."""
    ids = ds.patch_ids()
    desc = describe_ids(ids, model, patches, sigma, kernel)
    layout = GroupLayout.from_model(model)
    scorer = WeightedHamming(layout, model.effective_weights())
    prepared = scorer.prepare(desc)
    ia = np.searchsorted(ids, ds.a)
    ib = np.searchsorted(ids, ds.b)
    return ScoredPairs(scorer(prepared[ia], prepared[ib]), ds.label)


def nn_match(query, target, W) -> list:
    """Exhaustive nearest neighbour of every query; ties go to the smaller target index."""
    if len(target) == 0:
        raise DataError("empty target set")
    Q = np.stack([q.data if isinstance(q, Descriptor) else q for q in query]) if len(query) else None
    T = np.stack([t.data if isinstance(t, Descriptor) else t for t in target])
    layout = target[0].layout if isinstance(target[0], Descriptor) else None
    if layout is None:
        raise DataError("nn_match needs Descriptor objects to know the group layout")
    if Q is None:
        return []
    scorer = WeightedHamming(layout, W)
    Dm = scorer.cross(scorer.prepare(Q), scorer.prepare(T))
    best = np.argmin(Dm, axis=1)
    return [(i, int(b), float(Dm[i, b])) for i, b in enumerate(best)]


RESULT_COLUMNS = ("train_set", "test_set", "n_groups", "bits_per_group", "fpr95")


def results_table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([r[c] for c in RESULT_COLUMNS])
    return buf.getvalue()
