"""Learning non-negative group weights for the weighted Hamming distance.

The weights should rank every non-matching pair farther than every matching
pair by a margin of one.  With ``delta = D(match) - D(non-match)`` the
per-instance loss is ``max(W @ delta + 1, 0)``; it is minimised either with a
squared-norm penalty (projected stochastic subgradient) or with an L1 penalty
(regularized dual averaging, which produces exact zeros).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import Descriptor, DescriptorModel, Group, GroupLayout
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


def hinge(z):
    return np.maximum(np.asarray(z, dtype=np.float64) + 1.0, 0.0)


def group_distances(A: np.ndarray, B: np.ndarray, layout: GroupLayout) -> np.ndarray:
    """Per-group Hamming distances between packed descriptor rows ``A[i]`` and ``B[i]``."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    if A.shape != B.shape or A.shape[1] != layout.n_bytes:
        raise DataError(f"descriptor arrays {A.shape} and {B.shape} do not match layout ({layout.n_bytes} bytes)")
    counts = np.bitwise_count(A ^ B).astype(np.int32)
    return np.add.reduceat(counts, layout.byte_offsets[:-1], axis=1)


def _same_layout(da: Descriptor, db: Descriptor) -> None:
    if (not np.array_equal(da.layout.lengths, db.layout.lengths)
            or not np.array_equal(da.layout.byte_offsets, db.layout.byte_offsets)):
        raise DataError("descriptors come from different models")


def group_distance_vector(da: Descriptor, db: Descriptor) -> np.ndarray:
    _same_layout(da, db)
    return group_distances(da.data[None], db.data[None], da.layout)[0]


def weighted_distance(da: Descriptor, db: Descriptor, W) -> float:
    _same_layout(da, db)
    W = np.asarray(W, dtype=np.float64)
    total = 0.0
    for m in np.flatnonzero(W):
        total += W[m] * int(np.bitwise_count(da.group(m) ^ db.group(m)).sum())
    return float(total)


def ranking_instances(d_match: np.ndarray, d_nonmatch: np.ndarray, budget: int, seed: int = 0) -> np.ndarray:
    """Sample ``budget`` (match, non-match) combinations; returns ``D(match) - D(non-match)`` rows."""
    d_match = np.asarray(d_match)
    d_nonmatch = np.asarray(d_nonmatch)
    if len(d_match) == 0 or len(d_nonmatch) == 0:
        raise DataError("need at least one matching and one non-matching pair")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(d_match), size=budget)
    j = rng.integers(0, len(d_nonmatch), size=budget)
    return (d_match[i].astype(np.int32) - d_nonmatch[j].astype(np.int32)).astype(np.float64)


@dataclass
class WeightFit:
    weights: np.ndarray
    log: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "sampled_loss", "support", "l1_norm"])
        for it, loss, sup, l1 in self.log:
            w.writerow([it, repr(loss), sup, repr(l1)])
        return buf.getvalue()


def l2_objective(W, instances, mu2: float) -> float:
    """``mu2 / 2 * |W|^2 + mean hinge(instances @ W)``."""
    W = np.asarray(W, dtype=np.float64)
    return float(0.5 * mu2 * (W @ W) + hinge(np.asarray(instances) @ W).mean())


def train_l2(instances, mu2: float = 1.0, epochs: int = 1, seed: int = 0, log_every: int = 10000) -> WeightFit:
    """Projected stochastic subgradient descent on the squared-norm ranking objective.

    Step size ``1 / (mu2 * t)``; negative coordinates are clipped to zero after
    every step.  The returned weights average the iterates of the last half of
    the run.
    """
    if mu2 <= 0:
        raise ConfigError(f"mu2 must be positive, got {mu2}")
    X = np.asarray(instances, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("instances must be a non-empty (n, M) array")
    n, M = X.shape
    rng = np.random.default_rng(seed)
    total = epochs * n
    avg_from = total // 2 + 1
    W = np.zeros(M)
    avg = np.zeros(M)
    n_avg = 0
    fit = WeightFit(weights=W)
    best = math.inf
    loss_acc = 0.0
    t = 0
    for ep in range(epochs):
        for i in rng.permutation(n):
            t += 1
            x = X[i]
            z = x @ W
            loss_acc += max(z + 1.0, 0.0)
            if z >= -1.0:
                W = W - (1.0 / (mu2 * t)) * (mu2 * W + x)
            else:
                W = W * (1.0 - 1.0 / t)
            np.maximum(W, 0.0, out=W)
            if t >= avg_from:
                n_avg += 1
                avg += (W - avg) / n_avg
            if t % log_every == 0:
                fit.log.append((t, loss_acc / log_every, int((W > 0).sum()), float(W.sum())))
                loss_acc = 0.0
        best = min(best, l2_objective(W, X, mu2))
        fit.objective.append(best)
    fit.weights = avg if n_avg else W
    return fit


def train_l1_rda(instances, mu1: float = 0.05, gamma: float = 1000.0, iterations: int | None = None,
                 seed: int = 0, log_every: int = 10000) -> WeightFit:
    """Regularized dual averaging for the L1-penalised ranking objective.

    At iteration ``t`` an instance is drawn uniformly, its hinge subgradient is
    added to the running mean ``g_bar`` and every weight is set in closed form
    to ``max(-sqrt(t) / gamma * (g_bar + mu1), 0)``.
    """
    if mu1 <= 0 or gamma <= 0:
        raise ConfigError(f"mu1 and gamma must be positive, got mu1={mu1}, gamma={gamma}")
    X = np.asarray(instances, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("instances must be a non-empty (n, M) array")
    n, M = X.shape
    T = n if iterations is None else int(iterations)
    draws = np.random.default_rng(seed).integers(0, n, size=T)
    W = np.zeros(M)
    gsum = np.zeros(M)
    fit = WeightFit(weights=W)
    loss_acc = 0.0
    for t in range(1, T + 1):
        x = X[draws[t - 1]]
        z = x @ W
        loss_acc += max(z + 1.0, 0.0)
        if z >= -1.0:
            gsum += x
        W = np.maximum(-(math.sqrt(t) / gamma) * (gsum / t + mu1), 0.0)
        if t % log_every == 0:
            fit.log.append((t, loss_acc / log_every, int((W > 0).sum()), float(W.sum())))
            loss_acc = 0.0
    fit.weights = W
    return fit


def rda_weight(g_bar, t: int, mu1: float, gamma: float) -> np.ndarray:
    """The closed-form dual-averaging coordinate update."""
    return np.maximum(-(math.sqrt(t) / gamma) * (np.asarray(g_bar, dtype=np.float64) + mu1), 0.0)


def build_subgroups(model: DescriptorModel, per_map_subgroups: int, allow_uneven: bool = False) -> DescriptorModel:
    """Split every map's bits into ``per_map_subgroups`` equal contiguous groups.

    A bit count that does not divide evenly is an error unless
    ``allow_uneven`` is set, in which case the first groups get one extra bit.
    A map with fewer bits than subgroups is always an error.
    """
    if per_map_subgroups < 1:
        raise ConfigError("per_map_subgroups must be >= 1")
    groups = []
    for m, pairs in model.maps.items():
        n = len(pairs)
        if n == 0:
            continue
        if n < per_map_subgroups:
            raise ConfigError(f"map {m} has {n} bits, fewer than {per_map_subgroups} subgroups")
        if n % per_map_subgroups:
            if not allow_uneven:
                raise ConfigError(f"map {m} has {n} bits, not divisible into {per_map_subgroups} subgroups")
            log.warning("map %s: %d bits do not split evenly into %d subgroups", m, n, per_map_subgroups)
        sizes = [len(a) for a in np.array_split(np.arange(n), per_map_subgroups)]
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        groups.extend(Group(m, int(s), int(k)) for s, k in zip(starts, sizes))
    return model.with_groups(groups)
