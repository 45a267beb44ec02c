"""Boosted bit selection with a correlation constraint.

Candidates are first ranked by their matching error on the training pairs and
by how close their firing rate is to one half; the survivors then go through
an AdaBoost-style loop that admits a bit only when it is weakly correlated
with every bit already chosen.

A pair is predicted to match when both patches give the same bit value.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .descriptor import BitCandidateMatrix, candidate_nbytes, candidates_from_means
from .errors import DataError, ResourceCapError
from .ring_geometry import PoolingGeometry

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-6
TIE_TOL = 1e-12
# byte value -> its 8 bits, most significant first
_BYTE_BITS = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(np.float64)


def pair_prediction(bit_a, bit_b):
    """Predicted label of a pair: 1 when the two bits agree."""
    return 1 - (np.asarray(bit_a, dtype=np.int64) ^ np.asarray(bit_b, dtype=np.int64))


def _error_rows(X: np.ndarray, pa: np.ndarray, pb: np.ndarray, y: np.ndarray) -> np.ndarray:
    # pred = agree; an error is pred != y, i.e. disagreement on a match or agreement on a non-match
    return (X[:, pa] ^ X[:, pb]) == y


def _check_pairs(n_patches: int, pa, pb, labels):
    pa, pb = np.asarray(pa, dtype=np.int64), np.asarray(pb, dtype=np.int64)
    y = np.asarray(labels).astype(bool)
    if not (len(pa) == len(pb) == len(y)):
        raise DataError("pair columns and labels differ in length")
    if len(y) == 0:
        raise DataError("no training pairs")
    if pa.min() < 0 or pb.min() < 0 or max(pa.max(), pb.max()) >= n_patches:
        raise DataError("pair column out of range")
    return pa, pb, y


def matching_errors(cands: BitCandidateMatrix, pa, pb, labels, chunk: int = 4096):
    """Unweighted matching error and firing rate of every candidate row.

    Returns ``(errors, means)``: the fraction of training pairs each bit
    mislabels, and the mean bit value over all patches.
    """
    pa, pb, y = _check_pairs(cands.n_patches, pa, pb, labels)
    errors = np.empty(cands.n_rows)
    means = np.empty(cands.n_rows)
    for lo in range(0, cands.n_rows, chunk):
        X = cands.take(np.arange(lo, min(lo + chunk, cands.n_rows)))
        errors[lo:lo + len(X)] = _error_rows(X, pa, pb, y).mean(axis=1)
        means[lo:lo + len(X)] = X.mean(axis=1)
    return errors, means


def matching_errors_from_means(region_mean_table: np.ndarray, geom: PoolingGeometry, pa, pb, labels,
                               chunk_elems: int = 1 << 23):
    """Same statistics as :func:`matching_errors`, streamed from region means.

    Avoids materialising the full candidate matrix, which for 8 divisions has
    ~590k rows.
    """
    n = region_mean_table.shape[0]
    pa, pb, y = _check_pairs(n, pa, pb, labels)
    ia, ib = geom.pair_indices()
    mt = np.ascontiguousarray(region_mean_table.T)
    errors = np.empty(len(ia))
    means = np.empty(len(ia))
    step = max(1, chunk_elems // max(n, 1))
    for lo in range(0, len(ia), step):
        sl = slice(lo, lo + step)
        X = mt[ia[sl]] < mt[ib[sl]]
        errors[sl] = _error_rows(X, pa, pb, y).mean(axis=1)
        means[sl] = X.mean(axis=1)
    return errors, means


def prefilter(errors, means, n_candidates: int | None = None) -> np.ndarray:
    """Keep the N/2 lowest-error candidates, then the N/4 of those firing closest to 1/2.

    Ties break towards the smaller candidate id.  Returns ascending ids.
    """
    errors = np.asarray(errors, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    n = len(errors) if n_candidates is None else int(n_candidates)
    ids = np.arange(len(errors))
    half, quarter = n // 2, n // 4
    if quarter < 1:
        log.warning("only %d candidates; prefilter keeps all of them", len(errors))
        return ids
    stage1 = ids[np.lexsort((ids, errors))][:half]
    closeness = np.abs(means[stage1] - 0.5)
    stage2 = stage1[np.lexsort((stage1, closeness))][:quarter]
    return np.sort(stage2)


def pearson_correlation(a, b) -> float:
    """Pearson coefficient of two 0/1 sequences; 1.0 if either is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("need at least two samples")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(float(da @ da)), math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        return 1.0
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def xor_correlation(a, b) -> float:
    """Count of disagreeing positions over the product of the two rows' L2 norms."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    den = math.sqrt(a.sum()) * math.sqrt(b.sum())
    if den == 0.0:
        return 1.0
    return float((a ^ b).sum() / den)


@dataclass
class RoundRecord:
    round: int
    candidate: int
    eps: float
    admitted: bool
    max_rho: float
    fold: int


@dataclass
class SelectionResult:
    selected: list
    records: list = field(default_factory=list)
    accumulated_error: float = 0.0
    exhausted: bool = False

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "candidate", "eps", "admitted", "max_rho", "fold"])
        for r in self.records:
            w.writerow([r.round, r.candidate, repr(r.eps), int(r.admitted), repr(r.max_rho), r.fold])
        return buf.getvalue()


class _FoldErrors:
    """Packed error patterns of every survivor on one fold of the training pairs."""

    def __init__(self, cands, survivors, pa, pb, y, chunk=4096):
        n_bytes = (len(y) + 7) // 8
        self.n_pairs = len(y)
        self.packed = np.empty((len(survivors), n_bytes), dtype=np.uint8)
        for lo in range(0, len(survivors), chunk):
            X = cands.take(survivors[lo:lo + chunk])
            self.packed[lo:lo + len(X)] = np.packbits(_error_rows(X, pa, pb, y), axis=1)
        self._flat_offsets = (np.arange(n_bytes) * 256)[None, :]

    def weighted(self, d: np.ndarray, chunk: int = 16384) -> np.ndarray:
        nb = self.packed.shape[1]
        dpad = np.zeros(nb * 8)
        dpad[:len(d)] = d
        table = (dpad.reshape(nb, 8) @ _BYTE_BITS.T).ravel()
        out = np.empty(len(self.packed))
        for lo in range(0, len(self.packed), chunk):
            blk = self.packed[lo:lo + chunk].astype(np.int64) + self._flat_offsets
            out[lo:lo + len(blk)] = table[blk].sum(axis=1)
        return out

    def row(self, i: int) -> np.ndarray:
        return np.unpackbits(self.packed[i], count=self.n_pairs).astype(bool)


class _AdmittedRows:
    """Admitted bit rows held as float matrices so one gate check is a single product."""

    def __init__(self, n_patches: int, capacity: int):
        self.unit = np.zeros((capacity, n_patches))  # centred rows scaled to unit norm
        self.raw = np.zeros((capacity, n_patches))
        self.ones = np.zeros(capacity)
        self.constant = np.zeros(capacity, dtype=bool)
        self.count = 0

    def max_rho(self, bits: np.ndarray, literal_eq2: bool) -> float:
        m = self.count
        if m == 0:
            return 0.0
        b = bits.astype(np.float64)
        if literal_eq2:
            nb = b.sum()
            inter = self.raw[:m] @ b
            den = np.sqrt(self.ones[:m]) * math.sqrt(nb)
            with np.errstate(divide="ignore", invalid="ignore"):
                rho = np.where(den > 0, (self.ones[:m] + nb - 2 * inter) / den, 1.0)
            return float(rho.max())
        db = b - b.mean()
        sb = math.sqrt(float(db @ db))
        if sb == 0.0 or self.constant[:m].any():
            return 1.0
        return float(np.minimum(np.abs(self.unit[:m] @ db) / sb, 1.0).max())

    def add(self, bits: np.ndarray) -> None:
        i = self.count
        b = bits.astype(np.float64)
        d = b - b.mean()
        s = math.sqrt(float(d @ d))
        self.raw[i] = b
        self.ones[i] = b.sum()
        self.constant[i] = s == 0.0
        if s > 0:
            self.unit[i] = d / s
        self.count += 1


def select_bits(cands: BitCandidateMatrix, pa, pb, labels, n: int, t_c: float = 0.25, folds: int = 4,
                survivors=None, literal_eq2: bool = False, literal_phi_sign: bool = False,
                cycle_folds: bool = True, reweight_rejected: bool = False,
                seed: int = 0) -> SelectionResult:
    """Greedy boosted selection of up to ``n`` weakly correlated bits.

    Parameters
    ----------
    cands : BitCandidateMatrix
        Candidate bits over the training patches.
    pa, pb : array of int
        Column of each training pair's first and second patch.
    labels : array of {0, 1}
        1 for matching pairs.
    n : int
        Number of bits to admit.
    t_c : float
        A bit is admitted only if its correlation with every admitted bit is below this.
    folds : int
        The pairs are split into this many disjoint folds; a round whose best
        weighted error reaches 0.5 moves on to the next fold with fresh weights.
    survivors : array of int, optional
        Rows allowed to compete (output of :func:`prefilter`); all rows if omitted.
    literal_eq2 : bool
        Gate on :func:`xor_correlation` instead of ``|pearson|``.
    literal_phi_sign : bool
        Multiply correctly classified pairs by ``exp(+alpha)`` instead of ``exp(-alpha)``.
    seed : int
        Seeds the fold partition.

    Returns
    -------
    SelectionResult
        Admitted row indices in admission order plus one record per round.
    """
    pa, pb, y = _check_pairs(cands.n_patches, pa, pb, labels)
    if folds < 1:
        raise ValueError("folds must be >= 1")
    survivors = np.arange(cands.n_rows) if survivors is None else np.sort(np.asarray(survivors, dtype=np.int64))
    row_ids = cands.rows if cands.rows is not None else np.arange(cands.n_rows)

    order = np.random.default_rng(seed).permutation(len(y))
    parts = [np.sort(p) for p in np.array_split(order, folds) if len(p)]
    fold = 0
    fe = _FoldErrors(cands, survivors, pa[parts[0]], pb[parts[0]], y[parts[0]])
    d = np.full(fe.n_pairs, 1.0 / fe.n_pairs)

    alive = np.ones(len(survivors), dtype=bool)
    admitted_rows = _AdmittedRows(cands.n_patches, n)
    result = SelectionResult(selected=[])
    rnd = 0
    eps_all = None  # weighted errors stay valid until the weights change
    while len(result.selected) < n and alive.any():
        rnd += 1
        if eps_all is None:
            eps_all = fe.weighted(d)
        eps_all[~alive] = np.inf
        # errors equal up to summation rounding count as a tie, won by the lower row
        pos = int(np.argmax(eps_all <= eps_all.min() + TIE_TOL))
        eps = float(eps_all[pos])
        alive[pos] = False
        row = int(survivors[pos])
        bits = cands.row(row)

        max_rho = admitted_rows.max_rho(bits, literal_eq2)
        admitted = max_rho < t_c
        if admitted:
            result.selected.append(row)
            admitted_rows.add(bits)
        result.accumulated_error += eps
        result.records.append(RoundRecord(rnd, int(row_ids[row]), eps, admitted, float(max_rho), fold))

        if eps < 0.5 and (admitted or reweight_rejected):
            e = max(eps, EPS_FLOOR)
            alpha = 0.5 * math.log((1.0 - e) / e)
            wrong = fe.row(pos)
            sign = -1.0 if literal_phi_sign else 1.0
            d = d * np.exp(np.where(wrong, sign * alpha, -sign * alpha))
            d /= d.sum()
            eps_all = None
        elif eps >= 0.5:
            fold += 1
            if fold >= len(parts):
                if not cycle_folds:
                    result.exhausted = True
                    break
                fold = 0
            p = parts[fold]
            fe = _FoldErrors(cands, survivors, pa[p], pb[p], y[p])
            d = np.full(fe.n_pairs, 1.0 / fe.n_pairs)
            eps_all = None

    if len(result.selected) < n:
        result.exhausted = True
        log.warning("bit selection stopped with %d of %d bits", len(result.selected), n)
    return result


@dataclass
class MapSelection:
    map: str
    candidate_ids: list
    result: SelectionResult
    n_candidates: int
    n_survivors: int


def select_map_bits(region_mean_table: np.ndarray, geom: PoolingGeometry, map_name: str, pa, pb, labels,
                    n: int, t_c: float = 0.25, folds: int = 4, literal_eq2: bool = False,
                    literal_phi_sign: bool = False, cycle_folds: bool = True,
                    reweight_rejected: bool = False, seed: int = 0,
                    memory_cap: int | None = None) -> MapSelection:
    """Prefilter and boosted selection for one feature map, from its region means.

    ``memory_cap`` bounds the packed survivor matrix in bytes.
    """
    errors, means = matching_errors_from_means(region_mean_table, geom, pa, pb, labels)
    survivors = prefilter(errors, means)
    need = candidate_nbytes(len(survivors), region_mean_table.shape[0])
    if memory_cap is not None and need > memory_cap:
        raise ResourceCapError(
            f"map {map_name}: {len(survivors)} survivors over {region_mean_table.shape[0]} patches need "
            f"{need / 2**20:.0f} MiB, above the {memory_cap / 2**20:.0f} MiB cap; use fewer training pairs"
        )
    bits = candidates_from_means(region_mean_table, geom, rows=survivors)
    cands = BitCandidateMatrix(bits, region_mean_table.shape[0], map_name, geom, rows=survivors)
    res = select_bits(cands, pa, pb, labels, n, t_c=t_c, folds=folds, literal_eq2=literal_eq2,
                      literal_phi_sign=literal_phi_sign, cycle_folds=cycle_folds,
                      reweight_rejected=reweight_rejected, seed=seed)
    return MapSelection(map_name, [int(survivors[r]) for r in res.selected], res, len(errors), len(survivors))
