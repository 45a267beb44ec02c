"""Ring-region pooling geometry and the circle integral image.

A ``k x k`` patch is cut into ``r = k // 2`` concentric element rings of unit
radial width around the patch centre, and every ring into ``t`` equal angular
sectors.  A pooling region is the sector ``s`` of a contiguous run of rings
``e_inner..e_outer``; there are ``t * r * (r + 1) / 2`` of them.

Region sums are read from a polar summed-area table in four lookups, the same
way rectangular sums are read from an ordinary integral image.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

VALID_DIVISIONS = (1, 4, 8, 16)


class RegionId(NamedTuple):
    e_inner: int
    e_outer: int
    sector: int


class RegionPair(NamedTuple):
    a: RegionId
    b: RegionId


@dataclass(frozen=True, eq=False)
class PoolingGeometry:
    """Pixel-to-cell assignment and the enumerated pooling regions.

    Attributes
    ----------
    k : int
        Patch side.
    t : int
        Angular divisions per ring.
    cell_index : ndarray of int, shape (k, k)
        Flat cell id ``e * t + s`` per pixel, ``-1`` outside the outermost ring.
    cell_counts : ndarray of int, shape (r, t)
        Pixels per (ring, sector) cell.
    regions : list of RegionId
        Effective regions (non-empty), in lexicographic order.
    """

    k: int
    t: int
    cell_index: np.ndarray
    cell_counts: np.ndarray
    regions: list
    region_array: np.ndarray
    region_counts: np.ndarray
    degenerate: list = field(default_factory=list)

    @property
    def r(self) -> int:
        return self.k // 2

    @property
    def n_regions_formula(self) -> int:
        return self.t * self.r * (self.r + 1) // 2

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_pairs_formula(self) -> int:
        return comb(self.n_regions_formula, 2)

    @property
    def n_pairs(self) -> int:
        return comb(self.n_regions, 2)

    @property
    def covered_pixels(self) -> int:
        return int((self.cell_index >= 0).sum())

    def region_index(self, rid: RegionId) -> int:
        try:
            return self._lookup[tuple(rid)]
        except KeyError:
            raise KeyError(f"{tuple(rid)} is not an effective region of this geometry") from None

    @property
    def _lookup(self) -> dict:
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cached = {tuple(rid): i for i, rid in enumerate(self.regions)}
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def pair_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Region-index arrays ``(ia, ib)`` of every canonical pair, ``ia < ib``.

        Candidate id ``c`` refers to the pair ``(regions[ia[c]], regions[ib[c]])``;
        the order is lexicographic on the region ids.
        """
        ia, ib = np.triu_indices(self.n_regions, k=1)
        return ia.astype(np.int32), ib.astype(np.int32)

    def pair_from_candidate(self, cand: int) -> RegionPair:
        z = self.n_regions
        starts = np.cumsum(np.r_[0, np.arange(z - 1, 0, -1)])
        a = int(np.searchsorted(starts, cand, side="right") - 1)
        b = a + 1 + int(cand - starts[a])
        return RegionPair(self.regions[a], self.regions[b])

    def candidate_from_pair(self, pair: RegionPair) -> int:
        a, b = self.region_index(pair.a), self.region_index(pair.b)
        if a == b:
            raise ValueError("a region pair needs two distinct regions")
        if a > b:
            a, b = b, a
        z = self.n_regions
        return a * z - a * (a + 1) // 2 + (b - a - 1)

    def cell_sums(self, maps: np.ndarray) -> np.ndarray:
        """Sum ``maps[..., k, k]`` over each (ring, sector) cell -> ``[..., r, t]``."""
        maps = np.asarray(maps, dtype=np.float64)
        if maps.shape[-2:] != (self.k, self.k):
            raise DataError(f"map shape {maps.shape[-2:]} does not match patch side {self.k}")
        lead = maps.shape[:-2]
        flat = maps.reshape(-1, self.k * self.k)
        out = flat @ self._membership
        return out.reshape(*lead, self.r, self.t)

    @property
    def _membership(self) -> np.ndarray:
        cached = self.__dict__.get("_membership_cache")
        if cached is None:
            idx = self.cell_index.ravel()
            cached = np.zeros((idx.size, self.r * self.t))
            covered = np.flatnonzero(idx >= 0)
            cached[covered, idx[covered]] = 1.0
            object.__setattr__(self, "_membership_cache", cached)
        return cached

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "ring", "sector"])
        for i in range(self.k):
            for j in range(self.k):
                c = int(self.cell_index[i, j])
                w.writerow([i, j, c // self.t if c >= 0 else -1, c % self.t if c >= 0 else -1])
        return buf.getvalue()


def pixel_polar(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Radius and angle in [0, 2pi) of every pixel centre about ((k-1)/2, (k-1)/2).

    Rows grow downward, so the angle is measured from +x towards +row.
    """
    c = (k - 1) / 2.0
    ii, jj = np.mgrid[0:k, 0:k].astype(np.float64)
    y, x = ii - c, jj - c
    rho = np.hypot(x, y)
    theta = np.mod(np.arctan2(y, x), 2 * np.pi)
    return rho, theta


def build_geometry(k: int = 32, t: int = 8) -> PoolingGeometry:
    if t not in VALID_DIVISIONS:
        raise ConfigError(f"divisions must be one of {VALID_DIVISIONS}, got {t}")
    if k < 2 or k % 2:
        raise ConfigError(f"patch side must be a positive even integer, got {k}")
    r = k // 2
    rho, theta = pixel_polar(k)
    ring = np.floor(rho).astype(np.int64)
    pos = t * theta / (2 * np.pi)
    # pixels on a sector boundary (diagonals for t >= 8) belong to the upper sector
    snapped = np.where(np.abs(pos - np.round(pos)) < 1e-9, np.round(pos), pos)
    sector = np.minimum(np.floor(snapped).astype(np.int64), t - 1)
    inside = rho < r
    cell_index = np.where(inside, ring * t + sector, -1)
    cell_counts = np.bincount(cell_index[inside], minlength=r * t).reshape(r, t)

    # per-sector prefix over rings gives the pixel count of any ring run
    ring_prefix = np.vstack([np.zeros((1, t), dtype=np.int64), np.cumsum(cell_counts, axis=0)])
    regions, counts, degenerate = [], [], []
    for ei in range(r):
        for eo in range(ei, r):
            for s in range(t):
                n = int(ring_prefix[eo + 1, s] - ring_prefix[ei, s])
                rid = RegionId(ei, eo, s)
                if n == 0:
                    degenerate.append(rid)
                else:
                    regions.append(rid)
                    counts.append(n)
    if degenerate:
        log.info("k=%d t=%d: removed %d degenerate (empty) regions", k, t, len(degenerate))
    return PoolingGeometry(
        k=k,
        t=t,
        cell_index=cell_index,
        cell_counts=cell_counts,
        regions=regions,
        region_array=np.array(regions, dtype=np.int64).reshape(-1, 3),
        region_counts=np.array(counts, dtype=np.int64),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class CircleIntegral:
    """Cumulative polar tables of one map.

    ``cum`` follows the scan order ring-major, sector-minor: ``cum[e, s]`` is the
    sum over all rings below ``e`` plus the sectors ``0..s`` of ring ``e``.
    ``table`` is the two-dimensional cumulative sum over (ring, sector) with a
    zero border, which the four-lookup region sum reads from.  ``*_count``
    hold the same tables over the constant-1 map.
    """

    cum: np.ndarray
    cum_count: np.ndarray
    table: np.ndarray
    table_count: np.ndarray


def _polar_tables(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    cum = np.cumsum(cells.reshape(*cells.shape[:-2], -1), axis=-1).reshape(cells.shape)
    table = np.zeros((*cells.shape[:-2], cells.shape[-2] + 1, cells.shape[-1] + 1))
    table[..., 1:, 1:] = np.cumsum(np.cumsum(cells, axis=-2), axis=-1)
    return cum, table


def build_circle_integral(fmap: np.ndarray, geom: PoolingGeometry) -> CircleIntegral:
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.shape != (geom.k, geom.k):
        raise DataError(f"map shape {fmap.shape} does not match geometry ({geom.k}, {geom.k})")
    cum, table = _polar_tables(geom.cell_sums(fmap))
    cum_count, table_count = _polar_tables(geom.cell_counts.astype(np.float64))
    return CircleIntegral(cum, cum_count, table, table_count)


def _four_lookup(table: np.ndarray, ei, eo, s) -> np.ndarray:
    # rows ei..eo, single sector column s of a zero-bordered 2-D prefix table
    return table[..., eo + 1, s + 1] - table[..., eo + 1, s] - table[..., ei, s + 1] + table[..., ei, s]


def region_sum(ci: CircleIntegral, rid: RegionId) -> float:
    return float(_four_lookup(ci.table, rid.e_inner, rid.e_outer, rid.sector))


def region_mean(ci: CircleIntegral, rid: RegionId) -> float:
    n = _four_lookup(ci.table_count, rid.e_inner, rid.e_outer, rid.sector)
    if n <= 0:
        raise DataError(f"degenerate region {tuple(rid)}: no pixels")
    return region_sum(ci, rid) / float(n)


def region_sums(maps: np.ndarray, geom: PoolingGeometry) -> np.ndarray:
    """Sums of every effective region for a stack of maps ``[..., k, k]`` -> ``[..., z]``."""
    _, table = _polar_tables(geom.cell_sums(maps))
    ra = geom.region_array
    return _four_lookup(table, ra[:, 0], ra[:, 1], ra[:, 2])


def region_means(maps: np.ndarray, geom: PoolingGeometry) -> np.ndarray:
    return region_sums(maps, geom) / geom.region_counts
