"""Binary tests between pooling regions, candidate bit matrices and the descriptor model."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ResourceCapError
from .feature_maps import MAP_NAMES, feature_map
from .ring_geometry import (
    CircleIntegral,
    PoolingGeometry,
    RegionId,
    RegionPair,
    build_geometry,
    region_mean,
    region_means,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_MEMORY_CAP = 2 * 1024**3


@lru_cache(maxsize=16)
def get_geometry(k: int, t: int) -> PoolingGeometry:
    return build_geometry(k, t)


def binary_test(ci: CircleIntegral, pair: RegionPair) -> int:
    """1 iff the mean over ``pair.a`` is strictly below the mean over ``pair.b``."""
    return int(region_mean(ci, pair.a) < region_mean(ci, pair.b))


def _pixels(patches) -> np.ndarray:
    if isinstance(patches, np.ndarray):
        arr = patches
    else:
        arr = np.stack([getattr(p, "pixels", p) for p in patches]) if len(patches) else np.empty((0, 0, 0))
    return np.asarray(arr, dtype=np.float64)


@dataclass
class BitCandidateMatrix:
    """Bits of every candidate region pair (rows) for every patch (columns).

    ``bits`` is packed along the patch axis, eight patches per byte, most
    significant bit first.  Row ``c`` is candidate id ``c`` of the geometry
    unless ``rows`` says otherwise.
    """

    bits: np.ndarray
    n_patches: int
    map: str
    geometry: PoolingGeometry
    rows: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return self.bits.shape[0]

    def row(self, i: int) -> np.ndarray:
        return np.unpackbits(self.bits[i], count=self.n_patches).astype(bool)

    def take(self, idx) -> np.ndarray:
        """Unpacked ``(len(idx), n_patches)`` boolean rows."""
        return np.unpackbits(self.bits[np.asarray(idx)], axis=1, count=self.n_patches).astype(bool)

    def bit(self, row: int, col: int) -> int:
        return int((self.bits[row, col >> 3] >> (7 - (col & 7))) & 1)

    def pair(self, i: int) -> RegionPair:
        cand = int(self.rows[i]) if self.rows is not None else i
        return self.geometry.pair_from_candidate(cand)

    @property
    def pair_index(self) -> list:
        return [self.pair(i) for i in range(self.n_rows)]


def candidate_nbytes(n_rows: int, n_patches: int) -> int:
    return n_rows * ((n_patches + 7) // 8)


def candidates_from_means(means: np.ndarray, geom: PoolingGeometry, rows=None,
                          chunk_elems: int = 1 << 23) -> np.ndarray:
    """Packed candidate bits from per-patch region means ``(n_patches, z)``."""
    ia, ib = geom.pair_indices()
    if rows is not None:
        rows = np.asarray(rows)
        ia, ib = ia[rows], ib[rows]
    n = means.shape[0]
    out = np.empty((len(ia), (n + 7) // 8), dtype=np.uint8)
    step = max(1, chunk_elems // max(n, 1))
    mt = np.ascontiguousarray(means.T)
    for lo in range(0, len(ia), step):
        sl = slice(lo, lo + step)
        out[sl] = np.packbits(mt[ia[sl]] < mt[ib[sl]], axis=1)
    return out


def extract_candidates(patches, map_name: str, geom: PoolingGeometry,
                       memory_cap: int = DEFAULT_MEMORY_CAP, rows=None) -> BitCandidateMatrix:
    """Evaluate every canonical region pair (or the subset ``rows``) on every patch."""
    pixels = _pixels(patches)
    n_rows = geom.n_pairs if rows is None else len(rows)
    need = candidate_nbytes(n_rows, len(pixels))
    if need > memory_cap:
        raise ResourceCapError(
            f"candidate matrix needs {need / 2**20:.0f} MiB, cap is {memory_cap / 2**20:.0f} MiB; "
            "process fewer patches at a time or select rows in chunks"
        )
    if geom.degenerate:
        log.info("map %s: %d candidate pairs (formula %d; %d degenerate regions excluded)",
                 map_name, geom.n_pairs, geom.n_pairs_formula, len(geom.degenerate))
    means = region_means(feature_map(pixels, map_name), geom)
    bits = candidates_from_means(means, geom, rows)
    return BitCandidateMatrix(bits, len(pixels), map_name, geom,
                              None if rows is None else np.asarray(rows))


@dataclass(frozen=True)
class Group:
    map: str
    start: int
    len: int


@dataclass
class DescriptorModel:
    """Selected region pairs per map, their grouping and the group weights."""

    patch_size: int
    divisions: int
    maps: dict = field(default_factory=dict)
    groups: list = field(default_factory=list)
    weights: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.maps = {m: [RegionPair(RegionId(*a), RegionId(*b)) for a, b in pairs]
                     for m, pairs in self.maps.items()}
        self.groups = [g if isinstance(g, Group) else Group(g["map"], int(g["start"]), int(g["len"]))
                       for g in self.groups]
        if not self.groups:
            self.groups = [Group(m, 0, len(p)) for m, p in self.maps.items() if p]
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
        self.validate()

    @property
    def geometry(self) -> PoolingGeometry:
        return get_geometry(self.patch_size, self.divisions)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def group_lengths(self) -> np.ndarray:
        return np.array([g.len for g in self.groups], dtype=np.int64)

    @property
    def n_bits(self) -> int:
        return int(self.group_lengths.sum())

    def validate(self) -> None:
        unknown = set(self.maps) - set(MAP_NAMES)
        if unknown:
            raise ConfigError(f"unknown maps in model: {sorted(unknown)}")
        for m, pairs in self.maps.items():
            if len(set(pairs)) != len(pairs):
                raise ConfigError(f"map {m}: selected pairs are not unique")
            covered = np.zeros(len(pairs), dtype=np.int64)
            for g in self.groups:
                if g.map == m:
                    if g.start < 0 or g.len <= 0 or g.start + g.len > len(pairs):
                        raise ConfigError(f"group {g} outside map {m} ({len(pairs)} bits)")
                    covered[g.start:g.start + g.len] += 1
            if len(pairs) and not np.all(covered == 1):
                raise ConfigError(f"groups do not tile map {m} exactly")
        for g in self.groups:
            if g.map not in self.maps:
                raise ConfigError(f"group refers to map {g.map} with no selected pairs")
        if self.weights is not None:
            if self.weights.shape != (self.n_groups,):
                raise ConfigError(f"{self.weights.size} weights for {self.n_groups} groups")
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise ConfigError("weights must be finite and non-negative")

    def effective_weights(self) -> np.ndarray:
        return np.ones(self.n_groups) if self.weights is None else self.weights

    def with_groups(self, groups, weights=None) -> "DescriptorModel":
        return DescriptorModel(self.patch_size, self.divisions, dict(self.maps), list(groups),
                               weights, dict(self.provenance))

    def with_weights(self, weights) -> "DescriptorModel":
        return DescriptorModel(self.patch_size, self.divisions, dict(self.maps), list(self.groups),
                               weights, dict(self.provenance))

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "patch_size": self.patch_size,
            "divisions": self.divisions,
            "maps": {m: [[list(p.a), list(p.b)] for p in pairs] for m, pairs in self.maps.items()},
            "groups": [{"map": g.map, "start": g.start, "len": g.len} for g in self.groups],
            "weights": None if self.weights is None else [float(w) for w in self.weights],
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "DescriptorModel":
        if d.get("version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported model version {d.get('version')!r}")
        return cls(int(d["patch_size"]), int(d["divisions"]), d["maps"], d["groups"],
                   d.get("weights"), d.get("provenance", {}))

    @classmethod
    def load(cls, path) -> "DescriptorModel":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model {path}: {exc}") from exc
        return cls.from_dict(d)


@dataclass(frozen=True)
class GroupLayout:
    """Byte layout of packed descriptors; each group is padded to whole bytes."""

    lengths: np.ndarray
    byte_offsets: np.ndarray

    @classmethod
    def from_model(cls, model: DescriptorModel) -> "GroupLayout":
        lengths = model.group_lengths
        nbytes = (lengths + 7) // 8
        return cls(lengths, np.concatenate([[0], np.cumsum(nbytes)]))

    @property
    def n_bytes(self) -> int:
        return int(self.byte_offsets[-1])

    @property
    def n_groups(self) -> int:
        return len(self.lengths)

    def byte_group(self) -> np.ndarray:
        """Group index of every byte."""
        return np.repeat(np.arange(self.n_groups), np.diff(self.byte_offsets))


@dataclass
class Descriptor:
    data: np.ndarray
    layout: GroupLayout

    def group(self, m: int) -> np.ndarray:
        return self.data[self.layout.byte_offsets[m]:self.layout.byte_offsets[m + 1]]

    def group_bits(self, m: int) -> np.ndarray:
        return np.unpackbits(self.group(m), count=int(self.layout.lengths[m])).astype(bool)

    def bits(self) -> np.ndarray:
        return np.concatenate([self.group_bits(m) for m in range(self.layout.n_groups)])

    def hex_groups(self) -> list:
        return [self.group(m).tobytes().hex() for m in range(self.layout.n_groups)]


def selected_bits(pixels: np.ndarray, model: DescriptorModel) -> dict:
    """Unpacked bits ``(n, n_selected)`` of every map in the model."""
    pixels = _pixels(pixels)
    if pixels.ndim != 3 or pixels.shape[1:] != (model.patch_size, model.patch_size):
        raise DataError(f"patches of shape {pixels.shape[1:]} do not match model patch size {model.patch_size}")
    geom = model.geometry
    out = {}
    for m, pairs in model.maps.items():
        if not pairs:
            continue
        ia = np.array([geom.region_index(p.a) for p in pairs])
        ib = np.array([geom.region_index(p.b) for p in pairs])
        means = region_means(feature_map(pixels, m), geom)
        out[m] = means[:, ia] < means[:, ib]
    return out


def extract_descriptors(pixels, model: DescriptorModel, batch: int = 2048) -> np.ndarray:
    """Packed descriptors ``(n, layout.n_bytes)`` for a batch of preprocessed patches."""
    pixels = _pixels(pixels)
    layout = GroupLayout.from_model(model)
    out = np.zeros((len(pixels), layout.n_bytes), dtype=np.uint8)
    for lo in range(0, len(pixels), batch):
        bits = selected_bits(pixels[lo:lo + batch], model)
        for gi, g in enumerate(model.groups):
            packed = np.packbits(bits[g.map][:, g.start:g.start + g.len], axis=1)
            out[lo:lo + batch, layout.byte_offsets[gi]:layout.byte_offsets[gi + 1]] = packed
    return out


def extract_descriptor(patch, model: DescriptorModel) -> Descriptor:
    pixels = np.asarray(getattr(patch, "pixels", patch), dtype=np.float64)
    if pixels.shape != (model.patch_size, model.patch_size):
        raise DataError(f"patch of shape {pixels.shape} does not match model patch size {model.patch_size}")
    return Descriptor(extract_descriptors(pixels[None], model)[0], GroupLayout.from_model(model))
