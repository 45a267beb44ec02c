"""Readers for Brown/UBC-style patch datasets and patch preprocessing.

Layout of a dataset directory::

    patches0000.bmp, patches0001.bmp, ...   1024x1024 mosaics, 16x16 patches of 64x64
    info.txt                                "point_id other" per patch, in patch order
    m50_<n>_<n>_0.txt                       ground-truth pair lists
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError, CorruptDatasetError, DataError

log = logging.getLogger(__name__)

RAW_PATCH = 64
MOSAIC_SIDE = 1024
PER_ROW = MOSAIC_SIDE // RAW_PATCH
PER_MOSAIC = PER_ROW * PER_ROW

_MOSAIC_SUFFIXES = {".bmp", ".png", ".pgm", ".tif", ".tiff"}


@lru_cache(maxsize=8)
def _read_mosaic(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    if arr.shape != (MOSAIC_SIDE, MOSAIC_SIDE):
        raise CorruptDatasetError(f"{path}: mosaic is {arr.shape}, expected {MOSAIC_SIDE}x{MOSAIC_SIDE}")
    return arr


@dataclass
class RawPatchSource:
    """Patches of a dataset directory, read lazily from their mosaics."""

    mosaic_paths: list
    point_ids: np.ndarray
    name: str = ""

    @property
    def patch_count(self) -> int:
        return len(self.point_ids)

    def cell(self, index: int) -> tuple[int, int, int]:
        """(mosaic, row, col) holding patch ``index``."""
        if not 0 <= index < self.patch_count:
            raise DataError(f"patch id {index} out of range [0, {self.patch_count})")
        m, rem = divmod(int(index), PER_MOSAIC)
        return m, rem // PER_ROW, rem % PER_ROW

    def patch64(self, index: int) -> np.ndarray:
        m, row, col = self.cell(index)
        mosaic = _read_mosaic(str(self.mosaic_paths[m]))
        return mosaic[row * RAW_PATCH:(row + 1) * RAW_PATCH, col * RAW_PATCH:(col + 1) * RAW_PATCH]

    def patches64(self, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=np.int64)
        out = np.empty((len(indices), RAW_PATCH, RAW_PATCH), dtype=np.uint8)
        # visit mosaics in order so each is decoded once
        for pos in np.argsort(indices, kind="stable"):
            out[pos] = self.patch64(int(indices[pos]))
        return out


def _mosaic_sort_key(path: Path):
    digits = re.findall(r"\d+", path.stem)
    return (int(digits[-1]) if digits else -1, path.name)


def load_patch_source(root) -> RawPatchSource:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    info = root / "info.txt"
    if not info.is_file():
        raise CorruptDatasetError(f"{root}: missing info.txt")
    ids = []
    for lineno, line in enumerate(info.read_text().splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        try:
            ids.append(int(fields[0]))
        except ValueError:
            raise CorruptDatasetError(f"{info}:{lineno}: malformed point id {fields[0]!r}") from None
    if not ids:
        raise CorruptDatasetError(f"{info}: no patches listed")

    mosaics = sorted(
        (p for p in root.iterdir() if p.suffix.lower() in _MOSAIC_SUFFIXES and p.stem.startswith("patches")),
        key=_mosaic_sort_key,
    )
    needed = -(-len(ids) // PER_MOSAIC)
    if len(mosaics) != needed:
        raise CorruptDatasetError(
            f"{root}: {len(ids)} patches need {needed} mosaic(s) but {len(mosaics)} found"
        )
    return RawPatchSource(mosaic_paths=mosaics, point_ids=np.asarray(ids, dtype=np.int64), name=root.name)


@dataclass
class PairDataset:
    """Labelled patch pairs; ``label`` is 1 for a match (same 3-D point)."""

    a: np.ndarray
    b: np.ndarray
    label: np.ndarray
    source: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.label)

    @property
    def n_match(self) -> int:
        return int(self.label.sum())

    @property
    def n_nonmatch(self) -> int:
        return len(self) - self.n_match

    def subset(self, idx) -> "PairDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return PairDataset(self.a[idx], self.b[idx], self.label[idx], self.source, dict(self.meta))

    def patch_ids(self) -> np.ndarray:
        """Distinct patch ids referenced by any pair, ascending."""
        return np.unique(np.concatenate([self.a, self.b]))


def parse_pair_line(line: str, lineno: int = 0) -> tuple[int, int, int, int]:
    fields = line.split()
    try:
        vals = [int(f) for f in fields]
    except ValueError:
        raise CorruptDatasetError(f"line {lineno}: non-integer field in {line.strip()!r}") from None
    if len(vals) == 4:
        return vals[0], vals[1], vals[2], vals[3]
    if len(vals) >= 6:
        return vals[0], vals[1], vals[3], vals[4]
    raise CorruptDatasetError(f"line {lineno}: expected 4 or 6 fields, got {len(vals)}")


def load_pair_list(path, source: RawPatchSource | None = None) -> PairDataset:
    """Read a ground-truth pair file; labels come from the point ids on each line."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"pair file {path} does not exist")
    rows = []
    seen = set()
    dropped = 0
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        p1, q1, p2, q2 = parse_pair_line(line, lineno)
        if source is not None:
            for p, q in ((p1, q1), (p2, q2)):
                if not 0 <= p < source.patch_count:
                    raise DataError(f"{path}:{lineno}: patch id {p} out of range [0, {source.patch_count})")
                if source.point_ids[p] != q:
                    raise DataError(
                        f"{path}:{lineno}: point id {q} for patch {p} disagrees with info.txt ({source.point_ids[p]})"
                    )
        if (p1, p2) in seen:
            dropped += 1
            continue
        seen.add((p1, p2))
        rows.append((p1, p2, int(q1 == q2)))
    if dropped:
        log.warning("%s: dropped %d duplicate pair lines", path.name, dropped)
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 3)
    return PairDataset(arr[:, 0], arr[:, 1], arr[:, 2], source=source.name if source else path.stem)


def sample_training_pairs(ds: PairDataset, n_match: int, ratio: float = 3.0, seed: int = 0) -> PairDataset:
    """Draw ``n_match`` matches and ``round(ratio * n_match)`` non-matches.

    The draw is a seeded permutation; the result keeps the dataset's order.
    """
    n_non = int(round(ratio * n_match))
    pos = np.flatnonzero(ds.label == 1)
    neg = np.flatnonzero(ds.label == 0)
    if len(pos) < n_match or len(neg) < n_non:
        raise DataError(
            f"need {n_match} matches and {n_non} non-matches; dataset has {len(pos)} and {len(neg)}"
        )
    rng = np.random.default_rng(seed)
    take = np.concatenate([rng.permutation(pos)[:n_match], rng.permutation(neg)[:n_non]])
    return ds.subset(np.sort(take))


def gaussian_kernel1d(size: int = 7, sigma: float = 2.0) -> np.ndarray:
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"gaussian kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ConfigError(f"gaussian sigma must be positive, got {sigma}")
    x = np.arange(size) - size // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


@dataclass
class Patch:
    pixels: np.ndarray
    id: int = -1
    point_id: int = -1


def preprocess_batch(raw: np.ndarray, patch_size: int = 32, sigma: float = 2.0, kernel: int = 7) -> np.ndarray:
    """Area-average ``(n, 64, 64)`` patches down to ``patch_size`` and Gaussian-smooth them.

    Borders replicate the edge pixel.  Output is float64.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[1:] != (RAW_PATCH, RAW_PATCH):
        raise DataError(f"expected patches of shape (n, 64, 64), got {raw.shape}")
    if RAW_PATCH % patch_size:
        raise ConfigError(f"patch_size {patch_size} must divide {RAW_PATCH}")
    f = RAW_PATCH // patch_size
    small = raw.reshape(len(raw), patch_size, f, patch_size, f).mean(axis=(2, 4))
    g = gaussian_kernel1d(kernel, sigma)
    small = ndimage.correlate1d(small, g, axis=1, mode="nearest")
    return ndimage.correlate1d(small, g, axis=2, mode="nearest")


def preprocess(patch64, patch_size: int = 32, sigma: float = 2.0, kernel: int = 7,
               id: int = -1, point_id: int = -1) -> Patch:
    arr = np.asarray(patch64)
    if arr.shape != (RAW_PATCH, RAW_PATCH):
        raise DataError(f"expected a 64x64 patch, got {arr.shape}")
    return Patch(preprocess_batch(arr[None], patch_size, sigma, kernel)[0], id=id, point_id=point_id)


def load_patches(source: RawPatchSource, ids, patch_size: int = 32, sigma: float = 2.0,
                 kernel: int = 7) -> np.ndarray:
    """Preprocessed patches for ``ids`` as an ``(n, k, k)`` array, in the order given."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((len(ids), patch_size, patch_size))
    step = 4096
    for lo in range(0, len(ids), step):
        out[lo:lo + step] = preprocess_batch(source.patches64(ids[lo:lo + step]), patch_size, sigma, kernel)
    return out


def write_patch_dataset(root, patches64: np.ndarray, point_ids, pair_files: dict | None = None) -> Path:
    """Write patches in the mosaic layout read by :func:`load_patch_source`.

    ``pair_files`` maps a file name to an ``(n, 3)`` array of
    ``(patch_a, patch_b, unused)``; point ids are filled in from ``point_ids``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    patches64 = np.asarray(patches64)
    point_ids = np.asarray(point_ids, dtype=np.int64)
    if len(patches64) != len(point_ids):
        raise DataError("one point id per patch required")
    n_mos = -(-len(patches64) // PER_MOSAIC)
    for m in range(n_mos):
        mosaic = np.zeros((MOSAIC_SIDE, MOSAIC_SIDE), dtype=np.uint8)
        for j, p in enumerate(patches64[m * PER_MOSAIC:(m + 1) * PER_MOSAIC]):
            r, c = divmod(j, PER_ROW)
            mosaic[r * RAW_PATCH:(r + 1) * RAW_PATCH, c * RAW_PATCH:(c + 1) * RAW_PATCH] = np.clip(p, 0, 255)
        Image.fromarray(mosaic).save(root / f"patches{m:04d}.bmp")
    (root / "info.txt").write_text("".join(f"{q} 0\n" for q in point_ids))
    for name, pairs in (pair_files or {}).items():
        lines = [f"{a} {point_ids[a]} 0 {b} {point_ids[b]} 0\n" for a, b in np.asarray(pairs)[:, :2]]
        (root / name).write_text("".join(lines))
    return root
