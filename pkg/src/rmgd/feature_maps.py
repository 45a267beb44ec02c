"""The thirteen per-pixel property maps a descriptor is computed from."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAP_NAMES = (
    "Int", "XPart", "YPart", "Mag", "Ori",
    "Chan1", "Chan2", "Chan3", "Chan4", "Chan5", "Chan6", "Chan7", "Chan8",
)
N_ORIENTATIONS = 8
_BIN_WIDTH = 2 * np.pi / N_ORIENTATIONS


def map_index(name: str) -> int:
    try:
        return MAP_NAMES.index(name)
    except ValueError:
        raise KeyError(f"unknown map {name!r}; expected one of {MAP_NAMES}") from None


@dataclass(frozen=True)
class FeatureStack:
    maps: np.ndarray  # (13, k, k)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.maps[map_index(name)]


def central_gradient(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences along columns (x) and rows (y) with edge replication."""
    v = np.asarray(pixels, dtype=np.float64)
    pad = [(0, 0)] * (v.ndim - 2) + [(1, 1), (1, 1)]
    p = np.pad(v, pad, mode="edge")
    gx = (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / 2.0
    gy = (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) / 2.0
    return gx, gy


def soft_assign_orientation(mag, theta) -> np.ndarray:
    """Split ``mag`` linearly between the two nearest of 8 orientation bins.

    Bin ``c`` (0-based) is centred at ``(c + 0.5) * pi / 4`` and the bins wrap
    around the circle.  Returns an array with a trailing axis of length 8 whose
    entries sum to ``mag``.
    """
    mag = np.asarray(mag, dtype=np.float64)
    pos = np.asarray(theta, dtype=np.float64) / _BIN_WIDTH - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % N_ORIENTATIONS
    hi = (lo + 1) % N_ORIENTATIONS
    out = np.zeros(mag.shape + (N_ORIENTATIONS,))
    np.put_along_axis(out, lo[..., None], (mag * (1.0 - frac))[..., None], axis=-1)
    # lo != hi always, so the second write never overwrites the first
    np.put_along_axis(out, hi[..., None], (mag * frac)[..., None], axis=-1)
    return out


def feature_maps(pixels: np.ndarray) -> np.ndarray:
    """All 13 maps for a patch ``(k, k)`` or a batch ``(n, k, k)``; map axis is -3."""
    v = np.asarray(pixels, dtype=np.float64)
    gx, gy = central_gradient(v)
    mag = np.hypot(gx, gy)
    ori = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    # mod can return exactly 2*pi for tiny negative angles
    ori = np.where(ori >= 2 * np.pi, 0.0, ori)
    chans = np.moveaxis(soft_assign_orientation(mag, ori), -1, -3)
    return np.concatenate([np.stack([v, gx, gy, mag, ori], axis=-3), chans], axis=-3)


def feature_map(pixels: np.ndarray, name: str) -> np.ndarray:
    """A single named map, computed without materialising the other twelve."""
    idx = map_index(name)
    v = np.asarray(pixels, dtype=np.float64)
    if idx == 0:
        return v
    gx, gy = central_gradient(v)
    if idx == 1:
        return gx
    if idx == 2:
        return gy
    mag = np.hypot(gx, gy)
    if idx == 3:
        return mag
    ori = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    ori = np.where(ori >= 2 * np.pi, 0.0, ori)
    if idx == 4:
        return ori
    return soft_assign_orientation(mag, ori)[..., idx - 5]


def compute_feature_stack(patch) -> FeatureStack:
    pixels = getattr(patch, "pixels", patch)
    return FeatureStack(feature_maps(pixels))
