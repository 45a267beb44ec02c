"""Synthetic patch-correspondence data in the Brown mosaic layout.

Each 3-D point gets its own random multi-scale texture; its views are small
similarity warps of that texture with a gain/bias change and sensor noise.
Useful for exercising the full pipeline when the real datasets are absent.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset_io import RAW_PATCH, PairDataset, write_patch_dataset

_SCENE = 96


def _texture(rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((_SCENE, _SCENE))
    for sigma, amp in ((12.0, 1.0), (5.0, 0.8), (2.0, 0.5)):
        img += amp * ndimage.gaussian_filter(rng.standard_normal((_SCENE, _SCENE)), sigma, mode="wrap") * sigma
    img = (img - img.mean()) / (img.std() + 1e-12)
    return 128.0 + 45.0 * img


def _view(scene: np.ndarray, rng: np.random.Generator, jitter: float, centre=None) -> np.ndarray:
    angle = rng.normal(0.0, 0.12 * jitter)
    scale = np.exp(rng.normal(0.0, 0.08 * jitter))
    shift = rng.normal(0.0, 1.5 * jitter, size=2)
    c, s = np.cos(angle) / scale, np.sin(angle) / scale
    mat = np.array([[c, -s], [s, c]])
    centre_out = np.array([RAW_PATCH / 2 - 0.5] * 2)
    if centre is None:
        centre = (np.array(scene.shape, dtype=np.float64) - 1) / 2
    centre_in = np.asarray(centre, dtype=np.float64) + shift
    offset = centre_in - mat @ centre_out
    patch = ndimage.affine_transform(scene, mat, offset=offset, output_shape=(RAW_PATCH, RAW_PATCH),
                                     order=1, mode="reflect")
    gain = np.exp(rng.normal(0.0, 0.15 * jitter))
    bias = rng.normal(0.0, 10.0 * jitter)
    patch = gain * (patch - 128.0) + 128.0 + bias + rng.normal(0.0, 6.0 * jitter, patch.shape)
    return np.clip(np.rint(patch), 0, 255).astype(np.uint8)


def make_patches(n_points: int, views: int = 3, seed: int = 0, jitter: float = 1.0):
    """``(n_points * views, 64, 64)`` uint8 patches and their point ids."""
    rng = np.random.default_rng(seed)
    patches = np.empty((n_points * views, RAW_PATCH, RAW_PATCH), dtype=np.uint8)
    for p in range(n_points):
        scene = _texture(rng)
        for v in range(views):
            patches[p * views + v] = _view(scene, rng, jitter)
    return patches, np.repeat(np.arange(n_points), views)


def make_patches_from_images(images, n_points: int, views: int = 3, seed: int = 0, jitter: float = 1.0,
                             min_std: float = 12.0):
    """Like :func:`make_patches`, but each point is a textured spot of a real image.

    ``images`` is a sequence of 2-D grayscale arrays in [0, 255].  Spots are
    drawn uniformly (images weighted by area) away from the borders, keeping
    only those whose 64x64 neighbourhood has a standard deviation of at least
    ``min_std``.
    """
    rng = np.random.default_rng(seed)
    images = [np.asarray(im, dtype=np.float64) for im in images]
    margin = RAW_PATCH
    usable = [im for im in images if min(im.shape) > 2 * margin + 1]
    if not usable:
        raise ValueError("no image is large enough for 64x64 views with a margin")
    area = np.array([(im.shape[0] - 2 * margin) * (im.shape[1] - 2 * margin) for im in usable], dtype=float)
    patches = np.empty((n_points * views, RAW_PATCH, RAW_PATCH), dtype=np.uint8)
    h = RAW_PATCH // 2
    for p in range(n_points):
        for _ in range(1000):
            im = usable[rng.choice(len(usable), p=area / area.sum())]
            cy = rng.integers(margin, im.shape[0] - margin)
            cx = rng.integers(margin, im.shape[1] - margin)
            if im[cy - h:cy + h, cx - h:cx + h].std() >= min_std:
                break
        for v in range(views):
            patches[p * views + v] = _view(im, rng, jitter, centre=(cy - 0.5, cx - 0.5))
    return patches, np.repeat(np.arange(n_points), views)


def make_pairs(point_ids: np.ndarray, n_match: int, n_nonmatch: int, seed: int = 0) -> np.ndarray:
    """Distinct ``(a, b, label)`` rows; matches share a point id, non-matches do not."""
    rng = np.random.default_rng(seed)
    point_ids = np.asarray(point_ids)
    order = np.argsort(point_ids, kind="stable")
    starts = np.flatnonzero(np.r_[True, np.diff(point_ids[order]) != 0])
    members = np.split(order, starts[1:])
    members = [m for m in members if len(m) >= 2]
    seen = set()
    rows = []
    while len(rows) < n_match:
        g = members[rng.integers(len(members))]
        a, b = sorted(rng.choice(g, 2, replace=False).tolist())
        if (a, b) not in seen:
            seen.add((a, b))
            rows.append((a, b, 1))
    n = len(point_ids)
    while len(rows) < n_match + n_nonmatch:
        a, b = sorted(rng.choice(n, 2, replace=False).tolist())
        if point_ids[a] != point_ids[b] and (a, b) not in seen:
            seen.add((a, b))
            rows.append((a, b, 0))
    rows = np.asarray(rows, dtype=np.int64)
    return rows[rng.permutation(len(rows))]


def pairs_to_dataset(rows: np.ndarray, source: str = "synthetic") -> PairDataset:
    return PairDataset(rows[:, 0].copy(), rows[:, 1].copy(), rows[:, 2].copy(), source=source)


def write_synthetic_dataset(root, n_points: int, views: int = 3, pair_files: dict | None = None,
                            seed: int = 0, jitter: float = 1.0) -> Path:
    """Write a synthetic dataset directory.

    ``pair_files`` maps file names to ``(n_match, n_nonmatch)``.
    """
    patches, pids = make_patches(n_points, views, seed, jitter)
    files = {}
    for i, (name, (nm, nn)) in enumerate(sorted((pair_files or {}).items())):
        files[name] = make_pairs(pids, nm, nn, seed=seed + 1 + i)
    return write_patch_dataset(root, patches, pids, files)
