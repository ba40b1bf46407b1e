"""Weak/strong augmentation for vector and small grayscale-image samples.

Weak views only perturb geometry (noise for vectors, crop and flip for
images); strong views add masking or appearance changes on top.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .config import AugmentationPolicy
from .errors import ConfigError, ShapeError


def augment(x, policy: AugmentationPolicy, rng, image_shape=None):
    """Return an augmented copy of ``x`` (one sample or a batch of rows)."""
    if policy.kind not in ("weak", "strong"):
        raise ConfigError(f"unknown augmentation policy {policy.kind!r}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = np.atleast_2d(x)
    if policy.input_kind == "vector":
        out = _augment_vectors(batch, policy, rng)
    elif policy.input_kind == "image":
        out = _augment_images(batch, policy, rng, image_shape)
    else:
        raise ConfigError(f"unknown input kind {policy.input_kind!r}")
    return out[0] if single else out


def _augment_vectors(x, policy, rng):
    out = x.copy()
    if policy.noise_std > 0:
        out += policy.noise_std * rng.standard_normal(x.shape)
    if policy.kind == "strong" and policy.mask_rate > 0:
        out[rng.random(x.shape) < policy.mask_rate] = 0.0
    return out


def _square_shape(n):
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ShapeError(f"cannot infer a square image from {n} values; pass image_shape")
    return side, side


def random_resized_crop(img, scale_min, rng, ratio=(3 / 4, 4 / 3)):
    h, w = img.shape
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(scale_min, 1.0)
        aspect = np.exp(rng.uniform(np.log(ratio[0]), np.log(ratio[1])))
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = rng.integers(0, h - ch + 1)
            left = rng.integers(0, w - cw + 1)
            break
    else:
        ch, cw, top, left = h, w, 0, 0
    # bilinear resample of the crop back to the full grid
    rows = top + (np.arange(h) + 0.5) * ch / h - 0.5
    cols = left + (np.arange(w) + 0.5) * cw / w - 0.5
    grid = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(img, grid, order=1, mode="nearest")


def _augment_images(x, policy, rng, image_shape):
    shape = tuple(image_shape) if image_shape is not None else _square_shape(x.shape[1])
    out = np.empty_like(x)
    for n, flat in enumerate(x):
        img = random_resized_crop(flat.reshape(shape), policy.crop_scale_min, rng)
        if rng.random() < policy.flip_prob:
            img = img[:, ::-1]
        if policy.kind == "strong":
            if policy.jitter_strength > 0 and rng.random() < policy.jitter_prob:
                s = policy.jitter_strength
                img = img * (1.0 + rng.uniform(-s, s))
                mean = img.mean()
                img = (img - mean) * (1.0 + rng.uniform(-s, s)) + mean
            if rng.random() < policy.invert_prob:
                img = img.max() + img.min() - img
        out[n] = img.reshape(-1)
    return out
