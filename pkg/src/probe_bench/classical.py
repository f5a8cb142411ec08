"""Handcrafted 14-dimensional color and texture features for RGB images.

The vector layout is fixed:

    [mean_S, std_S, mean_V, std_V,
     homogeneity_0, entropy_0, homogeneity_90, entropy_90,
     dB(S, class0), dB(S, class1), dB(S, class2),
     dB(V, class0), dB(V, class1), dB(V, class2)]

where S and V are the saturation and value channels of the hexcone HSV
transform, the texture pair comes from a symmetric gray-level
co-occurrence matrix over the quantized V channel at two orientations,
and dB is the Bhattacharyya distance between an image's channel
histogram and a per-class reference histogram (bin-wise mean of the
class members' histograms, renormalized).

All statistics use population conventions and natural logarithms.  The
first eight entries depend on the image alone; the last six depend on
the reference set, so evaluation code can rebuild them per training
fold from stored per-image histograms without touching pixels again.

Images are 8-bit RGB rasters.  ``load_rgb_image`` accepts any raster
format Pillow can decode; PNG and binary PPM are the supported
interchange formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

CLASSICAL_DIM = 14
GLCM_ORIENTATIONS = (0, 90)
BHATTACHARYYA_EPSILON = 1e-12


@dataclass(frozen=True)
class ClassicalConfig:
    """Quantization settings: GLCM levels/offset and histogram bins."""

    levels: int = 32
    distance: int = 1
    bins: int = 32

    def validate(self) -> None:
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.distance < 1:
            raise ConfigError(f"distance must be >= 1, got {self.distance}")
        if self.bins < 1:
            raise ConfigError(f"bins must be >= 1, got {self.bins}")


@dataclass(frozen=True)
class HsvImage:
    """Per-pixel hue in [0, 360), saturation and value in [0, 1]."""

    h: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if self.h.ndim != 2 or self.h.shape != self.s.shape or self.h.shape != self.v.shape:
            raise DataError(
                "HSV channels must be 2-D arrays of one shape, got "
                f"{self.h.shape}, {self.s.shape}, {self.v.shape}"
            )
        if self.h.size == 0:
            raise DataError("image must contain at least one pixel")

    @property
    def height(self) -> int:
        return int(self.v.shape[0])

    @property
    def width(self) -> int:
        return int(self.v.shape[1])


def _check_rgb(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.size == 0:
        raise DataError(f"expected a nonempty (height, width, 3) raster, got shape {rgb.shape}")
    if rgb.dtype != np.uint8:
        raise DataError(f"expected 8-bit channels, got dtype {rgb.dtype}")
    return rgb


def rgb_to_hsv(rgb: np.ndarray) -> HsvImage:
    """Hexcone HSV transform of an 8-bit RGB raster.

    Saturation is defined as 0 for black pixels and hue as 0 for all
    achromatic pixels.
    """
    rgb = _check_rgb(rgb)
    x = rgb.astype(np.float64) / 255.0
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    v = x.max(axis=2)
    delta = v - x.min(axis=2)

    s = np.zeros_like(v)
    np.divide(delta, v, out=s, where=v > 0)

    # Piecewise hue; channel priority r, g, b resolves ties in the max.
    safe = np.where(delta > 0, delta, 1.0)
    h = np.select(
        [delta == 0, v == r, v == g],
        [0.0, ((g - b) / safe) % 6.0, (b - r) / safe + 2.0],
        default=(r - g) / safe + 4.0,
    )
    return HsvImage(h=60.0 * h, s=s, v=v)


def hsv_stats(img: HsvImage) -> np.ndarray:
    """Mean and population standard deviation of the S and V channels."""
    return np.array([img.s.mean(), img.s.std(), img.v.mean(), img.v.std()])


def quantize_channel(channel: np.ndarray, levels: int) -> np.ndarray:
    """Uniform quantization of a [0, 1] channel to integer levels."""
    q = np.floor(channel * levels).astype(np.int64)
    return np.minimum(q, levels - 1)


def glcm_matrix(img: HsvImage, orientation: int, levels: int, distance: int) -> np.ndarray:
    """Symmetric normalized co-occurrence matrix of the quantized V channel.

    Orientation 0 pairs pixels along rows (column offset), 90 along
    columns (row offset); each pair is counted in both orders.
    """
    if orientation not in GLCM_ORIENTATIONS:
        raise ConfigError(f"orientation must be one of {GLCM_ORIENTATIONS}, got {orientation}")
    if levels < 1:
        raise ConfigError(f"levels must be >= 1, got {levels}")
    if distance < 1:
        raise ConfigError(f"distance must be >= 1, got {distance}")
    q = quantize_channel(img.v, levels)
    if orientation == 0:
        a, b = q[:, :-distance], q[:, distance:]
    else:
        a, b = q[:-distance, :], q[distance:, :]
    if a.size == 0:
        raise DataError(
            f"image of shape {q.shape} has no pixel pairs at distance "
            f"{distance}, orientation {orientation}"
        )
    counts = np.bincount((a * levels + b).ravel(), minlength=levels * levels)
    pair_counts = counts.reshape(levels, levels).astype(np.float64)
    sym = pair_counts + pair_counts.T
    return sym / sym.sum()


def glcm_features(
    img: HsvImage, orientation: int, levels: int, distance: int
) -> tuple[float, float]:
    """Homogeneity and entropy of the co-occurrence matrix."""
    p = glcm_matrix(img, orientation, levels, distance)
    idx = np.arange(p.shape[0])
    homogeneity = (p / (1.0 + np.abs(idx[:, None] - idx[None, :]))).sum()
    nz = p[p > 0]
    entropy = -(nz * np.log(nz)).sum()
    return float(homogeneity), float(entropy)


def channel_histogram(channel: np.ndarray, bins: int) -> np.ndarray:
    """Normalized histogram of a [0, 1] channel over uniform bins."""
    counts, _ = np.histogram(channel, bins=bins, range=(0.0, 1.0))
    total = counts.sum()
    if total == 0:
        raise DataError("cannot build a histogram from an empty channel")
    return counts / total


def image_histograms(img: HsvImage, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """S-channel and V-channel histograms of one image."""
    return channel_histogram(img.s, bins), channel_histogram(img.v, bins)


def bhattacharyya_distance(h1: np.ndarray, h2: np.ndarray) -> float:
    """-ln of the Bhattacharyya coefficient, clamped away from zero."""
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape or h1.ndim != 1:
        raise DataError(f"histograms must share one bin count, got shapes {h1.shape} and {h2.shape}")
    coefficient = np.sqrt(h1 * h2).sum()
    # clamp to [eps, 1]: roundoff can push the coefficient of equal
    # histograms past 1, which would turn the distance negative
    bounded = min(max(float(coefficient), BHATTACHARYYA_EPSILON), 1.0)
    return -math.log(bounded)


@dataclass(frozen=True)
class ClassReferences:
    """Per-class reference histograms for the S and V channels, (K, B) each."""

    s: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        if self.s.shape != self.v.shape or self.s.ndim != 2:
            raise DataError(
                f"reference tables must be two (n_classes, bins) arrays, got "
                f"{self.s.shape} and {self.v.shape}"
            )

    @property
    def n_classes(self) -> int:
        return int(self.s.shape[0])

    @property
    def bins(self) -> int:
        return int(self.s.shape[1])


def references_from_histograms(
    s_hists: np.ndarray,
    v_hists: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
) -> ClassReferences:
    """Bin-wise mean of member histograms per class, renormalized.

    Accepts precomputed per-image histograms so evaluation folds can be
    rebuilt without reloading images.
    """
    s_hists = np.asarray(s_hists, dtype=np.float64)
    v_hists = np.asarray(v_hists, dtype=np.float64)
    labels = np.asarray(labels)
    if s_hists.shape != v_hists.shape or s_hists.ndim != 2 or s_hists.shape[0] != labels.shape[0]:
        raise DataError(
            f"need matching (n_images, bins) histogram tables and n_images labels, got "
            f"{s_hists.shape}, {v_hists.shape}, {labels.shape}"
        )
    s_refs = np.empty((n_classes, s_hists.shape[1]))
    v_refs = np.empty_like(s_refs)
    for cls in range(n_classes):
        members = labels == cls
        if not members.any():
            raise DataError(f"class {cls} has no images to build a reference from")
        s_refs[cls] = s_hists[members].mean(axis=0)
        v_refs[cls] = v_hists[members].mean(axis=0)
    s_refs /= s_refs.sum(axis=1, keepdims=True)
    v_refs /= v_refs.sum(axis=1, keepdims=True)
    return ClassReferences(s=s_refs, v=v_refs)


def class_reference_histograms(
    images: Sequence[tuple[HsvImage, int]], bins: int, n_classes: int | None = None
) -> ClassReferences:
    """Reference histograms from labeled images directly."""
    if not images:
        raise DataError("need at least one labeled image")
    labels = np.array([label for _, label in images])
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    pairs = [image_histograms(img, bins) for img, _ in images]
    s_hists = np.stack([p[0] for p in pairs])
    v_hists = np.stack([p[1] for p in pairs])
    return references_from_histograms(s_hists, v_hists, labels, n_classes)


def base_features(img: HsvImage, config: ClassicalConfig) -> np.ndarray:
    """The eight reference-free entries: HSV stats plus both GLCM pairs."""
    parts = [hsv_stats(img)]
    for orientation in GLCM_ORIENTATIONS:
        parts.append(np.array(glcm_features(img, orientation, config.levels, config.distance)))
    return np.concatenate(parts)


def distance_features(
    s_hist: np.ndarray, v_hist: np.ndarray, refs: ClassReferences
) -> np.ndarray:
    """Bhattacharyya distances to every class reference, S block then V block."""
    s_part = [bhattacharyya_distance(s_hist, refs.s[c]) for c in range(refs.n_classes)]
    v_part = [bhattacharyya_distance(v_hist, refs.v[c]) for c in range(refs.n_classes)]
    return np.array(s_part + v_part)


def extract_classical(
    rgb: np.ndarray, refs: ClassReferences, config: ClassicalConfig | None = None
) -> np.ndarray:
    """Full 14-entry feature vector for one RGB raster."""
    config = config or ClassicalConfig()
    config.validate()
    if refs.n_classes != 3:
        raise DataError(
            f"the 14-entry layout requires exactly 3 class references, got {refs.n_classes}"
        )
    if refs.bins != config.bins:
        raise DataError(f"references use {refs.bins} bins but config asks for {config.bins}")
    img = rgb_to_hsv(rgb)
    s_hist, v_hist = image_histograms(img, config.bins)
    return np.concatenate([base_features(img, config), distance_features(s_hist, v_hist, refs)])


def load_rgb_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an (height, width, 3) uint8 array."""
    try:
        with Image.open(path) as handle:
            return np.asarray(handle.convert("RGB"))
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}") from None
    except UnidentifiedImageError:
        raise DataError(f"not a decodable image file: {path}") from None
