"""Entropy sources extracted from a rendered view and its text description.

Four visual sources feed the mixture: global (a, b) chroma (GO), global hue
(GH), local edge density inside object masks (LED) and per-object LAB
histograms (OL). Text contributes a scaling factor from noun-phrase and
descriptor counts.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .info import Histogram

DEFAULT_COLOR_BINS = 8
DEFAULT_LED_BINS = 16
ACHROMATIC_SATURATION = 0.05

# a and b of sRGB colours stay inside roughly [-108, 99]
AB_RANGE = (-110.0, 110.0)
L_RANGE = (0.0, 100.0)
# largest Sobel magnitude on 8-bit grayscale: |gx| = |gy| = 4 * 255
MAX_SOBEL = 4 * 255 * math.sqrt(2)

_D65 = np.array([0.95047, 1.0, 1.08883])
_RGB_TO_XYZ = np.array(
    [[0.4124564, 0.3575761, 0.1804375],
     [0.2126729, 0.7151522, 0.0721750],
     [0.0193339, 0.1191920, 0.9503041]]
)


class SourceError(ValueError):
    pass


class ColorSpace(str, Enum):
    LAB_AB = "lab_ab"
    HSV_HUE = "hsv_hue"


@dataclass(frozen=True)
class RasterView:
    """RGB8 image (height, width, 3) plus disjoint boolean object masks."""

    pixels: np.ndarray
    masks: tuple = ()

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise SourceError("pixels must have shape (height, width, 3)")
        px = px.astype(np.uint8, copy=False)
        masks = tuple(np.asarray(m, dtype=bool) for m in self.masks)
        for m in masks:
            if m.shape != px.shape[:2]:
                raise SourceError("mask dimensions differ from the image")
        if len(masks) > 1:
            cover = np.sum(masks, axis=0)
            if cover.max() > 1:
                raise SourceError("object masks must be disjoint")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "masks", masks)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ScalingFactors:
    noun_phrase_count: int
    descriptor_count: int
    lambda_value: float


@dataclass(frozen=True)
class SourceSet:
    global_ab: Optional[Histogram] = None
    global_hue: Optional[Histogram] = None
    edge_density: Optional[Histogram] = None
    object_lab: tuple = ()
    scaling: ScalingFactors = field(default_factory=lambda: ScalingFactors(0, 0, 1.0))
    warnings: tuple = ()

    def named(self) -> dict:
        """Sources by their short names; OL is the mean of the per-object histograms."""
        out = {}
        if self.global_ab is not None:
            out["GO"] = self.global_ab
        if self.global_hue is not None:
            out["GH"] = self.global_hue
        if self.edge_density is not None:
            out["LED"] = self.edge_density
        if self.object_lab:
            out["OL"] = Histogram(np.mean([h.bins for h in self.object_lab], axis=0))
        if not out:
            raise SourceError("source set is empty")
        return out


# -- colour conversion -------------------------------------------------------

def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """sRGB8 (..., 3) to CIELAB under D65."""
    c = _srgb_to_linear(np.asarray(rgb, dtype=float) / 255.0)
    xyz = c @ _RGB_TO_XYZ.T / _D65
    eps, kappa = 216 / 24389, 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone HSV with hue in [0, 1); rgb is 8-bit."""
    c = np.asarray(rgb, dtype=float) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    h = np.where(mx == r, ((g - b) / safe) % 6,
                 np.where(mx == g, (b - r) / safe + 2, (r - g) / safe + 4))
    h = np.where(delta > 0, h / 6.0, 0.0) % 1.0
    return np.stack([h, s, mx], axis=-1)


def _convert_unique(fn, px: np.ndarray) -> np.ndarray:
    """Apply a per-pixel conversion once per distinct colour of an (N, 3) uint8 array."""
    px = np.asarray(px, dtype=np.uint8)
    packed = (px[:, 0].astype(np.int64) << 16) | (px[:, 1].astype(np.int64) << 8) | px[:, 2]
    uniq, inv = np.unique(packed, return_inverse=True)
    colours = np.stack([uniq >> 16, (uniq >> 8) & 255, uniq & 255], axis=1)
    return fn(colours)[inv.reshape(-1)]


def _axis_index(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def _check_bins(bins_per_axis: int):
    if bins_per_axis < 2:
        raise SourceError("degenerate binning")


def _ab_counts(lab: np.ndarray, bins: int) -> np.ndarray:
    ia = _axis_index(lab[:, 1], *AB_RANGE, bins)
    ib = _axis_index(lab[:, 2], *AB_RANGE, bins)
    return np.bincount(ia * bins + ib, minlength=bins * bins).astype(float)


def extract_global_color_hist(view: RasterView, space: ColorSpace = ColorSpace.LAB_AB,
                              bins_per_axis: int = DEFAULT_COLOR_BINS) -> Histogram:
    """Whole-image colour histogram.

    LAB_AB gives the joint (a, b) histogram flattened row-major to bins**2
    bins. HSV_HUE gives `bins_per_axis` hue bins followed by one achromatic
    bin for pixels with saturation <= 0.05.
    """
    _check_bins(bins_per_axis)
    px = view.pixels.reshape(-1, 3)
    if px.shape[0] == 0:
        raise SourceError("empty input")
    space = ColorSpace(space)
    if space is ColorSpace.LAB_AB:
        edges = np.linspace(*AB_RANGE, bins_per_axis + 1)
        return Histogram.from_counts(_ab_counts(_convert_unique(rgb_to_lab, px), bins_per_axis), edges)
    hsv = _convert_unique(rgb_to_hsv, px)
    chroma = hsv[:, 1] > ACHROMATIC_SATURATION
    idx = np.where(chroma, _axis_index(hsv[:, 0], 0.0, 1.0, bins_per_axis), bins_per_axis)
    counts = np.bincount(idx, minlength=bins_per_axis + 1).astype(float)
    return Histogram.from_counts(counts)


def grayscale(pixels: np.ndarray) -> np.ndarray:
    px = np.asarray(pixels, dtype=float)
    return px[..., 0] * 0.299 + px[..., 1] * 0.587 + px[..., 2] * 0.114


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def _masked_magnitudes(gray: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # outside pixels take the value of the nearest inside pixel, so the
    # mask outline itself contributes no gradient
    _, (ri, ci) = ndimage.distance_transform_edt(~mask, return_indices=True)
    filled = gray[ri, ci]
    return sobel_magnitude(filled)[mask]


def extract_local_edge_density(view: RasterView, bins: int = DEFAULT_LED_BINS) -> Histogram:
    """Sobel magnitudes pooled over every object mask, binned over [0, max]."""
    masks = [m for m in view.masks if m.any()]
    if not masks:
        raise SourceError("no objects segmented")
    gray = grayscale(view.pixels)
    mags = np.concatenate([_masked_magnitudes(gray, m) for m in masks])
    edges = np.linspace(0.0, MAX_SOBEL, bins + 1)
    idx = _axis_index(mags, 0.0, MAX_SOBEL, bins)
    return Histogram.from_counts(np.bincount(idx, minlength=bins).astype(float), edges)


def extract_object_level_hists(view: RasterView, bins_per_axis: int = DEFAULT_COLOR_BINS):
    """One histogram per mask: joint (a, b) block followed by a 1-D L block, each half the mass.

    Returns (histograms, warnings); masks with no pixels are skipped and named
    in the warnings.
    """
    _check_bins(bins_per_axis)
    if not view.masks:
        raise SourceError("no objects segmented")
    hists: List[Histogram] = []
    warnings: List[str] = []
    for i, mask in enumerate(view.masks):
        if not mask.any():
            warnings.append(f"object {i}: empty mask skipped")
            continue
        lab = _convert_unique(rgb_to_lab, view.pixels[mask])
        ab = _ab_counts(lab, bins_per_axis)
        L = np.bincount(_axis_index(lab[:, 0], *L_RANGE, bins_per_axis),
                        minlength=bins_per_axis).astype(float)
        hists.append(Histogram(np.concatenate([ab / ab.sum(), L / L.sum()]) / 2.0))
    return hists, warnings


# -- text --------------------------------------------------------------------

@dataclass(frozen=True)
class Lexicon:
    stopwords: frozenset
    nouns: frozenset
    adjectives: frozenset
    noun_suffixes: tuple
    adjective_suffixes: tuple

    @classmethod
    def from_dir(cls, path) -> "Lexicon":
        path = Path(path)
        return cls(*(_read_words(path / name) for name in _LEXICON_FILES))


_LEXICON_FILES = ("stopwords.txt", "nouns.txt", "adjectives.txt",
                  "noun_suffixes.txt", "adjective_suffixes.txt")


def _read_words(path) -> frozenset | tuple:
    words = [w.strip().lower() for w in Path(path).read_text().splitlines()]
    words = [w for w in words if w and not w.startswith("#")]
    if "suffixes" in Path(path).name:
        return tuple(sorted(words, key=len, reverse=True))
    return frozenset(words)


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    root = resources.files("mizocam") / "data" / "lexicon"
    with resources.as_file(root) as path:
        return Lexicon.from_dir(path)


def _tag(word: str, lex: Lexicon) -> str:
    if word in lex.stopwords:
        return "S"
    is_noun, is_adj = word in lex.nouns, word in lex.adjectives
    if is_noun and is_adj:
        return "?"
    if is_noun:
        return "N"
    if is_adj:
        return "A"
    if len(word) > 4:
        if any(word.endswith(s) for s in lex.noun_suffixes):
            return "N"
        if any(word.endswith(s) for s in lex.adjective_suffixes):
            return "A"
    return "O"


def count_terms(description: str, lexicon: Optional[Lexicon] = None) -> tuple[int, int]:
    """(noun phrases, descriptors). Consecutive nouns form one phrase; a word
    listed as both noun and adjective is a descriptor when a noun or
    descriptor follows it."""
    lex = lexicon or default_lexicon()
    words = re.findall(r"[a-z]+", description.lower())
    tags = [_tag(w, lex) for w in words]
    for i, t in enumerate(tags):
        if t == "?":
            nxt = tags[i + 1] if i + 1 < len(tags) else "S"
            tags[i] = "A" if nxt in ("A", "N", "?") else "N"
    descriptors = tags.count("A")
    phrases = sum(1 for i, t in enumerate(tags) if t == "N" and (i == 0 or tags[i - 1] != "N"))
    return phrases, descriptors


def compute_scaling_factors(description: str, lexicon: Optional[Lexicon] = None) -> ScalingFactors:
    nouns, descriptors = count_terms(description, lexicon)
    return ScalingFactors(nouns, descriptors, 1.0 + math.log1p(nouns + descriptors))


# -- bundling ----------------------------------------------------------------

def extract_sources(view: RasterView, description: str = "",
                    bins_per_axis: int = DEFAULT_COLOR_BINS,
                    led_bins: int = DEFAULT_LED_BINS) -> SourceSet:
    """All four visual sources plus text scaling for one view.

    A view with no visible object gets point masses at the zero-edge bin and
    the achromatic corner so downstream mixtures keep a full source list.
    """
    warnings: list = []
    go = extract_global_color_hist(view, ColorSpace.LAB_AB, bins_per_axis)
    gh = extract_global_color_hist(view, ColorSpace.HSV_HUE, bins_per_axis)
    if any(m.any() for m in view.masks):
        led = extract_local_edge_density(view, led_bins)
        ol, warnings = extract_object_level_hists(view, bins_per_axis)
    else:
        warnings.append("no visible objects")
        led = Histogram.point_mass(led_bins, 0)
        ol = [Histogram.point_mass(bins_per_axis * bins_per_axis + bins_per_axis, 0)]
    return SourceSet(go, gh, led, tuple(ol), compute_scaling_factors(description), tuple(warnings))


# -- portable any-map files --------------------------------------------------

def read_ppm(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.format != "PPM":
            raise SourceError(f"{path}: not a portable any-map file")
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def read_pgm_mask(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def write_ppm(path, pixels: np.ndarray):
    from PIL import Image

    Image.fromarray(np.asarray(pixels, dtype=np.uint8), "RGB").save(path, format="PPM")


def write_pgm_mask(path, mask: np.ndarray):
    from PIL import Image

    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, "L").save(path, format="PPM")


def load_view(image_path, mask_paths: Sequence = ()) -> RasterView:
    return RasterView(read_ppm(image_path), tuple(read_pgm_mask(p) for p in mask_paths))
