"""Synthetic herbage-like image regression data with easy and hard strata.

Each image is a random blobby partition of the canvas into three categories
(grass-, clover-, and soil-analog); the regression target is the exact painted
area fraction of each category, in percent. Grass and clover share similar
base greens and differ mainly by texture (stripes vs. speckle dots with a
per-sample random dot density), so estimating fractions requires resolving
texture rather than pooling color alone. Hard-stratum samples are biased
toward clover-heavy compositions and degraded by box blur, an optional gray
occluder, and additive noise, while their targets keep the pre-degradation
fractions.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CATEGORIES = ("grass", "clover", "soil")

# Render palette (RGB in [0,1]). The two greens are close enough that telling
# grass from clover regions needs texture as well as color; the clover dot
# color is far from everything else.
GRASS_COLOR = np.array([0.16, 0.58, 0.16])
CLOVER_BASE_COLOR = np.array([0.30, 0.46, 0.32])
CLOVER_DOT_COLOR = np.array([0.62, 0.30, 0.58])
SOIL_COLOR = np.array([0.42, 0.30, 0.16])
OCCLUDER_GRAY = 0.55

_STRIPE_AMP = 0.12
_SOIL_SPECKLE_AMP = 0.06
# per-sample sensor noise: easy samples span this range, so predicted spread
# can learn a capture-quality signal from the easy stratum alone
_EASY_NOISE_RANGE = (0.01, 0.04)
_DOT_DENSITY_RANGE = (0.25, 0.55)


@dataclass(frozen=True)
class SyntheticConfig:
    n_samples: int
    image_size: int = 32
    hard_fraction: float = 0.2
    blur_radius: int = 2
    occluder_probability: float = 0.9
    clover_bias: float = 3.0
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.image_size < 8:
            raise ValueError("image_size must be >= 8")
        if not (0.0 <= self.hard_fraction <= 1.0):
            raise ValueError("hard_fraction must be in [0, 1]")
        if not (0.0 <= self.occluder_probability <= 1.0):
            raise ValueError("occluder_probability must be in [0, 1]")
        if self.blur_radius < 0 or self.noise_sigma < 0 or self.clover_bias <= 0:
            raise ValueError("blur_radius/noise_sigma must be >= 0 and clover_bias > 0")


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # [3, H, W] float64 in [0, 1]
    target: np.ndarray  # [3] percentages summing to 100
    stratum: str  # "easy" | "hard"
    id: str


class Dataset:
    """Column-array container over samples; rows are exposed as :class:`Sample`."""

    def __init__(self, images, targets, strata, ids):
        self.images = np.asarray(images, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.strata = np.asarray(strata)
        self.ids = list(ids)
        n = len(self.ids)
        if not (self.images.shape[0] == self.targets.shape[0] == len(self.strata) == n):
            raise ValueError("column lengths disagree")

    def __len__(self) -> int:
        return len(self.ids)

    def sample(self, i: int) -> Sample:
        return Sample(self.images[i], self.targets[i], str(self.strata[i]), self.ids[i])

    def subset(self, indices) -> "Dataset":
        indices = list(indices)
        return Dataset(
            self.images[indices],
            self.targets[indices],
            self.strata[indices],
            [self.ids[i] for i in indices],
        )

    def stratum_indices(self, stratum: str) -> np.ndarray:
        return np.flatnonzero(self.strata == stratum)


def box_blur(image_hwc: np.ndarray, radius: int) -> np.ndarray:
    """Separable moving-average blur with edge replication."""
    if radius <= 0:
        return image_hwc
    k = 2 * radius + 1
    out = image_hwc
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="edge")
        csum = np.cumsum(padded, axis=axis)
        zero = np.zeros_like(np.take(csum, [0], axis=axis))
        csum = np.concatenate([zero, csum], axis=axis)
        hi = np.take(csum, range(k, csum.shape[axis]), axis=axis)
        lo = np.take(csum, range(0, csum.shape[axis] - k), axis=axis)
        out = (hi - lo) / k
    return out


def _category_counts(fractions: np.ndarray, n_pixels: int) -> np.ndarray:
    """Integer pixel quota per category by largest remainder; sums to n_pixels."""
    raw = fractions * n_pixels
    counts = np.floor(raw).astype(int)
    short = n_pixels - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _render_sample(config: SyntheticConfig, index: int) -> tuple[np.ndarray, np.ndarray, str]:
    rng = np.random.default_rng([config.seed, index])
    size = config.image_size
    hard = bool(rng.random() < config.hard_fraction)

    alpha = np.array([1.5, 1.5, 1.5])
    if hard:
        alpha[1] *= config.clover_bias
    fractions = rng.dirichlet(alpha)

    # Blobby partition: rank a smoothed noise field and cut it at the exact
    # per-category pixel quotas; category order is shuffled per sample.
    field = box_blur(box_blur(rng.random((size, size)), 2), 2)
    ranks = np.argsort(field, axis=None, kind="stable")
    counts = _category_counts(fractions, size * size)
    category_order = rng.permutation(3)
    catmap = np.empty(size * size, dtype=int)
    start = 0
    for cat in category_order:
        catmap[ranks[start : start + counts[cat]]] = cat
        start += counts[cat]
    catmap = catmap.reshape(size, size)
    target = 100.0 * np.bincount(catmap.ravel(), minlength=3) / (size * size)

    image = np.empty((size, size, 3))
    image[catmap == 0] = GRASS_COLOR
    image[catmap == 1] = CLOVER_BASE_COLOR
    image[catmap == 2] = SOIL_COLOR

    # grass: oriented luminance stripes
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.8, 1.6)
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    stripes = _STRIPE_AMP * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    grass = catmap == 0
    image[grass] *= (1.0 + stripes[grass])[:, None]

    # clover: speckle dots at a per-sample density
    density = rng.uniform(*_DOT_DENSITY_RANGE)
    dots = (rng.random((size, size)) < density) & (catmap == 1)
    image[dots] = CLOVER_DOT_COLOR

    # soil: unstructured speckle
    soil = catmap == 2
    image[soil] *= (1.0 + _SOIL_SPECKLE_AMP * rng.standard_normal(int(soil.sum())))[:, None]

    image += rng.uniform(*_EASY_NOISE_RANGE) * rng.standard_normal(image.shape)

    if hard:
        image = box_blur(image, config.blur_radius)
        if rng.random() < config.occluder_probability:
            oh = int(size * rng.uniform(0.25, 0.5))
            ow = int(size * rng.uniform(0.25, 0.5))
            oy = int(rng.integers(0, size - oh + 1))
            ox = int(rng.integers(0, size - ow + 1))
            image[oy : oy + oh, ox : ox + ow] = OCCLUDER_GRAY
        image += config.noise_sigma * rng.standard_normal(image.shape)

    image = np.clip(image, 0.0, 1.0)
    return image.transpose(2, 0, 1), target, "hard" if hard else "easy"


def generate(config: SyntheticConfig) -> Dataset:
    """Generate the configured dataset; deterministic per (seed, sample index)."""
    images = np.empty((config.n_samples, 3, config.image_size, config.image_size))
    targets = np.empty((config.n_samples, 3))
    strata = []
    ids = []
    for i in range(config.n_samples):
        image, target, stratum = _render_sample(config, i)
        images[i] = image
        targets[i] = target
        strata.append(stratum)
        ids.append(f"s{i:06d}")
    return Dataset(images, targets, np.array(strata), ids)


def split(dataset: Dataset, train_frac: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Train on part of the easy stratum; test on the held-out easy rest plus all hard.

    Raises on degenerate strata: the easy stratum must be splittable into
    nonempty train and test parts and the hard stratum must be nonempty so the
    test set covers both strata.
    """
    if not (0.0 < train_frac < 1.0):
        raise ValueError("train_frac must be in (0, 1)")
    easy = dataset.stratum_indices("easy")
    hard = dataset.stratum_indices("hard")
    n_train = int(round(train_frac * len(easy)))
    if len(easy) < 2 or n_train < 1 or n_train >= len(easy):
        raise ValueError(f"insufficient samples in the easy stratum ({len(easy)})")
    if len(hard) < 1:
        raise ValueError("insufficient samples in the hard stratum (0)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(easy))
    train_idx = np.sort(easy[order[:n_train]])
    test_idx = np.sort(np.concatenate([easy[order[n_train:]], hard]))
    return dataset.subset(train_idx), dataset.subset(test_idx)


def save_dataset(dataset: Dataset, out_dir: str, png: bool = False) -> None:
    """Write per-sample tensors (.npy, or .png with --png) plus labels.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, sample_id in enumerate(dataset.ids):
        if png:
            from PIL import Image

            hwc = (dataset.images[i].transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
            Image.fromarray(hwc).save(out / f"{sample_id}.png")
        else:
            np.save(out / f"{sample_id}.npy", dataset.images[i])
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "frac_grass", "frac_clover", "frac_soil", "stratum"])
        for i, sample_id in enumerate(dataset.ids):
            writer.writerow(
                [sample_id, *(repr(float(v)) for v in dataset.targets[i]), dataset.strata[i]]
            )


def load_external(image_dir: str, labels_csv: str) -> Dataset:
    """Load a dataset directory with the same contract as :func:`generate`.

    Images may be .npy float tensors ([3, H, W]) or .png files. Rows whose
    fractions do not sum to 100 +- 0.5 are rejected with their row number.
    """
    image_dir = Path(image_dir)
    images, targets, strata, ids = [], [], [], []
    with open(labels_csv, "r", newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"id", "frac_grass", "frac_clover", "frac_soil", "stratum"}
        if reader.fieldnames is not None and not required <= set(reader.fieldnames):
            raise ValueError(f"labels CSV must have columns {sorted(required)}")
        for rownum, row in enumerate(reader, start=2):
            try:
                fracs = [float(row[f"frac_{c}"]) for c in CATEGORIES]
                stratum = row["stratum"].strip()
                sample_id = row["id"].strip()
            except (KeyError, TypeError, ValueError):
                raise ValueError(f"labels row {rownum}: malformed row") from None
            if abs(sum(fracs) - 100.0) > 0.5:
                raise ValueError(
                    f"labels row {rownum}: fractions sum to {sum(fracs):g}, expected 100 +- 0.5"
                )
            if stratum not in ("easy", "hard"):
                raise ValueError(f"labels row {rownum}: unknown stratum '{stratum}'")
            npy = image_dir / f"{sample_id}.npy"
            png = image_dir / f"{sample_id}.png"
            if npy.exists():
                image = np.load(npy)
            elif png.exists():
                from PIL import Image

                image = np.asarray(Image.open(png), dtype=np.float64) / 255.0
                image = image.transpose(2, 0, 1)
            else:
                raise ValueError(f"labels row {rownum}: missing image for id '{sample_id}'")
            images.append(image)
            targets.append(fracs)
            strata.append(stratum)
            ids.append(sample_id)
    if not ids:
        warnings.warn(f"no rows in {labels_csv}; returning an empty dataset")
        return Dataset(np.zeros((0, 3, 1, 1)), np.zeros((0, 3)), np.array([], dtype="<U4"), [])
    shapes = {tuple(img.shape) for img in images}
    if len(shapes) != 1:
        raise ValueError(f"images have inconsistent shapes: {sorted(shapes)}")
    return Dataset(np.stack(images), np.array(targets), np.array(strata), ids)


def load_dataset(directory: str) -> Dataset:
    return load_external(directory, str(Path(directory) / "labels.csv"))
