"""Image/mask datasets: loading, the seeded train/test split, augmentation, batching.

Directory layout::

    <root>/images/<id>.png|.jpg   8-bit RGB
    <root>/masks/<id>.png          8-bit grayscale, foreground > 127.5
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_SIZE = 256
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MASK_THRESHOLD = 127.5


class DatasetError(Exception):
    pass


@dataclass
class SegSample:
    id: str
    image: np.ndarray  # (3, H, W) float32 in [0, 1]
    mask: np.ndarray  # (1, H, W) float32 in {0, 1}

    def __post_init__(self):
        if self.image.ndim != 3 or self.mask.ndim != 3 or self.mask.shape[0] != 1:
            raise ValueError(f"bad sample shapes image={self.image.shape} mask={self.mask.shape}")
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ spatially")


@dataclass(frozen=True)
class SplitSpec:
    ratio: float = 0.7
    seed: int = 0


def read_image(path, size: int | None = IMAGE_SIZE) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1).copy()


def read_mask(path, size: int | None = IMAGE_SIZE) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if size is not None and im.size != (size, size):
                im = im.resize((size, size), Image.NEAREST)
            arr = np.asarray(im, dtype=np.float32)
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"cannot read mask {path}: {exc}") from exc
    return (arr > MASK_THRESHOLD).astype(np.float32)[None]


def write_mask(mask: np.ndarray, path) -> None:
    """Save a binary (H, W) or (1, H, W) mask as an 8-bit PNG with values 0/255."""
    m = np.asarray(mask).reshape(mask.shape[-2:])
    Image.fromarray(np.where(m > 0.5, 255, 0).astype(np.uint8)).save(path, format="PNG")


def write_image(image: np.ndarray, path) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_dataset(root, size: int = IMAGE_SIZE) -> list[SegSample]:
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"{root} must contain images/ and masks/ directories")
    images = {p.stem: p for p in sorted(img_dir.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}
    samples = []
    for stem in sorted(images):
        mask_path = mask_dir / f"{stem}.png"
        if not mask_path.exists():
            raise DatasetError(f"no mask for image {stem!r} (expected {mask_path})")
        samples.append(SegSample(stem, read_image(images[stem], size), read_mask(mask_path, size)))
    return samples


def split(samples: Sequence[SegSample], spec: SplitSpec = SplitSpec()) -> tuple[list[SegSample], list[SegSample]]:
    """Shuffle (sorted by id first) with a seeded generator; the first floor(ratio*N) train."""
    if len(samples) < 2:
        raise DatasetError("need at least two samples to split")
    ordered = sorted(samples, key=lambda s: s.id)
    perm = np.random.default_rng(spec.seed).permutation(len(ordered))
    n_train = int(math.floor(spec.ratio * len(ordered) + 1e-9))
    shuffled = [ordered[i] for i in perm]
    return shuffled[:n_train], shuffled[n_train:]


# ------------------------------------------------------------------ augmentation


def _rotate_nearest(arr: np.ndarray, angle: float, order: int) -> np.ndarray:
    from scipy import ndimage

    return ndimage.rotate(arr, angle, axes=(2, 1), reshape=False, order=order, mode="constant", cval=0.0)


def augment(sample: SegSample, rng: np.random.Generator, rotation: str = "right_angle",
            max_angle: float = 30.0) -> SegSample:
    """Random horizontal flip, vertical flip (each p=0.5) and rotation, shared by image and mask.

    ``rotation="right_angle"`` draws k*90 degrees, k uniform in {0,1,2,3};
    ``"continuous"`` draws an angle in [-max_angle, max_angle] (nearest-neighbour for the mask).
    """
    img, mask = sample.image, sample.mask
    if rng.random() < 0.5:
        img, mask = img[:, :, ::-1], mask[:, :, ::-1]
    if rng.random() < 0.5:
        img, mask = img[:, ::-1, :], mask[:, ::-1, :]
    if rotation == "right_angle":
        k = int(rng.integers(0, 4))
        if k:
            img, mask = np.rot90(img, k, axes=(1, 2)), np.rot90(mask, k, axes=(1, 2))
    elif rotation == "continuous":
        angle = float(rng.uniform(-max_angle, max_angle))
        img = np.clip(_rotate_nearest(np.ascontiguousarray(img), angle, 1), 0.0, 1.0)
        mask = _rotate_nearest(np.ascontiguousarray(mask), angle, 0)
    elif rotation != "none":
        raise ValueError(f"unknown rotation mode {rotation!r}")
    return SegSample(sample.id, np.ascontiguousarray(img, dtype=np.float32),
                     np.ascontiguousarray(mask, dtype=np.float32))


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream for one sample draw, derived from (seed, epoch, index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, index]))


def batches(samples: Sequence[SegSample], batch_size: int = 8, seed: int = 0, epoch: int = 0,
            do_augment: bool = True, rotation: str = "right_angle",
            workers: int = 1) -> Iterator[tuple[np.ndarray, np.ndarray, list[str]]]:
    """Yield (images (B,3,H,W), masks (B,1,H,W), ids) for one epoch.

    The order is a fresh seeded shuffle per epoch; the last partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(len(samples))

    def prepare(pos: int) -> SegSample:
        s = samples[order[pos]]
        return augment(s, sample_rng(seed, epoch, pos), rotation) if do_augment else s

    pool = None
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        pool = ThreadPoolExecutor(max_workers=workers)
    try:
        for start in range(0, len(order), batch_size):
            idx = range(start, min(start + batch_size, len(order)))
            items = list(pool.map(prepare, idx)) if pool else [prepare(i) for i in idx]
            yield (np.stack([s.image for s in items]), np.stack([s.mask for s in items]), [s.id for s in items])
    finally:
        if pool is not None:
            pool.shutdown()


def stack(samples: Sequence[SegSample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


# --------------------------------------------------------------- synthetic data


def synthetic_ellipses(n: int = 8, size: int = 256, seed: int = 0) -> list[SegSample]:
    """Images with one or two random filled ellipses as foreground on a textured background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 3))):
            cy, cx = rng.uniform(0.25, 0.75, 2) * size
            ry, rx = rng.uniform(0.08, 0.22, 2) * size
            theta = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            mask |= (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        bg = rng.uniform(0.6, 0.9, 3)
        fg = rng.uniform(0.15, 0.4, 3)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        img = img + rng.normal(0.0, 0.04, (3, size, size))
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        samples.append(SegSample(f"ellipse_{i:03d}", img, mask[None].astype(np.float32)))
    return samples


def write_dataset(samples: Sequence[SegSample], root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(s.image, root / "images" / f"{s.id}.png")
        write_mask(s.mask, root / "masks" / f"{s.id}.png")
