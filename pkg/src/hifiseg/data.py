"""Image/mask loading, resizing, multi-scale batching and synthetic polyp-like data."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core.functional import bilinear_matrix

__all__ = [
    "SCALES",
    "Sample",
    "SynthConfig",
    "read_image",
    "read_mask",
    "save_mask",
    "save_image",
    "resize_image",
    "resize_mask",
    "load_sample",
    "load_dataset",
    "save_dataset",
    "snap_to_multiple",
    "multiscale_batch",
    "stack_batch",
    "synth_generate",
    "blob_area_bounds",
]

SCALES = (0.75, 1.0, 1.25)
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp")
MASK_SUFFIXES = (".png", ".pgm", ".pbm", ".bmp")


@dataclass
class Sample:
    """``image`` is (1, 3, H, W) float32 in [0, 1]; ``mask`` is (1, 1, H, W) uint8 in {0, 1}."""

    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise ValueError(f"sample {self.id}: image {self.image.shape} and mask {self.mask.shape} differ")

    @property
    def hw(self) -> Tuple[int, int]:
        return self.image.shape[2], self.image.shape[3]


# -- file io -----------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """8-bit grey or RGB image as (3, H, W) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_mask(path) -> np.ndarray:
    """(H, W) uint8 mask, 1 where the 8-bit grey value is >= 128."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read mask {path}: {exc}") from exc
    return (arr >= 128).astype(np.uint8)


def save_mask(path, mask: np.ndarray) -> None:
    """Write a binary mask as 8-bit 0/255 grey (format from the suffix: .png or .pgm)."""
    m = np.asarray(mask).squeeze()
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-d after squeezing, got {m.shape}")
    Image.fromarray((m > 0).astype(np.uint8) * 255, mode="L").save(path)


def save_image(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim == 4:
        img = img[0]
    rgb = np.clip(np.rint(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


# -- resampling --------------------------------------------------------------

def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear (half-pixel centres) resize of a (..., H, W) array."""
    h, w = image.shape[-2:]
    if (h, w) == (out_h, out_w):
        return image
    ry = bilinear_matrix(out_h, h, np.float64)
    rx = bilinear_matrix(out_w, w, np.float64)
    return (ry @ image.astype(np.float64) @ rx.T).astype(image.dtype)


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.int64), n_in - 1)


def resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of a (..., H, W) mask; keeps values binary."""
    h, w = mask.shape[-2:]
    if (h, w) == (out_h, out_w):
        return mask
    return mask[..., _nearest_index(out_h, h)[:, None], _nearest_index(out_w, w)[None, :]]


def load_sample(image_path, mask_path, target_hw: int, sample_id: Optional[str] = None) -> Sample:
    img = read_image(image_path)
    mask = read_mask(mask_path)
    if img.shape[1:] != mask.shape:
        raise ValueError(f"image {image_path} is {img.shape[1:]} but mask {mask_path} is {mask.shape}")
    img = np.clip(resize_image(img, target_hw, target_hw), 0.0, 1.0).astype(np.float32)
    mask = resize_mask(mask, target_hw, target_hw)
    sid = sample_id if sample_id is not None else Path(image_path).stem
    return Sample(img[None], mask[None, None].astype(np.uint8), sid)


def _find(folder: Path, stem: str, suffixes: Sequence[str]) -> Optional[Path]:
    for suf in suffixes:
        p = folder / f"{stem}{suf}"
        if p.exists():
            return p
    return None


def load_dataset(data_dir, target_hw: int) -> List[Sample]:
    """Load ``images/`` + ``masks/`` with matching stems, or the pairs listed in ``manifest.csv``.

    Samples are returned sorted by id.
    """
    root = Path(data_dir)
    manifest = root / "manifest.csv"
    pairs = []
    if manifest.exists():
        with open(manifest, newline="") as fh:
            for row in csv.DictReader(fh):
                pairs.append((row["id"], root / row["image"], root / row["mask"]))
    else:
        img_dir, mask_dir = root / "images", root / "masks"
        if not img_dir.is_dir() or not mask_dir.is_dir():
            raise FileNotFoundError(f"{root} needs images/ and masks/ subdirectories")
        for p in sorted(img_dir.iterdir()):
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            m = _find(mask_dir, p.stem, MASK_SUFFIXES)
            if m is None:
                raise FileNotFoundError(f"no mask for image {p.name} in {mask_dir}")
            pairs.append((p.stem, p, m))
    if not pairs:
        raise ValueError(f"no samples found in {root}")
    samples = [load_sample(ip, mp, target_hw, sid) for sid, ip, mp in pairs]
    return sorted(samples, key=lambda s: s.id)


def save_dataset(samples: Sequence[Sample], data_dir) -> None:
    root = Path(data_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_image(root / "images" / f"{s.id}.png", s.image)
        save_mask(root / "masks" / f"{s.id}.png", s.mask)


# -- batching ----------------------------------------------------------------

def snap_to_multiple(size: float, multiple: int = 32) -> int:
    """Nearest positive multiple; exact halves round up."""
    return max(multiple, int(math.floor(size / multiple + 0.5)) * multiple)


def stack_batch(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    return (np.concatenate([s.image for s in samples], axis=0),
            np.concatenate([s.mask for s in samples], axis=0))


def multiscale_batch(samples: Sequence[Sample], scale: float) -> Tuple[np.ndarray, np.ndarray]:
    """Stack ``samples`` rescaled by ``scale`` (snapped to a multiple of 32)."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale}")
    images, masks = stack_batch(samples)
    h, w = images.shape[2:]
    new_h, new_w = snap_to_multiple(h * scale), snap_to_multiple(w * scale)
    return resize_image(images, new_h, new_w), resize_mask(masks, new_h, new_w)


# -- synthetic data ------------------------------------------------------------

@dataclass
class SynthConfig:
    """Deformed-ellipse blobs on a textured background.

    ``radius`` is the (min, max) semi-axis length as a fraction of ``canvas``;
    ``amplitude`` bounds the relative radial deformation.
    """

    canvas: int = 64
    n_blobs: Tuple[int, int] = (1, 2)
    radius: Tuple[float, float] = (0.12, 0.25)
    amplitude: float = 0.2
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.n_blobs = tuple(int(v) for v in self.n_blobs)
        self.radius = tuple(float(v) for v in self.radius)
        lo, hi = self.n_blobs
        if not 1 <= lo <= hi <= 3:
            raise ValueError(f"n_blobs must satisfy 1 <= lo <= hi <= 3, got {self.n_blobs}")
        if not 0 < self.radius[0] <= self.radius[1] < 0.5:
            raise ValueError(f"radius range must be inside (0, 0.5), got {self.radius}")
        if not 0 <= self.amplitude < 1:
            raise ValueError(f"amplitude must be in [0, 1), got {self.amplitude}")
        if self.radius[1] * (1 + self.amplitude) >= 0.5:
            raise ValueError("largest deformed blob does not fit the canvas")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n_blobs"], d["radius"] = list(self.n_blobs), list(self.radius)
        return d


def blob_area_bounds(cfg: SynthConfig) -> Tuple[float, float]:
    """Analytic pixel-area range of a single blob: pi*a*b*(1 -+ amplitude)^2."""
    r_lo, r_hi = (r * cfg.canvas for r in cfg.radius)
    return math.pi * r_lo ** 2 * (1 - cfg.amplitude) ** 2, math.pi * r_hi ** 2 * (1 + cfg.amplitude) ** 2


def _blob(rng: np.random.Generator, cfg: SynthConfig, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    s = cfg.canvas
    ra, rb = rng.uniform(cfg.radius[0], cfg.radius[1], size=2) * s
    reach = max(ra, rb) * (1 + cfg.amplitude)
    cy, cx = rng.uniform(reach, s - reach, size=2)
    theta = rng.uniform(0, np.pi)
    coeffs = rng.uniform(-1, 1, size=3)
    coeffs /= np.abs(coeffs).sum()
    phases = rng.uniform(0, 2 * np.pi, size=3)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(theta) + dy * np.sin(theta)) / ra
    v = (-dx * np.sin(theta) + dy * np.cos(theta)) / rb
    rho = np.hypot(u, v)
    phi = np.arctan2(v, u)
    wobble = sum(c * np.sin((k + 2) * phi + p) for k, (c, p) in enumerate(zip(coeffs, phases)))
    return rho <= 1.0 + cfg.amplitude * wobble


def _smooth_field(rng: np.random.Generator, yy: np.ndarray, xx: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros_like(yy)
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi / s
        out += rng.uniform(0.2, 1.0) * np.sin(fy * yy + fx * xx + rng.uniform(0, 2 * np.pi))
    return out / 3.0


def synth_generate(cfg: SynthConfig, n: int) -> List[Sample]:
    """``n`` deterministic samples; sample ``i`` depends only on (seed, i)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    s = cfg.canvas
    yy, xx = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        k = int(rng.integers(cfg.n_blobs[0], cfg.n_blobs[1] + 1))
        mask = np.zeros((s, s), dtype=bool)
        for _ in range(k):
            mask |= _blob(rng, cfg, yy, xx)
        bg = rng.uniform([0.45, 0.22, 0.18], [0.65, 0.38, 0.30])
        fg = bg + rng.uniform([0.18, 0.12, 0.06], [0.30, 0.22, 0.14])
        shade = 0.08 * _smooth_field(rng, yy, xx, s)
        texture = 0.05 * _smooth_field(rng, yy, xx, s / 4.0)
        img = np.where(mask[None], fg[:, None, None] + texture[None], bg[:, None, None])
        img = img + shade[None] + rng.normal(0.0, cfg.noise, size=(3, s, s))
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        samples.append(Sample(img[None], mask[None, None].astype(np.uint8), f"synth_{cfg.seed}_{i:04d}"))
    return samples
