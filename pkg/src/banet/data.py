"""Dataset handling: synthetic lesion generation, edge ground truth,
augmentation, and the on-disk netpbm layout."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netpbm import read_pgm, read_ppm, write_pgm, write_ppm
from .tensor import interp_matrix


class DataError(ValueError):
    pass


@dataclass
class Sample:
    """One image with its segmentation mask and derived edge mask.

    image: (1, 3, h, w) float32 in [0, 1]; seg_mask and edge_mask:
    (1, 1, h, w) float32 with values in {0, 1}.
    """
    image: np.ndarray
    seg_mask: np.ndarray
    edge_mask: np.ndarray
    id: str
    meta: dict | None = None


# ---------------------------------------------------------------------------
# edge ground truth


def _erode4(mask: np.ndarray) -> np.ndarray:
    # 4-connected erosion; outside the image counts as background
    padded = np.pad(mask, 1)
    return (mask & padded[:-2, 1:-1] & padded[2:, 1:-1]
            & padded[1:-1, :-2] & padded[1:-1, 2:])


def _dilate8(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1)
    out = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= padded[1 + dy:1 + dy + mask.shape[0], 1 + dx:1 + dx + mask.shape[1]]
    return out


def derive_edge_mask(seg_mask: np.ndarray, width: int = 3) -> np.ndarray:
    """Boundary band of a binary mask: morphological gradient, then
    square dilation out to `width` pixels across."""
    if width < 1 or width % 2 == 0:
        raise DataError(f"edge width must be odd and >= 1, got {width}")
    arr = np.asarray(seg_mask)
    squeezed = arr.reshape(arr.shape[-2], arr.shape[-1])
    if not np.all((squeezed == 0) | (squeezed == 1)):
        raise DataError("derive_edge_mask: mask must be binary (0/1)")
    m = squeezed.astype(bool)
    edge = m & ~_erode4(m)
    for _ in range((width - 1) // 2):
        edge = _dilate8(edge)
    return edge.astype(np.float32).reshape(arr.shape)


# ---------------------------------------------------------------------------
# synthetic dataset


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 250
    image_size: int = 64
    axes_min: float = 0.10        # fraction of image side
    axes_max: float = 0.25
    contrast: float = 0.4
    noise_sigma: float = 0.05
    irregularity: float = 0.3
    seed: int = 7
    edge_width: int = 3


def _lesion_mask(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, dict]:
    """Randomized ellipse with a sinusoidal radius perturbation."""
    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    min_area = max(1, int(0.01 * size * size))
    while True:
        cx = rng.uniform(0.3, 0.7) * size
        cy = rng.uniform(0.3, 0.7) * size
        ax = rng.uniform(cfg.axes_min, cfg.axes_max) * size
        ay = rng.uniform(cfg.axes_min, cfg.axes_max) * size
        theta = rng.uniform(0.0, np.pi)
        lobes = int(rng.integers(3, 8))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        dx, dy = xx - cx, yy - cy
        u = (np.cos(theta) * dx + np.sin(theta) * dy) / ax
        v = (-np.sin(theta) * dx + np.cos(theta) * dy) / ay
        rho = np.hypot(u, v)
        boundary = 1.0 + cfg.irregularity * np.sin(lobes * np.arctan2(v, u) + phase)
        mask = rho <= boundary
        if int(mask.sum()) >= min_area:
            params = dict(cx=cx, cy=cy, ax=ax, ay=ay, theta=theta,
                          lobes=lobes, phase=phase)
            return mask, params


def synth_generate(cfg: SynthConfig) -> list[Sample]:
    """Deterministic synthetic dataset; content is a pure function of cfg."""
    rng = np.random.default_rng(cfg.seed)
    samples: list[Sample] = []
    for idx in range(cfg.n_images):
        mask, params = _lesion_mask(rng, cfg)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        lo = max(0.0, -sign * cfg.contrast)
        hi = min(1.0, 1.0 - sign * cfg.contrast)
        margin = min(0.05, (hi - lo) / 4.0)
        bg = rng.uniform(lo + margin, hi - margin) if hi > lo else lo
        lesion = bg + sign * cfg.contrast

        img = np.where(mask, lesion, bg)[None, :, :].repeat(3, axis=0)
        if cfg.noise_sigma > 0:
            img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
        img = np.clip(img, 0.0, 1.0).astype(np.float32)[None]
        seg = mask.astype(np.float32)[None, None]
        params.update(bg=bg, sign=sign)
        samples.append(Sample(image=img, seg_mask=seg,
                              edge_mask=derive_edge_mask(seg, cfg.edge_width),
                              id=f"{idx:04d}", meta=params))
    return samples


MANIFEST_FIELDS = ["id", "cx", "cy", "ax", "ay", "theta", "lobes", "phase",
                   "bg", "sign", "seed"]


def write_dataset(samples: list[Sample], out_dir, seed: int | None = None) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_FIELDS)
        for s in samples:
            img = np.clip(np.rint(s.image[0] * 255.0), 0, 255).astype(np.uint8)
            write_ppm(out / "images" / f"{s.id}.ppm", img.transpose(1, 2, 0))
            save_mask(s.seg_mask, out / "masks" / f"{s.id}.pgm")
            meta = s.meta or {}
            writer.writerow([s.id] + [meta.get(k, "") for k in MANIFEST_FIELDS[1:-1]]
                            + [seed if seed is not None else ""])


def save_mask(mask: np.ndarray, path) -> None:
    arr = np.asarray(mask)
    arr2d = arr.reshape(arr.shape[-2], arr.shape[-1])
    write_pgm(path, np.where(arr2d > 0.5, 255, 0).astype(np.uint8))


def load_dataset(data_dir, edge_width: int = 3) -> list[Sample]:
    """Read the images/<id>.ppm + masks/<id>.pgm layout, sorted by id."""
    root = Path(data_dir)
    image_dir, mask_dir = root / "images", root / "masks"
    if not image_dir.is_dir():
        raise DataError(f"{root}: missing images/ directory")
    samples: list[Sample] = []
    for image_path in sorted(image_dir.glob("*.ppm")):
        sample_id = image_path.stem
        mask_path = mask_dir / f"{sample_id}.pgm"
        if not mask_path.exists():
            raise DataError(f"sample {sample_id!r}: missing mask {mask_path}")
        img = read_ppm(image_path)
        mask = read_pgm(mask_path)
        if img.shape[:2] != mask.shape:
            raise DataError(f"sample {sample_id!r}: image {img.shape[:2]} and "
                            f"mask {mask.shape} sizes differ")
        image = (img.astype(np.float32) / 255.0).transpose(2, 0, 1)[None]
        seg = (mask > 127).astype(np.float32)[None, None]
        samples.append(Sample(image=image, seg_mask=seg,
                              edge_mask=derive_edge_mask(seg, edge_width),
                              id=sample_id))
    if not samples:
        raise DataError(f"{root}: no .ppm images found")
    return samples


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    rot_deg_range: tuple[float, float] = (-10.0, 10.0)
    crop_scale_range: tuple[float, float] = (0.5, 1.0)
    out_size: int = 64
    seed: int = 0
    edge_width: int = 3


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes (half-pixel centers)."""
    h, w = arr.shape[-2], arr.shape[-1]
    if (h, w) == (out_h, out_w):
        return arr
    my = interp_matrix(h, out_h)
    mx = interp_matrix(w, out_w)
    out = np.matmul(np.matmul(my, arr.astype(np.float64)), mx.T)
    return out.astype(arr.dtype)


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(np.rint(src), 0, n_in - 1).astype(np.int64)


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[-2], arr.shape[-1]
    if (h, w) == (out_h, out_w):
        return arr
    return arr[..., _nearest_index(h, out_h)[:, None], _nearest_index(w, out_w)[None, :]]


def _rotation_coords(h: int, w: int, deg: float) -> tuple[np.ndarray, np.ndarray]:
    rad = np.deg2rad(deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    sx = np.cos(rad) * dx + np.sin(rad) * dy + cx
    sy = -np.sin(rad) * dx + np.cos(rad) * dy + cy
    return sy, sx


def rotate_bilinear(arr: np.ndarray, deg: float) -> np.ndarray:
    """Rotate the trailing two axes; out-of-bounds replicates the border."""
    h, w = arr.shape[-2], arr.shape[-1]
    sy, sx = _rotation_coords(h, w, deg)
    sy = np.clip(sy, 0.0, h - 1.0)
    sx = np.clip(sx, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0).astype(arr.dtype)
    wx = (sx - x0).astype(arr.dtype)
    return ((1 - wy) * (1 - wx) * arr[..., y0, x0] + (1 - wy) * wx * arr[..., y0, x1]
            + wy * (1 - wx) * arr[..., y1, x0] + wy * wx * arr[..., y1, x1])


def rotate_nearest(arr: np.ndarray, deg: float) -> np.ndarray:
    """Rotate the trailing two axes; out-of-bounds fills with background 0."""
    h, w = arr.shape[-2], arr.shape[-1]
    sy, sx = _rotation_coords(h, w, deg)
    yi = np.rint(sy).astype(np.int64)
    xi = np.rint(sx).astype(np.int64)
    inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    gathered = arr[..., np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    return np.where(inside, gathered, 0).astype(arr.dtype)


def augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Centered random-scale crop, rotation, flips, resize to out_size.

    The edge mask is re-derived from the transformed segmentation mask
    so the band width stays consistent. The rng draw order is fixed so
    identical seeds replay identical transforms.
    """
    img = sample.image[0]
    mask = sample.seg_mask[0, 0]
    h, w = mask.shape

    crop_scale = rng.uniform(*cfg.crop_scale_range)
    deg = rng.uniform(*cfg.rot_deg_range)
    do_flip_h = rng.random() < cfg.flip_h_prob
    do_flip_v = rng.random() < cfg.flip_v_prob

    ch = max(1, int(round(crop_scale * h)))
    cw = max(1, int(round(crop_scale * w)))
    if (ch, cw) != (h, w):
        top, left = (h - ch) // 2, (w - cw) // 2
        img = img[:, top:top + ch, left:left + cw]
        mask = mask[top:top + ch, left:left + cw]
    if deg != 0.0:
        img = rotate_bilinear(img, deg)
        mask = rotate_nearest(mask, deg)
    if do_flip_h:
        img = img[..., ::-1]
        mask = mask[..., ::-1]
    if do_flip_v:
        img = img[..., ::-1, :]
        mask = mask[..., ::-1, :]
    img = resize_bilinear(img, cfg.out_size, cfg.out_size)
    mask = resize_nearest(mask, cfg.out_size, cfg.out_size)

    image = np.ascontiguousarray(img, dtype=np.float32)[None]
    seg = np.ascontiguousarray(mask, dtype=np.float32)[None, None]
    return Sample(image=image, seg_mask=seg,
                  edge_mask=derive_edge_mask(seg, cfg.edge_width),
                  id=sample.id, meta=sample.meta)
