"""Synthetic dual-view phantom: a textured half-ball projected to CC and MLO.

Geometry
--------
The chest wall is the ``y = 0`` plane and the breast is the half-ball
``x^2 + y^2 + z^2 <= r^2, y >= 0``.  Both views are parallel line integrals
along directions with no ``y`` component (CC along ``z``, MLO along
``(x + z) / sqrt(2)``), so every image row collects exactly the mass of one
``y`` slab in both views.  Rows are ordered so the chest wall lies on the
bottom edge: image row ``H - 1`` is nearest to it.

Coordinates are measured in x-voxel units.  ``x`` and ``z`` span
``[-n/2, n/2)`` with unit spacing, ``y`` spans ``[0, n/2)`` with spacing 1/2
so that a square image covers the half-ball without wasting rows.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, PhantomError
from .imageio import read_pgm, write_pgm

MANIFEST_HEADER = ["case_id", "label", "cc_path", "mlo_path", "bbox_cc", "bbox_mlo"]
Y_SPACING = 0.5
MAX_LESION_TRIES = 100


@dataclass
class PhantomConfig:
    grid_n: int = 64
    radius: float = 28.0
    lesion_prob: float = 0.5
    lesion_radius_range: list = field(default_factory=lambda: [3.0, 5.0])
    lesion_intensity: float = 1.5
    background_texture_scale: float = 0.35
    misalign_shift_max: int = 0
    image_size: int = 64
    seed: int = 0

    def validate(self):
        if self.image_size % 8:
            raise ConfigError(f"image_size must be divisible by 8, got {self.image_size}")
        if self.grid_n % self.image_size:
            raise ConfigError("grid_n must be a multiple of image_size")
        if self.misalign_shift_max < 0:
            raise ConfigError("misalign_shift_max must be >= 0")
        if not 0.0 <= self.lesion_prob <= 1.0:
            raise ConfigError("lesion_prob must lie in [0, 1]")
        if not 0 < self.radius <= self.grid_n / 2 - 1:
            raise ConfigError(f"radius {self.radius} does not fit a grid of {self.grid_n}")
        lo, hi = self.lesion_radius_range
        if not 0 < lo <= hi or 2 * hi > self.radius:
            raise ConfigError(f"lesion_radius_range {self.lesion_radius_range} does not fit radius {self.radius}")


@dataclass
class Volume:
    density: np.ndarray  # (ny, nx, nz)
    lesion: Optional[tuple]  # (x0, y0, z0, radius) in x-voxel units


@dataclass
class DualViewCase:
    img_cc: np.ndarray
    img_mlo: np.ndarray
    label: int
    lesion_bbox_cc: Optional[tuple] = None  # (x0, y0, x1, y1), inclusive pixels
    lesion_bbox_mlo: Optional[tuple] = None
    case_id: str = ""


def grid_coordinates(n):
    xs = np.arange(n) - n / 2 + 0.5
    ys = (np.arange(n) + 0.5) * Y_SPACING
    return xs, ys


def _texture(rng, shape, xs, ys, n_waves=6):
    y, x, z = np.meshgrid(ys, xs, xs, indexing="ij")
    field_ = np.zeros(shape)
    total = 0.0
    for _ in range(n_waves):
        wavelength = rng.uniform(8.0, 24.0)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        kx, ky, kz = 2 * math.pi / wavelength * direction
        amp = rng.uniform(0.5, 1.0)
        field_ += amp * np.cos(kx * x + ky * y + kz * z + rng.uniform(0, 2 * math.pi))
        total += amp
    return field_ / total


def generate_volume(cfg, rng, malignant=None):
    """Density volume of one breast; ``malignant=None`` draws the label from ``lesion_prob``."""
    cfg.validate()
    n = cfg.grid_n
    xs, ys = grid_coordinates(n)
    y, x, z = np.meshgrid(ys, xs, xs, indexing="ij")
    support = (x * x + y * y + z * z <= cfg.radius ** 2)
    density = np.ones((n, n, n))
    if cfg.background_texture_scale > 0:
        density = density + cfg.background_texture_scale * _texture(rng, density.shape, xs, ys)
        density = np.clip(density, 0.0, None)
    density = density * support

    if malignant is None:
        malignant = rng.random() < cfg.lesion_prob
    lesion = None
    if malignant:
        lo, hi = cfg.lesion_radius_range
        rad = rng.uniform(lo, hi)
        for _ in range(MAX_LESION_TRIES):
            c = rng.uniform([-cfg.radius, 0.0, -cfg.radius], [cfg.radius, cfg.radius, cfg.radius])
            if np.linalg.norm(c) + rad <= cfg.radius and c[1] - rad >= 0:
                break
        else:
            raise PhantomError(f"could not place a lesion of radius {rad:.2f} in {MAX_LESION_TRIES} tries")
        x0, y0, z0 = c
        inside = (x - x0) ** 2 + (y - y0) ** 2 + (z - z0) ** 2 <= rad * rad
        density = density + cfg.lesion_intensity * inside * support
        lesion = (float(x0), float(y0), float(z0), float(rad))
    return Volume(density, lesion)


def _view_coordinate(view, x, z):
    if view == "CC":
        return x
    if view == "MLO":
        return (x - z) / math.sqrt(2.0)
    raise ValueError(f"unknown view {view!r}")


def _column(u, n, image_size):
    # continuous column coordinate of detector position u
    return (u + n / 2) * image_size / n - 0.5


def _row(y_index, n, image_size):
    return image_size - 1 - y_index // (n // image_size)


def _footprint_cdf(view, t):
    """CDF of a unit voxel's projected footprint, offset ``t`` from its centre.

    A unit square seen along ``z`` covers a box of width 1; seen along the
    45 degree diagonal it covers a triangle of half-width ``sqrt(2)/2``.
    Footprints of a filled lattice tile the detector uniformly, so projecting
    a constant slab gives a flat profile with no aliasing.
    """
    if view == "CC":
        return np.clip(t + 0.5, 0.0, 1.0)
    h = math.sqrt(0.5)
    t = np.clip(t, -h, h)
    left = (t + h) ** 2 / (2 * h * h)
    right = 1.0 - (h - t) ** 2 / (2 * h * h)
    return np.where(t < 0, left, right)


def _splat_weights(view, n, image_size):
    """Per (x, z) column: detector bin indices and mass fractions, 3 bins each."""
    xs, _ = grid_coordinates(n)
    x, z = np.meshgrid(xs, xs, indexing="ij")
    u = _view_coordinate(view, x, z)
    width = n / image_size
    first = np.floor((u - 0.75 - (-n / 2)) / width).astype(int)
    bins, weights = [], []
    for j in range(3):
        b = first + j
        lo_edge = b * width - n / 2
        frac = _footprint_cdf(view, lo_edge + width - u) - _footprint_cdf(view, lo_edge - u)
        bins.append(np.clip(b, 0, image_size - 1))
        weights.append(frac)
    return np.stack(bins), np.stack(weights)


def project(volume, view, image_size=None):
    """Parallel projection; raw line-integral mass, not yet normalised.

    Each voxel's mass is shared between detector bins in proportion to its
    projected footprint, which keeps every row total exact.
    """
    density = volume.density
    n = density.shape[0]
    image_size = image_size or n
    _view_coordinate(view, 0.0, 0.0)
    bins, weights = _splat_weights(view, n, image_size)
    flat_bins = bins.ravel()
    img = np.zeros((image_size, image_size))
    mass = density * Y_SPACING
    for yi in range(n):
        m = mass[yi]
        if not m.any():
            continue
        img[_row(yi, n, image_size)] += np.bincount(
            flat_bins, weights=(weights * m).ravel(), minlength=image_size
        )
    return img


def lesion_bbox(lesion, view, n, image_size):
    """Inclusive pixel box covering the projected lesion sphere."""
    if lesion is None:
        return None
    x0, y0, z0, rad = lesion
    u0 = _view_coordinate(view, x0, z0)
    c0 = int(math.floor(_column(u0 - rad, n, image_size)))
    c1 = int(math.ceil(_column(u0 + rad, n, image_size)))
    s = n // image_size
    y_lo = int(math.floor((y0 - rad) / Y_SPACING))
    y_hi = min(int(math.ceil((y0 + rad) / Y_SPACING)), n - 1)
    r0 = _row(y_hi, n, image_size)
    r1 = _row(max(y_lo, 0), n, image_size)
    return (max(c0, 0), max(r0, 0), min(c1, image_size - 1), min(r1, image_size - 1))


def row_shifts(rng, height, sigma):
    """Integer shifts in [-sigma, sigma]; neighbouring rows differ by at most 1."""
    if sigma <= 0:
        return np.zeros(height, dtype=int)
    shifts = np.empty(height, dtype=int)
    shifts[0] = rng.integers(-sigma, sigma + 1)
    steps = rng.integers(-1, 2, size=height)
    for i in range(1, height):
        shifts[i] = min(max(shifts[i - 1] + steps[i], -sigma), sigma)
    return shifts


def shift_rows(img, shifts):
    """Shift every row right by its shift (left if negative), zero-filling."""
    out = np.zeros_like(img)
    w = img.shape[1]
    for i, s in enumerate(shifts):
        if s >= 0:
            out[i, s:] = img[i, :w - s]
        else:
            out[i, :w + s] = img[i, -s:]
    return out


def apply_misalignment(img, rng, cfg, bbox=None):
    """Shift rows of one view horizontally; returns ``(img', bbox', shifts)``."""
    sigma = int(cfg.misalign_shift_max)
    shifts = row_shifts(rng, img.shape[0], sigma)
    if sigma == 0:
        return img.copy(), bbox, shifts
    out = shift_rows(img, shifts)
    if bbox is not None:
        x0, y0, x1, y1 = bbox
        s = shifts[y0:y1 + 1]
        w = img.shape[1]
        bbox = (max(x0 + int(s.min()), 0), y0, min(x1 + int(s.max()), w - 1), y1)
    return out, bbox, shifts


def case_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def case_labels(cfg, n_cases):
    """Exactly ``round(lesion_prob * n)`` positives, placed by the master seed."""
    n_pos = int(round(cfg.lesion_prob * n_cases))
    labels = np.zeros(n_cases, dtype=int)
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2**31 - 1])).permutation(n_cases)
    labels[order[:n_pos]] = 1
    return labels


def generate_case(cfg, index, label):
    rng = case_rng(cfg.seed, index)
    vol = generate_volume(cfg, rng, malignant=bool(label))
    n, size = cfg.grid_n, cfg.image_size
    cc = project(vol, "CC", size)
    mlo = project(vol, "MLO", size)
    peak = max(cc.max(), mlo.max())
    if peak > 0:
        cc, mlo = cc / peak, mlo / peak
    box_cc = lesion_bbox(vol.lesion, "CC", n, size)
    box_mlo = lesion_bbox(vol.lesion, "MLO", n, size)
    mlo, box_mlo, _ = apply_misalignment(mlo, rng, cfg, box_mlo)
    return DualViewCase(cc, mlo, int(label), box_cc, box_mlo, f"case{index:05d}")


def format_bbox(bbox):
    return "" if bbox is None else ":".join(str(int(v)) for v in bbox)


def parse_bbox(text):
    text = text.strip()
    return None if not text else tuple(int(v) for v in text.split(":"))


def generate_dataset(cfg, n_cases, out_dir=None, start_index=0, workers=1):
    """Generate ``n_cases`` cases; with ``out_dir`` also write images and a manifest.

    Cases depend only on (seed, index), so ``workers > 1`` generates them in
    a thread pool without changing a single byte; results are kept in index
    order.  Returns ``(cases, manifest_text)``.
    """
    if n_cases < 1:
        raise ConfigError("n_cases must be >= 1")
    cfg.validate()
    labels = case_labels(cfg, n_cases)
    jobs = [(start_index + i, labels[i]) for i in range(n_cases)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cases = list(pool.map(lambda job: generate_case(cfg, *job), jobs))
    else:
        cases = [generate_case(cfg, *job) for job in jobs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for case in cases:
        writer.writerow([
            case.case_id,
            case.label,
            f"{case.case_id}_cc.pgm",
            f"{case.case_id}_mlo.pgm",
            format_bbox(case.lesion_bbox_cc),
            format_bbox(case.lesion_bbox_mlo),
        ])
    manifest = buf.getvalue()
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create {out_dir}: {exc.strerror or exc}") from exc
        for case in cases:
            write_pgm(out_dir / f"{case.case_id}_cc.pgm", case.img_cc)
            write_pgm(out_dir / f"{case.case_id}_mlo.pgm", case.img_mlo)
        path = out_dir / "manifest.csv"
        try:
            path.write_text(manifest)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return cases, manifest


def manifest_checksum(manifest_text):
    return hashlib.sha256(manifest_text.encode()).hexdigest()


def load_dataset(manifest_path):
    """Read cases back from a manifest and its P5 images."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {manifest_path}: {exc.strerror or exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != MANIFEST_HEADER:
        raise ValueError(f"{manifest_path}: bad manifest header")
    root = manifest_path.parent
    cases = []
    for row in rows[1:]:
        case_id, label, cc_path, mlo_path, box_cc, box_mlo = row
        cases.append(DualViewCase(
            read_pgm(root / cc_path),
            read_pgm(root / mlo_path),
            int(label),
            parse_bbox(box_cc),
            parse_bbox(box_mlo),
            case_id,
        ))
    return cases
