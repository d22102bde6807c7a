"""Grad-CAM over the reinvented feature map and overlay rendering."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import tensor as T
from .imageio import write_ppm
from .model import model_forward

HITS_HEADER = ["case_id", "view", "peak_row", "peak_col", "hit"]
VIEWS = ("CC", "MLO")


@dataclass
class SaliencyMap:
    heatmap: np.ndarray  # feature-map grid, max-normalised
    upsampled: np.ndarray  # input image grid, max-normalised
    peak: tuple  # (row, col) of the upsampled maximum, first in row-major order


def _normalise(a):
    top = a.max()
    return a / top if top > 0 else np.zeros_like(a)


def upsample(heat, shape):
    """Bilinear resize that keeps pixel centres aligned (edges clamp)."""
    h, w = heat.shape
    th, tw = shape
    rows = (np.arange(th) + 0.5) * h / th - 0.5
    cols = (np.arange(tw) + 0.5) * w / tw - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(heat, [rr, cc], order=1, mode="nearest")


def peak_of(a):
    """Row-major first occurrence of the maximum."""
    return tuple(int(v) for v in np.unravel_index(int(np.argmax(a)), a.shape))


def cam_from_gradient(r, grad):
    """``ReLU(sum_c mean(grad_c) * r_c)`` for ``C x H x W`` arrays."""
    weights = grad.mean(axis=(1, 2))
    return np.maximum(np.tensordot(weights, r, axes=1), 0.0)


def grad_cam(model, case, view):
    """Class activation map of ``p_view`` with respect to ``R_view``."""
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}, got {view!r}")
    out = model_forward(case.img_cc, case.img_mlo, model)
    p, r = (out.p_cc, out.r_cc) if view == "CC" else (out.p_mlo, out.r_mlo)
    try:
        T.backward(p)
        cam = cam_from_gradient(r.data, r.grad)
    finally:
        T.zero_grad(model.parameters())
    img = case.img_cc if view == "CC" else case.img_mlo
    up = _normalise(np.maximum(upsample(cam, np.shape(img)), 0.0))
    return SaliencyMap(_normalise(cam), up, peak_of(up))


def overlay(img, heat, alpha=0.5):
    """Grayscale image tinted towards red where the heatmap is high."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    gray = np.repeat(img[:, :, None], 3, axis=2)
    a = alpha * np.clip(heat, 0.0, 1.0)[:, :, None]
    return gray * (1.0 - a) + a * np.array([1.0, 0.0, 0.0])


def bbox_hit(peak, bbox) -> Optional[int]:
    if bbox is None:
        return None
    x0, y0, x1, y1 = bbox
    row, col = peak
    return int(x0 <= col <= x1 and y0 <= row <= y1)


def overlay_and_save(case, smap, path, view="CC"):
    """Write the P6 overlay for one view; returns the hits-CSV row for it."""
    img = case.img_cc if view == "CC" else case.img_mlo
    write_ppm(path, overlay(img, smap.upsampled))
    bbox = case.lesion_bbox_cc if view == "CC" else case.lesion_bbox_mlo
    hit = bbox_hit(smap.peak, bbox)
    return [case.case_id, view, smap.peak[0], smap.peak[1], "" if hit is None else hit]


def write_hits(path, rows):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HITS_HEADER)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def saliency_report(cases, model, out_dir=None):
    """Grad-CAM for both views of every case.

    Returns the hits rows; with ``out_dir`` also writes ``{case_id}_{view}.ppm``
    overlays and ``hits.csv``.
    """
    rows = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    for case in cases:
        for view in VIEWS:
            smap = grad_cam(model, case, view)
            if out_dir is not None:
                rows.append(overlay_and_save(case, smap, out_dir / f"{case.case_id}_{view.lower()}.ppm", view))
            else:
                bbox = case.lesion_bbox_cc if view == "CC" else case.lesion_bbox_mlo
                hit = bbox_hit(smap.peak, bbox)
                rows.append([case.case_id, view, smap.peak[0], smap.peak[1], "" if hit is None else hit])
    if out_dir is not None:
        write_hits(out_dir / "hits.csv", rows)
    return rows


def hit_rate(rows):
    scored = [int(r[4]) for r in rows if r[4] != ""]
    return float(np.mean(scored)) if scored else float("nan")
