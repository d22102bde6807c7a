"""Input pipeline: background removal, chest-wall fitting, alignment, resizing
and paired augmentation.

Image convention: row index grows downwards and the chest wall ends up on the
bottom edge, so after alignment the row index measures distance from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, PreprocessError

EDGES = ("bottom", "top", "left", "right")
# np.rot90 turns applied to bring each edge to the bottom
_TURNS = {"bottom": 0, "left": 1, "top": 2, "right": 3}


@dataclass
class AugmentConfig:
    rotation_max_deg: float = 10.0
    hflip_prob: float = 0.5


@dataclass
class PreprocessConfig:
    target_size: int = 256
    bg_threshold_quantile: float = 0.9
    bg_floor: float = 1.0 / 255.0
    max_fit_residual: float = 2.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self):
        if self.target_size % 8:
            raise ConfigError(f"target_size must be divisible by 8, got {self.target_size}")
        if not 0.0 <= self.bg_threshold_quantile <= 1.0:
            raise ConfigError("bg_threshold_quantile must lie in [0, 1]")


@dataclass
class ChestWallLine:
    """Chest-wall line in the frame where ``edge`` has been turned to the bottom.

    ``angle`` is measured from horizontal (positive when the line rises to the
    right); ``offset`` is the line's height above the bottom pixel row at the
    centre column.
    """

    angle: float
    offset: float
    edge: str = "bottom"
    residual: float = 0.0

    def row_at(self, col, width, height):
        cx = (width - 1) / 2
        return (height - 1) - self.offset - math.tan(self.angle) * (col - cx)


def remove_background(img, cfg=None):
    """Zero everything outside the largest foreground component.

    Foreground is any pixel brighter than ``bg_floor`` plus any non-zero
    pixel whose Sobel gradient magnitude exceeds the configured quantile,
    which picks up faint boundary pixels.  Holes are filled.
    """
    cfg = cfg or PreprocessConfig()
    img = np.asarray(img, dtype=np.float64)
    grad = np.hypot(ndimage.sobel(img, axis=0), ndimage.sobel(img, axis=1))
    thresh = np.quantile(grad, cfg.bg_threshold_quantile)
    candidate = (img > cfg.bg_floor) | ((grad > thresh) & (grad > 0) & (img > 0))
    labels, n = ndimage.label(candidate)
    if n == 0:
        raise PreprocessError("no foreground found")
    sizes = ndimage.sum_labels(candidate, labels, index=np.arange(1, n + 1))
    mask = ndimage.binary_fill_holes(labels == (1 + int(np.argmax(sizes))))
    return np.where(mask, img, 0.0), mask


def remove_pectoralis(img, mask=None):
    """Zero the pixels of an externally supplied pectoralis mask.

    Phantoms have no pectoral muscle, so without a mask this is the identity.
    """
    if mask is None:
        return img
    return np.where(mask, 0.0, img)


def _contact_edge(mask):
    counts = {
        "bottom": mask[-1, :].sum(),
        "top": mask[0, :].sum(),
        "left": mask[:, 0].sum(),
        "right": mask[:, -1].sum(),
    }
    return max(EDGES, key=lambda e: counts[e])


def fit_chest_wall(img, mask, edge="auto", cfg=None):
    """Least-squares line along the mask boundary that faces the chest-wall edge.

    The chest-wall edge is the image edge with the most foreground contact,
    unless given.  For each column the foreground pixel nearest that edge is
    a boundary sample.  Samples sitting on the edge itself are clipped (the
    true line runs at or beyond the border): when they are the majority the
    wall is taken to be the edge itself, otherwise only the free samples are
    fitted, with trimmed refits to shed the curved lateral outline.
    """
    cfg = cfg or PreprocessConfig()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise PreprocessError("cannot fit a chest wall to an empty mask")
    if edge == "auto":
        edge = _contact_edge(mask)
    m = np.rot90(mask, _TURNS[edge])
    h, w = m.shape
    cols = np.flatnonzero(m.any(axis=0))
    lowest = (h - 1) - np.argmax(m[::-1, cols], axis=0)
    free = lowest < h - 1
    # a partly flush outline is ambiguous (tilted wall clipped by the border,
    # or level wall with missing content); the majority decides
    if free.sum() * 2 > cols.size:
        cols, lowest = cols[free], lowest[free]
    else:
        return ChestWallLine(0.0, 0.0, edge, 0.0)
    cx = (w - 1) / 2
    x = (cols - cx).astype(float)
    y = lowest.astype(float)
    keep = np.ones(x.size, dtype=bool)
    # trimmed refits drop the curved lateral sides where the outline turns up
    for _ in range(5):
        slope, intercept = np.polyfit(x[keep], y[keep], 1)
        dev = np.abs(slope * x + intercept - y)
        new_keep = dev <= 1.5
        if new_keep.sum() < 2 or np.array_equal(new_keep, keep):
            break
        keep = new_keep
    A = np.stack([x[keep], np.ones(keep.sum())], axis=1)
    lowest = y[keep]
    resid = float(np.sqrt(np.mean((A @ [slope, intercept] - lowest) ** 2)))
    if resid > cfg.max_fit_residual:
        raise PreprocessError(f"chest-wall fit residual {resid:.3f} px exceeds {cfg.max_fit_residual}", resid)
    angle = math.atan(-slope)
    if abs(angle) >= math.pi / 4:
        raise PreprocessError(f"fitted chest-wall angle {math.degrees(angle):.1f} deg is implausible", resid)
    return ChestWallLine(angle, float((h - 1) - intercept), edge, resid)


def _sample(img, rows, cols):
    out = ndimage.map_coordinates(img, [rows, cols], order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def align_and_resize(img, line, cfg=None):
    """Rotate and shift so the chest-wall line lies on the bottom pixel row,
    then resample to ``target_size x target_size`` (bilinear throughout)."""
    cfg = cfg or PreprocessConfig()
    cfg.validate()
    img = np.rot90(np.asarray(img, dtype=np.float64), _TURNS[line.edge])
    h, w = img.shape
    t = cfg.target_size
    # target grid -> aligned frame (pixel-centre preserving resize)
    rt, ct = np.meshgrid(np.arange(t), np.arange(t), indexing="ij")
    ra = (rt + 0.5) * h / t - 0.5
    ca = (ct + 0.5) * w / t - 0.5
    # aligned frame -> input frame
    cx = (w - 1) / 2
    dc, dr = ca - cx, ra - (h - 1)
    ca_, sa = math.cos(line.angle), math.sin(line.angle)
    cols = cx + dc * ca_ + dr * sa
    rows = (h - 1) - line.offset - dc * sa + dr * ca_
    return _sample(img, rows, cols)


def preprocess_image(img, cfg=None, pectoralis_mask=None):
    """Background removal, chest-wall fit, alignment and resize."""
    cfg = cfg or PreprocessConfig()
    img = remove_pectoralis(np.asarray(img, dtype=np.float64), pectoralis_mask)
    clean, mask = remove_background(img, cfg)
    line = fit_chest_wall(clean, mask, cfg=cfg)
    return align_and_resize(clean, line, cfg)


def preprocess_case(case, cfg=None):
    """Both views through :func:`preprocess_image`; bboxes rescaled to the target grid."""
    cfg = cfg or PreprocessConfig()
    out = replace(
        case,
        img_cc=preprocess_image(case.img_cc, cfg),
        img_mlo=preprocess_image(case.img_mlo, cfg),
    )
    h, w = case.img_cc.shape
    out.lesion_bbox_cc = _scale_bbox(case.lesion_bbox_cc, h, w, cfg.target_size)
    out.lesion_bbox_mlo = _scale_bbox(case.lesion_bbox_mlo, h, w, cfg.target_size)
    return out


def _scale_bbox(bbox, h, w, t):
    if bbox is None or (h == t and w == t):
        return bbox
    x0, y0, x1, y1 = bbox
    sx, sy = t / w, t / h
    return (int(x0 * sx), int(y0 * sy), min(int(math.ceil((x1 + 1) * sx)) - 1, t - 1),
            min(int(math.ceil((y1 + 1) * sy)) - 1, t - 1))


def rotate_image(img, angle_deg, pivot=None):
    """Rotate counter-clockwise (as displayed) about ``pivot`` (row, col), bilinear.

    The default pivot is the centre of the bottom pixel row, so a chest wall
    on the bottom edge stays anchored there.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    pr, pc = pivot if pivot is not None else (h - 1, (w - 1) / 2)
    a = math.radians(angle_deg)
    r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr, dc = r - pr, c - pc
    # inverse map: output pixel -> source pixel
    src_c = pc + dc * math.cos(a) - dr * math.sin(a)
    src_r = pr + dc * math.sin(a) + dr * math.cos(a)
    return _sample(img, src_r, src_c)


def _rotate_points(points, angle_deg, pivot):
    pr, pc = pivot
    a = math.radians(angle_deg)
    out = []
    for r, c in points:
        dr, dc = r - pr, c - pc
        # forward map, inverse of rotate_image's sampling
        out.append((pr - dc * math.sin(a) + dr * math.cos(a), pc + dc * math.cos(a) + dr * math.sin(a)))
    return out


def _transform_bbox(bbox, angle_deg, flip, h, w):
    if bbox is None:
        return None
    x0, y0, x1, y1 = bbox
    if angle_deg:
        pts = _rotate_points([(y0, x0), (y0, x1), (y1, x0), (y1, x1)], angle_deg, (h - 1, (w - 1) / 2))
        rs, cs = zip(*pts)
        x0, x1 = int(math.floor(min(cs))), int(math.ceil(max(cs)))
        y0, y1 = int(math.floor(min(rs))), int(math.ceil(max(rs)))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, w - 1), min(y1, h - 1)
    if flip:
        x0, x1 = w - 1 - x1, w - 1 - x0
    return (x0, y0, x1, y1)


def augment(case, rng, cfg=None):
    """Apply one sampled rotation and flip decision to both views of ``case``."""
    aug = (cfg or PreprocessConfig()).augment
    angle = rng.uniform(-aug.rotation_max_deg, aug.rotation_max_deg) if aug.rotation_max_deg > 0 else 0.0
    flip = bool(rng.random() < aug.hflip_prob) if aug.hflip_prob > 0 else False
    return apply_transform(case, angle, flip)


def apply_transform(case, angle_deg, flip):
    h, w = case.img_cc.shape

    def tf(img):
        out = rotate_image(img, angle_deg) if angle_deg else np.array(img, dtype=np.float64)
        return out[:, ::-1].copy() if flip else out

    return replace(
        case,
        img_cc=tf(case.img_cc),
        img_mlo=tf(case.img_mlo),
        lesion_bbox_cc=_transform_bbox(case.lesion_bbox_cc, angle_deg, flip, h, w),
        lesion_bbox_mlo=_transform_bbox(case.lesion_bbox_mlo, angle_deg, flip, h, w),
    )
