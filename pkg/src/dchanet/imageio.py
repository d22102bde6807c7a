"""Binary portable graymap (P5) and pixmap (P6) I/O, 8 bits per sample."""

from pathlib import Path

import numpy as np


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _write(path, magic, arr):
    path = Path(path)
    h, w = arr.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(arr).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_pgm(path, img):
    """Write a float image in [0, 1] as an 8-bit P5 file."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"P5 needs a 2-D image, got shape {img.shape}")
    return _write(path, "P5", to_uint8(img))


def write_ppm(path, rgb):
    """Write an ``H x W x 3`` float image in [0, 1] as an 8-bit P6 file."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"P6 needs an H x W x 3 image, got shape {rgb.shape}")
    return _write(path, "P6", to_uint8(rgb))


def _tokens(raw, count):
    # header tokens separated by whitespace, '#' comments allowed
    tokens, pos = [], 0
    while len(tokens) < count:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens, pos + 1


def _read(path, magic, channels):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    (tag, w, h, maxval), pos = _tokens(raw, 4)
    if tag.decode() != magic or int(maxval) != 255:
        raise ValueError(f"{path}: expected 8-bit {magic}, got {tag.decode()} maxval {int(maxval)}")
    w, h = int(w), int(h)
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * channels, offset=pos)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return data.reshape(shape).astype(np.float64) / 255.0


def read_pgm(path):
    return _read(path, "P5", 1)


def read_ppm(path):
    return _read(path, "P6", 3)
