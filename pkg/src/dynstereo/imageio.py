"""Netpbm / PFM readers and writers and the on-disk video layout.

Layout of a video directory::

    left/frame_00000.ppm   right/frame_00000.ppm   (binary P6, 8-bit)
    disparity/frame_00000.pfm                      (Pf, little-endian, bottom row first)
    valid/frame_00000.pgm                          (binary P5, 255 = valid)
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .data import DisparitySequence, StereoVideo

FRAME_PATTERN = "frame_{:05d}"
_FRAME_RE = re.compile(r"^frame_(\d{5})\.(ppm|pfm|pgm)$")


class LayoutError(Exception):
    """Raised for missing or inconsistent frame files."""


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _read_header(f, count: int) -> list[bytes]:
    tokens: list[bytes] = []
    while len(tokens) < count:
        line = f.readline()
        if not line:
            raise ValueError("unexpected end of file in header")
        line = line.split(b"#", 1)[0]
        tokens += line.split()
    return tokens


def encode_ppm(image: np.ndarray) -> bytes:
    """[3, H, W] floats in [0, 1] -> binary P6 bytes."""
    rgb = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    _, h, w = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.transpose(1, 2, 0).tobytes()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f, 4)
        if magic != b"P6":
            raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
        w, h, maxval = int(w), int(h), int(maxval)
        dtype = np.uint8 if maxval < 256 else ">u2"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * 3)
    return (data.reshape(h, w, 3).transpose(2, 0, 1) / float(maxval)).astype(np.float32)


def encode_pgm(mask: np.ndarray) -> bytes:
    m = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    h, w = m.shape
    return f"P5\n{w} {h}\n255\n".encode() + m.tobytes()


def read_pgm(path) -> np.ndarray:
    """Returns the mask as bool (nonzero = True)."""
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f, 4)
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
        w, h, maxval = int(w), int(h), int(maxval)
        dtype = np.uint8 if maxval < 256 else ">u2"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h)
    return data.reshape(h, w) > 0


def encode_pfm(values: np.ndarray) -> bytes:
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"PFM disparity must be [H, W], got {arr.shape}")
    h, w = arr.shape
    return f"Pf\n{w} {h}\n-1.0\n".encode() + np.flipud(arr).tobytes()


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, scale = _read_header(f, 4)
        if magic not in (b"Pf", b"PF"):
            raise ValueError(f"{path}: not a PFM file (magic {magic!r})")
        channels = 3 if magic == b"PF" else 1
        w, h, scale = int(w), int(h), float(scale)
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * channels)
    data = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(data).astype(np.float32)


def frame_name(i: int, ext: str) -> str:
    return FRAME_PATTERN.format(i) + f".{ext}"


def list_frames(directory, ext: str) -> list[Path]:
    """Frame files of one kind, sorted; raises LayoutError listing any index gaps."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LayoutError(f"missing directory {directory}")
    indices = sorted(int(m.group(1)) for p in directory.iterdir()
                     if (m := _FRAME_RE.match(p.name)) and m.group(2) == ext)
    if not indices:
        raise LayoutError(f"no frame_*.{ext} files in {directory}")
    missing = sorted(set(range(indices[-1] + 1)) - set(indices))
    if missing:
        raise LayoutError(f"{directory}: missing frames {', '.join(frame_name(i, ext) for i in missing)}")
    return [directory / frame_name(i, ext) for i in indices]


def read_video(directory) -> StereoVideo:
    directory = Path(directory)
    left = list_frames(directory / "left", "ppm")
    right = list_frames(directory / "right", "ppm")
    if len(left) != len(right):
        raise LayoutError(f"{directory}: {len(left)} left frames but {len(right)} right frames")
    return StereoVideo(np.stack([read_ppm(p) for p in left]), np.stack([read_ppm(p) for p in right]))


def write_video(video: StereoVideo, directory) -> None:
    directory = Path(directory)
    for i in range(video.length):
        atomic_write(directory / "left" / frame_name(i, "ppm"), encode_ppm(video.left[i]))
        atomic_write(directory / "right" / frame_name(i, "ppm"), encode_ppm(video.right[i]))


def write_disparity(seq: DisparitySequence, directory, mask_dir: str = "valid") -> None:
    directory = Path(directory)
    for i in range(seq.length):
        atomic_write(directory / "disparity" / frame_name(i, "pfm"), encode_pfm(seq.values[i]))
        atomic_write(directory / mask_dir / frame_name(i, "pgm"), encode_pgm(seq.valid[i]))


def read_disparity(directory) -> DisparitySequence:
    """Disparity frames plus the ``valid/`` masks when present (all valid otherwise)."""
    directory = Path(directory)
    files = list_frames(directory / "disparity", "pfm")
    values = np.stack([read_pfm(p) for p in files])
    valid = None
    if (directory / "valid").is_dir():
        masks = list_frames(directory / "valid", "pgm")
        if len(masks) != len(files):
            raise LayoutError(f"{directory}: {len(files)} disparity frames but {len(masks)} masks")
        valid = np.stack([read_pgm(p) for p in masks])
    return DisparitySequence(values, valid)


def write_masks(masks: np.ndarray, directory) -> None:
    for i, m in enumerate(masks):
        atomic_write(Path(directory) / frame_name(i, "pgm"), encode_pgm(m))


def write_flat_text(path, mapping: dict[str, str]) -> None:
    """``key = value`` lines in sorted key order."""
    atomic_write(path, "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping)).encode())


def read_flat_text(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
