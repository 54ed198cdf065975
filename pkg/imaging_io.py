"""
Images <-> quaternion data matrices, and the on-disk formats.

Layouts
-------
* RGB image -> pure quaternion matrix of the image size: 0 + R i + G j + B k.
* RGB image stack (faces) -> one column per image, vectorized column-major.
* Stokes image -> block matrix: each block vectorized column-major into one
  column, blocks taken row-major over the grid.

Formats
-------
* PPM P6, maxval 255 (RGB). Channels map to [0, 1] by /255, written back
  with round-half-up.
* QSTK1 (Stokes image): b"QSTK1", u32 width, u32 height (little endian),
  then planes T0..T3 as width*height little-endian float64, row-major.
  Out-of-cone pixels are repaired on load.
* QMAT1 (quaternion matrix, used for factors): b"QMAT1", u32 rows, u32 cols,
  four row-major little-endian float64 planes. Loaded as is.
* CSV: H factor (%.17g), per-iteration trace, timing, metric report.
"""

from __future__ import annotations

import csv
import logging
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from constraint_proj import ConstraintSet, feasible_mask, proj_hs_array
from errors import DimensionError, FormatError, TilingError, UnsupportedFormatError
from metrics_stop import MetricRecord
from quat_core import N_COMPONENTS, QuatMatrix, qmat_fro_norm

logger = logging.getLogger(__name__)

# ============================================
# CONFIGURATION
# ============================================

QSTK_MAGIC = b"QSTK1"
QMAT_MAGIC = b"QMAT1"
PPM_MAXVAL = 255
STOKES_LOAD_TOL = 1e-9
REAL_PLANE_WARN_RATIO = 1e-8

REPORT_FIELDS = [
    "method", "r", "Upsilon",
    "Upsilon_0", "Upsilon_1", "Upsilon_2", "Upsilon_3",
    "time_s",
]
TRACE_FIELDS = ["iteration", "error", "w_sweeps", "h_sweeps"]
TIMING_FIELDS = ["iteration", "wall_time_s"]


# ============================================
# IMAGE TYPES
# ============================================

@dataclass(eq=False)
class RgbImage:
    red: np.ndarray
    green: np.ndarray
    blue: np.ndarray

    def __post_init__(self):
        planes = [np.asarray(p, dtype=np.float64) for p in (self.red, self.green, self.blue)]
        if any(p.ndim != 2 or p.shape != planes[0].shape for p in planes):
            raise DimensionError("R, G and B planes must be 2-D with equal shapes")
        if any(np.any(p < 0.0) or np.any(p > 1.0) for p in planes):
            raise ValueError("RGB values must lie in [0, 1]")
        self.red, self.green, self.blue = planes

    @property
    def height(self) -> int:
        return self.red.shape[0]

    @property
    def width(self) -> int:
        return self.red.shape[1]


@dataclass(eq=False)
class StokesImage:
    planes: np.ndarray
    repaired: int = 0

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != N_COMPONENTS:
            raise DimensionError(f"Stokes planes must have shape (4, h, w), got {planes.shape}")
        self.planes = planes

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass(frozen=True)
class TilingSpec:
    block_h: int
    block_w: int
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if min(self.block_h, self.block_w, self.grid_h, self.grid_w) < 1:
            raise TilingError(f"tiling sizes must be positive: {self}")

    @classmethod
    def for_image(cls, height: int, width: int, block_h: int, block_w: int = None) -> "TilingSpec":
        block_w = block_h if block_w is None else block_w
        if block_h < 1 or block_w < 1 or height % block_h or width % block_w:
            raise TilingError(
                f"{block_h}x{block_w} blocks do not divide a {height}x{width} image"
            )
        return cls(block_h, block_w, height // block_h, width // block_w)

    @property
    def image_shape(self) -> tuple:
        return (self.block_h * self.grid_h, self.block_w * self.grid_w)

    @property
    def matrix_shape(self) -> tuple:
        return (self.block_h * self.block_w, self.grid_h * self.grid_w)


# ============================================
# LAYOUT CONVERSIONS
# ============================================

def rgb_to_qmat(img: RgbImage) -> QuatMatrix:
    return QuatMatrix(np.stack([np.zeros_like(img.red), img.red, img.green, img.blue]))


def qmat_to_rgb(Q: QuatMatrix, shape: tuple) -> RgbImage:
    if Q.shape != tuple(shape):
        raise DimensionError(f"matrix shape {Q.shape} does not match image shape {tuple(shape)}")
    return _planes_to_rgb(Q.planes, Q)


def _planes_to_rgb(planes: np.ndarray, Q: QuatMatrix) -> RgbImage:
    real_norm = float(np.linalg.norm(planes[0].ravel()))
    if real_norm > REAL_PLANE_WARN_RATIO * qmat_fro_norm(Q):
        logger.warning("Real plane is not zero (norm %.3e); ignored for RGB output", real_norm)
    clipped = np.clip(planes[1:], 0.0, 1.0)
    return RgbImage(clipped[0], clipped[1], clipped[2])


def rgb_stack_to_qmat(images: list) -> QuatMatrix:
    """One column per image, each image vectorized column-major."""
    if not images:
        raise DimensionError("no images to stack")
    shape = (images[0].height, images[0].width)
    columns = []
    for img in images:
        if (img.height, img.width) != shape:
            raise DimensionError(f"image of size {(img.height, img.width)} in a stack of {shape}")
        columns.append(rgb_to_qmat(img).planes.reshape(N_COMPONENTS, -1, order="F"))
    return QuatMatrix(np.stack(columns, axis=-1))


def qmat_to_rgb_stack(Q: QuatMatrix, height: int, width: int) -> list:
    if Q.rows != height * width:
        raise DimensionError(f"{Q.rows} rows cannot hold {height}x{width} images")
    images = []
    for v in range(Q.cols):
        planes = Q.planes[:, :, v].reshape(N_COMPONENTS, height, width, order="F")
        images.append(_planes_to_rgb(planes, Q.columns([v])))
    return images


def stokes_to_qmat(img: StokesImage, tiling: TilingSpec) -> QuatMatrix:
    if (img.height, img.width) != tiling.image_shape:
        raise TilingError(
            f"tiling {tiling.image_shape} does not cover a {img.height}x{img.width} image"
        )
    bh, bw, gh, gw = tiling.block_h, tiling.block_w, tiling.grid_h, tiling.grid_w
    # axes: component, grid row, block row, grid col, block col
    blocks = img.planes.reshape(N_COMPONENTS, gh, bh, gw, bw)
    # -> component, block col, block row, grid row, grid col
    return QuatMatrix(blocks.transpose(0, 4, 2, 1, 3).reshape(N_COMPONENTS, bw * bh, gh * gw))


def qmat_to_stokes(Q: QuatMatrix, tiling: TilingSpec) -> StokesImage:
    if Q.shape != tiling.matrix_shape:
        raise DimensionError(f"matrix shape {Q.shape} does not match tiling {tiling.matrix_shape}")
    bh, bw, gh, gw = tiling.block_h, tiling.block_w, tiling.grid_h, tiling.grid_w
    blocks = Q.planes.reshape(N_COMPONENTS, bw, bh, gh, gw)
    return StokesImage(blocks.transpose(0, 3, 2, 4, 1).reshape(N_COMPONENTS, gh * bh, gw * bw))


def repair_stokes(img: StokesImage) -> StokesImage:
    """Project out-of-cone pixels onto the Stokes cone, counting them."""
    bad = ~feasible_mask(img.planes, ConstraintSet.STOKES, STOKES_LOAD_TOL)
    count = int(bad.sum())
    if not count:
        return StokesImage(img.planes, img.repaired)
    planes = img.planes.copy()
    planes[:, bad] = proj_hs_array(planes[:, bad])
    return StokesImage(planes, img.repaired + count)


def stokes_from_intensities(i0, i45, i90, i135) -> StokesImage:
    """Linear Stokes image from four polarizer intensities (0, 45, 90, 135 degrees)."""
    stack = [np.asarray(p, dtype=np.float64) for p in (i0, i45, i90, i135)]
    if any(p.ndim != 2 or p.shape != stack[0].shape for p in stack):
        raise DimensionError("intensity images must be 2-D with equal shapes")
    i0, i45, i90, i135 = stack
    planes = np.stack([
        0.5 * (i0 + i45 + i90 + i135),
        i0 - i90,
        i45 - i135,
        np.zeros_like(i0),
    ])
    img = repair_stokes(StokesImage(planes))
    if img.repaired:
        logger.warning("Repaired %d out-of-cone pixels from intensity data", img.repaired)
    return img


# ============================================
# PPM
# ============================================

_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def read_ppm(path) -> RgbImage:
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        match = _PPM_TOKEN.match(data, pos)
        if not match:
            raise FormatError(f"{path}: malformed PPM header")
        tokens.append(match.group(1))
        pos = match.end()
    if tokens[0] != b"P6":
        raise UnsupportedFormatError(f"{path}: only binary P6 PPM is supported, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric PPM header fields") from None
    if maxval != PPM_MAXVAL:
        raise UnsupportedFormatError(f"{path}: maxval {maxval} is not supported (only 255)")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: bad image size {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after PPM header")
    payload = data[pos + 1:]
    expected = 3 * width * height
    if len(payload) < expected:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    pixels = np.frombuffer(payload[:expected], dtype=np.uint8).reshape(height, width, 3)
    channels = pixels.astype(np.float64) / PPM_MAXVAL
    return RgbImage(channels[:, :, 0], channels[:, :, 1], channels[:, :, 2])


def write_ppm(img: RgbImage, path):
    rgb = np.stack([img.red, img.green, img.blue], axis=-1)
    pixels = np.clip(np.floor(rgb * PPM_MAXVAL + 0.5), 0, PPM_MAXVAL).astype(np.uint8)
    header = f"P6\n{img.width} {img.height}\n{PPM_MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


# ============================================
# BINARY QUATERNION CONTAINERS
# ============================================

def _encode_planes(magic: bytes, first: int, second: int, planes: np.ndarray) -> bytes:
    return magic + struct.pack("<II", first, second) + planes.astype("<f8").tobytes(order="C")


def _decode_planes(path, magic: bytes) -> tuple:
    data = Path(path).read_bytes()
    head = len(magic) + 8
    if len(data) < head or data[:len(magic)] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    first, second = struct.unpack("<II", data[len(magic):head])
    expected = head + N_COMPONENTS * first * second * 8
    if len(data) != expected:
        raise FormatError(f"{path}: size mismatch ({len(data)} bytes, expected {expected})")
    values = np.frombuffer(data[head:], dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values in payload")
    return first, second, values


def write_qstok(img: StokesImage, path):
    Path(path).write_bytes(_encode_planes(QSTK_MAGIC, img.width, img.height, img.planes))


def read_qstok(path) -> StokesImage:
    width, height, values = _decode_planes(path, QSTK_MAGIC)
    img = repair_stokes(StokesImage(values.reshape(N_COMPONENTS, height, width)))
    if img.repaired:
        logger.warning("%s: repaired %d out-of-cone pixels", path, img.repaired)
    return img


def write_qmat(Q: QuatMatrix, path):
    Path(path).write_bytes(_encode_planes(QMAT_MAGIC, Q.rows, Q.cols, Q.planes))


def read_qmat(path) -> QuatMatrix:
    rows, cols, values = _decode_planes(path, QMAT_MAGIC)
    return QuatMatrix(values.reshape(N_COMPONENTS, rows, cols))


# ============================================
# CSV ARTIFACTS
# ============================================

def write_h_csv(H, path):
    np.savetxt(path, np.asarray(H, dtype=np.float64), fmt="%.17g", delimiter=",")


def read_h_csv(path) -> np.ndarray:
    try:
        H = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None
    if not np.all(np.isfinite(H)):
        raise FormatError(f"{path}: non-finite values")
    return H


def format_percent(value) -> str:
    """Fraction -> percent with 2 decimals; None -> blank."""
    if value is None:
        return ""
    return f"{round(100.0 * value, 2) + 0.0:.2f}"


@dataclass(frozen=True)
class ReportRow:
    method: str
    r: int
    metrics: MetricRecord = None
    time_s: float = None

    def as_dict(self) -> dict:
        row = {"method": self.method, "r": self.r}
        m = self.metrics
        row["Upsilon"] = format_percent(m.upsilon if m else None)
        for l in range(N_COMPONENTS):
            row[f"Upsilon_{l}"] = format_percent(m.upsilon_l[l] if m else None)
        row["time_s"] = "" if self.time_s is None else f"{self.time_s:.2f}"
        return row


def write_report_csv(rows: list, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(row.as_dict() for row in rows)


def write_trace_csv(report, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for k, (e, (w_sweeps, h_sweeps)) in enumerate(zip(report.errors, report.inner_sweeps), 1):
            writer.writerow([k, repr(float(e)), w_sweeps, h_sweeps])


def write_timing_csv(report, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TIMING_FIELDS)
        for k, t in enumerate(report.wall_times, 1):
            writer.writerow([k, f"{t:.6f}"])


def write_manifest(entries: dict, path):
    lines = [f"{key}={entries[key]}" for key in sorted(entries)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    entries = {}
    for line in Path(path).read_text().splitlines():
        if line and "=" in line:
            key, value = line.split("=", 1)
            entries[key] = value
    return entries
