"""Image representation, raster I/O and the PSNR metric.

Images are plain ``float64`` numpy arrays of shape (H, W, C) with C in
{1, 3} and nominal sample range [0, 1]. All functions are pure; nothing in
the library mutates an image in place. Samplers may produce out-of-range
samples; values are clipped to [0, 1] only when quantizing to PNG and when
scoring (see :func:`metric_report`), never inside a sampling loop.

Two file formats are supported:

* PNG, 8-bit or 16-bit, grayscale or RGB (lossy: quantized at the bit depth).
* A raw little-endian tensor format (lossless at float32 precision):
  magic ``CMT1``, three uint32 (H, W, C), then H*W*C float32 samples in
  row-major, channel-interleaved order.
"""

import struct
from dataclasses import dataclass, field

import cv2
import numpy as np

TENSOR_MAGIC = b"CMT1"
PSNR_CAP_DB = 100.0


class ImageError(ValueError):
    """Malformed image data or unsupported image file."""


def validate_image(arr, name="image"):
    """Coerce to a float64 (H, W, C) array and check the invariants.

    Accepts (H, W) arrays as single-channel. Raises :class:`ImageError` on
    non-finite samples or unsupported channel counts.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageError(f"{name}: expected (H, W, 1|3) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ImageError(f"{name}: contains non-finite samples")
    return arr


def psnr(reference, candidate, peak=1.0, cap=PSNR_CAP_DB):
    """Peak signal-to-noise ratio, 10*log10(peak^2 / MSE), in decibels.

    The reported value saturates at ``cap`` (zero MSE would otherwise be an
    infinity). Symmetric in its first two arguments. No clipping is applied
    here; see :func:`metric_report` for scored reports.
    """
    reference = validate_image(reference, "reference")
    candidate = validate_image(candidate, "candidate")
    if reference.shape != candidate.shape:
        raise ImageError(
            f"dimension mismatch: {reference.shape} vs {candidate.shape}"
        )
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = np.mean((reference - candidate) ** 2)
    if mse == 0.0:
        return cap
    return min(10.0 * np.log10(peak * peak / mse), cap)


@dataclass
class MetricReport:
    """Restoration scores: PSNR against a reference plus the data residual.

    ``psnr_db`` is None when no reference image was supplied. ``scoring``
    records the convention used (samples clipped to [0, 1] before scoring).
    """

    psnr_db: float | None
    residual_norm: float
    scoring: str = field(default="psnr on [0,1] after clipping")

    def lines(self):
        out = []
        if self.psnr_db is not None:
            out.append(f"psnr_db: {self.psnr_db:.4f}")
        out.append(f"residual_norm: {self.residual_norm:.6e}")
        out.append(f"scoring: {self.scoring}")
        return out


def metric_report(op, restored, y, reference=None, peak=1.0):
    """Score a restoration: relative residual ||A x - y|| / ||y||, and PSNR
    versus ``reference`` when given (both images clipped to [0, 1] first)."""
    y = np.asarray(y, dtype=np.float64)
    ax = op.apply(restored)
    ynorm = np.linalg.norm(y)
    residual = np.linalg.norm(ax - y) / ynorm if ynorm > 0 else np.linalg.norm(ax)
    value = None
    if reference is not None:
        value = psnr(np.clip(reference, 0.0, 1.0), np.clip(restored, 0.0, 1.0), peak=peak)
    return MetricReport(psnr_db=value, residual_norm=float(residual))


# ---------------------------------------------------------------------------
# raw tensor format


def save_tensor(path, arr):
    """Write an image (or any (H, W, C) array) as a CMT1 float32 tensor."""
    arr = validate_image(arr)
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(tensor_bytes_from_array(arr))
    return (h, w, c)


def load_tensor(path):
    """Read a CMT1 tensor back as a float64 (H, W, C) array."""
    with open(path, "rb") as fh:
        data = fh.read()
    return array_from_tensor_bytes(data)


def tensor_bytes_from_array(arr):
    """Serialize an array to CMT1 bytes (float32 samples, little-endian)."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ImageError(f"tensor must be (H, W, C), got shape {arr.shape}")
    h, w, c = arr.shape
    header = TENSOR_MAGIC + struct.pack("<III", h, w, c)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def array_from_tensor_bytes(data):
    """Deserialize CMT1 bytes to a float64 (H, W, C) array."""
    if len(data) < 16 or data[:4] != TENSOR_MAGIC:
        raise ImageError("not a CMT1 tensor (bad magic)")
    h, w, c = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * h * w * c
    if len(data) != expected:
        raise ImageError(f"truncated tensor: {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f4", offset=16)
    return flat.reshape(h, w, c).astype(np.float64)


# ---------------------------------------------------------------------------
# PNG I/O


def save_png(path, arr, bit_depth=8):
    """Quantize to 8- or 16-bit PNG. Samples are clipped to [0, 1] first."""
    arr = validate_image(arr)
    if bit_depth not in (8, 16):
        raise ImageError(f"unsupported PNG bit depth {bit_depth}")
    scale = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    q = np.rint(np.clip(arr, 0.0, 1.0) * scale).astype(dtype)
    if q.shape[2] == 1:
        out = q[:, :, 0]
    else:
        out = q[:, :, ::-1]  # cv2 wants BGR
    if not cv2.imwrite(str(path), out):
        raise ImageError(f"failed to write PNG {path}")


def load_png(path):
    """Read an 8- or 16-bit PNG into [0, 1] floats."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageError(f"unreadable or unsupported image file: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageError(f"unsupported PNG sample type {raw.dtype}")
    arr = raw.astype(np.float64) / scale
    if arr.ndim == 2:
        arr = arr[:, :, None]
    elif arr.shape[2] == 4:
        arr = arr[:, :, :3][:, :, ::-1]
    else:
        arr = arr[:, :, ::-1]
    return np.ascontiguousarray(arr)


def load_image(path):
    """Load a PNG or CMT1 tensor based on the file's magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == TENSOR_MAGIC:
        return load_tensor(path)
    return load_png(path)


def save_image(path, arr, bit_depth=8):
    """Save by extension: ``.cmt`` as a raw tensor, anything else as PNG."""
    if str(path).lower().endswith(".cmt"):
        save_tensor(path, arr)
    else:
        save_png(path, arr, bit_depth=bit_depth)
