"""Linear degradation operators: A, A^T, the (regularized) pseudoinverse,
guidance gradients, and observation synthesis.

Three image operator kinds are provided, all with periodic (circular)
boundary handling so the convolutional ones are exactly diagonalized by the
2-D DFT:

* :class:`SRBicubic`     -- anti-aliasing bicubic filtering + f-fold decimation
* :class:`GaussianBlur`  -- circular convolution with a 2-D tap array
* :class:`InpaintMask`   -- selection of a kept subset of pixel positions

plus :class:`MatrixOperator`, a small dense operator used by tests and the
quadratic momentum benchmark.

``apply_pinv`` computes A^T (A A^T + reg I)^{-1} v. Every operator has a fast
closed-form path (per-frequency division for the convolutional kinds, a
polyphase/aliased-spectrum solve for decimated convolution, a scalar factor
for masks) and a matrix-free conjugate-gradient fallback on the normal
equations; the two paths cross-check each other in the test suite.
"""

import numpy as np

from . import rng
from ._kernels import conv2d_circular, conv2d_decimate, conv2d_zerofill

SPECTRUM_FLOOR = 1e-12
CG_RTOL = 1e-8


class OperatorError(ValueError):
    """Shape mismatch, degenerate configuration, or solver failure."""


# ---------------------------------------------------------------------------
# kernel construction


def _cubic(t, a=-0.5):
    t = np.abs(np.asarray(t, dtype=np.float64))
    near = (a + 2) * t**3 - (a + 3) * t**2 + 1
    far = a * (t**3 - 5 * t**2 + 8 * t - 4)
    out = np.where(t <= 1, near, far)
    return np.where(t < 2, out, 0.0)


def bicubic_taps(factor):
    """1-D anti-aliasing bicubic taps for integer downsampling.

    The Catmull-Rom cubic (a = -0.5) stretched by the factor, sampled at the
    integer offsets covering its support and normalized to unit sum. Returns
    ``(taps, anchor)`` where ``anchor`` is the tap index aligned with an
    output sample; source windows are centered on each f-pixel block.
    """
    f = int(factor)
    if f < 2:
        raise OperatorError("downsampling factor must be >= 2")
    if f % 2 == 0:
        offsets = np.arange(4 * f) - (2 * f - 0.5)
        anchor = 3 * f // 2
    else:
        offsets = np.arange(4 * f - 1) - (2 * f - 1)
        anchor = (3 * f - 1) // 2
    taps = _cubic(offsets / f) / f
    taps /= taps.sum()
    return taps, anchor


def gaussian_taps(size=9, std=3.0):
    """2-D truncated Gaussian taps, normalized to unit sum (DC-preserving)."""
    if size < 1 or size % 2 == 0:
        raise OperatorError("kernel size must be odd and positive")
    if std <= 0:
        raise OperatorError("kernel std must be positive")
    d = np.arange(size) - (size - 1) / 2
    g = np.exp(-(d**2) / (2.0 * std * std))
    taps = np.outer(g, g)
    return taps / taps.sum()


def _embed_taps(taps, anchor, shape):
    """Impulse response of the correlation on a (H, W) grid. Taps wider than
    the grid alias onto it, matching the wrapped direct convolution."""
    h, w = shape
    kh, kw = taps.shape
    e = np.zeros((h, w))
    ay, ax = anchor
    for i in range(kh):
        for j in range(kw):
            e[(i - ay) % h, (j - ax) % w] += taps[i, j]
    return e


def conjugate_gradient(matvec, b, rtol=CG_RTOL, maxiter=None):
    """Solve M w = b for symmetric positive-definite M given as a callable.

    Runs until ||b - M w|| <= rtol * ||b||; raises :class:`OperatorError`
    if the iteration cap is hit first.
    """
    if maxiter is None:
        maxiter = 10 * b.size
    x = np.zeros_like(b)
    r = b.astype(np.float64).copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    target = (rtol**2) * rs
    if rs == 0.0:
        return x, 0
    for k in range(maxiter):
        mp = matvec(p)
        alpha = rs / float(np.vdot(p, mp).real)
        x = x + alpha * p
        r = r - alpha * mp
        rs_next = float(np.vdot(r, r).real)
        if rs_next <= target:
            return x, k + 1
        p = r + (rs_next / rs) * p
        rs = rs_next
    raise OperatorError(
        f"CG did not reach rtol={rtol} within {maxiter} iterations "
        "(ill-conditioned operator; consider reg > 0)"
    )


# ---------------------------------------------------------------------------
# operators


class LinearOperator:
    """Base class: shape bookkeeping and the shared pseudoinverse plumbing."""

    kind = "generic"
    input_shape: tuple
    output_shape: tuple

    def apply(self, x):
        raise NotImplementedError

    def apply_transpose(self, v):
        raise NotImplementedError

    def apply_pinv(self, v, reg=0.0, method="auto"):
        """A^T (A A^T + reg I)^{-1} v.

        ``method`` is "auto" (closed form where available), "cg" (matrix-free
        conjugate gradients on the normal equations), or "fft" (alias of
        "auto" for the convolutional kinds).
        """
        if reg < 0:
            raise OperatorError("reg must be >= 0")
        v = self._check_output(v)
        if method == "cg":
            return self._pinv_cg(v, reg)
        if method in ("auto", "fft"):
            return self._pinv_fast(v, reg)
        raise OperatorError(f"unknown pinv method {method!r}")

    def _pinv_fast(self, v, reg):
        return self._pinv_cg(v, reg)

    def _pinv_cg(self, v, reg):
        def normal_matvec(w):
            return self.apply(self.apply_transpose(w)) + reg * w

        w, _ = conjugate_gradient(normal_matvec, v)
        return self.apply_transpose(w)

    def _check_input(self, x, what="input"):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise OperatorError(
                f"{self.kind}: {what} shape {x.shape} != {self.input_shape}"
            )
        return x

    def _check_output(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.output_shape:
            raise OperatorError(
                f"{self.kind}: measurement shape {v.shape} != {self.output_shape}"
            )
        return v


class GaussianBlur(LinearOperator):
    """Circular 2-D convolution with a fixed tap array (per channel)."""

    kind = "gaussian-blur"

    def __init__(self, shape, taps=None, anchor=None):
        if len(shape) != 3:
            raise OperatorError("shape must be (H, W, C)")
        self.input_shape = tuple(shape)
        self.output_shape = tuple(shape)
        if taps is None:
            taps = gaussian_taps()
        self.taps = np.asarray(taps, dtype=np.float64)
        if self.taps.ndim != 2:
            raise OperatorError("blur taps must be 2-D")
        kh, kw = self.taps.shape
        if anchor is None:
            anchor = ((kh - 1) // 2, (kw - 1) // 2)
        self.anchor = tuple(anchor)
        self._flipped = np.ascontiguousarray(self.taps[::-1, ::-1])
        self._flipped_anchor = (kh - 1 - self.anchor[0], kw - 1 - self.anchor[1])
        # forward Fourier multiplier (correlation => conjugated DFT of the
        # embedded impulse response)
        self._tf = np.conj(np.fft.fft2(_embed_taps(self.taps, self.anchor, shape[:2])))

    def apply(self, x):
        x = self._check_input(x)
        return conv2d_circular(x, self.taps, *self.anchor)

    def apply_transpose(self, v):
        v = self._check_output(v)
        return conv2d_circular(v, self._flipped, *self._flipped_anchor)

    def _pinv_fast(self, v, reg):
        denom = np.abs(self._tf) ** 2 + reg
        if reg == 0.0:
            denom = np.maximum(denom, SPECTRUM_FLOOR)
        vhat = np.fft.fft2(v, axes=(0, 1))
        out = np.fft.ifft2((np.conj(self._tf) / denom)[:, :, None] * vhat, axes=(0, 1))
        return out.real


class SRBicubic(LinearOperator):
    """Bicubic anti-aliasing filter followed by f-fold decimation."""

    kind = "sr-bicubic"

    def __init__(self, shape, factor):
        if len(shape) != 3:
            raise OperatorError("shape must be (H, W, C)")
        h, w, c = shape
        f = int(factor)
        if h % f or w % f:
            raise OperatorError(f"grid {h}x{w} not divisible by factor {f}")
        self.factor = f
        self.input_shape = tuple(shape)
        self.output_shape = (h // f, w // f, c)
        taps1, a1 = bicubic_taps(f)
        self.taps = np.outer(taps1, taps1)
        self.anchor = (a1, a1)
        k = self.taps.shape[0]
        self._flipped = np.ascontiguousarray(self.taps[::-1, ::-1])
        self._flipped_anchor = (k - 1 - a1, k - 1 - a1)
        self._tf = np.conj(np.fft.fft2(_embed_taps(self.taps, self.anchor, shape[:2])))
        # A A^T is diagonal on the low-res Fourier grid: the aliased average
        # of |transfer|^2 over the f x f spectral replicas.
        p = np.abs(self._tf) ** 2
        self._gram = p.reshape(f, h // f, f, w // f).sum(axis=(0, 2)) / (f * f)

    def apply(self, x):
        x = self._check_input(x)
        return conv2d_decimate(x, self.taps, *self.anchor, self.factor)

    def apply_transpose(self, v):
        v = self._check_output(v)
        return conv2d_zerofill(v, self._flipped, *self._flipped_anchor, self.factor)

    def _pinv_fast(self, v, reg):
        denom = self._gram + reg
        if reg == 0.0:
            denom = np.maximum(denom, SPECTRUM_FLOOR)
        what = np.fft.fft2(v, axes=(0, 1)) / denom[:, :, None]
        uhat = np.tile(what, (self.factor, self.factor, 1))
        out = np.fft.ifft2(np.conj(self._tf)[:, :, None] * uhat, axes=(0, 1))
        return out.real


class InpaintMask(LinearOperator):
    """Selection of the kept pixel positions; a pixel keeps or loses all
    of its channels jointly. Measurements have shape (n_kept, C) in
    row-major scan order of the mask."""

    kind = "inpaint-mask"

    def __init__(self, shape, kept):
        if len(shape) != 3:
            raise OperatorError("shape must be (H, W, C)")
        kept = np.asarray(kept, dtype=bool)
        if kept.shape != tuple(shape[:2]):
            raise OperatorError(f"mask shape {kept.shape} != grid {shape[:2]}")
        n = int(kept.sum())
        if n == 0:
            raise OperatorError("mask keeps no pixels")
        self.kept = kept
        self.input_shape = tuple(shape)
        self.output_shape = (n, shape[2])

    @classmethod
    def random(cls, shape, keep_fraction, seed=0):
        """Keep a uniformly random subset of exactly
        round(keep_fraction * H * W) pixel positions, deterministic per seed."""
        if not 0.0 < keep_fraction <= 1.0:
            raise OperatorError("keep_fraction must be in (0, 1]")
        h, w = shape[0], shape[1]
        n = int(round(keep_fraction * h * w))
        if n == 0:
            raise OperatorError("keep_fraction keeps no pixels")
        g = rng.stream(seed, rng.MASK)
        flat = np.zeros(h * w, dtype=bool)
        flat[g.permutation(h * w)[:n]] = True
        return cls(shape, flat.reshape(h, w))

    @property
    def keep_fraction(self):
        return self.output_shape[0] / (self.input_shape[0] * self.input_shape[1])

    def apply(self, x):
        x = self._check_input(x)
        return x[self.kept].copy()

    def apply_transpose(self, v):
        v = self._check_output(v)
        out = np.zeros(self.input_shape)
        out[self.kept] = v
        return out

    def _pinv_fast(self, v, reg):
        # rows of A are distinct identity rows, so A A^T = I
        return self.apply_transpose(v) / (1.0 + reg)


class MatrixOperator(LinearOperator):
    """Dense m x n operator on flat vectors (tests and benchmarks)."""

    kind = "matrix"

    def __init__(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise OperatorError("matrix must be 2-D")
        self.a = a
        self.input_shape = (a.shape[1],)
        self.output_shape = (a.shape[0],)

    def apply(self, x):
        return self.a @ self._check_input(x)

    def apply_transpose(self, v):
        return self.a.T @ self._check_output(v)

    def _pinv_fast(self, v, reg):
        gram = self.a @ self.a.T + reg * np.eye(self.a.shape[0])
        return self.a.T @ np.linalg.solve(gram, v)


# ---------------------------------------------------------------------------
# guidance gradients and observation synthesis


def bp_gradient(op, x, y, reg=0.0, method="auto"):
    """Back-projection direction A^T (A A^T + reg I)^{-1} (A x - y).

    With reg = 0 and full row rank, x - bp_gradient(op, x, y) satisfies
    A x = y exactly.
    """
    return op.apply_pinv(op.apply(x) - np.asarray(y, dtype=np.float64), reg=reg, method=method)


def ls_gradient(op, x, y):
    """Least-squares gradient A^T (A x - y) of 0.5 * ||A x - y||^2."""
    return op.apply_transpose(op.apply(x) - np.asarray(y, dtype=np.float64))


def degrade(op, x, sigma_y=0.0, seed=0):
    """Synthesize the observation A x + sigma_y * z, z ~ N(0, I), seeded."""
    if sigma_y < 0:
        raise OperatorError("sigma_y must be >= 0")
    y = op.apply(x)
    if sigma_y == 0.0:
        return y
    return y + sigma_y * rng.stream(seed, rng.MEASUREMENT).standard_normal(op.output_shape)


def median_init(op, y):
    """Inpainting initializer: observed pixels copied from y, missing pixels
    filled with the per-channel median of the observed values."""
    if not isinstance(op, InpaintMask):
        raise OperatorError("median_init requires an inpaint-mask operator")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != op.output_shape:
        raise OperatorError(f"measurement shape {y.shape} != {op.output_shape}")
    if y.shape[0] == 0:
        raise OperatorError("empty observed set")
    med = np.median(y, axis=0)
    out = np.broadcast_to(med, op.input_shape).copy()
    out[op.kept] = y
    return out
