"""Hot inner-loop kernels: circular 2-D convolution and its strided variants.

All heavy per-pixel loops live here so they can be JIT-compiled with numba.
Set ``CMRESTORE_DISABLE_NUMBA=1`` in the environment to force the pure-numpy
fallbacks (the fallbacks are also what ``benchmarks/bench_kernels.py`` times
against the compiled paths).

Convention: every kernel computes a *correlation* with periodic wrap,

    out[m, n, c] = sum_{i,j} taps[i, j] * x[(m + i - ay) % H, (n + j - ax) % W, c]

where ``(ay, ax)`` is the anchor (the tap aligned with the output pixel).
The adjoint of this map is the same correlation with taps flipped in both
axes and anchor ``(kh-1-ay, kw-1-ax)``; callers handle the flip.
"""

import os

import numpy as np


def _numba_disabled() -> bool:
    return os.environ.get("CMRESTORE_DISABLE_NUMBA", "").strip() not in ("", "0", "false", "False")


def conv2d_circular_numpy(x, taps, ay, ax):
    """Periodic correlation of an (H, W, C) image with a 2-D tap array."""
    out = np.zeros_like(x)
    kh, kw = taps.shape
    for i in range(kh):
        for j in range(kw):
            w = taps[i, j]
            if w == 0.0:
                continue
            # out[m] += w * x[m + i - ay]  ==  w * roll(x, -(i - ay))
            out += w * np.roll(x, shift=(-(i - ay), -(j - ax)), axis=(0, 1))
    return out


def conv2d_decimate_numpy(x, taps, ay, ax, f):
    """Periodic correlation followed by f-fold decimation in both axes."""
    return conv2d_circular_numpy(x, taps, ay, ax)[::f, ::f]


def conv2d_zerofill_numpy(v, taps, ay, ax, f):
    """Periodic correlation of the f-fold zero-filled upsampling of v."""
    h, w, c = v.shape
    up = np.zeros((h * f, w * f, c), dtype=v.dtype)
    up[::f, ::f] = v
    return conv2d_circular_numpy(up, taps, ay, ax)


def _conv2d_circular_loops(x, taps, ay, ax):
    H, W, C = x.shape
    kh, kw = taps.shape
    out = np.zeros((H, W, C), dtype=x.dtype)
    for m in range(H):
        for i in range(kh):
            mm = (m + i - ay) % H
            for j in range(kw):
                w = taps[i, j]
                if w == 0.0:
                    continue
                nn = (j - ax) % W
                for n in range(W):
                    for c in range(C):
                        out[m, n, c] += w * x[mm, nn, c]
                    nn += 1
                    if nn == W:
                        nn = 0
    return out


def _conv2d_decimate_loops(x, taps, ay, ax, f):
    H, W, C = x.shape
    kh, kw = taps.shape
    out = np.zeros((H // f, W // f, C), dtype=x.dtype)
    for m in range(H // f):
        for i in range(kh):
            mm = (m * f + i - ay) % H
            for j in range(kw):
                w = taps[i, j]
                if w == 0.0:
                    continue
                nn = (j - ax) % W
                for n in range(W // f):
                    for c in range(C):
                        out[m, n, c] += w * x[mm, nn, c]
                    nn += f
                    if nn >= W:
                        nn -= W
    return out


def _conv2d_zerofill_loops(v, taps, ay, ax, f):
    # Gather form: only taps hitting a nonzero sample of the zero-filled
    # input contribute, i.e. those with (m + i - ay) % f == 0.
    h, w, c = v.shape
    H, W = h * f, w * f
    kh, kw = taps.shape
    out = np.zeros((H, W, c), dtype=v.dtype)
    for m in range(H):
        for i in range(kh):
            mm = (m + i - ay) % H
            if mm % f != 0:
                continue
            mf = mm // f
            for j in range(kw):
                wt = taps[i, j]
                if wt == 0.0:
                    continue
                nn = (j - ax) % W
                for n in range(W):
                    if nn % f == 0:
                        nf = nn // f
                        for cc in range(c):
                            out[m, n, cc] += wt * v[mf, nf, cc]
                    nn += 1
                    if nn == W:
                        nn = 0
    return out


NUMBA_ENABLED = False
if not _numba_disabled():
    try:
        from numba import njit

        conv2d_circular_numba = njit(cache=True)(_conv2d_circular_loops)
        conv2d_decimate_numba = njit(cache=True)(_conv2d_decimate_loops)
        conv2d_zerofill_numba = njit(cache=True)(_conv2d_zerofill_loops)
        NUMBA_ENABLED = True
    except ImportError:
        pass

if NUMBA_ENABLED:
    conv2d_circular = conv2d_circular_numba
    conv2d_decimate = conv2d_decimate_numba
    conv2d_zerofill = conv2d_zerofill_numba
else:
    conv2d_circular = conv2d_circular_numpy
    conv2d_decimate = conv2d_decimate_numpy
    conv2d_zerofill = conv2d_zerofill_numpy
