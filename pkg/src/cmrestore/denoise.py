"""Denoiser contract f(x, sigma) -> x0 estimate, plus analytic instances.

The samplers treat the denoiser as a black box mapping a noisy image and a
noise level to a clean-image estimate, with the boundary behavior
f(x, sigma) = x for sigma below a small floor ``epsilon``. Two analytic
denoisers make every sampler quantity a closed-form affine function of the
injected Gaussians, which is what the verification suite leans on:

* :class:`GaussianPriorDenoiser`  -- exact posterior mean under N(mean, s^2 I)
* :class:`IdentityDenoiser`       -- returns its input

:class:`MixtureDenoiser` (two isotropic Gaussian components, closed-form
posterior mean) is available as a nonlinear stress test.

:class:`RemoteDenoiser` speaks a length-prefixed binary protocol over any
byte stream (TCP or a pipe pair): each frame is a uint32-LE payload length
followed by the payload; a request payload is a float64-LE sigma followed by
a CMT1 tensor, a response payload is a CMT1 tensor of the same shape. One
request is in flight per connection at a time.
"""

import socket
import struct
import threading

import numpy as np

from .image import array_from_tensor_bytes, tensor_bytes_from_array

DEFAULT_EPSILON = 0.002


class DenoiserError(ValueError):
    """Bad sigma, malformed protocol frame, or unreachable endpoint."""


class Denoiser:
    """Base contract. Subclasses implement :meth:`_estimate`."""

    def __init__(self, epsilon=DEFAULT_EPSILON):
        self.epsilon = float(epsilon)

    def __call__(self, x, sigma):
        x = np.asarray(x, dtype=np.float64)
        if sigma < 0:
            raise DenoiserError(f"negative noise level {sigma}")
        if sigma <= self.epsilon:
            return x.copy()
        return self._estimate(x, float(sigma))

    def _estimate(self, x, sigma):
        raise NotImplementedError


class IdentityDenoiser(Denoiser):
    def _estimate(self, x, sigma):
        return x.copy()


class GaussianPriorDenoiser(Denoiser):
    """Exact MMSE denoiser for the prior N(mean, prior_std^2 I):

        f(x, sigma) = (s^2 x + sigma^2 mean) / (s^2 + sigma^2)
    """

    def __init__(self, mean, prior_std, epsilon=DEFAULT_EPSILON):
        super().__init__(epsilon)
        if prior_std <= 0:
            raise DenoiserError("prior_std must be positive")
        self.mean = np.asarray(mean, dtype=np.float64)
        self.prior_std = float(prior_std)

    def _estimate(self, x, sigma):
        s2 = self.prior_std**2
        return (s2 * x + sigma**2 * self.mean) / (s2 + sigma**2)

    def sample_prior(self, shape, generator):
        """Draw an image from the prior (ground truth for synthetic runs)."""
        return self.mean + self.prior_std * generator.standard_normal(shape)


class MixtureDenoiser(Denoiser):
    """Posterior mean under a two-component isotropic Gaussian mixture.

    Responsibilities are computed over the whole image vector; each component
    contributes its own shrinkage of x toward its mean.
    """

    def __init__(self, means, stds, weights=(0.5, 0.5), epsilon=DEFAULT_EPSILON):
        super().__init__(epsilon)
        self.means = [np.asarray(m, dtype=np.float64) for m in means]
        self.stds = [float(s) for s in stds]
        w = np.asarray(weights, dtype=np.float64)
        if len(self.means) != 2 or len(self.stds) != 2 or w.shape != (2,):
            raise DenoiserError("mixture takes exactly two components")
        if min(self.stds) <= 0 or np.any(w <= 0):
            raise DenoiserError("stds and weights must be positive")
        self.weights = w / w.sum()

    def _estimate(self, x, sigma):
        d = x.size
        logr = np.empty(2)
        comp = []
        for k in range(2):
            var = self.stds[k] ** 2 + sigma**2
            diff = x - self.means[k]
            logr[k] = (
                np.log(self.weights[k])
                - 0.5 * d * np.log(var)
                - 0.5 * float(np.vdot(diff, diff).real) / var
            )
            s2 = self.stds[k] ** 2
            comp.append((s2 * x + sigma**2 * self.means[k]) / (s2 + sigma**2))
        logr -= logr.max()
        r = np.exp(logr)
        r /= r.sum()
        return r[0] * comp[0] + r[1] * comp[1]


# ---------------------------------------------------------------------------
# wire protocol


def _read_exact(rfile, n):
    buf = b""
    while len(buf) < n:
        chunk = rfile.read(n - len(buf))
        if not chunk:
            raise DenoiserError("connection closed mid-frame")
        buf += chunk
    return buf


def read_frame(rfile):
    (length,) = struct.unpack("<I", _read_exact(rfile, 4))
    return _read_exact(rfile, length)


def write_frame(wfile, payload):
    wfile.write(struct.pack("<I", len(payload)) + payload)
    wfile.flush()


class RemoteDenoiser(Denoiser):
    """Client for a denoiser served over a byte stream.

    Construct from binary file objects (``RemoteDenoiser(rfile, wfile)``) or
    use :meth:`connect` for TCP. Strict request/response alternation per
    connection; callers wanting parallelism open one connection per worker.
    """

    def __init__(self, rfile, wfile, epsilon=DEFAULT_EPSILON):
        super().__init__(epsilon)
        self._rfile = rfile
        self._wfile = wfile
        self._sock = None

    @classmethod
    def connect(cls, host, port, epsilon=DEFAULT_EPSILON, timeout=10.0):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise DenoiserError(f"cannot reach denoiser at {host}:{port}: {exc}") from exc
        client = cls(sock.makefile("rb"), sock.makefile("wb"), epsilon)
        client._sock = sock
        return client

    def close(self):
        if self._sock is not None:
            self._sock.close()

    def _estimate(self, x, sigma):
        payload = struct.pack("<d", sigma) + tensor_bytes_from_array(x)
        write_frame(self._wfile, payload)
        reply = read_frame(self._rfile)
        out = array_from_tensor_bytes(reply)
        if out.shape != x.shape:
            raise DenoiserError(
                f"protocol error: response shape {out.shape} != request {x.shape}"
            )
        return out


def serve_stream(denoiser, rfile, wfile):
    """Answer requests on one connection until EOF. Used by tests and by
    ``python -m cmrestore.denoise`` style embedding of analytic denoisers."""
    while True:
        try:
            payload = read_frame(rfile)
        except DenoiserError:
            return
        if len(payload) < 8:
            raise DenoiserError("malformed request frame")
        (sigma,) = struct.unpack("<d", payload[:8])
        x = array_from_tensor_bytes(payload[8:])
        write_frame(wfile, tensor_bytes_from_array(denoiser(x, sigma)))


def serve_tcp(denoiser, host="127.0.0.1", port=0):
    """Serve a denoiser over TCP in a daemon thread; returns (port, server).

    Each accepted connection is handled on its own thread.
    """
    server = socket.create_server((host, port))

    def accept_loop():
        while True:
            try:
                conn, _ = server.accept()
            except OSError:
                return
            threading.Thread(
                target=_serve_conn, args=(denoiser, conn), daemon=True
            ).start()

    threading.Thread(target=accept_loop, daemon=True).start()
    return server.getsockname()[1], server


def _serve_conn(denoiser, conn):
    with conn:
        try:
            serve_stream(denoiser, conn.makefile("rb"), conn.makefile("wb"))
        except (DenoiserError, OSError):
            pass
