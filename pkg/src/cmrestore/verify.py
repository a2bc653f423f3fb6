"""Invariant battery: operator identities, denoiser/Tweedie oracle, and the
marginal-preservation Monte Carlo. Each check returns a :class:`CheckResult`
with the measured value and its tolerance; the CLI turns these into
PASS/FAIL lines and the exit code.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .denoise import GaussianPriorDenoiser
from .operators import GaussianBlur, InpaintMask, SRBicubic, bp_gradient
from .sampler import simulate_marginal
from .schedule import build_schedule

ADJOINT_TOL = 1e-10
PINV_IDENTITY_TOL = 1e-8
FFT_CG_TOL = 1e-5
MC_Z_TOL = 3.0

# task-realistic regularizer for the blur CG comparison: zeta * sigma_y^2
# with zeta = 3 and sigma_y = 0.05 (at reg = 0 the truncated-Gaussian
# spectrum makes the normal equations too stiff for plain CG)
BLUR_CG_REG = 3.0 * 0.05**2


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        note = f"  ({self.note})" if self.note else ""
        return f"{status}  {self.name}: {self.value:.3e} (tol {self.tol:.0e}){note}"


def _result(name, value, tol, note=""):
    return CheckResult(name=name, value=float(value), tol=tol,
                       passed=bool(value <= tol), note=note)


def default_operators(size=64, channels=1, seed=0):
    shape = (size, size, channels)
    return {
        "sr4": SRBicubic(shape, 4),
        "gblur": GaussianBlur(shape),
        "inpaint80": InpaintMask.random(shape, keep_fraction=0.2, seed=seed),
    }


def check_operator_identities(size=64, channels=1, instances=100, seed=0):
    """Adjoint, pseudoinverse and FFT-vs-CG identities on random instances."""
    results = []
    for name, op in default_operators(size, channels, seed).items():
        cg_reg = BLUR_CG_REG if name == "gblur" else 0.0
        g = rng.stream(seed, 100)
        worst_adj = 0.0
        worst_pinv = 0.0
        worst_proj = 0.0
        worst_fftcg = 0.0
        worst_bp = 0.0
        for _ in range(instances):
            x = g.standard_normal(op.input_shape)
            v = g.standard_normal(op.output_shape)
            lhs = float(np.vdot(op.apply(x), v).real)
            rhs = float(np.vdot(x, op.apply_transpose(v)).real)
            worst_adj = max(worst_adj, abs(lhs - rhs))

            pv = op.apply_pinv(v, reg=0.0)
            worst_pinv = max(
                worst_pinv,
                float(np.linalg.norm(op.apply(pv) - v) / np.linalg.norm(v)),
            )
            px = op.apply_pinv(op.apply(x), reg=0.0)
            ppx = op.apply_pinv(op.apply(px), reg=0.0)
            worst_proj = max(
                worst_proj,
                float(np.linalg.norm(ppx - px) / max(np.linalg.norm(px), 1e-30)),
            )
            fft = op.apply_pinv(v, reg=cg_reg, method="auto")
            cg = op.apply_pinv(v, reg=cg_reg, method="cg")
            worst_fftcg = max(worst_fftcg, float(np.max(np.abs(fft - cg))))
            worst_bp = max(
                worst_bp,
                float(np.linalg.norm(bp_gradient(op, x, op.apply(x)))
                      / max(np.linalg.norm(x), 1e-30)),
            )
        results.append(_result(f"{name} adjoint |<Ax,v>-<x,A'v>|", worst_adj, ADJOINT_TOL,
                               f"{instances} instances, {size}x{size}x{channels}"))
        results.append(_result(f"{name} pinv identity |AA+v-v|/|v| (reg=0)",
                               worst_pinv, PINV_IDENTITY_TOL))
        results.append(_result(f"{name} pinv projector idempotence", worst_proj,
                               PINV_IDENTITY_TOL))
        results.append(_result(f"{name} fft-vs-cg pinv max|diff| (reg={cg_reg:g})",
                               worst_fftcg, FFT_CG_TOL))
        results.append(_result(f"{name} bp gradient at exact fit", worst_bp,
                               PINV_IDENTITY_TOL))
    return results


def check_tweedie(sigmas=(0.1, 0.5, 1.0), sample_count=100_000, seed=0):
    """Compare the analytic posterior mean against a self-normalized
    importance-sampling estimate of E[x0 | x_sigma], coordinate by coordinate
    (the isotropic Gaussian prior factorizes)."""
    results = []
    mean0 = 0.3
    prior_std = 1.0
    den = GaussianPriorDenoiser(mean=np.full((1, 1, 1), mean0), prior_std=prior_std)
    points = (-1.0, 0.2, 1.5)
    for i, sigma in enumerate(sigmas):
        g = rng.stream(seed, 200, i)
        x0_draws = mean0 + prior_std * g.standard_normal(sample_count)
        worst_z = 0.0
        for x_sigma in points:
            logw = -((x_sigma - x0_draws) ** 2) / (2.0 * sigma * sigma)
            w = np.exp(logw - logw.max())
            w /= w.sum()
            est = float(np.sum(w * x0_draws))
            se = math.sqrt(float(np.sum(w * w * (x0_draws - est) ** 2)))
            closed = float(den(np.full((1, 1, 1), x_sigma), sigma)[0, 0, 0])
            worst_z = max(worst_z, abs(closed - est) / se)
        results.append(_result(f"tweedie posterior mean sigma={sigma} |z|",
                               worst_z, MC_Z_TOL,
                               f"{sample_count} prior draws, SNIS"))
    return results


def check_marginal(sample_count=100_000, seed=0, fault=False):
    """Marginal preservation of the split injection: over Table-style
    schedules, eta in {0, 0.1, 0.5, 1} and both estimate signs, the empirical
    mean must be x0 and the per-coordinate variance tau_prev^2, within
    3 standard errors."""
    results = []
    x0 = np.array([[[0.2], [0.8]], [[-0.4], [1.3]]])
    sched = build_schedule(i_n=150, gamma=0.2, n_steps=4)
    pairs = [(float(sched.tau[k]), float(sched.tau[k + 1]))
             for k in range(sched.n_steps - 1)]
    idx = 0
    for tau_n, tau_prev in pairs:
        for eta in (0.0, 0.1, 0.5, 1.0):
            for xi in (-1.0, 1.0):
                rep = simulate_marginal(x0, tau_n, tau_prev, eta, xi,
                                        sample_count=sample_count,
                                        seed=3150 + 1000 * seed + idx,
                                        fault=fault)
                idx += 1
                name = (f"marginal tau={tau_n:.3f}->{tau_prev:.3f} "
                        f"eta={eta} xi={xi:+.0f}")
                results.append(_result(f"{name} mean |z|", rep.max_mean_z, MC_Z_TOL))
                results.append(_result(f"{name} var |z|", rep.max_variance_z, MC_Z_TOL))
    return results


def run_battery(size=64, instances=100, sample_count=100_000, seed=0, fault=False):
    results = []
    results += check_operator_identities(size=size, instances=instances, seed=seed)
    results += check_tweedie(sample_count=sample_count, seed=seed)
    results += check_marginal(sample_count=sample_count, seed=seed, fault=fault)
    return results
