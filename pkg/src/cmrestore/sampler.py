"""Few-step guided restoration samplers.

The main loop (:func:`restore`, variants "split" and "ddim") runs, for steps
n = N..1 over a schedule of noise levels tau:

    x0   = f(x, (1 + delta_n) * tau_n)          denoise above the injection level
    g    = A^+(A x0 - y)   (or A^T(A x0 - y))   data-fidelity guidance at x0
    zhat = (x_tau - x0) / tau_n                 estimated noise
    x   <- x0 - mu_n g
            + sqrt(1 - eta^2) tau_{n-1} xi zhat + eta tau_{n-1} z

with xi = -1 for the "split" variant (the estimate pushes away from the
current iterate, toward the clean estimate) and xi = +1 for the "ddim"
variant. tau_0 is 0: the last step injects nothing and the returned image is
the final guided estimate. Initialization is x_init + tau_N * z with x_init
the pseudoinverse image A^+ y (median fill for inpainting).

Also here: the plain multistep baseline (denoise + full fresh-noise
injection), the momentum variant (beta * (x0_n - x0_{n+1}) replaces the
injected estimate, no stochastic noise), and a Monte Carlo simulator for the
marginal-preservation property of the split injection.

Randomness: one Philox substream per purpose per step (see :mod:`.rng` for
the splitting rule), so any (seed, config) pair is reproducible bit-for-bit
regardless of threading, and degenerate configurations (eta = 1, delta = 0)
reduce to the baseline exactly.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .image import save_tensor
from .operators import InpaintMask, bp_gradient, ls_gradient, median_init
from .schedule import Schedule, _per_step

MIN_TAU = 1e-6
VARIANTS = ("split", "ddim", "baseline", "polyak")
GUIDANCE_MODES = ("bp", "ls", "none")


class SamplerError(RuntimeError):
    """Sampler failure; wraps operator/denoiser errors with the step index."""


@dataclass
class SamplerConfig:
    """Everything a restoration run needs besides (operator, y, denoiser)."""

    schedule: Schedule
    guidance: str = "bp"
    variant: str = "split"
    seed: int = 0
    momentum: float = 0.0  # beta for the "polyak" variant
    bp_reg: float | tuple = 0.0  # per-step pseudoinverse regularizer (zeta * sigma_y^2)
    init: str = "auto"  # "auto" | "pinv" | "median"
    x_init: np.ndarray | None = None  # explicit initial estimate (wins over init)
    xi: float | None = None  # override the variant's estimate sign
    final_guidance: bool = True
    record_trajectory: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SamplerError(f"unknown variant {self.variant!r}")
        if self.guidance not in GUIDANCE_MODES:
            raise SamplerError(f"unknown guidance mode {self.guidance!r}")
        if self.momentum < 0:
            raise SamplerError("momentum must be >= 0")

    @property
    def estimate_sign(self):
        if self.xi is not None:
            return float(self.xi)
        return 1.0 if self.variant == "ddim" else -1.0

    def step_regs(self):
        return _per_step(self.bp_reg, self.schedule.n_steps, "bp_reg")


@dataclass
class StepRecord:
    step: int  # executed index n, counting N..1
    tau: float
    sigma: float
    x_tau: np.ndarray
    x0: np.ndarray
    guidance_norm: float = 0.0
    estimate_term: np.ndarray | None = None
    noise_term: np.ndarray | None = None


@dataclass
class Trajectory:
    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def dump(self, dirpath):
        """One raw tensor per recorded quantity per step + a JSONL index."""
        dirpath = Path(dirpath)
        dirpath.mkdir(parents=True, exist_ok=True)
        with open(dirpath / "index.jsonl", "w") as idx:
            for rec in self.records:
                files = {}
                for name in ("x_tau", "x0", "estimate_term", "noise_term"):
                    arr = getattr(rec, name)
                    if arr is None:
                        continue
                    fname = f"step{rec.step:03d}_{name}.cmt"
                    save_tensor(dirpath / fname, np.atleast_3d(arr))
                    files[name] = fname
                idx.write(json.dumps({
                    "step": rec.step,
                    "tau": rec.tau,
                    "sigma": rec.sigma,
                    "guidance_norm": rec.guidance_norm,
                    "files": files,
                }) + "\n")


def noise_injection(x0, x_tau, tau_n, tau_prev, eta, xi, z):
    """The injected increment for one step:

        sqrt(1 - eta^2) * tau_prev * xi * (x_tau - x0) / tau_n
          + eta * tau_prev * z

    xi = +1 keeps the estimate pointing back toward the current iterate,
    xi = -1 flips it toward the clean estimate. Terms with an exactly zero
    coefficient are skipped so degenerate settings reduce bit-for-bit.
    """
    if tau_n <= MIN_TAU:
        raise SamplerError(f"tau_n={tau_n} too small for the noise estimate")
    if not 0.0 <= eta <= 1.0:
        raise SamplerError("eta must be in [0, 1]")
    est_weight = math.sqrt(1.0 - eta * eta)
    out = np.zeros_like(x0)
    if est_weight != 0.0:
        out = out + (est_weight * tau_prev * xi / tau_n) * (x_tau - x0)
    if eta != 0.0:
        out = out + eta * tau_prev * z
    return out


def _initial_estimate(op, y, config):
    if config.x_init is not None:
        return np.asarray(config.x_init, dtype=np.float64)
    mode = config.init
    if mode == "auto":
        mode = "median" if isinstance(op, InpaintMask) else "pinv"
    if mode == "median":
        return median_init(op, y)
    if mode == "pinv":
        return op.apply_pinv(y, reg=float(config.step_regs()[0]))
    raise SamplerError(f"unknown init mode {config.init!r}")


def _guidance_direction(op, x0, y, config, reg):
    if config.guidance == "bp":
        return bp_gradient(op, x0, y, reg=reg)
    if config.guidance == "ls":
        return ls_gradient(op, x0, y)
    return None


def restore(op, y, denoiser, config):
    """Run the configured restoration variant; returns (image, trajectory).

    The trajectory is None unless ``config.record_trajectory`` is set.
    """
    if config.variant == "polyak":
        return polyak_restore(op, y, denoiser, config)
    if config.variant == "baseline":
        return baseline_sample(
            denoiser, config.schedule, op=op, y=y,
            guidance=config.guidance, bp_reg=config.bp_reg, seed=config.seed,
            x_init=_initial_estimate(op, y, config),
            final_guidance=config.final_guidance,
            record_trajectory=config.record_trajectory,
        )

    sched = config.schedule
    taus = sched.tau
    n_steps = sched.n_steps
    regs = config.step_regs()
    y = np.asarray(y, dtype=np.float64)
    xi = config.estimate_sign

    x_init = _initial_estimate(op, y, config)
    x = x_init + taus[0] * rng.stream(config.seed, rng.INIT).standard_normal(x_init.shape)

    traj = Trajectory() if config.record_trajectory else None
    for k in range(n_steps):
        n = n_steps - k
        tau_n = float(taus[k])
        tau_prev = float(taus[k + 1]) if k + 1 < n_steps else 0.0
        sigma = (1.0 + float(sched.delta[k])) * tau_n
        try:
            x0 = denoiser(x, sigma)
            last = tau_prev == 0.0
            g = None
            if not last or config.final_guidance or traj is not None:
                g = _guidance_direction(op, x0, y, config, float(regs[k]))
            z = rng.stream(config.seed, rng.STEP, n).standard_normal(x.shape)
            x_next = x0
            if g is not None and (not last or config.final_guidance):
                x_next = x_next - float(sched.mu[k]) * g
            if not last:
                x_next = x_next + noise_injection(x0, x, tau_n, tau_prev, sched.eta, xi, z)
        except (SamplerError, ValueError) as exc:
            raise SamplerError(f"step n={n}: {exc}") from exc
        if traj is not None:
            est = None
            noise = None
            if not last:
                w = math.sqrt(1.0 - sched.eta**2)
                est = (w * tau_prev * xi / tau_n) * (x - x0)
                noise = sched.eta * tau_prev * z
            traj.append(StepRecord(
                step=n, tau=tau_n, sigma=sigma, x_tau=x, x0=x0,
                guidance_norm=0.0 if g is None else float(np.linalg.norm(g)),
                estimate_term=est, noise_term=noise,
            ))
        x = x_next
    return x, traj


def baseline_sample(denoiser, sched, shape=None, op=None, y=None, guidance="none",
                    bp_reg=0.0, seed=0, x_init=None, final_guidance=True,
                    record_trajectory=False):
    """Plain multistep sampling: x0 = f(x, tau_n), optional guidance step,
    then full fresh-noise injection tau_{n-1} * z.

    Acts as a generator when no operator is given (``x_init`` defaults to
    zero, so the start is pure noise of level tau_N over ``shape``).
    """
    if guidance not in GUIDANCE_MODES:
        raise SamplerError(f"unknown guidance mode {guidance!r}")
    if guidance != "none" and (op is None or y is None):
        raise SamplerError("guided baseline needs op and y")
    if x_init is None:
        if shape is None:
            if op is None:
                raise SamplerError("need shape or an operator to size the run")
            shape = op.input_shape
        x_init = np.zeros(shape)
    x_init = np.asarray(x_init, dtype=np.float64)
    if y is not None:
        y = np.asarray(y, dtype=np.float64)

    taus = sched.tau
    n_steps = sched.n_steps
    regs = _per_step(bp_reg, n_steps, "bp_reg")
    x = x_init + taus[0] * rng.stream(seed, rng.INIT).standard_normal(x_init.shape)
    traj = Trajectory() if record_trajectory else None
    for k in range(n_steps):
        n = n_steps - k
        tau_n = float(taus[k])
        tau_prev = float(taus[k + 1]) if k + 1 < n_steps else 0.0
        try:
            x0 = denoiser(x, tau_n)
            last = tau_prev == 0.0
            g = None
            if guidance == "bp":
                g = bp_gradient(op, x0, y, reg=float(regs[k]))
            elif guidance == "ls":
                g = ls_gradient(op, x0, y)
            z = rng.stream(seed, rng.STEP, n).standard_normal(x.shape)
            x_next = x0
            if g is not None and (not last or final_guidance):
                x_next = x_next - float(sched.mu[k]) * g
            if not last:
                x_next = x_next + tau_prev * z
        except (SamplerError, ValueError) as exc:
            raise SamplerError(f"step n={n}: {exc}") from exc
        if traj is not None:
            traj.append(StepRecord(
                step=n, tau=tau_n, sigma=tau_n, x_tau=x, x0=x0,
                guidance_norm=0.0 if g is None else float(np.linalg.norm(g)),
                noise_term=None if last else tau_prev * z,
            ))
        x = x_next
    return x, traj


def polyak_restore(op, y, denoiser, config):
    """Momentum variant: the injected estimate is replaced by
    momentum * (x0 at this step - x0 at the previous step); nothing
    stochastic is injected after initialization.

    With an identity denoiser and least-squares guidance this is the
    classical heavy-ball iteration on 0.5 * ||A x - y||^2.
    """
    sched = config.schedule
    taus = sched.tau
    n_steps = sched.n_steps
    regs = config.step_regs()
    y = np.asarray(y, dtype=np.float64)

    x_init = _initial_estimate(op, y, config)
    x = x_init + taus[0] * rng.stream(config.seed, rng.INIT).standard_normal(x_init.shape)
    traj = Trajectory() if config.record_trajectory else None
    prev_x0 = None
    for k in range(n_steps):
        n = n_steps - k
        tau_n = float(taus[k])
        tau_prev = float(taus[k + 1]) if k + 1 < n_steps else 0.0
        sigma = (1.0 + float(sched.delta[k])) * tau_n
        try:
            x0 = denoiser(x, sigma)
            last = tau_prev == 0.0
            g = None
            if config.guidance != "none" and (not last or config.final_guidance or traj is not None):
                g = _guidance_direction(op, x0, y, config, float(regs[k]))
            x_next = x0
            if g is not None and (not last or config.final_guidance):
                x_next = x_next - float(sched.mu[k]) * g
            momentum_term = None
            if prev_x0 is not None and config.momentum != 0.0:
                momentum_term = config.momentum * (x0 - prev_x0)
                x_next = x_next + momentum_term
        except (SamplerError, ValueError) as exc:
            raise SamplerError(f"step n={n}: {exc}") from exc
        if traj is not None:
            traj.append(StepRecord(
                step=n, tau=tau_n, sigma=sigma, x_tau=x, x0=x0,
                guidance_norm=0.0 if g is None else float(np.linalg.norm(g)),
                estimate_term=momentum_term,
            ))
        prev_x0 = x0
        x = x_next
    return x, traj


# ---------------------------------------------------------------------------
# marginal-preservation Monte Carlo


@dataclass
class MarginalReport:
    """Empirical check that one injected step preserves the marginal
    N(x0, tau_prev^2 I) regardless of eta and the estimate sign."""

    tau_n: float
    tau_prev: float
    eta: float
    xi: float
    sample_count: int
    mean: np.ndarray
    variance: np.ndarray
    mean_se: np.ndarray
    variance_se: np.ndarray
    expected_mean: np.ndarray
    expected_variance: float
    max_mean_z: float
    max_variance_z: float

    @property
    def mean_ok(self):
        return self.max_mean_z <= 3.0

    @property
    def variance_ok(self):
        return self.max_variance_z <= 3.0

    @property
    def passed(self):
        return self.mean_ok and self.variance_ok


def simulate_marginal(x0, tau_n, tau_prev, eta, xi, sample_count=100_000,
                      seed=0, fault=False):
    """Simulate the two-stage conditional chain and report the empirical
    marginal of the next iterate given the clean image.

    Draws x_tau ~ N(x0, tau_n^2 I), forms the signed estimate
    xi * (x_tau - x0) / tau_n, and injects it next to fresh noise exactly as
    :func:`noise_injection` would. ``fault=True`` deliberately flips the sign
    of x0 inside the estimate (a self-test of the checker: it shifts the
    empirical mean, so the report must fail for nonzero x0 and eta < 1).
    """
    if sample_count < 10_000:
        raise SamplerError("sample_count must be >= 10000")
    if min(tau_n, tau_prev) <= MIN_TAU:
        raise SamplerError("degenerate tau values")
    if not 0.0 <= eta <= 1.0:
        raise SamplerError("eta must be in [0, 1]")
    x0 = np.asarray(x0, dtype=np.float64)
    flat = x0.reshape(-1)
    g = rng.stream(seed, rng.MARGINAL)
    eps = g.standard_normal((sample_count, flat.size))
    z = g.standard_normal((sample_count, flat.size))
    x_tau = flat + tau_n * eps
    zhat = (x_tau + flat) / tau_n if fault else (x_tau - flat) / tau_n
    samples = flat + math.sqrt(1.0 - eta * eta) * tau_prev * xi * zhat \
        + eta * tau_prev * z

    mean = samples.mean(axis=0)
    variance = samples.var(axis=0, ddof=1)
    mean_se = samples.std(axis=0, ddof=1) / math.sqrt(sample_count)
    variance_se = variance * math.sqrt(2.0 / (sample_count - 1))
    expected_var = tau_prev**2
    return MarginalReport(
        tau_n=float(tau_n), tau_prev=float(tau_prev), eta=float(eta),
        xi=float(xi), sample_count=int(sample_count),
        mean=mean.reshape(x0.shape), variance=variance.reshape(x0.shape),
        mean_se=mean_se.reshape(x0.shape), variance_se=variance_se.reshape(x0.shape),
        expected_mean=x0.copy(), expected_variance=expected_var,
        max_mean_z=float(np.max(np.abs(mean - flat) / mean_se)),
        max_variance_z=float(np.max(np.abs(variance - expected_var) / variance_se)),
    )
