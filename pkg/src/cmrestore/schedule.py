"""Noise-level schedules for few-step sampling.

A 1000-entry table of cumulative products alpha_bar_i = prod_{j<=i} (1 - b_j)
is built from the standard linear b-schedule (0.0001 to 0.02). A sampler
schedule picks a starting entry by table index ``i_n`` and grows it
geometrically, alpha_bar[k+1] = min(alpha_bar[k] * (1 + gamma), 0.999); the
per-step noise level is tau = sqrt(1 - alpha_bar). Arrays are stored in
execution order: index 0 is the first step executed (largest tau).
"""

from dataclasses import dataclass, field

import numpy as np

TABLE_SIZE = 1000
BETA_START = 1e-4
BETA_END = 0.02
ALPHA_BAR_MAX = 0.999


class ScheduleError(ValueError):
    """Invalid schedule parameters."""


def build_alpha_bar_table():
    """The 1000-entry cumulative-product table (1-based index i maps to
    element i-1)."""
    betas = np.linspace(BETA_START, BETA_END, TABLE_SIZE)
    return np.cumprod(1.0 - betas)


_TABLE = build_alpha_bar_table()


def _per_step(value, n, name):
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ScheduleError(f"{name} must be a scalar or length-{n} vector")
    return arr


@dataclass(frozen=True)
class Schedule:
    """Per-step sampling parameters, in execution order (largest tau first).

    ``delta`` inflates the denoising level to (1 + delta) * tau, ``mu`` scales
    the guidance step, ``eta`` splits the injected noise between the fresh and
    the estimated component, and ``zeta`` is the Tikhonov factor for the
    regularized back-projection (applied as zeta * sigma_y^2).
    """

    alpha_bar: np.ndarray
    tau: np.ndarray
    delta: np.ndarray
    mu: np.ndarray
    eta: float = 0.1
    zeta: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.tau)

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ScheduleError("eta must be in [0, 1]")
        if self.zeta < 0:
            raise ScheduleError("zeta must be >= 0")
        if np.any(self.delta < 0):
            raise ScheduleError("delta entries must be >= 0")
        if np.any(self.tau <= 0) or np.any(self.tau >= 1):
            raise ScheduleError("tau values must lie in (0, 1)")
        if np.any(np.diff(self.tau) > 0):
            raise ScheduleError("tau must be non-increasing in execution order")


def build_schedule(i_n, gamma, n_steps, delta=0.0, eta=0.1, mu=1.0, zeta=0.0,
                   delta_reversed=False):
    """Build an ``n_steps``-point schedule from a table index and growth rate.

    ``i_n`` is the 1-based table index of the first (noisiest) step; each
    later step multiplies alpha_bar by (1 + gamma), clipped at 0.999.
    ``delta`` and ``mu`` may be scalars or length-``n_steps`` vectors whose
    first entry pairs with the first executed step; pass
    ``delta_reversed=True`` if the delta vector is listed smallest-tau first.
    """
    if not 1 <= i_n <= TABLE_SIZE:
        raise ScheduleError(f"i_n must be in [1, {TABLE_SIZE}]")
    if gamma <= 0:
        raise ScheduleError("gamma must be > 0")
    if n_steps < 1:
        raise ScheduleError("n_steps must be >= 1")
    alpha = np.empty(n_steps)
    # the whole sequence is bounded by ALPHA_BAR_MAX, including the table entry
    alpha[0] = min(_TABLE[i_n - 1], ALPHA_BAR_MAX)
    for k in range(1, n_steps):
        alpha[k] = min(alpha[k - 1] * (1.0 + gamma), ALPHA_BAR_MAX)
    delta_vec = _per_step(delta, n_steps, "delta")
    if delta_reversed:
        delta_vec = delta_vec[::-1].copy()
    return Schedule(
        alpha_bar=alpha,
        tau=np.sqrt(1.0 - alpha),
        delta=delta_vec,
        mu=_per_step(mu, n_steps, "mu"),
        eta=float(eta),
        zeta=float(zeta),
        meta={"i_n": int(i_n), "gamma": float(gamma)},
    )


# Tuned four-step defaults per (task, sigma_y). delta vectors pair their
# first entry with the first executed (noisiest) step.
TASK_PRESETS = {
    ("sr4", 0.025): dict(i_n=400, gamma=0.7, delta=(0.0, 0.5, 0.1, 0.0)),
    ("sr4", 0.05): dict(i_n=250, gamma=0.2, delta=(0.0, 0.3, 0.05, 0.1)),
    ("gblur", 0.025): dict(i_n=90, gamma=0.02, delta=(0.0, 0.0, 0.0, 0.0), zeta=3.0),
    ("gblur", 0.05): dict(i_n=160, gamma=0.07, delta=(0.0, 0.0, 0.0, 0.0), zeta=1.5),
    ("inpaint", 0.0): dict(i_n=150, gamma=0.2, delta=(0.1, 0.1, 0.8, 0.8)),
    ("inpaint", 0.025): dict(i_n=150, gamma=0.2, delta=(0.2, 0.3, 0.8, 0.8)),
    ("inpaint", 0.05): dict(i_n=150, gamma=0.2, delta=(0.2, 0.1, 1.0, 1.0)),
}


def preset_for(task, sigma_y):
    """Closest tuned preset for a task family and noise level."""
    family = {"sr2": "sr4", "sr4": "sr4", "gblur": "gblur",
              "identity": "gblur"}.get(task, "inpaint")
    levels = sorted({lv for fam, lv in TASK_PRESETS if fam == family})
    level = min(levels, key=lambda lv: abs(lv - sigma_y))
    return dict(TASK_PRESETS[(family, level)])
