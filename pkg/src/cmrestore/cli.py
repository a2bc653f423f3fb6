"""Command-line entry points: degrade, restore, ablate, verify, schedule-dump.

Runs are configured by a flat ``key=value`` text file plus command-line flag
overrides (flags win). Every subcommand is deterministic given (config, seed)
and writes a JSON manifest sufficient to reproduce itself. Exit codes:
0 success, 1 usage error, 2 invariant failure.
"""

import argparse
import concurrent.futures
import csv
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import image as img
from . import sampler as smp
from .denoise import GaussianPriorDenoiser, IdentityDenoiser, RemoteDenoiser
from .operators import (GaussianBlur, InpaintMask, OperatorError, SRBicubic,
                        degrade, median_init)
from .schedule import ScheduleError, build_schedule, preset_for
from .verify import run_battery

TASKS = ("sr4", "sr2", "gblur", "inpaint-random", "inpaint-mask")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat run configuration; every field round-trips through key=value text."""

    task: str = "sr4"
    sigma_y: float = 0.0
    fraction: float = 0.8  # missing-pixel fraction for inpaint-random
    mask_file: str = ""
    kernel_file: str = ""
    i_n: int = 0  # 0 = use the tuned preset for (task, sigma_y)
    gamma: float = 0.0
    n_steps: int = 4
    delta: str = ""  # comma list or single value; "" = preset
    eta: float = 0.1
    mu: str = "1.0"
    zeta: float = -1.0  # < 0 = use preset
    variant: str = "split"
    guidance: str = "bp"
    momentum: float = 0.0
    denoiser: str = "gaussian-prior"
    prior_mean: str = "0.5"  # scalar or image path
    prior_std: float = 0.2
    remote: str = ""  # host:port for the remote denoiser
    seed: int = 0
    workers: int = 1
    input: str = ""
    output_dir: str = "out"

    def validate(self):
        if self.task not in TASKS:
            raise UsageError(f"unknown task {self.task!r} (choose from {TASKS})")
        if self.sigma_y < 0:
            raise UsageError("sigma_y must be >= 0")
        if not 0.0 <= self.fraction < 1.0:
            raise UsageError("fraction (missing pixels) must be in [0, 1)")
        if not 0 <= self.i_n <= 1000:
            raise UsageError("i_n must be in [1, 1000] (or 0 for the preset)")
        if self.n_steps < 1:
            raise UsageError("n_steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise UsageError("eta must be in [0, 1]")
        if self.variant not in smp.VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}")
        if self.guidance not in smp.GUIDANCE_MODES:
            raise UsageError(f"unknown guidance {self.guidance!r}")
        if self.denoiser not in ("gaussian-prior", "identity", "remote"):
            raise UsageError(f"unknown denoiser {self.denoiser!r}")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in known:
                raise UsageError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = _coerce(cls, key, value.strip())
        return cls(**kwargs)


def _coerce(cls, key, value):
    for f in fields(cls):
        if f.name == key:
            kind = type(getattr(cls(), key))
            if kind is bool:
                return value.lower() in ("1", "true", "yes")
            return kind(value)
    raise UsageError(f"unknown key {key!r}")


def load_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_text(Path(args.config).read_text())
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, _coerce(RunConfig, f.name, str(flag)))
    return cfg.validate()


def _parse_vector(text, n, name):
    if not text:
        return None
    parts = [p for p in text.replace(",", " ").split() if p]
    values = [float(p) for p in parts]
    if len(values) == 1:
        return values[0]
    if len(values) != n:
        raise UsageError(f"{name} needs 1 or {n} values, got {len(values)}")
    return tuple(values)


def resolve_schedule(cfg):
    """Resolve the schedule parameters against the tuned presets."""
    preset = preset_for(cfg.task, cfg.sigma_y)
    i_n = cfg.i_n if cfg.i_n > 0 else preset["i_n"]
    gamma = cfg.gamma if cfg.gamma > 0 else preset["gamma"]
    delta = _parse_vector(cfg.delta, cfg.n_steps, "delta")
    if delta is None:
        delta = preset["delta"] if len(preset["delta"]) == cfg.n_steps else 0.0
    mu = _parse_vector(cfg.mu, cfg.n_steps, "mu")
    zeta = cfg.zeta if cfg.zeta >= 0 else preset.get("zeta", 0.0)
    try:
        return build_schedule(i_n, gamma, cfg.n_steps, delta=delta,
                              eta=cfg.eta, mu=mu, zeta=zeta)
    except ScheduleError as exc:
        raise UsageError(str(exc)) from exc


def build_operator(cfg, shape, outdir=None):
    if cfg.task in ("sr4", "sr2"):
        return SRBicubic(shape, 4 if cfg.task == "sr4" else 2)
    if cfg.task == "gblur":
        taps = None
        if cfg.kernel_file:
            taps = img.load_tensor(cfg.kernel_file)[:, :, 0]
        return GaussianBlur(shape, taps=taps)
    if cfg.task == "inpaint-random":
        return InpaintMask.random(shape, keep_fraction=1.0 - cfg.fraction,
                                  seed=cfg.seed)
    if cfg.task == "inpaint-mask":
        if not cfg.mask_file:
            raise UsageError("inpaint-mask needs mask_file")
        mask = img.load_png(cfg.mask_file)[:, :, 0] > 0
        return InpaintMask(shape, mask)
    raise UsageError(f"unknown task {cfg.task!r}")


def build_denoiser(cfg, shape):
    if cfg.denoiser == "identity":
        return IdentityDenoiser()
    if cfg.denoiser == "remote":
        if ":" not in cfg.remote:
            raise UsageError("remote denoiser needs remote=host:port")
        host, port = cfg.remote.rsplit(":", 1)
        return RemoteDenoiser.connect(host, int(port))
    try:
        mean = np.full(shape, float(cfg.prior_mean))
    except ValueError:
        mean = img.load_image(cfg.prior_mean)
        if mean.shape != tuple(shape):
            raise UsageError(
                f"prior mean image shape {mean.shape} != {tuple(shape)}")
    return GaussianPriorDenoiser(mean=mean, prior_std=cfg.prior_std)


def sampler_config(cfg, sched, seed=None):
    return smp.SamplerConfig(
        schedule=sched,
        guidance=cfg.guidance,
        variant=cfg.variant,
        seed=cfg.seed if seed is None else seed,
        momentum=cfg.momentum,
        bp_reg=sched.zeta * cfg.sigma_y**2,
    )


# ---------------------------------------------------------------------------
# subcommands


def _write_manifest(outdir, cfg, extra):
    payload = {"config": {f.name: getattr(cfg, f.name) for f in fields(cfg)}}
    payload.update(extra)
    with open(Path(outdir) / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _read_manifest(path):
    with open(path) as fh:
        payload = json.load(fh)
    cfg = RunConfig(**payload["config"]).validate()
    return cfg, payload


def cmd_degrade(args):
    cfg = load_config(args)
    if not cfg.input:
        raise UsageError("degrade needs an input image (input=... or --input)")
    x = img.load_image(cfg.input)
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    op = build_operator(cfg, x.shape, outdir)
    y = degrade(op, x, sigma_y=cfg.sigma_y, seed=cfg.seed)

    files = {"measurement": "y.cmt", "preview": "y_preview.png"}
    img.save_tensor(outdir / "y.cmt", np.atleast_3d(y))
    preview = op.apply_pinv(y, reg=0.0)
    img.save_png(outdir / "y_preview.png", np.clip(preview, 0.0, 1.0))
    if isinstance(op, InpaintMask):
        files["mask"] = "mask.png"
        img.save_png(outdir / "mask.png", op.kept.astype(np.float64)[:, :, None])
    if isinstance(op, GaussianBlur):
        files["kernel"] = "kernel.cmt"
        img.save_tensor(outdir / "kernel.cmt", op.taps[:, :, None])
    _write_manifest(outdir, cfg, {
        "shape": list(x.shape),
        "measurement_shape": list(y.shape),
        "files": files,
    })
    print(f"wrote measurement {y.shape} to {outdir}")
    return 0


def _rebuild_from_manifest(manifest_path):
    cfg, payload = _read_manifest(manifest_path)
    mdir = Path(manifest_path).parent
    shape = tuple(payload["shape"])
    if cfg.task == "inpaint-mask" or (cfg.task == "inpaint-random" and "mask" in payload["files"]):
        mask = img.load_png(mdir / payload["files"]["mask"])[:, :, 0] > 0
        op = InpaintMask(shape, mask)
    elif cfg.task == "gblur" and "kernel" in payload["files"]:
        taps = img.load_tensor(mdir / payload["files"]["kernel"])[:, :, 0]
        op = GaussianBlur(shape, taps=taps)
    else:
        op = build_operator(cfg, shape)
    y = img.load_tensor(mdir / payload["files"]["measurement"])
    y = y.reshape(tuple(payload["measurement_shape"]))
    return cfg, op, y, shape


def cmd_restore(args):
    cfg, op, y, shape = _rebuild_from_manifest(args.manifest)
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, _coerce(RunConfig, f.name, str(flag)))
    cfg.validate()
    sched = resolve_schedule(cfg)
    denoiser = build_denoiser(cfg, shape)
    x_hat, _ = smp.restore(op, y, denoiser, sampler_config(cfg, sched))

    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    img.save_tensor(outdir / "restored.cmt", x_hat)
    img.save_png(outdir / "restored.png", np.clip(x_hat, 0.0, 1.0))

    reference = img.load_image(args.reference) if args.reference else None
    report = img.metric_report(op, x_hat, y, reference)
    for line in report.lines():
        print(line)
    with open(outdir / "report.json", "w") as fh:
        json.dump({"psnr_db": report.psnr_db,
                   "residual_norm": report.residual_norm,
                   "scoring": report.scoring}, fh, indent=2)
    _write_manifest(outdir, cfg, {"shape": list(shape),
                                  "source_manifest": str(args.manifest)})
    return 0


ABLATION_ROWS = ("split", "split-eta1-delta0", "ddim-delta0", "polyak-delta0",
                 "baseline")


def _ablation_config(row, cfg, sched):
    """Per-row overrides mirroring the standard ablation table."""
    base = dict(i_n=sched.meta["i_n"], gamma=sched.meta["gamma"],
                n_steps=sched.n_steps, mu=np.asarray(sched.mu),
                zeta=sched.zeta)
    if row == "split":
        return smp.SamplerConfig(schedule=sched, guidance=cfg.guidance,
                                 variant="split"), base
    flat = build_schedule(base["i_n"], base["gamma"], base["n_steps"],
                          delta=0.0, eta=1.0 if row in ("split-eta1-delta0", "baseline")
                          else sched.eta, mu=base["mu"], zeta=base["zeta"])
    if row == "split-eta1-delta0":
        return smp.SamplerConfig(schedule=flat, guidance=cfg.guidance,
                                 variant="split"), base
    if row == "ddim-delta0":
        return smp.SamplerConfig(schedule=flat, guidance=cfg.guidance,
                                 variant="ddim"), base
    if row == "polyak-delta0":
        return smp.SamplerConfig(schedule=flat, guidance=cfg.guidance,
                                 variant="polyak",
                                 momentum=cfg.momentum or 0.3), base
    if row == "baseline":
        return smp.SamplerConfig(schedule=flat, guidance=cfg.guidance,
                                 variant="baseline"), base
    raise UsageError(f"unknown ablation row {row!r}")


def _ablate_one(path, cfg, sched, rows, seed):
    x = img.load_image(path)
    op = build_operator(cfg, x.shape)
    y = degrade(op, x, sigma_y=cfg.sigma_y, seed=seed)
    denoiser = build_denoiser(cfg, x.shape)
    out = {}
    for row in rows:
        scfg, _ = _ablation_config(row, cfg, sched)
        scfg.seed = seed
        scfg.bp_reg = sched.zeta * cfg.sigma_y**2
        x_hat, _ = smp.restore(op, y, denoiser, scfg)
        rep = img.metric_report(op, x_hat, y, reference=x)
        out[row] = (rep.psnr_db, rep.residual_norm)
    return out


def cmd_ablate(args):
    cfg = load_config(args)
    indir = Path(args.input_dir)
    paths = sorted(p for p in indir.iterdir()
                   if p.suffix.lower() in (".png", ".cmt"))
    if not paths:
        raise UsageError(f"no input images in {indir}")
    rows = tuple(args.rows.split(",")) if args.rows else ABLATION_ROWS
    for row in rows:
        if row not in ABLATION_ROWS:
            raise UsageError(f"unknown ablation row {row!r}")
    sched = resolve_schedule(cfg)

    per_image = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        futures = {pool.submit(_ablate_one, p, cfg, sched, rows, cfg.seed + i): p
                   for i, p in enumerate(paths)}
        for fut in concurrent.futures.as_completed(futures):
            per_image[futures[fut]] = fut.result()

    table = []
    for row in rows:
        psnrs = [per_image[p][row][0] for p in paths]
        residuals = [per_image[p][row][1] for p in paths]
        table.append((row, float(np.mean(psnrs)), float(np.mean(residuals)),
                      sched.n_steps))

    header = ("variant", "psnr_mean", "residual_mean", "nfe_count")
    widths = [22, 10, 14, 9]
    print("".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in table:
        print(row[0].ljust(widths[0])
              + f"{row[1]:.4f}".ljust(widths[1])
              + f"{row[2]:.3e}".ljust(widths[2])
              + str(row[3]).ljust(widths[3]))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(table)
        print(f"wrote {args.csv}")
    return 0


def cmd_verify(args):
    results = run_battery(size=args.size, instances=args.instances,
                          sample_count=args.samples, seed=args.seed,
                          fault=args.inject_fault)
    failures = 0
    for res in results:
        print(res.line())
        failures += 0 if res.passed else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 2 if failures else 0


def cmd_schedule_dump(args):
    try:
        sched = build_schedule(args.i_n, args.gamma, args.n,
                               delta=_parse_vector(args.delta, args.n, "delta") or 0.0,
                               eta=args.eta)
    except ScheduleError as exc:
        raise UsageError(str(exc)) from exc
    print(f"{'step':>6} {'alpha_bar':>14} {'tau':>12}")
    for k in range(sched.n_steps):
        n = sched.n_steps - k
        print(f"{n:>6} {sched.alpha_bar[k]:>14.8f} {sched.tau[k]:>12.8f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("step", "alpha_bar", "tau"))
            for k in range(sched.n_steps):
                writer.writerow((sched.n_steps - k, repr(float(sched.alpha_bar[k])),
                                 repr(float(sched.tau[k]))))
        print(f"wrote {args.csv}")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="key=value config file")
    for f in fields(RunConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                       default=None, help=argparse.SUPPRESS)


def make_parser():
    parser = _Parser(prog="cmrestore",
                     description="Few-step guided image restoration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="synthesize a measurement from an image")
    _add_config_flags(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="restore an image from a degrade manifest")
    p.add_argument("manifest", help="manifest.json written by degrade")
    p.add_argument("--reference", help="ground-truth image for PSNR")
    _add_config_flags(p)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("ablate", help="run the sampler-variant table over a directory")
    p.add_argument("input_dir")
    p.add_argument("--rows", help="comma list of ablation rows")
    p.add_argument("--csv", help="also write the table as CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run the invariant battery")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true",
                   help="deliberately break the marginal simulation (self-test)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("schedule-dump", help="print a schedule's (alpha_bar, tau) pairs")
    p.add_argument("--i-n", dest="i_n", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--delta", default="")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_schedule_dump)
    return parser


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, OperatorError, ScheduleError, img.ImageError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
