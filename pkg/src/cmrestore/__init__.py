"""Few-step zero-shot image restoration with analytic and remote denoisers.

Public surface: degradation operators (super-resolution, blur, inpainting)
with transpose/pseudoinverse actions, DDPM-derived noise schedules, the
guided split-injection sampler and its ablation variants, PSNR scoring, and
raster I/O.
"""

from .denoise import (Denoiser, GaussianPriorDenoiser, IdentityDenoiser,
                      MixtureDenoiser, RemoteDenoiser, serve_stream, serve_tcp)
from .image import (MetricReport, load_image, load_png, load_tensor,
                    metric_report, psnr, save_image, save_png, save_tensor,
                    validate_image)
from .operators import (GaussianBlur, InpaintMask, LinearOperator,
                        MatrixOperator, SRBicubic, bicubic_taps, bp_gradient,
                        conjugate_gradient, degrade, gaussian_taps,
                        ls_gradient, median_init)
from .sampler import (MarginalReport, SamplerConfig, Trajectory,
                      baseline_sample, noise_injection, polyak_restore,
                      restore, simulate_marginal)
from .schedule import (Schedule, build_alpha_bar_table, build_schedule,
                       preset_for)

__version__ = "0.1.0"
