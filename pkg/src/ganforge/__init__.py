"""ganforge: DC-GAN training on a small numpy reverse-mode autodiff core."""

__version__ = "0.1.0"

from .tensor import Tape, Tensor, backward, precision  # noqa: E402
from .models import build_discriminator, build_generator, generate  # noqa: E402
from .train import TrainConfig, run_training  # noqa: E402
from .fid import compute_fid, fit_gaussian, frechet_distance, matrix_sqrt_psd  # noqa: E402

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "precision",
    "build_generator",
    "build_discriminator",
    "generate",
    "TrainConfig",
    "run_training",
    "compute_fid",
    "fit_gaussian",
    "frechet_distance",
    "matrix_sqrt_psd",
]
