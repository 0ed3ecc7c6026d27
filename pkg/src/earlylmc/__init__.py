"""Langevin Monte Carlo with data-based initialization for multimodal
mixtures: mixture calculus, functional-inequality certificates, score
models, a deterministic ensemble sampler and diagnostics."""

__version__ = "0.1.0"

from .mixture import (  # noqa: E402
    CustomComponent,
    DimensionError,
    GaussianComponent,
    Mixture,
    RescaleWarning,
    hessian_log_density,
    i_max,
    log_density,
    responsibilities,
    sample_ground_truth,
    score,
    smoothness_summary,
)
from .scores import (  # noqa: E402
    AdditiveFieldScore,
    BadSetConfig,
    ExactScore,
    MLPScore,
    TrainConfig,
    WeightBiasedScore,
    l2_error,
    train_denoising,
    train_vanilla,
)
from .sampler import InitSet, Schedule, data_based_init, discretization_probe, run_ensemble  # noqa: E402

__all__ = [
    "AdditiveFieldScore", "BadSetConfig", "CustomComponent", "DimensionError", "ExactScore",
    "GaussianComponent", "InitSet", "MLPScore", "Mixture", "RescaleWarning", "Schedule",
    "TrainConfig", "WeightBiasedScore", "data_based_init", "discretization_probe",
    "hessian_log_density", "i_max", "l2_error", "log_density", "responsibilities",
    "run_ensemble", "sample_ground_truth", "score", "smoothness_summary", "train_denoising",
    "train_vanilla",
]
