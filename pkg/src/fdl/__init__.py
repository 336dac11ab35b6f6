"""Fourier disparity layers: construct, calibrate, render, interpolate, denoise."""

from .spectra import (
    DFT_CONVENTION,
    FrequencyGrid,
    HalfSpectrum,
    SpectrumIntegrityError,
    forward,
    inverse,
    parseval_energy,
)
from .lfmodel import (
    ApertureSpec,
    FdlModel,
    SceneSpec,
    ShiftParams,
    ViewSet,
    expand_shifts,
    synthesize_lightfield,
    synthesize_views_with_shifts,
)
from .construct import (
    RankDeficiencyError,
    build_system_row,
    construct_fdl,
    regularizer_finite_range,
    solve_frequency,
    view_regularizer,
)
from .calibrate import (
    CalibConfig,
    CalibrationDivergence,
    CalibrationResult,
    calibrate,
    calibrate_relaxed,
    grad_factored,
    grad_shift_matrix,
    layer_coefficients,
    layer_regularizer,
    objective,
)
from .render import (
    RenderRequest,
    aperture_spectrum,
    last_render_stats,
    refocus_shift_and_sum,
    render,
    render_views_with_shifts,
)
from .pipeline import PipelineConfig, QualityReport, denoise, interpolate_views, psnr

__version__ = "0.1.0"

__all__ = [
    "DFT_CONVENTION",
    "FrequencyGrid",
    "HalfSpectrum",
    "SpectrumIntegrityError",
    "forward",
    "inverse",
    "parseval_energy",
    "ApertureSpec",
    "FdlModel",
    "SceneSpec",
    "ShiftParams",
    "ViewSet",
    "expand_shifts",
    "synthesize_lightfield",
    "synthesize_views_with_shifts",
    "RankDeficiencyError",
    "build_system_row",
    "construct_fdl",
    "regularizer_finite_range",
    "solve_frequency",
    "view_regularizer",
    "CalibConfig",
    "CalibrationDivergence",
    "CalibrationResult",
    "calibrate",
    "calibrate_relaxed",
    "grad_factored",
    "grad_shift_matrix",
    "layer_coefficients",
    "layer_regularizer",
    "objective",
    "RenderRequest",
    "aperture_spectrum",
    "last_render_stats",
    "refocus_shift_and_sum",
    "render",
    "render_views_with_shifts",
    "PipelineConfig",
    "QualityReport",
    "denoise",
    "interpolate_views",
    "psnr",
    "__version__",
]
