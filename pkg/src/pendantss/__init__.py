"""Blind sparse deconvolution of peak signals with trend removal.

The observation ``y = pi * s + t + n`` is split into a sparse spike train
``s``, a short nonnegative kernel ``pi`` summing to one and a slowly varying
trend ``t``. Spikes and kernel are estimated by alternating variable-metric
projected gradient steps on a SPOQ-regularized, high-pass filtered
least-squares objective; the trend is recovered by low-pass filtering the
residual.
"""

from .filters import FilterSpec, apply_highpass, apply_lowpass, select_cutoff
from .metrics import MetricsReport, evaluate, snr, tsnr
from .projections import BoxSet, SimplexSet, project_box, project_simplex
from .signal_model import DatasetSpec, GroundTruth, convolve_same, generate_dataset, preset_spec
from .solver import (ProblemInstance, SolveResult, SolverConfig, StopReason,
                     center_shift_postprocess, solve)
from .spoq import ParameterInvalid, SpoqParams
from .tuning import GridSpec, grid_search, run_trial_battery, tune_cutoff, tune_pair

__version__ = "0.1.0"

__all__ = [
    "BoxSet", "DatasetSpec", "FilterSpec", "GridSpec", "GroundTruth", "MetricsReport",
    "ParameterInvalid", "ProblemInstance", "SimplexSet", "SolveResult", "SolverConfig",
    "SpoqParams", "StopReason", "apply_highpass", "apply_lowpass", "center_shift_postprocess",
    "convolve_same", "evaluate", "generate_dataset", "grid_search", "preset_spec",
    "project_box", "project_simplex", "run_trial_battery", "select_cutoff", "snr", "solve",
    "tsnr", "tune_cutoff", "tune_pair",
]
