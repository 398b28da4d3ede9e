"""Monotone multiple choice (MMC) and nominal response (NR) item response models.

Autoencoder and marginal maximum likelihood fitting, ML and encoder scoring,
entropy-based bit scales, residual diagnostics and a simulation harness.
"""

__version__ = "0.1.0"

from .baseline_mml import QuadratureRule, mml_fit_nr, mml_score
from .bitscale import bit_score, build_bitscale, calibrate_theta0, entropy, resolve_theta0, surprisal
from .data import ResponseMatrix, SplitSpec, load_csv, write_csv
from .evaluation import cross_validate, grouped_residuals, holdout_loglik, per_response_residuals
from .models import MmcModel, NrModel, load_model, save_model
from .scoring import score, score_ml, score_nn
from .simulation import GeneratorSpec, SimConfig, generate, run_simulation
from .training import FittedModel, Hyperparams, fit

__all__ = [
    "FittedModel",
    "GeneratorSpec",
    "Hyperparams",
    "MmcModel",
    "NrModel",
    "QuadratureRule",
    "ResponseMatrix",
    "SimConfig",
    "SplitSpec",
    "bit_score",
    "build_bitscale",
    "calibrate_theta0",
    "cross_validate",
    "entropy",
    "fit",
    "generate",
    "grouped_residuals",
    "holdout_loglik",
    "load_csv",
    "load_model",
    "mml_fit_nr",
    "mml_score",
    "per_response_residuals",
    "resolve_theta0",
    "run_simulation",
    "save_model",
    "score",
    "score_ml",
    "score_nn",
    "surprisal",
    "write_csv",
]
