"""Strong approximation of scalar SDEs driven by fractional Brownian motion.

Submodules: ``fbm_engine`` (exact fBm sampling), ``coeff_dsl`` (coefficient
expressions), ``model`` (problems, commutator, Lamperti map), ``schemes``
(Euler, McShane, Wong-Zakai and exact references), ``analysis`` (weight
process and error constants), ``harness`` (Monte Carlo studies) and ``cli``.
"""

__version__ = "0.1.0"

from .coeff_dsl import CoefficientFn, ExprSyntaxError, parse, differentiate, to_source  # noqa: E402
from .fbm_engine import FbmPath, TimeGrid, sample_cholesky, sample_circulant, sample_paths, path_stream  # noqa: E402
from .model import Degeneracy, LampertiMap, SdeProblem, commutator, degeneracy_check  # noqa: E402
from .schemes import SchemeKind, solve  # noqa: E402
from .analysis import constants_for, exact_weighted_interp_error, predicted_asymptotic_error  # noqa: E402
from .harness import ExperimentConfig, ErrorTable, rate_regression, run_experiment, strong_error_study  # noqa: E402

__all__ = [
    "__version__",
    "CoefficientFn",
    "ExprSyntaxError",
    "parse",
    "differentiate",
    "to_source",
    "FbmPath",
    "TimeGrid",
    "sample_cholesky",
    "sample_circulant",
    "sample_paths",
    "path_stream",
    "Degeneracy",
    "LampertiMap",
    "SdeProblem",
    "commutator",
    "degeneracy_check",
    "SchemeKind",
    "solve",
    "constants_for",
    "exact_weighted_interp_error",
    "predicted_asymptotic_error",
    "ExperimentConfig",
    "ErrorTable",
    "rate_regression",
    "run_experiment",
    "strong_error_study",
]
