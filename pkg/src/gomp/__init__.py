"""Generalized orthogonal matching pursuit for feature selection.

Forward selection driven by model residuals, for linear, logistic and Cox
models, with a LASSO baseline and a cross-validated evaluation harness.
"""

__version__ = "0.1.0"

from .datamodel import Dataset, Outcome, Schema, load_csv, standardize  # noqa: E402
from .errors import GompError, IngestionError, NumericalError, UsageError  # noqa: E402
from .evaluation import CvConfig, bbc, run_cv, selection_quality  # noqa: E402
from .lasso import LambdaPath, lasso_path  # noqa: E402
from .pursuit import SelectionResult, gomp_path, gomp_select, omp_classic  # noqa: E402
from .simgen import SimSpec, generate  # noqa: E402
from .stopping import StoppingRule  # noqa: E402

__all__ = [
    "__version__",
    "Dataset",
    "Outcome",
    "Schema",
    "load_csv",
    "standardize",
    "GompError",
    "IngestionError",
    "NumericalError",
    "UsageError",
    "CvConfig",
    "bbc",
    "run_cv",
    "selection_quality",
    "LambdaPath",
    "lasso_path",
    "SelectionResult",
    "gomp_path",
    "gomp_select",
    "omp_classic",
    "SimSpec",
    "generate",
    "StoppingRule",
]
