"""Leave-one-level-out double cross-validation for L1-penalized Poisson
regression on grouped count data."""

from importlib.resources import files

from .cross_validation import CvCurve, FoldPlan, build_folds, cv_curve, select_lambda
from .dcv import (
    DcvConfig,
    DcvResult,
    PresenceMatrix,
    backward_glm_baseline,
    debias_refit,
    level_cv_predict,
    run_lolo_dcv,
)
from .errors import ConvergenceError, DataError, DegenerateError, LoloDcvError, NumericalError
from .features import (
    Dataset,
    DesignMatrix,
    VariableSpec,
    build_design,
    encode_design,
    expand_interactions,
    load_dataset,
    read_schema,
)
from .glm_poisson import Coefficients, deviance, fit_irls, log_likelihood, score
from .lasso_path import LambdaGrid, LassoPath, build_grid, fit_path, fit_penalized, kkt_violation, lambda_max
from .metrics import (
    QualityReport,
    emit_summary_table,
    frequent_variables,
    prediction_accuracy,
    prediction_power,
    quality_summary,
)

__version__ = "0.1.0"


def example_schema() -> tuple[VariableSpec, ...]:
    """The 16-explanatory-variable survey schema shipped with the package."""
    return read_schema(files(__name__).joinpath("data", "survey_schema.csv").open("r", encoding="utf-8"))


__all__ = [
    "Coefficients",
    "ConvergenceError",
    "CvCurve",
    "DataError",
    "Dataset",
    "DcvConfig",
    "DcvResult",
    "DegenerateError",
    "DesignMatrix",
    "FoldPlan",
    "LambdaGrid",
    "LassoPath",
    "LoloDcvError",
    "NumericalError",
    "PresenceMatrix",
    "QualityReport",
    "VariableSpec",
    "backward_glm_baseline",
    "build_design",
    "build_folds",
    "build_grid",
    "cv_curve",
    "debias_refit",
    "deviance",
    "emit_summary_table",
    "encode_design",
    "example_schema",
    "expand_interactions",
    "fit_irls",
    "fit_path",
    "fit_penalized",
    "frequent_variables",
    "kkt_violation",
    "lambda_max",
    "level_cv_predict",
    "load_dataset",
    "log_likelihood",
    "prediction_accuracy",
    "prediction_power",
    "quality_summary",
    "read_schema",
    "run_lolo_dcv",
    "score",
    "select_lambda",
]
