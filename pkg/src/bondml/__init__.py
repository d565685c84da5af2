"""Bond trade-price prediction: data handling, weighted evaluation, and model families."""

from bondml.dataset import (
    BondRecord,
    Dataset,
    ProfileReport,
    SyntheticConfig,
    feature_matrix,
    generate_synthetic,
    load_csv,
    profile,
    write_csv,
)
from bondml.errors import BondMLError, DataError, NumericalError, SchemaError
from bondml.evaluation import (
    CvResult,
    SplitPair,
    run_cv,
    significance_interval,
    weight_balanced_split,
    weps,
)

__version__ = "0.1.0"

__all__ = [
    "BondMLError",
    "BondRecord",
    "CvResult",
    "DataError",
    "Dataset",
    "NumericalError",
    "ProfileReport",
    "SchemaError",
    "SplitPair",
    "SyntheticConfig",
    "feature_matrix",
    "generate_synthetic",
    "load_csv",
    "profile",
    "run_cv",
    "significance_interval",
    "weight_balanced_split",
    "weps",
    "write_csv",
]
