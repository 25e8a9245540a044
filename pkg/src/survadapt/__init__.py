"""Multi-source survival domain adaptation with censoring-aware ranking metrics."""

__version__ = "0.1.0"

from .errors import SurvAdaptError
from .survcore import Cohort, Role, SurvivalRecord, Treatment, c_index, c_index_prime, d_index
from .rankmetrics import kendall_tau_distance, sdi, sdi_decomposed_oracle

__all__ = [
    "__version__",
    "Cohort",
    "Role",
    "SurvAdaptError",
    "SurvivalRecord",
    "Treatment",
    "c_index",
    "c_index_prime",
    "d_index",
    "kendall_tau_distance",
    "sdi",
    "sdi_decomposed_oracle",
]
