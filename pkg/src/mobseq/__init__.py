"""mobseq: behavioral sequence mining for timestamped app-use event logs.

Turns raw logs into mobile sessions, extracts representative sequential
patterns via spell-based optimal matching and weighted k-medoid clustering,
computes circadian re-engagement switch rates, and fits a random-intercept
mixed model of re-engagement on demographics. A synthetic generator with
planted ground truth supports end-to-end validation.
"""

from .categories import DEFAULT_CATALOG, DEFAULT_CATEGORIES, CategoryCatalog
from .errors import DataValidationError, MobseqError, NumericalError
from .events import AppEvent, EventLog, UserProfile

__version__ = "0.1.0"

__all__ = [
    "AppEvent",
    "CategoryCatalog",
    "DEFAULT_CATALOG",
    "DEFAULT_CATEGORIES",
    "DataValidationError",
    "EventLog",
    "MobseqError",
    "NumericalError",
    "UserProfile",
    "__version__",
]
