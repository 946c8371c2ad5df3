"""App-category catalog: a closed label set, replaceable via configuration."""

from __future__ import annotations

from .errors import DataValidationError

DEFAULT_CATEGORIES: tuple[str, ...] = (
    "Communication",
    "e-Commerce",
    "Education",
    "Email",
    "Entertainment",
    "Fashion",
    "Finance",
    "Games",
    "Lifestyle",
    "Music",
    "News",
    "Photo",
    "Search",
    "SNS",
    "Texting",
    "Tools",
    "Travel",
    "Video",
    "Web",
    "Misc",
)


class CategoryCatalog:
    """Ordered closed set of app-category labels.

    Parsing any label outside the catalog is a validation error; a custom
    catalog may be supplied to replace the default 20-label scheme.
    """

    def __init__(self, labels: tuple[str, ...] | list[str] = DEFAULT_CATEGORIES):
        labels = tuple(labels)
        if len(labels) == 0:
            raise DataValidationError("category catalog must not be empty")
        if len(set(labels)) != len(labels):
            raise DataValidationError("category catalog contains duplicate labels")
        self.labels = labels
        self._index = {label: i for i, label in enumerate(labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, CategoryCatalog) and self.labels == other.labels

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise DataValidationError(f"unknown category {label!r}") from None

    def validate(self, label: str) -> str:
        if label not in self._index:
            raise DataValidationError(f"unknown category {label!r}")
        return label


DEFAULT_CATALOG = CategoryCatalog()
