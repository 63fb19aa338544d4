"""Canonical seven-way class labels.

Index order is alphabetical by dataset code and is the single source of
truth wherever a class index appears: confusion matrices, model heads,
reports, and the service API.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class ClassLabels:
    codes: tuple[str, ...]
    display_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.codes) != len(self.display_names):
            raise ValidationError("codes and display names must pair up")
        if len(set(self.codes)) != len(self.codes):
            raise ValidationError("class codes must be unique")

    def __len__(self) -> int:
        return len(self.codes)

    def index(self, code: str) -> int:
        return self.codes.index(code)

    def name(self, code: str) -> str:
        return self.display_names[self.index(code)]


CLASS_LABELS = ClassLabels(
    codes=("akiec", "bcc", "bkl", "df", "mel", "nv", "vasc"),
    display_names=(
        "Actinic keratosis",
        "Basal cell carcinoma",
        "Benign keratosis",
        "Dermatofibroma",
        "Melanoma",
        "Melanocytic nevi",
        "Vascular lesions",
    ),
)

CLASS_CODES = CLASS_LABELS.codes
