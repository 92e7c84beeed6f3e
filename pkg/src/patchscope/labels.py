"""Binary image labels used throughout the pipeline."""

from __future__ import annotations

from enum import Enum


class Label(str, Enum):
    """Class label of a biopsy image (and, by inheritance, of its patches)."""

    ACTIVE_EOE = "ActiveEoE"
    NON_EOE = "NonEoE"

    @property
    def is_positive(self) -> bool:
        return self is Label.ACTIVE_EOE


def parse_label(text: str) -> Label:
    for label in Label:
        if label.value == text:
            return label
    raise ValueError(f"unknown label {text!r}; expected one of "
                     f"{[l.value for l in Label]}")
