"""Letter-grade scale: parsing, grade points, and the achievement-grade rule."""

import math

from .errors import DataError

# US 4.0 convention. Plus/minus modifiers matter for GPA only; the
# dichotomous response compares base letters.
GRADE_POINTS = {
    "A": 4.0,
    "A-": 3.7,
    "B+": 3.3,
    "B": 3.0,
    "B-": 2.7,
    "C+": 2.3,
    "C": 2.0,
    "C-": 1.7,
    "D+": 1.3,
    "D": 1.0,
    "D-": 0.7,
    "F": 0.0,
}

LETTER_VALUE = {"F": 0, "D": 1, "C": 2, "B": 3, "A": 4}
VALUE_LETTER = {v: k for k, v in LETTER_VALUE.items()}


def parse_grade(text: str) -> str:
    """Canonicalize a letter grade ("b+" -> "B+"); raise DataError otherwise."""
    grade = str(text).strip().upper()
    if grade not in GRADE_POINTS:
        raise DataError(f"non-letter grade: {text!r}")
    return grade


def base_letter(grade: str) -> str:
    return grade[0]


def grade_points(grade: str) -> float:
    return GRADE_POINTS[grade]


def letter_value(grade: str) -> int:
    """Base-letter ordinal (F=0 .. A=4); modifiers are ignored."""
    return LETTER_VALUE[base_letter(grade)]


def median_achievement_grade(grades) -> str:
    """Median base letter of the given grades, rounding up between letters.

    The median is taken over the base-letter ordinals. With an even count it
    can land between two letters; rounding up keeps the top response class
    non-empty (the maximum grade always maps to 1).
    """
    values = sorted(letter_value(g) for g in grades)
    if not values:
        raise DataError("no records")
    mid = len(values) // 2
    if len(values) % 2 == 1:
        median = float(values[mid])
    else:
        median = (values[mid - 1] + values[mid]) / 2.0
    return VALUE_LETTER[math.ceil(median)]
