"""Enrollment ingestion, dichotomization, iterative filtering, and groups.

The input is a stream of per-enrollment grade records. Grades are turned
into 0/1 responses against an achievement grade (AG), under-observed
students and courses are removed to a fixpoint, and group attributes are
encoded as -1/+1 for the downstream difficulty analysis.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import grades
from .errors import DataError, FilterError, SchemaError

REQUIRED_COLUMNS = ("student_id", "course_id", "term_index", "letter_grade")


@dataclass(frozen=True)
class EnrollmentRecord:
    """One completed student-course enrollment with a letter grade."""

    student_id: str
    course_id: str
    term_index: int
    letter_grade: str
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class AGPolicy:
    """How the achievement grade is chosen: data median or an explicit letter."""

    mode: str = "median"
    explicit_grade: str | None = None

    def __post_init__(self):
        if self.mode not in ("median", "explicit"):
            raise DataError(f"unknown AG mode: {self.mode!r}")
        if self.mode == "median" and self.explicit_grade is not None:
            raise DataError("median mode computes the AG from data; do not supply one")
        if self.mode == "explicit":
            if self.explicit_grade is None:
                raise DataError("explicit mode requires a grade")
            object.__setattr__(self, "explicit_grade", grades.parse_grade(self.explicit_grade))


@dataclass(frozen=True)
class RejectedRow:
    row: int
    reason: str


@dataclass(frozen=True)
class ParseResult:
    records: list[EnrollmentRecord]
    rejects: list[RejectedRow]


@dataclass(frozen=True)
class ResponseMatrix:
    """Sparse dichotomous student x course responses.

    Entries are parallel arrays; there is at most one entry per
    (student, course) pair and every response is 0 or 1.
    """

    students: tuple[str, ...]
    courses: tuple[str, ...]
    student_idx: np.ndarray
    course_idx: np.ndarray
    responses: np.ndarray
    terms: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "student_idx", np.asarray(self.student_idx, dtype=np.int64))
        object.__setattr__(self, "course_idx", np.asarray(self.course_idx, dtype=np.int64))
        object.__setattr__(self, "responses", np.asarray(self.responses, dtype=np.int8))
        object.__setattr__(self, "terms", np.asarray(self.terms, dtype=np.int64))
        resp = self.responses
        if resp.size and not np.isin(resp, (0, 1)).all():
            raise DataError("responses must be 0 or 1")
        keys = self.student_idx * max(len(self.courses), 1) + self.course_idx
        if keys.size and np.unique(keys).size != keys.size:
            raise DataError("duplicate (student, course) entry")

    @property
    def n_students(self) -> int:
        return len(self.students)

    @property
    def n_courses(self) -> int:
        return len(self.courses)

    @property
    def n_entries(self) -> int:
        return self.responses.size

    def student_counts(self) -> np.ndarray:
        return np.bincount(self.student_idx, minlength=self.n_students)

    def course_counts(self) -> np.ndarray:
        return np.bincount(self.course_idx, minlength=self.n_courses)

    @cached_property
    def _dense(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.zeros((self.n_students, self.n_courses))
        mask = np.zeros((self.n_students, self.n_courses), dtype=bool)
        x[self.student_idx, self.course_idx] = self.responses
        mask[self.student_idx, self.course_idx] = True
        return x, mask

    def to_dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (responses, observed-mask) pair; responses are 0 where unobserved."""
        x, mask = self._dense
        return x.copy(), mask.copy()

    def course_variance_mask(self) -> np.ndarray:
        """True for courses whose observed responses include both 0 and 1."""
        ones = np.zeros(self.n_courses, dtype=np.int64)
        np.add.at(ones, self.course_idx, self.responses.astype(np.int64))
        counts = self.course_counts()
        return (counts > 0) & (ones > 0) & (ones < counts)

    def subset(self, student_keep: np.ndarray, course_keep: np.ndarray) -> "ResponseMatrix":
        """Restrict to the flagged students/courses, reindexing both axes."""
        student_keep = np.asarray(student_keep, dtype=bool)
        course_keep = np.asarray(course_keep, dtype=bool)
        entry_keep = student_keep[self.student_idx] & course_keep[self.course_idx]
        new_student = np.cumsum(student_keep) - 1
        new_course = np.cumsum(course_keep) - 1
        return ResponseMatrix(
            students=tuple(s for s, k in zip(self.students, student_keep) if k),
            courses=tuple(c for c, k in zip(self.courses, course_keep) if k),
            student_idx=new_student[self.student_idx[entry_keep]],
            course_idx=new_course[self.course_idx[entry_keep]],
            responses=self.responses[entry_keep],
            terms=self.terms[entry_keep],
        )

    def select_entries(self, entry_mask: np.ndarray) -> "ResponseMatrix":
        """Keep only the flagged entries; the student/course index spaces stay fixed."""
        entry_mask = np.asarray(entry_mask, dtype=bool)
        return replace(
            self,
            student_idx=self.student_idx[entry_mask],
            course_idx=self.course_idx[entry_mask],
            responses=self.responses[entry_mask],
            terms=self.terms[entry_mask],
        )


@dataclass(frozen=True)
class GroupAssignment:
    """-1/+1 group codes per student, plus display labels for the two groups."""

    encoding: dict[str, int]
    label_neg: str
    label_pos: str
    excluded: tuple[str, ...] = ()

    def codes_for(self, student_ids) -> np.ndarray:
        """Codes aligned to student_ids; 0 marks students without a group."""
        return np.array([self.encoding.get(s, 0) for s in student_ids], dtype=np.int8)


@dataclass(frozen=True)
class AchievementRates:
    """Per-course achievement rates, optionally split by group (NaN = undefined)."""

    course_ids: tuple[str, ...]
    overall: np.ndarray
    group_neg: np.ndarray | None = None
    group_pos: np.ndarray | None = None

    @property
    def gap(self) -> np.ndarray:
        """AR difference group_neg - group_pos."""
        if self.group_neg is None or self.group_pos is None:
            raise DataError("achievement rates were computed without groups")
        return self.group_neg - self.group_pos


def synthetic_student_ids(n: int) -> tuple[str, ...]:
    return tuple(f"s{i:05d}" for i in range(n))


def synthetic_course_ids(n: int) -> tuple[str, ...]:
    return tuple(f"c{i:03d}" for i in range(n))


def matrix_from_dense(responses: np.ndarray, students=None, courses=None, terms=None) -> ResponseMatrix:
    """Wrap a dense 0/1 array as a fully observed ResponseMatrix.

    Ids default to synthetic ones in array order; term_index defaults to
    the course position (all students progress in the same order).
    """
    responses = np.asarray(responses)
    n_students, n_courses = responses.shape
    if terms is None:
        terms = np.tile(np.arange(n_courses), n_students)
    return ResponseMatrix(
        students=synthetic_student_ids(n_students) if students is None else tuple(students),
        courses=synthetic_course_ids(n_courses) if courses is None else tuple(courses),
        student_idx=np.repeat(np.arange(n_students), n_courses),
        course_idx=np.tile(np.arange(n_courses), n_students),
        responses=responses.ravel(),
        terms=terms,
    )


def parse_enrollments(stream, attribute_columns=None) -> ParseResult:
    """Parse delimited enrollment rows into records plus a rejects report.

    `stream` is a binary or text file object (or any iterable of lines)
    holding UTF-8 comma-delimited rows with a header. The required columns
    are student_id, course_id, term_index, letter_grade; further columns are
    student attributes. When `attribute_columns` is given, only those are
    retained and each must be present in the header.

    Malformed rows are rejected individually with 1-based data-row numbers;
    a missing required column is fatal.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    if hasattr(stream, "read") and isinstance(stream.read(0), bytes):
        stream = io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        return ParseResult([], [])
    header = [h.strip() for h in header]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    extra = [c for c in header if c not in REQUIRED_COLUMNS]
    if attribute_columns is None:
        attr_names = extra
    else:
        unknown = [c for c in attribute_columns if c not in header]
        if unknown:
            raise SchemaError(f"attribute column(s) not in header: {', '.join(unknown)}")
        attr_names = list(attribute_columns)
    col = {name: header.index(name) for name in header}

    records: list[EnrollmentRecord] = []
    rejects: list[RejectedRow] = []
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            rejects.append(RejectedRow(row_no, "wrong field count"))
            continue
        student = row[col["student_id"]].strip()
        course = row[col["course_id"]].strip()
        if not student or not course:
            rejects.append(RejectedRow(row_no, "missing student_id or course_id"))
            continue
        try:
            term = int(row[col["term_index"]])
        except ValueError:
            rejects.append(RejectedRow(row_no, "invalid term_index"))
            continue
        try:
            grade = grades.parse_grade(row[col["letter_grade"]])
        except DataError:
            rejects.append(RejectedRow(row_no, "non-letter grade"))
            continue
        attrs = {name: row[col[name]].strip() for name in attr_names}
        records.append(EnrollmentRecord(student, course, term, grade, attrs))
    return ParseResult(records, rejects)


def resolve_achievement_grade(records, policy: AGPolicy) -> str:
    if policy.mode == "explicit":
        return grades.base_letter(policy.explicit_grade)
    return grades.median_achievement_grade(r.letter_grade for r in records)


def dichotomize(records, policy: AGPolicy = AGPolicy()) -> tuple[ResponseMatrix, str]:
    """Turn grade records into a 0/1 response matrix against the AG.

    A response is 1 iff the record's base letter is at or above the AG.
    Repeated enrollments keep the earliest attempt (lowest term_index,
    input order breaking ties). Returns the matrix and the resolved AG.
    """
    records = list(records)
    if not records:
        raise DataError("no records")
    ag = resolve_achievement_grade(records, policy)
    ag_value = grades.LETTER_VALUE[ag]

    first_attempt: dict[tuple[str, str], EnrollmentRecord] = {}
    for rec in records:
        key = (rec.student_id, rec.course_id)
        prev = first_attempt.get(key)
        if prev is None or rec.term_index < prev.term_index:
            first_attempt[key] = rec
    kept = list(first_attempt.values())

    students = tuple(sorted({r.student_id for r in kept}))
    courses = tuple(sorted({r.course_id for r in kept}))
    s_index = {s: i for i, s in enumerate(students)}
    c_index = {c: i for i, c in enumerate(courses)}
    matrix = ResponseMatrix(
        students=students,
        courses=courses,
        student_idx=np.array([s_index[r.student_id] for r in kept]),
        course_idx=np.array([c_index[r.course_id] for r in kept]),
        responses=np.array(
            [1 if grades.letter_value(r.letter_grade) >= ag_value else 0 for r in kept],
            dtype=np.int8,
        ),
        terms=np.array([r.term_index for r in kept]),
    )
    return matrix, ag


def iterative_filter(
    matrix: ResponseMatrix,
    min_grades_per_student: int = 5,
    min_students_per_course: int = 20,
    require_variance: bool = True,
) -> ResponseMatrix:
    """Alternately drop under-observed students and courses to a fixpoint.

    Students with fewer than `min_grades_per_student` responses are removed
    first, then courses with fewer than `min_students_per_course` responses
    (and, when `require_variance`, courses whose responses are all equal),
    repeating until nothing changes. Raises FilterError with the removal
    trace when the fixpoint is empty.
    """
    if min_grades_per_student < 1 or min_students_per_course < 1:
        raise DataError("filter thresholds must be >= 1")
    trace = []
    current = matrix
    while True:
        student_counts = current.student_counts()
        drop_students = student_counts < min_grades_per_student
        if drop_students.any():
            trace.append(("students", int(drop_students.sum())))
            current = current.subset(~drop_students, np.ones(current.n_courses, dtype=bool))

        course_counts = current.course_counts()
        drop_courses = course_counts < min_students_per_course
        if require_variance:
            drop_courses |= ~current.course_variance_mask()
        if drop_courses.any():
            trace.append(("courses", int(drop_courses.sum())))
            current = current.subset(np.ones(current.n_students, dtype=bool), ~drop_courses)

        if (current.student_counts() >= min_grades_per_student).all():
            counts = current.course_counts()
            ok = counts >= min_students_per_course
            if require_variance:
                ok &= current.course_variance_mask()
            if ok.all():
                break
    if current.n_entries == 0:
        raise FilterError("dataset eliminated by filtering", trace)
    return current


def build_groups(records, attribute: str, neg_value: str, pos_value: str) -> GroupAssignment:
    """Encode students as -1 (neg_value) or +1 (pos_value) on an attribute.

    Students carrying neither value (or lacking the attribute) are excluded
    and reported; a student seen with both values is an error.
    """
    if neg_value == pos_value:
        raise DataError("group values must differ")
    seen: dict[str, set[str]] = {}
    for rec in records:
        value = rec.attributes.get(attribute)
        if value is not None:
            seen.setdefault(rec.student_id, set()).add(value)
    encoding: dict[str, int] = {}
    excluded: list[str] = []
    for student in sorted(seen):
        values = seen[student]
        has_neg = neg_value in values
        has_pos = pos_value in values
        if has_neg and has_pos:
            raise DataError(f"ambiguous group membership for student {student!r}")
        if has_neg:
            encoding[student] = -1
        elif has_pos:
            encoding[student] = 1
        else:
            excluded.append(student)
    return GroupAssignment(
        encoding=encoding,
        label_neg=f"{attribute}={neg_value}",
        label_pos=f"{attribute}={pos_value}",
        excluded=tuple(excluded),
    )


def compute_gpa(records) -> dict[str, float]:
    """Mean grade points per student over all of their records."""
    points: dict[str, list[float]] = {}
    for rec in records:
        points.setdefault(rec.student_id, []).append(grades.grade_points(rec.letter_grade))
    return {s: float(np.mean(v)) for s, v in points.items()}


def achievement_rates(matrix: ResponseMatrix, groups: GroupAssignment | None = None) -> AchievementRates:
    """Per-course share of responses equal to 1, optionally per group.

    A course with no responses in a group gets NaN for that group.
    """
    if matrix.n_entries == 0:
        raise DataError("empty response matrix")

    def rates(entry_mask):
        counts = np.zeros(matrix.n_courses)
        ones = np.zeros(matrix.n_courses)
        np.add.at(counts, matrix.course_idx[entry_mask], 1.0)
        np.add.at(ones, matrix.course_idx[entry_mask], matrix.responses[entry_mask].astype(float))
        with np.errstate(invalid="ignore"):
            return np.where(counts > 0, ones / np.maximum(counts, 1), np.nan)

    overall = rates(np.ones(matrix.n_entries, dtype=bool))
    if groups is None:
        return AchievementRates(matrix.courses, overall)
    codes = groups.codes_for(matrix.students)[matrix.student_idx]
    return AchievementRates(
        course_ids=matrix.courses,
        overall=overall,
        group_neg=rates(codes == -1),
        group_pos=rates(codes == 1),
    )
