import io

import numpy as np
import pytest

from dcfkit import GroupAssignment, ModelSpec, estimate_traits, fit, simulate_responses
from dcfkit.data import synthetic_student_ids

ENROLLMENT_CSV = """\
student_id,course_id,term_index,letter_grade,major,transfer
s1,Math54,3,A,Eco,false
s1,Stat20,4,B+,Eco,false
s2,Math54,3,A-,CompSci,false
s2,Stat20,4,A,CompSci,false
s3,Math54,5,C,Eco,true
s3,Stat20,5,B,Eco,true
s4,Math54,3,F,CompSci,false
s4,Stat20,4,D,CompSci,false
"""


@pytest.fixture
def enrollment_stream():
    return io.BytesIO(ENROLLMENT_CSV.encode())


def rasch_sim(n_students, n_courses, seed, beta1=0.0, injected=0, n_neg=None):
    """Simulated Rasch data with known generator, optionally one shifted course."""
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = rng.standard_normal(n_students)
    delta = rng.standard_normal(n_courses)
    groups = None
    injection = None
    if beta1 != 0.0:
        n_neg = n_students // 2 if n_neg is None else n_neg
        students = synthetic_student_ids(n_students)
        groups = GroupAssignment(
            encoding={s: (-1 if i < n_neg else 1) for i, s in enumerate(students)},
            label_neg="G1",
            label_pos="G2",
        )
        injection = (injected, beta1, groups)
    matrix = simulate_responses(delta, theta, injection, rng_seed=seed + 1)
    return matrix, theta, delta, groups


@pytest.fixture(scope="session")
def recovery_data():
    """1,000 x 50 Rasch draw shared by the slower estimation tests."""
    matrix, theta, delta, _ = rasch_sim(1000, 50, seed=2024)
    return matrix, theta, delta


@pytest.fixture(scope="session")
def recovery_fit(recovery_data):
    matrix, theta, delta = recovery_data
    model = fit(matrix, ModelSpec())
    traits = estimate_traits(model, matrix)
    return matrix, theta, delta, model, traits
