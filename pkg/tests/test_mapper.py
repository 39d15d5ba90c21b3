import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmapper.errors import ParameterError
from scmapper.mapper import (
    canonical_circular,
    flip_columns,
    input_eps,
    load_mapper,
    rotate_columns,
    save_mapper,
    uniform,
    validate,
)
from strategies import valid_mappers


def test_uniform_valid():
    for m, L in [(1, 5), (2, 20), (3, 7)]:
        assert validate(uniform(m, L)).ok


def test_validate_reports_every_violation():
    A = uniform(2, 4)
    A[0, 1] = 1.3
    A[1, 1] = -0.3
    rep = validate(A)
    kinds = sorted(v.kind for v in rep.violations)
    assert kinds == ["range", "range", "row_sum", "row_sum"]
    assert not rep and "range violation at (1,2)" in str(rep)


def test_validate_column_sum():
    A = uniform(2, 4)
    A[0, 0] = 0.6
    A[0, 1] = 0.4
    A[1, 1] = 0.5
    rep = validate(A)
    assert [v.kind for v in rep.violations] == ["column_sum", "column_sum"]


def test_validate_tolerance():
    A = uniform(2, 4)
    A[0, 0] += 5e-10
    A[1, 0] -= 5e-10
    assert validate(A).ok
    A[0, 0] += 1e-8
    assert not validate(A).ok


def test_validate_never_raises_on_junk():
    assert not validate([[1, "x"]]).ok
    assert not validate(np.zeros((2, 0))).ok
    assert not validate([[np.nan, 1.0], [0.5, 0.5]]).ok


def test_input_eps_shapes():
    A = uniform(2, 5)
    np.testing.assert_allclose(input_eps(A, [0.2, 0.6]), np.full(5, 0.4))
    assert input_eps(A, np.ones((3, 2))).shape == (3, 5)
    with pytest.raises(ParameterError):
        input_eps(A, [0.1, 0.2, 0.3])


@settings(max_examples=50, deadline=None)
@given(valid_mappers(), st.data())
def test_input_eps_is_convex_and_mean_preserving(A, data):
    m = A.shape[0]
    eps = np.sort(np.array(data.draw(st.lists(st.floats(0, 1), min_size=m, max_size=m))))
    e = input_eps(A, eps)
    assert np.all(e >= eps[0] - 1e-12) and np.all(e <= eps[-1] + 1e-12)
    # equal row sums make the average over positions the channel average
    assert e.mean() == pytest.approx(eps.mean(), abs=1e-9)


@given(valid_mappers())
def test_flip_and_rotate_preserve_validity(A):
    assert validate(flip_columns(A)).ok
    assert validate(rotate_columns(A, 3)).ok
    np.testing.assert_array_equal(flip_columns(flip_columns(A)), A)
    np.testing.assert_array_equal(rotate_columns(rotate_columns(A, 2), -2), A)


def test_rotate_direction():
    A = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    np.testing.assert_array_equal(rotate_columns(A, 1)[0], [0.5, 1.0, 0.0])


@given(valid_mappers(m=2))
def test_canonical_circular_is_rotation_invariant(A):
    eps = np.array([0.3, 0.7])
    L = A.shape[1]
    base = input_eps(canonical_circular(A, eps), eps)
    for k in (1, L // 2):
        other = input_eps(canonical_circular(rotate_columns(A, k), eps), eps)
        # ties in the minimum may pick another start; the profile multiset is fixed
        np.testing.assert_allclose(np.sort(other), np.sort(base), atol=1e-12)
    assert base[0] == pytest.approx(base.min())


def test_save_load_roundtrip(tmp_path):
    A = np.array([[0.1, 0.9, 1 / 3], [0.9, 0.1, 2 / 3]])
    save_mapper(tmp_path / "a.csv", A, {"threshold": 0.5})
    B, meta = load_mapper(tmp_path / "a.csv")
    np.testing.assert_array_equal(A, B)
    assert meta == {"m": 2, "L": 3, "threshold": 0.5}
    assert not list(tmp_path.glob("*.tmp"))


def test_load_rejects_mismatched_sidecar(tmp_path):
    save_mapper(tmp_path / "a.csv", uniform(2, 3))
    (tmp_path / "a.csv").write_text("0.5,0.5\n0.5,0.5\n")
    with pytest.raises(ParameterError):
        load_mapper(tmp_path / "a.csv")


def test_load_without_sidecar(tmp_path):
    (tmp_path / "b.csv").write_text("0.5,0.5\n0.5,0.5\n")
    A, meta = load_mapper(tmp_path / "b.csv")
    assert A.shape == (2, 2) and meta == {}
