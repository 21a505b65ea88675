import numpy as np
import pytest

from medintake_tools.gradcheck import GRADIENT_FLOOR, check_case, relative_error, run_gradcheck


def test_relative_error():
    a = np.array([1.0, 2.0])

    assert relative_error(a, a) == 0.0
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(a, -a) == 1.0


def test_relative_error_is_per_entry():
    # one small entry off by half, hidden in a norm dominated by the large one
    assert relative_error(np.array([100.0, 1.0]), np.array([100.0, 1.5])) == pytest.approx(0.2)

    assert relative_error(np.zeros(1), np.array([1e-7])) == pytest.approx(1e-7 / GRADIENT_FLOOR)


def test_every_tensor_is_checked():
    errors = check_case(seed=7, case=0)

    assert set(errors) == {f"conv{g}_{p}" for g in range(5) for p in "Wb"} | {"dense_W", "dense_b", "out_W", "out_b"}


def test_analytic_gradients_match_finite_differences():
    result = run_gradcheck(seed=7, n_cases=25)

    assert result.n_cases == 25
    assert result.max_error < 1e-4
    assert result.passed


def test_gradcheck_deterministic():
    assert run_gradcheck(seed=3, n_cases=2) == run_gradcheck(seed=3, n_cases=2)
