import math

import numpy as np
import pytest
from scipy.linalg import expm

from regime_mv.errors import ModelError, SolverError
from regime_mv.ode_core import (GridFunction, integrate_backward, make_grid, refine,
                                richardson_error)


def linear(A):
    A = np.asarray(A, dtype=float)
    return lambda t, y: A @ y


def test_zero_dynamics():
    sol = integrate_backward(lambda t, y: np.zeros_like(y), [1.0], make_grid(1.0, 50))
    assert np.all(sol.values == 1.0)
    assert richardson_error(lambda t, y: np.zeros_like(y), [1.0], make_grid(1.0, 50)) == 0.0


def test_exponential():
    sol = integrate_backward(lambda t, y: -y, [1.0], make_grid(1.0, 2000))
    assert abs(sol.values[0, 0] - math.e) <= 1e-10
    assert sol.values[-1, 0] == 1.0


def test_rotation():
    A = [[0.0, 1.0], [-1.0, 0.0]]
    yT = np.array([0.3, -0.7])
    sol = integrate_backward(linear(A), yT, make_grid(1.0, 2000))
    assert np.abs(sol.values[0] - expm(-np.array(A)) @ yT).max() <= 1e-9


def test_richardson_smooth():
    assert richardson_error(lambda t, y: -y, [1.0], make_grid(1.0, 2000)) <= 1e-10


def test_stiffish_fourth_order():
    rhs = lambda t, y: -50.0 * y  # noqa: E731
    e100 = richardson_error(rhs, [1.0], make_grid(1.0, 100))
    e200 = richardson_error(rhs, [1.0], make_grid(1.0, 200))
    assert e100 > 0
    assert 12.0 <= e100 / e200 <= 20.0


@pytest.mark.parametrize("rhs, exact", [
    (lambda t, y: -y, lambda: np.array([math.e])),
    (lambda t, y: np.array([math.cos(t)]), lambda: np.array([1.0 - math.sin(1.0)])),
    (lambda t, y: y * y, lambda: np.array([0.5])),  # y = 1 / (2 - t)
    (linear([[0.0, 1.0], [-4.0, 0.0]]),
     lambda: expm(-np.array([[0.0, 1.0], [-4.0, 0.0]])) @ np.array([1.0, 0.0])),
])
def test_order_ratio(rhs, exact):
    errs = []
    for n in (20, 40):
        yT = np.array([1.0]) if exact().size == 1 else np.array([1.0, 0.0])
        y0 = integrate_backward(rhs, yT, make_grid(1.0, n)).values[0]
        errs.append(np.abs(y0 - exact()).max())
    assert 8.0 <= errs[0] / errs[1] <= 32.0


def test_time_dependent_rhs_reads_nudged_times():
    seen = []

    def rhs(t, y):
        seen.append(t)
        return np.zeros_like(y)

    integrate_backward(rhs, [0.0], np.array([0.0, 0.5, 1.0]))
    assert all(0.0 < t < 1.0 for t in seen)
    assert not any(t == 0.5 for t in seen)


def test_breakpoint_piecewise_exact():
    # dy/dt = -c(t) with c = 1 on [0, 1/3], 2 after; RK4 is exact on each piece
    def rhs(t, y):
        return np.array([-(1.0 if t <= 1 / 3 else 2.0)])

    grid = make_grid(1.0, 10, [1 / 3])
    y0 = integrate_backward(rhs, [0.0], grid).values[0, 0]
    assert abs(y0 - (2 * (2 / 3) + 1 / 3)) < 1e-14


def test_nonfinite_rhs_names_time():
    def rhs(t, y):
        return np.array([np.nan if t < 0.5 else 0.0])

    with pytest.raises(SolverError, match="t=0.4"):
        integrate_backward(rhs, [1.0], make_grid(1.0, 10))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_detected():
    with pytest.raises(SolverError):
        integrate_backward(lambda t, y: -y * y * 1e300, [1e10], make_grid(1.0, 10))


def test_deterministic():
    rhs = linear([[-0.3, 0.2], [0.1, -0.9]])
    a = integrate_backward(rhs, [1.0, 2.0], make_grid(1.0, 300)).values
    b = integrate_backward(rhs, [1.0, 2.0], make_grid(1.0, 300)).values
    assert a.tobytes() == b.tobytes()


class TestGrid:
    def test_merge_close_nodes(self):
        g = make_grid(1.0, 10, [0.3 + 1e-12, 0.55])
        assert 0.3 not in g and 0.3 + 1e-12 in g and 0.55 in g
        assert g[0] == 0.0 and g[-1] == 1.0

    def test_refine(self):
        g = refine(np.array([0.0, 0.5, 1.0]))
        assert np.array_equal(g, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_bad_steps(self):
        with pytest.raises(ModelError):
            make_grid(1.0, 0)


class TestGridFunction:
    def test_linear_interpolation(self):
        f = GridFunction(np.array([0.0, 1.0, 2.0]), np.array([[0.0], [2.0], [0.0]]))
        assert f(0.5)[0] == 1.0
        assert f(2.0)[0] == 0.0
        assert f.dim == 1 and f.horizon == 2.0

    @pytest.mark.parametrize("t", [-1e-9, 2.0 + 1e-9])
    def test_outside_range(self, t):
        f = GridFunction(np.array([0.0, 1.0, 2.0]), np.zeros((3, 1)))
        with pytest.raises(ModelError):
            f(t)

    def test_bad_grid(self):
        with pytest.raises(ModelError):
            GridFunction(np.array([0.0]), np.zeros((1, 1)))
        with pytest.raises(ModelError):
            GridFunction(np.array([0.0, 0.0]), np.zeros((2, 1)))
