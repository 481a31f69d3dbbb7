"""Fixed-step backward Runge-Kutta integration on explicit time grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from regime_mv.errors import ModelError, SolverError

DEFAULT_STEPS = 2000
_MERGE_TOL = 1e-9

Rhs = Callable[[float, NDArray[np.float64]], NDArray[np.float64]]


def make_grid(horizon: float, n_steps: int = DEFAULT_STEPS,
              breakpoints: Sequence[float] = ()) -> NDArray[np.float64]:
    """Uniform grid on ``[0, horizon]`` with every breakpoint inserted as a node.

    Uniform nodes closer than ``1e-9 * horizon`` to a breakpoint are dropped so
    that no step degenerates.
    """
    if n_steps < 1:
        raise ModelError(f"n_steps must be >= 1, got {n_steps}")
    uniform = np.linspace(0.0, horizon, int(n_steps) + 1)
    bps = np.asarray([b for b in breakpoints if 0.0 < b < horizon], dtype=float)
    if bps.size == 0:
        return uniform
    keep = np.ones(uniform.size, dtype=bool)
    for b in bps:
        keep &= np.abs(uniform - b) > _MERGE_TOL * horizon
    keep[0] = keep[-1] = True
    return np.unique(np.concatenate([uniform[keep], bps]))


def refine(grid: NDArray[np.float64]) -> NDArray[np.float64]:
    """Insert the midpoint of every step (halves the step size)."""
    mids = 0.5 * (grid[:-1] + grid[1:])
    out = np.empty(2 * grid.size - 1)
    out[0::2] = grid
    out[1::2] = mids
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Vector-valued trajectory stored on grid nodes, linear in between."""

    grid: NDArray[np.float64]
    values: NDArray[np.float64]  # (N+1, d)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ModelError("grid must have at least two strictly increasing nodes")
        if values.shape[0] != grid.size:
            raise ModelError("values must have one row per grid node")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def locate(self, t: float) -> tuple[int, float]:
        """Index ``k`` and weight ``w`` with ``t = (1-w) grid[k] + w grid[k+1]``."""
        g = self.grid
        if not (g[0] <= t <= g[-1]):
            raise ModelError(f"time {t} outside [{g[0]}, {g[-1]}]")
        k = min(int(np.searchsorted(g, t, side="right")) - 1, g.size - 2)
        return k, (t - g[k]) / (g[k + 1] - g[k])

    def __call__(self, t: float) -> NDArray[np.float64]:
        k, w = self.locate(t)
        if w == 0.0:
            return self.values[k].copy()
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]


def _inward(t: float, toward: float) -> float:
    # one ulp inside the step, so piecewise-constant lookups pick this step's piece
    return float(np.nextafter(t, toward))


def _eval(rhs: Rhs, t: float, y: NDArray[np.float64]) -> NDArray[np.float64]:
    dy = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(dy)):
        raise SolverError(f"non-finite right-hand side at t={t:.17g}")
    return dy


def integrate_backward(rhs: Rhs, terminal: ArrayLike, grid: ArrayLike) -> GridFunction:
    """Classical RK4 from ``grid[-1]`` down to ``grid[0]``.

    ``values[-1]`` equals ``terminal`` exactly.  Stage times at step ends are
    nudged one ulp into the step so that coefficient tables with a breakpoint on
    a node are read from the correct piece.
    """
    grid = np.asarray(grid, dtype=float)
    y = np.array(terminal, dtype=float).reshape(-1)
    values = np.empty((grid.size, y.size))
    values[-1] = y
    for k in range(grid.size - 2, -1, -1):
        t1, t0 = grid[k + 1], grid[k]
        dt = t0 - t1  # negative
        tm = 0.5 * (t0 + t1)
        k1 = _eval(rhs, _inward(t1, t0), y)
        k2 = _eval(rhs, tm, y + 0.5 * dt * k1)
        k3 = _eval(rhs, tm, y + 0.5 * dt * k2)
        k4 = _eval(rhs, _inward(t0, t1), y + dt * k3)
        y = y + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.all(np.isfinite(y)):
            raise SolverError(f"integration produced non-finite state at t={t0:.17g}")
        values[k] = y
    return GridFunction(grid, values)


def richardson_error(rhs: Rhs, terminal: ArrayLike, grid: ArrayLike) -> float:
    """Max-norm change of ``y(0)`` when the step size is halved."""
    grid = np.asarray(grid, dtype=float)
    coarse = integrate_backward(rhs, terminal, grid).values[0]
    fine = integrate_backward(rhs, terminal, refine(grid)).values[0]
    return float(np.max(np.abs(coarse - fine)))
