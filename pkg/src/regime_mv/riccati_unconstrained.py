"""Riccati system and the two linear companion ODEs for the unconstrained problem.

``P`` is solved first (nonlinear, fully coupled across regimes), then ``h``
and ``K`` from the linear equations driven by ``P``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from regime_mv import _kernels, ode_core
from regime_mv.errors import SolverError
from regime_mv.market_model import MarketModel, _check_regime

K_TOL = 1e-10
BUDGET_TOL = 1e-12


def _segment_args(model: MarketModel, t: float):
    c = model.coefficients
    s = c.segment(t)
    return (c.rate[s], c.drift[s], c.cov[s], c.weights, c.loading[s], c.shock[s],
            model.off_diagonal)


def _not_pd(i: int, t: float) -> SolverError:
    return SolverError(f"second-moment matrix of regime {i} not positive definite at t={t:.17g}")


def P_rhs(model: MarketModel):
    def rhs(t, P):
        if not np.all(P > 0):
            i = int(np.argmin(P))
            raise SolverError(f"P lost positivity in regime {i} at t={t:.17g} (P={P[i]:.6g})")
        dP, bad = _kernels.rhs_P(*_segment_args(model, t), P)
        if bad >= 0:
            raise _not_pd(bad, t)
        return dP
    return rhs


def h_rhs(model: MarketModel, P: ode_core.GridFunction):
    def rhs(t, h):
        dh, bad = _kernels.rhs_h(*_segment_args(model, t), P(t), h)
        if bad >= 0:
            raise _not_pd(bad, t)
        return dh
    return rhs


def K_rhs(model: MarketModel, P: ode_core.GridFunction, h: ode_core.GridFunction):
    def rhs(t, K):
        dK, bad = _kernels.rhs_K(*_segment_args(model, t), P(t), h(t), K)
        if bad >= 0:
            raise _not_pd(bad, t)
        return dK
    return rhs


def solve_P(model: MarketModel, grid: NDArray[np.float64] | None = None) -> ode_core.GridFunction:
    """Backward-integrate the ``ell``-dimensional Riccati equation from ``P_T = 1``."""
    grid = model.grid() if grid is None else grid
    P = ode_core.integrate_backward(P_rhs(model), np.ones(model.ell), grid)
    bad = np.argwhere(~(P.values > 0))
    if bad.size:
        k, i = bad[0]
        raise SolverError(f"P not positive at node {k} (t={P.grid[k]:.17g}), regime {i}")
    return P


def solve_h(model: MarketModel, P: ode_core.GridFunction) -> ode_core.GridFunction:
    h = ode_core.integrate_backward(h_rhs(model, P), np.ones(model.ell), P.grid)
    bad = np.argwhere(~(h.values > 0))
    if bad.size:
        k, i = bad[0]
        raise SolverError(f"h not positive at node {k} (t={h.grid[k]:.17g}), regime {i}")
    return h


def solve_K(model: MarketModel, P: ode_core.GridFunction,
            h: ode_core.GridFunction) -> ode_core.GridFunction:
    return ode_core.integrate_backward(K_rhs(model, P, h), np.zeros(model.ell), P.grid)


@dataclass(frozen=True, eq=False)
class UnconstrainedSolution:
    """``P``, ``h`` and ``K`` on a common grid, each of shape ``(N+1, ell)``."""

    model: MarketModel
    grid: NDArray[np.float64]
    P: NDArray[np.float64]
    h: NDArray[np.float64]
    K: NDArray[np.float64]

    def at(self, t: float) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        """Linearly interpolated ``(P, h, K)`` at time ``t``."""
        gf = ode_core.GridFunction(self.grid, np.hstack([self.P, self.h, self.K]))
        y = gf(t)
        ell = self.model.ell
        return y[:ell], y[ell:2 * ell], y[2 * ell:]

    def initial(self, i0: int) -> tuple[float, float, float]:
        """``(P_0, h_0, K_0)`` for initial regime ``i0``."""
        _check_regime(self.model, i0)
        return float(self.P[0, i0]), float(self.h[0, i0]), float(self.K[0, i0])

    def to_csv(self) -> str:
        """CSV with columns ``t, regime, P, h, K``; regimes labelled from 1."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "regime", "P", "h", "K"])
        for k, t in enumerate(self.grid):
            for i in range(self.model.ell):
                w.writerow([_fmt(t), i + 1, _fmt(self.P[k, i]), _fmt(self.h[k, i]), _fmt(self.K[k, i])])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def read_unconstrained_csv(text: str) -> dict[str, NDArray[np.float64]]:
    """Parse :meth:`UnconstrainedSolution.to_csv` output into ``grid, P, h, K`` arrays."""
    rows = list(csv.DictReader(io.StringIO(text)))
    ell = max(int(r["regime"]) for r in rows)
    grid = np.array([float(r["t"]) for r in rows[::ell]])
    out = {"grid": grid}
    for col in ("P", "h", "K"):
        out[col] = np.array([float(r[col]) for r in rows]).reshape(grid.size, ell)
    return out


def solve(model: MarketModel, n_steps: int = ode_core.DEFAULT_STEPS) -> UnconstrainedSolution:
    grid = model.grid(n_steps)
    P = solve_P(model, grid)
    h = solve_h(model, P)
    K = solve_K(model, P, h)
    return UnconstrainedSolution(model, grid, P.values, h.values, K.values)


class Positivity(NamedTuple):
    k_nonneg: bool
    budget_pos: bool
    values: tuple  # (K_0, 1 - P_0 h_0^2 - K_0) at i0


def check_positivity(sol: UnconstrainedSolution, model: MarketModel, i0: int) -> Positivity:
    """Sign checks on ``K_0`` and the budget term ``1 - P_0 h_0^2 - K_0``."""
    _check_regime(model, i0)
    P0, h0, K0 = sol.initial(i0)
    budget = 1.0 - P0 * h0 * h0 - K0
    return Positivity(K0 >= -K_TOL, budget > BUDGET_TOL, (K0, budget))
