"""The 2*ell-dimensional Riccati system for the no-shorting problem.

For each regime ``i`` and sign ``+``/``-`` the right-hand side needs the
infimum over the nonnegative orthant of a convex, piecewise-quadratic
Hamiltonian ``H^i_{+/-}(v; P_+, P_-)``.  The minimization is done by the
compiled projected-Newton routine in :mod:`regime_mv._kernels`; the minimizers
are cached on every grid node for the feedback policy.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from regime_mv import _kernels, ode_core
from regime_mv.errors import ModelError, SolverError
from regime_mv.market_model import MarketModel, _check_P, _check_regime, _check_time

log = logging.getLogger(__name__)

MAX_ITER = 10_000
OPT_TOL = 1e-10
BOUND_TOL = 1e-6
SLACK = 1e-12


@dataclass(frozen=True)
class TruncationBounds:
    """Exponential envelopes ``epsilon <= P <= kappa`` for the Riccati solutions."""

    c1: float
    c2: float
    kappa: float
    epsilon: float


def truncation_bounds(model: MarketModel) -> TruncationBounds:
    """Upper bound from the largest interest rate, lower bound from the worst
    Sharpe-type deficit ``-2r + b^T Sigma^{-1} b`` with ``b = mu + sum_j q^{ij} gamma^{ij}``.

    Both constants are floored at zero so that the envelopes contain the
    terminal value 1.
    """
    c = model.coefficients
    q = model.off_diagonal
    c1 = max(0.0, float(c.rate.max())) + SLACK
    worst = 0.0
    for s in range(c.starts.size):
        for i in range(model.ell):
            b = c.drift[s, i] + q[i] @ c.shock[s, i]
            L = np.linalg.cholesky(c.sigma[s, i])
            y = np.linalg.solve(L, b)
            worst = max(worst, -2.0 * c.rate[s, i] + float(y @ y))
    c2 = worst + SLACK
    T = model.horizon
    return TruncationBounds(c1, c2, float(np.exp(2.0 * c1 * T)), float(np.exp(-c2 * T)))


def minimizer_radius(model: MarketModel, bounds: TruncationBounds | None = None) -> float:
    """Computable bound on the size of the inner minimizers (flag only)."""
    b = truncation_bounds(model) if bounds is None else bounds
    return 10.0 * (1.0 + b.c2) / model.delta * b.kappa / b.epsilon


def _sign(sign) -> float:
    if sign in ("+", 1, 1.0, "plus"):
        return 1.0
    if sign in ("-", -1, -1.0, "minus"):
        return -1.0
    raise ModelError(f"sign must be '+' or '-', got {sign!r}")


def _kernel_args(model: MarketModel, i: int, t: float):
    _check_regime(model, i)
    _check_time(model, t)
    c = model.coefficients
    s = c.segment(t)
    return c.drift[s], c.cov[s], c.weights, c.loading[s], c.shock[s], model.off_diagonal


def eval_H(sign, v: ArrayLike, model: MarketModel, P_plus: ArrayLike, P_minus: ArrayLike,
           i: int, t: float) -> float:
    """Value of the sign-``+``/``-`` Hamiltonian of regime ``i`` at portfolio direction ``v``."""
    s = _sign(sign)
    Pp = _check_P(P_plus, model, "P_plus")
    Pm = _check_P(P_minus, model, "P_minus")
    v = np.asarray(v, dtype=float).reshape(model.m)
    Ps, Po = (Pp, Pm) if s > 0 else (Pm, Pp)
    return float(_kernels.h_value(v, s, i, *_kernel_args(model, i, t), Ps, Po))


def grad_H(sign, v: ArrayLike, model: MarketModel, P_plus: ArrayLike, P_minus: ArrayLike,
           i: int, t: float) -> NDArray[np.float64]:
    s = _sign(sign)
    Pp = _check_P(P_plus, model, "P_plus")
    Pm = _check_P(P_minus, model, "P_minus")
    v = np.asarray(v, dtype=float).reshape(model.m)
    Ps, Po = (Pp, Pm) if s > 0 else (Pm, Pp)
    g, _ = _kernels.h_grad_hess(v, s, i, *_kernel_args(model, i, t), Ps, Po)
    return g


def minimize_H(sign, model: MarketModel, P_plus: ArrayLike, P_minus: ArrayLike, i: int,
               t: float, *, nonneg: bool = True, tol: float = OPT_TOL,
               max_iter: int = MAX_ITER) -> tuple[NDArray[np.float64], float]:
    """Minimizer over the nonnegative orthant (or all of R^m with ``nonneg=False``).

    Returns ``(v_hat, H_star)``.  Raises :class:`SolverError` if the iteration
    cap is hit before the projected-gradient residual drops below
    ``tol * (1 + |grad H(0)|)``.
    """
    s = _sign(sign)
    Pp = _check_P(P_plus, model, "P_plus")
    Pm = _check_P(P_minus, model, "P_minus")
    Ps, Po = (Pp, Pm) if s > 0 else (Pm, Pp)
    v, val, it, res, status = _kernels.minimize_h(
        s, i, *_kernel_args(model, i, t), Ps, Po, nonneg, tol, max_iter)
    if status != _kernels.STATUS_OK:
        raise SolverError(
            f"inner minimization did not converge (regime {i}, t={t:.17g}, sign {sign}, "
            f"{it} iterations, residual {res:.3g})")
    return v, float(val)


@dataclass(frozen=True, eq=False)
class ConstrainedSolution:
    """``P_+``/``P_-`` of shape ``(N+1, ell)`` and minimizers ``(N+1, ell, m)``."""

    model: MarketModel
    grid: NDArray[np.float64]
    P_plus: NDArray[np.float64]
    P_minus: NDArray[np.float64]
    v_plus: NDArray[np.float64]
    v_minus: NDArray[np.float64]
    bounds: TruncationBounds
    radius_active: bool = False
    relaxed: bool = False

    def initial(self, i0: int) -> tuple[float, float]:
        _check_regime(self.model, i0)
        return float(self.P_plus[0, i0]), float(self.P_minus[0, i0])

    def minimizers(self, t: float, i: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Cached ``(v_plus, v_minus)`` for regime ``i``, interpolated and re-projected."""
        _check_regime(self.model, i)
        gf = ode_core.GridFunction(self.grid, self.grid[:, None])
        k, w = gf.locate(t)
        vp = (1 - w) * self.v_plus[k, i] + w * self.v_plus[min(k + 1, self.grid.size - 1), i]
        vm = (1 - w) * self.v_minus[k, i] + w * self.v_minus[min(k + 1, self.grid.size - 1), i]
        if not self.relaxed:
            vp, vm = np.maximum(vp, 0.0), np.maximum(vm, 0.0)
        return vp, vm

    def to_csv(self) -> str:
        """CSV with columns ``t, regime, P_plus, P_minus, v_plus_1..m, v_minus_1..m``."""
        m = self.model.m
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "regime", "P_plus", "P_minus"]
                   + [f"v_plus_{k + 1}" for k in range(m)] + [f"v_minus_{k + 1}" for k in range(m)])
        for k, t in enumerate(self.grid):
            for i in range(self.model.ell):
                w.writerow([_fmt(t), i + 1, _fmt(self.P_plus[k, i]), _fmt(self.P_minus[k, i])]
                           + [_fmt(x) for x in self.v_plus[k, i]]
                           + [_fmt(x) for x in self.v_minus[k, i]])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def read_constrained_csv(text: str) -> dict[str, NDArray[np.float64]]:
    rows = list(csv.DictReader(io.StringIO(text)))
    ell = max(int(r["regime"]) for r in rows)
    m = sum(1 for key in rows[0] if key.startswith("v_plus_"))
    grid = np.array([float(r["t"]) for r in rows[::ell]])
    n = grid.size
    out = {"grid": grid}
    for col in ("P_plus", "P_minus"):
        out[col] = np.array([float(r[col]) for r in rows]).reshape(n, ell)
    for side in ("plus", "minus"):
        out[f"v_{side}"] = np.array(
            [[float(r[f"v_{side}_{k + 1}"]) for k in range(m)] for r in rows]).reshape(n, ell, m)
    return out


def constrained_rhs(model: MarketModel, *, nonneg: bool = True, tol: float = OPT_TOL,
                    max_iter: int = MAX_ITER):
    """Right-hand side on the stacked state ``y = (P_+, P_-)``."""
    c = model.coefficients
    q = model.off_diagonal
    ell = model.ell

    def evaluate(t, y):
        Pp, Pm = y[:ell], y[ell:]
        if not np.all(y > 0):
            k = int(np.argmin(y))
            raise SolverError(
                f"P_{'+' if k < ell else '-'} lost positivity in regime {k % ell} at t={t:.17g}")
        s = c.segment(t)
        dPp, dPm, vp, vm, status, where = _kernels.rhs_constrained(
            c.rate[s], c.drift[s], c.cov[s], c.weights, c.loading[s], c.shock[s], q,
            Pp, Pm, nonneg, tol, max_iter)
        if status != _kernels.STATUS_OK:
            raise SolverError(f"inner minimization failed in regime {where} at t={t:.17g}")
        return dPp, dPm, vp, vm

    def rhs(t, y):
        dPp, dPm, _, _ = evaluate(t, y)
        return np.concatenate([dPp, dPm])

    rhs.evaluate = evaluate
    return rhs


def solve_constrained(model: MarketModel, n_steps: int = ode_core.DEFAULT_STEPS, *,
                      relaxed: bool = False,
                      grid: NDArray[np.float64] | None = None) -> ConstrainedSolution:
    """Backward RK4 for ``(P_+, P_-)`` with terminal value one.

    ``relaxed=True`` takes the inner infima over all of R^m instead of the
    nonnegative orthant; the pair then collapses onto the unconstrained ``P``.
    """
    grid = model.grid(n_steps) if grid is None else np.asarray(grid, dtype=float)
    ell, m = model.ell, model.m
    rhs = constrained_rhs(model, nonneg=not relaxed)
    sol = ode_core.integrate_backward(rhs, np.ones(2 * ell), grid)
    Pp, Pm = sol.values[:, :ell], sol.values[:, ell:]
    bounds = truncation_bounds(model)
    lo, hi = bounds.epsilon - BOUND_TOL, bounds.kappa + BOUND_TOL
    for name, arr in (("P_plus", Pp), ("P_minus", Pm)):
        bad = np.argwhere((arr < lo) | (arr > hi))
        if bad.size:
            k, i = bad[0]
            raise SolverError(f"{name} left [{lo:.6g}, {hi:.6g}] at node {k} "
                              f"(t={grid[k]:.17g}), regime {i}: {arr[k, i]:.6g}")
    v_plus = np.empty((grid.size, ell, m))
    v_minus = np.empty((grid.size, ell, m))
    for k, t in enumerate(grid):
        # a node's minimizer is used going forward, so read the piece to its right
        t_eval = float(np.nextafter(t, grid[-1])) if k < grid.size - 1 else t
        _, _, vp, vm = rhs.evaluate(t_eval, sol.values[k])
        v_plus[k], v_minus[k] = vp, vm
    radius = minimizer_radius(model, bounds)
    norms = max(np.linalg.norm(v_plus, axis=-1).max(), np.linalg.norm(v_minus, axis=-1).max())
    radius_active = bool(norms >= radius)
    if radius_active:
        log.warning("minimizer norm %.3g reached the radius bound %.3g", norms, radius)
    return ConstrainedSolution(model, grid, Pp, Pm, v_plus, v_minus, bounds,
                               radius_active, relaxed)
