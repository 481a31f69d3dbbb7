"""Lagrange multipliers, optimal feedback portfolios, value functions and
efficient frontiers for both constraint modes."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from regime_mv import _kernels
from regime_mv.errors import InfeasibleError, ModeError, ModelError
from regime_mv.market_model import ConstraintMode, MarketModel, _check_regime, _check_time
from regime_mv.riccati_constrained import ConstrainedSolution
from regime_mv.riccati_unconstrained import UnconstrainedSolution

log = logging.getLogger(__name__)

DENOM_TOL = 1e-12
VAR_CLIP = 1e-12


@dataclass(frozen=True)
class FrontierQuery:
    x: float
    i0: int
    z: float
    mode: ConstraintMode = ConstraintMode.UNCONSTRAINED


@dataclass(frozen=True)
class FrontierPoint:
    mean: float
    variance: float
    std: float
    lambda_star: float
    duality_residual: float = 0.0
    clipped: bool = False


def _mode_of(sol) -> ConstraintMode:
    return ConstraintMode.NO_SHORTING if isinstance(sol, ConstrainedSolution) \
        else ConstraintMode.UNCONSTRAINED


def _require_noshort(model: MarketModel) -> None:
    if not model.rate_is_regime_independent:
        raise ModeError("no-shorting policies need a regime-independent interest rate")


def _unconstrained_coeffs(sol: UnconstrainedSolution, x: float, i0: int):
    P0, h0, K0 = sol.initial(i0)
    denom = 1.0 - P0 * h0 * h0 - K0
    return P0, h0, K0, denom


def lambda_star(sol, query: FrontierQuery) -> float:
    """Closed-form maximizer of ``lam -> V(x, i0; lam) - (lam - z)^2``."""
    mode = ConstraintMode.parse(query.mode)
    if mode is ConstraintMode.UNCONSTRAINED:
        P0, h0, K0, denom = _unconstrained_coeffs(sol, query.x, query.i0)
        if denom <= DENOM_TOL:
            raise InfeasibleError(f"1 - P0 h0^2 - K0 = {denom:.3g} is not positive")
        return (query.z - query.x * P0 * h0) / denom
    _require_noshort(sol.model)
    h0 = sol.model.discount(0.0)
    _, Pm0 = sol.initial(query.i0)
    denom = 1.0 - h0 * h0 * Pm0
    if denom <= DENOM_TOL:
        raise InfeasibleError(f"1 - h0^2 P_-0 = {denom:.3g} is not positive")
    return (query.z - query.x * h0 * Pm0) / denom


def feedback_unconstrained(sol: UnconstrainedSolution, t: float, X: float, i: int,
                           lam: float) -> NDArray[np.float64]:
    """Optimal unconstrained portfolio at ``(t, X, i)`` for multiplier ``lam``."""
    model = sol.model
    _check_regime(model, i)
    _check_time(model, t)
    P, h, _ = sol.at(t)
    c = model.coefficients
    s = c.segment(t)
    M, N = _kernels.build_MN(i, P, c.drift[s], c.cov[s], c.weights, c.loading[s], c.shock[s],
                             model.off_diagonal)
    R = _kernels.build_R(i, P, h, c.shock[s], model.off_diagonal)
    pi, ok = _kernels.chol_solve(N, M * (X - lam * h[i]) - lam * R)
    if not ok:
        raise ModelError(f"second-moment matrix of regime {i} not positive definite at t={t}")
    return -pi


def feedback_noshort(sol: ConstrainedSolution, t: float, X: float, i: int,
                     lam: float) -> NDArray[np.float64]:
    """Optimal no-shorting portfolio: ``v_+ y^+ + v_- y^-`` with ``y = X - lam h_t``."""
    _require_noshort(sol.model)
    _check_time(sol.model, t)
    y = X - lam * sol.model.discount(t)
    vp, vm = sol.minimizers(t, i)
    return vp * max(y, 0.0) + vm * max(-y, 0.0)


def value_function(sol, x: float, i0: int, lam: float,
                   mode: ConstraintMode | str | None = None) -> float:
    """Optimal value ``V(x, i0; lam)`` of the auxiliary quadratic problem."""
    mode = _mode_of(sol) if mode is None else ConstraintMode.parse(mode)
    if mode is ConstraintMode.UNCONSTRAINED:
        P0, h0, K0 = sol.initial(i0)
        V = P0 * (x - lam * h0) ** 2 + lam * lam * K0
    else:
        _require_noshort(sol.model)
        Pp0, Pm0 = sol.initial(i0)
        y = x - lam * sol.model.discount(0.0)
        V = Pp0 * max(y, 0.0) ** 2 + Pm0 * max(-y, 0.0) ** 2
    return max(V, 0.0) if V >= -VAR_CLIP else V


def frontier_variance(sol, x: float, i0: int, z: float, mode: ConstraintMode | str) -> float:
    """Minimal variance for target mean ``z`` (unclipped)."""
    mode = ConstraintMode.parse(mode)
    if mode is ConstraintMode.UNCONSTRAINED:
        P0, h0, K0, denom = _unconstrained_coeffs(sol, x, i0)
        if denom <= DENOM_TOL:
            raise InfeasibleError(f"1 - P0 h0^2 - K0 = {denom:.3g} is not positive")
        a = P0 * h0 * h0 + K0
        return a / denom * (z - P0 * h0 * x / a) ** 2 + P0 * K0 * x * x / a
    _require_noshort(sol.model)
    h0 = sol.model.discount(0.0)
    _, Pm0 = sol.initial(i0)
    denom = 1.0 - h0 * h0 * Pm0
    if denom <= DENOM_TOL:
        raise InfeasibleError(f"1 - h0^2 P_-0 = {denom:.3g} is not positive")
    return Pm0 / denom * (h0 * z - x) ** 2


def min_noshort_mean(model: MarketModel, x: float) -> float:
    """Smallest admissible target under no-shorting: riskless growth ``x / h0``."""
    return x / model.discount(0.0)


def frontier(sol, model: MarketModel, x: float, i0: int, mode: ConstraintMode | str,
             z_values: Sequence[float]) -> list[FrontierPoint]:
    """Efficient frontier points for each target mean in ``z_values``.

    Each point carries the residual of the duality identity
    ``Var = V(x, i0; lam*) - (lam* - z)^2``.
    """
    mode = ConstraintMode.parse(mode)
    if _mode_of(sol) is not mode:
        raise ModeError(f"solution type does not match mode {mode.value}")
    _check_regime(model, i0)
    if mode is ConstraintMode.NO_SHORTING:
        _require_noshort(model)
        z_min = min_noshort_mean(model, x)
        slack = 1e-12 * max(1.0, abs(z_min))
        for z in z_values:
            if z < z_min - slack:
                raise InfeasibleError(
                    f"target mean {z} below the riskless level {z_min} under no-shorting")
    points = []
    for z in z_values:
        z = float(z)
        lam = lambda_star(sol, FrontierQuery(x, i0, z, mode))
        var = frontier_variance(sol, x, i0, z, mode)
        dual = value_function(sol, x, i0, lam, mode) - (lam - z) ** 2
        clipped = False
        if var < 0.0:
            if var < -VAR_CLIP:
                raise InfeasibleError(f"negative frontier variance {var:.3g} at z={z}")
            log.info("clipping variance %.3g to zero at z=%g", var, z)
            var, clipped = 0.0, True
        points.append(FrontierPoint(z, var, float(np.sqrt(var)), lam, dual - var, clipped))
    return points


def frontier_csv(points: Sequence[FrontierPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["z", "variance", "std", "lambda_star"])
    for p in points:
        w.writerow([format(v, ".17g") for v in (p.mean, p.variance, p.std, p.lambda_star)])
    return buf.getvalue()


def read_frontier_csv(text: str) -> list[dict[str, float]]:
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(io.StringIO(text))]


def frontier_json(points: Sequence[FrontierPoint], **meta) -> str:
    rows = [{"z": p.mean, "variance": p.variance, "std": p.std, "lambda_star": p.lambda_star,
             "duality_residual": p.duality_residual} for p in points]
    return json.dumps({**meta, "points": rows}, indent=2)


class FeedbackPolicy:
    """Vectorized optimal feedback ``pi(t, X, i)`` for Monte-Carlo simulation.

    The per-node coefficients are precomputed so that a call over many paths
    costs a few array operations.  Unconstrained: ``pi = A^i(t) X + lam B^i(t)``
    with ``A = -N^{-1} M`` and ``B = N^{-1} (M h^i + R)``.  No-shorting:
    ``pi = v_+ y^+ + v_- y^-`` with ``y = X - lam h_t``.
    """

    def __init__(self, sol, lam: float):
        self.sol = sol
        self.lam = float(lam)
        self.model = model = sol.model
        self.grid = sol.grid
        self.mode = _mode_of(sol)
        ell, m = model.ell, model.m
        c = model.coefficients
        q = model.off_diagonal
        n = self.grid.size
        if self.mode is ConstraintMode.UNCONSTRAINED:
            A = np.empty((ell, n, m))
            B = np.empty((ell, n, m))
            for k, t in enumerate(self.grid):
                s = c.segment(float(np.nextafter(t, self.grid[-1])) if k < n - 1 else t)
                P, h = sol.P[k], sol.h[k]
                for i in range(ell):
                    M, N = _kernels.build_MN(i, P, c.drift[s], c.cov[s], c.weights,
                                             c.loading[s], c.shock[s], q)
                    R = _kernels.build_R(i, P, h, c.shock[s], q)
                    a, _ = _kernels.chol_solve(N, M)
                    b, _ = _kernels.chol_solve(N, M * h[i] + R)
                    A[i, k], B[i, k] = -a, b
            self._first, self._second = A, B
        else:
            _require_noshort(model)
            self._first = np.transpose(sol.v_plus, (1, 0, 2)).copy()
            self._second = np.transpose(sol.v_minus, (1, 0, 2)).copy()
            self.discount = np.array([model.discount(t) for t in self.grid])

    def _interp(self, table, t, i):
        g = self.grid
        k = np.clip(np.searchsorted(g, t, side="right") - 1, 0, g.size - 2)
        w = ((t - g[k]) / (g[k + 1] - g[k]))[:, None]
        return (1.0 - w) * table[i, k] + w * table[i, k + 1], k, w[:, 0]

    def __call__(self, t, X, i) -> NDArray[np.float64]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        X = np.atleast_1d(np.asarray(X, dtype=float))
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        t = np.broadcast_to(t, X.shape)
        i = np.broadcast_to(i, X.shape)
        first, k, w = self._interp(self._first, t, i)
        second, _, _ = self._interp(self._second, t, i)
        if self.mode is ConstraintMode.UNCONSTRAINED:
            return first * X[:, None] + self.lam * second
        h = (1.0 - w) * self.discount[k] + w * self.discount[k + 1]
        y = X - self.lam * h
        first = np.maximum(first, 0.0)
        second = np.maximum(second, 0.0)
        return first * np.maximum(y, 0.0)[:, None] + second * np.maximum(-y, 0.0)[:, None]
