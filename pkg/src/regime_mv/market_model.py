"""Market primitives for the regime-switching jump-diffusion market.

A :class:`MarketModel` bundles the regime generator ``Q`` with per-regime,
piecewise-constant coefficient tables (interest rate, appreciation rate,
volatility, jump loadings) and the regime-switch shock vectors ``gamma[i, j]``.
Jump mark measures are finite and atomic: each Poisson component is a list of
:class:`Atom` objects carrying a mass and a per-regime loading table.

Regime indices are 0-based throughout the Python API.  Only the JSON file
format and the command line use 1-based labels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Mapping, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import expm

from regime_mv import ode_core
from regime_mv.errors import ModeError, ModelError

DEFAULT_DELTA = 1e-8
FEASIBILITY_TOL = 1e-12
ROW_SUM_TOL = 1e-12
LOADING_MARGIN = 1e-9


class ConstraintMode(enum.Enum):
    """Trading constraint set: all of R^m, or the nonnegative orthant."""

    UNCONSTRAINED = "unconstrained"
    NO_SHORTING = "noshort"

    @classmethod
    def parse(cls, value: "str | ConstraintMode") -> "ConstraintMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        if key in ("unconstrained", "free"):
            return cls.UNCONSTRAINED
        if key in ("noshort", "noshorting", "nonneg", "longonly"):
            return cls.NO_SHORTING
        raise ModelError(f"unknown constraint mode {value!r}")


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """Piecewise-constant function of time with left-continuous lookup.

    ``values[k]`` applies on ``(breaks[k], breaks[k+1]]``; the first piece
    also covers ``t = 0``.  ``breaks[0]`` must be zero.
    """

    breaks: NDArray[np.float64]
    values: NDArray[np.float64]

    def __post_init__(self):
        breaks = np.atleast_1d(np.asarray(self.breaks, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if breaks.ndim != 1 or breaks.size == 0:
            raise ModelError("table needs at least one breakpoint")
        if values.shape[0] != breaks.size:
            raise ModelError(
                f"table has {breaks.size} breakpoints but {values.shape[0]} values")
        if breaks[0] != 0.0:
            raise ModelError(f"first breakpoint must be t_from=0, got {breaks[0]}")
        if np.any(np.diff(breaks) <= 0):
            raise ModelError("table breakpoints must be strictly increasing")
        breaks.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: ArrayLike) -> "PiecewiseConstant":
        return cls(np.zeros(1), np.asarray(value, dtype=float)[None, ...])

    @classmethod
    def from_records(cls, records, shape: tuple = ()) -> "PiecewiseConstant":
        """Build from ``[{"t_from": ..., "value": ...}, ...]``; a bare value is a constant."""
        if not isinstance(records, (list, tuple)) or not records or not isinstance(records[0], Mapping):
            records = [{"t_from": 0.0, "value": records}]
        breaks = [float(rec["t_from"]) for rec in records]
        values = [np.asarray(rec["value"], dtype=float) for rec in records]
        for v in values:
            if v.shape != tuple(shape):
                raise ModelError(f"table value has shape {v.shape}, expected {tuple(shape)}")
        return cls(np.array(breaks), np.stack(values) if values else np.zeros((0,) + tuple(shape)))

    def to_records(self) -> list[dict]:
        return [{"t_from": float(b), "value": v.tolist()} for b, v in zip(self.breaks, self.values)]

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def __call__(self, t: float) -> NDArray[np.float64]:
        k = int(np.searchsorted(self.breaks, t, side="left")) - 1
        return self.values[max(k, 0)]


def _table(value, shape: tuple) -> PiecewiseConstant:
    if isinstance(value, PiecewiseConstant):
        if value.shape != tuple(shape):
            raise ModelError(f"table value has shape {value.shape}, expected {tuple(shape)}")
        return value
    try:
        return PiecewiseConstant.constant(np.broadcast_to(np.asarray(value, dtype=float), shape))
    except ValueError:
        raise ModelError(f"table value of shape {np.shape(value)} does not fit {tuple(shape)}") from None


@dataclass(frozen=True, eq=False)
class Atom:
    """One atom of a jump mark measure: mass ``weight`` and loadings per regime."""

    weight: float
    loading: tuple  # ell PiecewiseConstant tables of shape (m,)


@dataclass(frozen=True, eq=False)
class JumpComponent:
    atoms: tuple

    @property
    def total_weight(self) -> float:
        return float(sum(a.weight for a in self.atoms))


class Coefficients(NamedTuple):
    """Coefficient arrays sampled on every constancy segment of the model.

    Segment ``s`` covers ``(starts[s], starts[s+1]]`` (the first one includes
    zero).  Array layouts: ``rate (S, ell)``, ``drift (S, ell, m)``,
    ``vol (S, ell, m, n1)``, ``cov (S, ell, m, m)`` for ``vol vol^T``,
    ``weights (A,)`` atom masses flattened over all components,
    ``loading (S, ell, A, m)``, ``shock (S, ell, ell, m)`` with zero diagonal,
    ``sigma (S, ell, m, m)`` the full second-moment matrix.
    """

    starts: NDArray[np.float64]
    rate: NDArray[np.float64]
    drift: NDArray[np.float64]
    vol: NDArray[np.float64]
    cov: NDArray[np.float64]
    weights: NDArray[np.float64]
    loading: NDArray[np.float64]
    shock: NDArray[np.float64]
    sigma: NDArray[np.float64]

    def segment(self, t: float) -> int:
        k = int(np.searchsorted(self.starts, t, side="left")) - 1
        return max(k, 0)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """All market primitives of the regime-switching jump-diffusion market.

    Attributes
    ----------
    ell, m, n1 : int
        Number of regimes, stocks and Brownian factors.
    horizon : float
        Investment horizon ``T``.
    generator : (ell, ell) array
        Regime generator ``Q``.
    rate, drift, vol : tuple of PiecewiseConstant
        One table per regime, with value shapes ``()``, ``(m,)``, ``(m, n1)``.
    jump_components : tuple of JumpComponent
    shock : dict
        ``{(i, j): PiecewiseConstant}`` of shape ``(m,)`` for ``i != j``;
        missing pairs mean no shock.
    delta : float
        Eigenvalue floor required of the second-moment matrix.
    """

    ell: int
    m: int
    n1: int
    horizon: float
    generator: NDArray[np.float64]
    rate: tuple
    drift: tuple
    vol: tuple
    jump_components: tuple = ()
    shock: Mapping = field(default_factory=dict)
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        ell, m, n1 = int(self.ell), int(self.m), int(self.n1)
        if ell < 1 or m < 1 or n1 < 0:
            raise ModelError(f"bad dimensions ell={ell}, m={m}, n1={n1}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ModelError(f"horizon must be positive, got {self.horizon}")
        if not self.delta > 0:
            raise ModelError(f"delta must be positive, got {self.delta}")
        gen = np.array(self.generator, dtype=float)
        if gen.shape != (ell, ell):
            raise ModelError(f"generator has shape {gen.shape}, expected {(ell, ell)}")
        gen.setflags(write=False)
        object.__setattr__(self, "generator", gen)
        for name, shape in (("rate", ()), ("drift", (m,)), ("vol", (m, n1))):
            tables = tuple(getattr(self, name))
            if len(tables) != ell:
                raise ModelError(f"{name} needs {ell} regime tables, got {len(tables)}")
            object.__setattr__(self, name, tuple(_table(tb, shape) for tb in tables))
        comps = []
        for comp in self.jump_components:
            atoms = []
            for atom in comp.atoms:
                if len(atom.loading) != ell:
                    raise ModelError(f"atom loading needs {ell} regime tables")
                atoms.append(Atom(float(atom.weight), tuple(_table(tb, (m,)) for tb in atom.loading)))
            if not atoms:
                raise ModelError("jump component without atoms")
            comps.append(JumpComponent(tuple(atoms)))
        object.__setattr__(self, "jump_components", tuple(comps))
        shock = {}
        for (i, j), tb in dict(self.shock).items():
            i, j = int(i), int(j)
            if not (0 <= i < ell and 0 <= j < ell) or i == j:
                raise ModelError(f"bad shock key ({i}, {j})")
            shock[(i, j)] = _table(tb, (m,))
        object.__setattr__(self, "shock", shock)

    @classmethod
    def constant(cls, generator, rate, drift, vol, *, jumps=(), shock=None,
                 horizon: float = 1.0, delta: float = DEFAULT_DELTA) -> "MarketModel":
        """Convenience constructor for time-constant coefficients.

        ``rate`` is a scalar or ``(ell,)``; ``drift`` is ``(ell, m)`` (or ``(m,)``
        shared by all regimes); ``vol`` is ``(ell, m, n1)`` or ``(m, n1)``.
        ``jumps`` is a list of components, each a list of ``(weight, loading)``
        with loading ``(ell, m)`` or ``(m,)``.  ``shock`` is ``(ell, ell, m)`` or a
        dict ``{(i, j): vector}``.
        """
        gen = np.atleast_2d(np.asarray(generator, dtype=float))
        ell = gen.shape[0]
        drift = np.asarray(drift, dtype=float)
        drift = np.broadcast_to(drift, (ell,) + drift.shape[-1:])
        m = drift.shape[-1]
        vol = np.asarray(vol, dtype=float)
        if vol.ndim < 2:
            vol = vol.reshape(m, -1) if vol.size else np.zeros((m, 0))
        vol = np.broadcast_to(vol, (ell,) + vol.shape[-2:])
        n1 = vol.shape[-1]
        rate = np.broadcast_to(np.asarray(rate, dtype=float), (ell,))
        comps = []
        for comp in jumps:
            atoms = []
            for weight, loading in comp:
                load = np.broadcast_to(np.asarray(loading, dtype=float), (ell, m))
                atoms.append(Atom(weight, tuple(PiecewiseConstant.constant(row) for row in load)))
            comps.append(JumpComponent(tuple(atoms)))
        if shock is None:
            shock = {}
        elif not isinstance(shock, Mapping):
            arr = np.asarray(shock, dtype=float)
            shock = {(i, j): arr[i, j] for i in range(ell) for j in range(ell)
                     if i != j and np.any(arr[i, j] != 0)}
        return cls(
            ell=ell, m=m, n1=n1, horizon=float(horizon), generator=gen,
            rate=tuple(PiecewiseConstant.constant(x) for x in rate),
            drift=tuple(PiecewiseConstant.constant(x) for x in drift),
            vol=tuple(PiecewiseConstant.constant(x) for x in vol),
            jump_components=tuple(comps),
            shock={k: PiecewiseConstant.constant(np.asarray(v, dtype=float)) for k, v in shock.items()},
            delta=delta,
        )

    # -- derived data -----------------------------------------------------

    def _tables(self):
        yield from self.rate
        yield from self.drift
        yield from self.vol
        for comp in self.jump_components:
            for atom in comp.atoms:
                yield from atom.loading
        yield from self.shock.values()

    @cached_property
    def breakpoints(self) -> NDArray[np.float64]:
        """Sorted interior breakpoints of all coefficient tables, in ``(0, T)``."""
        pts = set()
        for tb in self._tables():
            pts.update(float(b) for b in tb.breaks if 0.0 < b < self.horizon)
        return np.array(sorted(pts))

    @cached_property
    def atoms(self) -> tuple:
        """All atoms flattened over the jump components."""
        return tuple(a for comp in self.jump_components for a in comp.atoms)

    @cached_property
    def coefficients(self) -> Coefficients:
        ell, m, n1 = self.ell, self.m, self.n1
        starts = np.concatenate([[0.0], self.breakpoints])
        ends = np.concatenate([self.breakpoints, [self.horizon]])
        mids = 0.5 * (starts + ends)
        S, A = starts.size, len(self.atoms)
        rate = np.zeros((S, ell))
        drift = np.zeros((S, ell, m))
        vol = np.zeros((S, ell, m, n1))
        loading = np.zeros((S, ell, A, m))
        shock = np.zeros((S, ell, ell, m))
        weights = np.array([a.weight for a in self.atoms], dtype=float).reshape(A)
        for s, tm in enumerate(mids):
            for i in range(ell):
                rate[s, i] = self.rate[i](tm)
                drift[s, i] = self.drift[i](tm)
                vol[s, i] = self.vol[i](tm)
                for a, atom in enumerate(self.atoms):
                    loading[s, i, a] = atom.loading[i](tm)
            for (i, j), tb in self.shock.items():
                shock[s, i, j] = tb(tm)
        cov = np.einsum("sikn,siln->sikl", vol, vol)
        jump_cov = np.einsum("a,siak,sial->sikl", weights, loading, loading)
        switch_cov = np.einsum("ij,sijk,sijl->sikl", self.off_diagonal, shock, shock)
        sigma = cov + jump_cov + switch_cov
        arrays = Coefficients(starts, rate, drift, vol, cov, weights, loading, shock, sigma)
        for arr in arrays:
            arr.setflags(write=False)
        return arrays

    @cached_property
    def off_diagonal(self) -> NDArray[np.float64]:
        """``Q`` with its diagonal zeroed (switching intensities only)."""
        q = self.generator.copy()
        np.fill_diagonal(q, 0.0)
        q.setflags(write=False)
        return q

    @property
    def rate_is_regime_independent(self) -> bool:
        r = self.coefficients.rate
        return bool(np.all(r == r[:, :1]))

    def grid(self, n_steps: int = ode_core.DEFAULT_STEPS) -> NDArray[np.float64]:
        return ode_core.make_grid(self.horizon, n_steps, self.breakpoints)

    def integrated_rate(self, i: int, t: float) -> float:
        """``int_t^T r^i_s ds`` evaluated exactly for the piecewise-constant table."""
        _check_time(self, t)
        c = self.coefficients
        ends = np.concatenate([c.starts[1:], [self.horizon]])
        lo = np.maximum(c.starts, t)
        return float(np.sum(c.rate[:, i] * np.clip(ends - lo, 0.0, None)))

    def discount(self, t: float) -> float:
        """``exp(-int_t^T r_s ds)`` for a regime-independent rate."""
        if not self.rate_is_regime_independent:
            raise ModeError("discount factor needs a regime-independent interest rate")
        return float(np.exp(-self.integrated_rate(0, t)))


def _check_regime(model: MarketModel, i: int) -> None:
    if not 0 <= i < model.ell:
        raise ModelError(f"regime index {i} outside 0..{model.ell - 1}")


def _check_time(model: MarketModel, t: float) -> None:
    if not (0.0 <= t <= model.horizon):
        raise ModelError(f"time {t} outside [0, {model.horizon}]")


def _check_P(P: NDArray[np.float64], model: MarketModel, name: str = "P") -> NDArray[np.float64]:
    P = np.asarray(P, dtype=float)
    if P.shape != (model.ell,):
        raise ModelError(f"{name} must have shape ({model.ell},), got {P.shape}")
    if not np.all(P > 0):
        raise ModelError(f"{name} must be componentwise positive, got {P}")
    return P


# -- validation ----------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    invariant: str
    location: str
    detail: str

    def __str__(self) -> str:
        return f"{self.invariant} at {self.location}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_model(model: MarketModel) -> ValidationReport:
    """Check the model invariants and return every violation found.

    Problems are reported as data; nothing is raised.  Regimes are labelled
    1-based in the report text.
    """
    out: list[Violation] = []
    Q = model.generator
    ell = model.ell
    for i in range(ell):
        for j in range(ell):
            if i != j and not Q[i, j] >= 0:
                out.append(Violation("generator.offdiag_nonneg", f"entry ({i + 1},{j + 1})",
                                     f"q = {Q[i, j]!r} < 0"))
        row = float(np.sum(Q[i]))
        if not abs(row) <= ROW_SUM_TOL:
            out.append(Violation("generator.row_sum", f"row {i + 1}", f"row sum != 0 ({row!r})"))

    def _finite(tb, label):
        if not np.all(np.isfinite(tb.values)):
            out.append(Violation("table.finite", label, "non-finite coefficient"))
        if np.any(tb.breaks >= model.horizon):
            out.append(Violation("table.coverage", label, f"breakpoint at or beyond T={model.horizon}"))

    for i in range(ell):
        _finite(model.rate[i], f"rate regime {i + 1}")
        _finite(model.drift[i], f"drift regime {i + 1}")
        _finite(model.vol[i], f"vol regime {i + 1}")
    for c, comp in enumerate(model.jump_components):
        if not np.isfinite(comp.total_weight):
            out.append(Violation("jump.total_weight", f"component {c + 1}", "total weight not finite"))
        for a, atom in enumerate(comp.atoms):
            where = f"component {c + 1} atom {a + 1}"
            if not (np.isfinite(atom.weight) and atom.weight >= 0):
                out.append(Violation("jump.weight_nonneg", where, f"weight {atom.weight!r}"))
            for i, tb in enumerate(atom.loading):
                _finite(tb, f"{where} regime {i + 1}")
                if np.any(tb.values <= -1 + LOADING_MARGIN):
                    out.append(Violation("jump.loading_gt_minus_one", f"{where} regime {i + 1}",
                                         f"min loading {tb.values.min()!r} <= -1"))
    for (i, j), tb in sorted(model.shock.items()):
        _finite(tb, f"shock ({i + 1},{j + 1})")
        if np.any(tb.values <= -1 + LOADING_MARGIN):
            out.append(Violation("shock.gt_minus_one", f"shock ({i + 1},{j + 1})",
                                 f"min shock {tb.values.min()!r} <= -1"))
    if out:
        # the eigenvalue check is meaningless on malformed inputs
        return ValidationReport(tuple(out))
    c = model.coefficients
    ends = np.concatenate([c.starts[1:], [model.horizon]])
    for s in range(c.starts.size):
        tm = 0.5 * (c.starts[s] + ends[s])
        for i in range(ell):
            lam = float(np.linalg.eigvalsh(c.sigma[s, i])[0])
            if lam < model.delta:
                out.append(Violation("sigma.delta_floor", f"regime {i + 1}, t={tm:g}",
                                     f"min eigenvalue {lam:.6g} < delta={model.delta:g}"))
    return ValidationReport(tuple(out))


# -- pointwise mappings --------------------------------------------------


def sigma_matrix(model: MarketModel, i: int, t: float) -> NDArray[np.float64]:
    """Second-moment matrix of regime ``i`` at time ``t``.

    Sum of the diffusion covariance, the atom-weighted jump loadings and the
    intensity-weighted switch shocks.
    """
    _check_regime(model, i)
    _check_time(model, t)
    c = model.coefficients
    return c.sigma[c.segment(t), i].copy()


def _segment_data(model: MarketModel, i: int, t: float):
    _check_regime(model, i)
    _check_time(model, t)
    c = model.coefficients
    s = c.segment(t)
    return c, s


def map_M(model: MarketModel, P: ArrayLike, i: int, t: float) -> NDArray[np.float64]:
    P = _check_P(P, model)
    c, s = _segment_data(model, i, t)
    q = model.off_diagonal[i]
    return P[i] * c.drift[s, i] + (q * P) @ c.shock[s, i]


def map_N(model: MarketModel, P: ArrayLike, i: int, t: float) -> NDArray[np.float64]:
    P = _check_P(P, model)
    c, s = _segment_data(model, i, t)
    q = model.off_diagonal[i]
    jump = np.einsum("a,ak,al->kl", c.weights, c.loading[s, i], c.loading[s, i])
    switch = np.einsum("j,jk,jl->kl", q * P, c.shock[s, i], c.shock[s, i])
    return P[i] * (c.cov[s, i] + jump) + switch


def map_R(model: MarketModel, P: ArrayLike, h: ArrayLike, i: int, t: float) -> NDArray[np.float64]:
    P = _check_P(P, model)
    h = np.asarray(h, dtype=float)
    c, s = _segment_data(model, i, t)
    q = model.off_diagonal[i]
    return (q * P * (h - h[i])) @ c.shock[s, i]


# -- psi and feasibility -------------------------------------------------


@dataclass(frozen=True, eq=False)
class PsiSolution:
    grid: NDArray[np.float64]
    psi: NDArray[np.float64]  # (N+1, ell)

    def __call__(self, t: float) -> NDArray[np.float64]:
        return ode_core.GridFunction(self.grid, self.psi)(t)


def psi_rhs(model: MarketModel):
    c = model.coefficients
    q = model.off_diagonal
    out_rate = q.sum(axis=1)

    def rhs(t, psi):
        s = c.segment(t)
        return -c.rate[s] * psi - (q @ psi - out_rate * psi)

    return rhs


def solve_psi(model: MarketModel, n_steps: int = ode_core.DEFAULT_STEPS) -> PsiSolution:
    grid = model.grid(n_steps)
    sol = ode_core.integrate_backward(psi_rhs(model), np.ones(model.ell), grid)
    return PsiSolution(sol.grid, sol.values)


@lru_cache(maxsize=256)
def _transition(q_bytes: bytes, ell: int, dt: float) -> NDArray[np.float64]:
    Q = np.frombuffer(q_bytes, dtype=float).reshape(ell, ell)
    return expm(Q * dt)


def regime_law(model: MarketModel, i0: int, grid: NDArray[np.float64]) -> NDArray[np.float64]:
    """Marginal law of the chain started in ``i0``, on every grid node ``(N+1, ell)``."""
    _check_regime(model, i0)
    p = np.zeros((grid.size, model.ell))
    p[0, i0] = 1.0
    qb = np.ascontiguousarray(model.generator).tobytes()
    for k in range(grid.size - 1):
        p[k + 1] = p[k] @ _transition(qb, model.ell, float(grid[k + 1] - grid[k]))
    return p


class Feasibility(NamedTuple):
    feasible: bool
    diagnostic: float


def check_feasibility(model: MarketModel, mode: ConstraintMode | str, i0: int,
                      n_steps: int = ode_core.DEFAULT_STEPS,
                      tol: float = FEASIBILITY_TOL) -> Feasibility:
    """Decide whether every target mean is attainable.

    Integrates, against the marginal regime law, the absolute value (or the
    positive part under no-shorting) of ``psi^i mu^i + sum_j q^{ij} psi^j gamma^{ij}``
    summed over stocks.
    """
    mode = ConstraintMode.parse(mode)
    if mode is ConstraintMode.NO_SHORTING and not model.rate_is_regime_independent:
        raise ModeError("no-shorting requires a regime-independent interest rate")
    _check_regime(model, i0)
    psi = solve_psi(model, n_steps)
    grid = psi.grid
    law = regime_law(model, i0, grid)
    c = model.coefficients
    q = model.off_diagonal
    total = 0.0
    for k in range(grid.size - 1):
        s = c.segment(0.5 * (grid[k] + grid[k + 1]))
        ends = []
        for node in (k, k + 1):
            ps = psi.psi[node]
            b = ps[:, None] * c.drift[s] + np.einsum("ij,j,ijk->ik", q, ps, c.shock[s])
            b = np.abs(b) if mode is ConstraintMode.UNCONSTRAINED else np.clip(b, 0.0, None)
            ends.append(float(law[node] @ b.sum(axis=1)))
        total += 0.5 * (grid[k + 1] - grid[k]) * (ends[0] + ends[1])
    return Feasibility(bool(total > tol), float(total))
