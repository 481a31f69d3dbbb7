"""Reference markets used by the tests, the acceptance suite and the demos."""

from __future__ import annotations

import numpy as np

from regime_mv.market_model import Atom, JumpComponent, MarketModel, PiecewiseConstant


def scalar_model(rate: float = 0.02, drift: float = 0.1, vol: float = 0.2,
                 horizon: float = 1.0) -> MarketModel:
    """One regime, one stock, no jumps; ``P`` has a closed form."""
    return MarketModel.constant([[0.0]], rate, [[drift]], [[[vol]]], horizon=horizon)


def shock_model() -> MarketModel:
    """Two regimes, two stocks, jumps and regime-switch shocks.

    Regime 1 is a calm bull market; regime 2 a volatile bear market in which
    the unconstrained investor shorts the first stock, so the no-shorting
    constraint binds there.  Leaving regime 1 knocks both stocks down, leaving
    regime 2 lifts them.  The interest rate does not depend on the regime, so
    both constraint modes apply.
    """
    generator = [[-0.8, 0.8],
                 [1.2, -1.2]]
    drift = [[0.12, 0.09],
             [-0.12, 0.06]]
    vol = [[[0.20, 0.00], [0.06, 0.18]],
           [[0.30, 0.00], [0.10, 0.25]]]
    jumps = [[(0.5, [[-0.05, -0.03], [-0.08, -0.05]]),
              (0.3, [[0.04, 0.02], [0.04, 0.02]])]]
    shock = {(0, 1): [-0.10, -0.05], (1, 0): [0.08, 0.03]}
    return MarketModel.constant(generator, 0.03, drift, vol, jumps=jumps, shock=shock, horizon=1.0)


def random_model(rng: np.random.Generator, *, ell: int | None = None, m: int | None = None,
                 shocks: bool = True, common_rate: bool | None = None,
                 jumps: bool | None = None, breakpoint: bool | None = None) -> MarketModel:
    """A random market satisfying the nondegeneracy assumption by construction.

    Volatility matrices are lower triangular with diagonal at least 0.1, so the
    second-moment matrix is bounded below by ``0.01 I``.
    """
    ell = int(rng.integers(2, 4)) if ell is None else ell
    m = int(rng.integers(1, 3)) if m is None else m
    common_rate = bool(rng.random() < 0.5) if common_rate is None else common_rate
    jumps = bool(rng.random() < 0.7) if jumps is None else jumps
    breakpoint = bool(rng.random() < 0.3) if breakpoint is None else breakpoint
    T = float(rng.uniform(0.5, 2.0))

    Q = rng.uniform(0.2, 2.0, size=(ell, ell))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))

    def vol():
        L = np.tril(rng.uniform(-0.1, 0.1, size=(m, m)), -1)
        L[np.diag_indices(m)] = rng.uniform(0.1, 0.35, size=m)
        return L

    def drift():
        return rng.uniform(-0.05, 0.15, size=m)

    def table(make):
        if breakpoint:
            return PiecewiseConstant(np.array([0.0, 0.5 * T]), np.stack([make(), make()]))
        return PiecewiseConstant.constant(make())

    if common_rate:
        r = rng.uniform(0.0, 0.06)
        rates = (PiecewiseConstant.constant(r),) * ell
    else:
        rates = tuple(PiecewiseConstant.constant(rng.uniform(0.0, 0.06)) for _ in range(ell))
    comps = []
    if jumps:
        atoms = tuple(Atom(float(rng.uniform(0.1, 1.0)),
                           tuple(PiecewiseConstant.constant(rng.uniform(-0.2, 0.2, size=m))
                                 for _ in range(ell)))
                      for _ in range(int(rng.integers(1, 3))))
        comps.append(JumpComponent(atoms))
    shock = {}
    if shocks:
        shock = {(i, j): PiecewiseConstant.constant(rng.uniform(-0.3, 0.3, size=m))
                 for i in range(ell) for j in range(ell) if i != j}
    return MarketModel(
        ell=ell, m=m, n1=m, horizon=T, generator=Q, rate=rates,
        drift=tuple(table(drift) for _ in range(ell)),
        vol=tuple(table(vol) for _ in range(ell)),
        jump_components=tuple(comps), shock=shock,
    )
