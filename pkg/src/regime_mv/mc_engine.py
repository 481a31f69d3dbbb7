"""Monte-Carlo simulation of the controlled wealth process.

Regime switches and jump-atom arrivals are sampled exactly (all intensities
are constant in time); only the Brownian part is Euler-discretized between
events.  Interest accrues with the exact growth factor ``exp(r h)`` on each
step, so a zero portfolio reproduces riskless growth without discretization
error.

Paths are simulated in fixed-size blocks.  Block ``b`` draws all of its
randomness from ``SeedSequence(master_seed, spawn_key=(b,))``, so results do
not depend on how many worker threads process the blocks.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from numpy.typing import NDArray

from regime_mv import ode_core
from regime_mv.errors import InfeasibleError, ModelError, SolverError
from regime_mv.market_model import (ConstraintMode, MarketModel, _check_regime,
                                    check_feasibility)
from regime_mv.policy_frontier import (FeedbackPolicy, FrontierQuery, frontier_variance,
                                       lambda_star)
from regime_mv.riccati_constrained import ConstrainedSolution
from regime_mv.riccati_unconstrained import UnconstrainedSolution, check_positivity

log = logging.getLogger(__name__)

THREADS_ENV = "REGIME_MV_THREADS"
BLOCK_SIZE = 8192
MAX_FLAGGED_FRACTION = 1e-3

Policy = Callable[[NDArray, NDArray, NDArray], NDArray]


@dataclass(frozen=True)
class SimConfig:
    paths: int = 100_000
    master_seed: int = 0
    diffusion_substeps_per_unit: int = 200
    mode: ConstraintMode = ConstraintMode.UNCONSTRAINED
    workers: int | None = None  # None: read REGIME_MV_THREADS; 0: one per CPU

    def __post_init__(self):
        if self.paths < 2:
            raise ModelError("need at least two paths")
        if self.diffusion_substeps_per_unit < 1:
            raise ModelError("diffusion_substeps_per_unit must be positive")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ModelError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "mode", ConstraintMode.parse(self.mode))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
        try:
            workers = int(raw)
        except ValueError:
            raise ModelError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if workers < 0:
        raise ModelError("worker count must be >= 0")
    return workers or (os.cpu_count() or 1)


def block_rng(master_seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(block,))))


# -- the regime chain -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChainPath:
    i0: int
    times: NDArray[np.float64]
    states: NDArray[np.int64]  # state entered at each event time

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(self.times, t, side="right"))
        return self.i0 if k == 0 else int(self.states[k - 1])

    def occupation(self, horizon: float) -> NDArray[np.float64]:
        """Time spent in each regime on ``[0, horizon]``."""
        ell = int(max(self.i0, self.states.max(initial=0))) + 1
        occ = np.zeros(ell)
        edges = np.concatenate([[0.0], self.times, [horizon]])
        states = np.concatenate([[self.i0], self.states])
        np.add.at(occ, states, np.diff(edges))
        return occ


def _next_switch(rng: np.random.Generator, q: NDArray, states: NDArray, now: NDArray):
    """Competing exponential clocks, one per reachable target regime."""
    rates = q[states]  # (n, ell)
    with np.errstate(divide="ignore"):
        clocks = rng.exponential(size=rates.shape) / rates
    clocks[rates <= 0] = np.inf
    target = np.argmin(clocks, axis=1)
    return now + clocks[np.arange(states.size), target], target


def simulate_chain(model: MarketModel, i0: int, path_seed) -> ChainPath:
    """Event times and visited states of the regime chain on ``(0, T]``."""
    _check_regime(model, i0)
    rng = np.random.default_rng(path_seed)
    q = model.off_diagonal
    times, states = [], []
    t, state = 0.0, i0
    while True:
        (t_next,), (j,) = _next_switch(rng, q, np.array([state]), np.array([t]))
        if t_next > model.horizon:
            break
        t, state = float(t_next), int(j)
        times.append(t)
        states.append(state)
    return ChainPath(i0, np.array(times), np.array(states, dtype=np.int64))


# -- wealth ----------------------------------------------------------------


def _simulate_block(model: MarketModel, policy: Policy, x0: float, i0: int, n: int,
                    rng: np.random.Generator, substeps: int) -> NDArray[np.float64]:
    c = model.coefficients
    T = model.horizon
    nodes = ode_core.make_grid(T, max(1, math.ceil(substeps * T)), model.breakpoints)
    q = model.off_diagonal
    w = c.weights
    A = w.size
    # jump compensator per segment and regime
    compensator = np.einsum("a,siak->sik", w, c.loading)

    t = np.zeros(n)
    X = np.full(n, float(x0))
    reg = np.full(n, i0, dtype=np.int64)
    next_switch, switch_to = _next_switch(rng, q, reg, t)
    with np.errstate(divide="ignore"):
        atom_scale = np.where(w > 0, 1.0 / np.where(w > 0, w, 1.0), np.inf)
    next_atom = rng.exponential(size=(n, A)) * atom_scale if A else np.full((n, 0), np.inf)
    nxt = np.ones(n, dtype=np.int64)

    while True:
        active = t < T
        if not active.any():
            break
        t_node = nodes[np.minimum(nxt, nodes.size - 1)]
        t_atom = next_atom.min(axis=1) if A else np.full(n, np.inf)
        t_event = np.minimum(next_switch, t_atom)
        is_event = active & (t_event < t_node)
        t_new = np.where(active, np.where(is_event, t_event, t_node), t)
        dt = t_new - t
        seg = np.maximum(np.searchsorted(c.starts, 0.5 * (t + t_new), side="left") - 1, 0)

        pi = policy(t, X, reg)
        r = c.rate[seg, reg]
        drift = c.drift[seg, reg] - compensator[seg, reg]
        growth = np.exp(r * dt)
        X = growth * X + dt * np.einsum("nk,nk->n", pi, drift)
        if model.n1:
            dW = rng.standard_normal((n, model.n1)) * np.sqrt(dt)[:, None]
            X = X + np.einsum("nk,nkd,nd->n", pi, c.vol[seg, reg], dW)
        t = t_new
        nxt = np.where(active & ~is_event, nxt + 1, nxt)

        if not is_event.any():
            continue
        hit = np.flatnonzero(is_event)
        th = t[hit]
        # jump sizes use the predictable integrand: state and time at the left limit
        seg_h = np.maximum(np.searchsorted(c.starts, th, side="left") - 1, 0)
        pi_h = policy(th, X[hit], reg[hit])
        switching = next_switch[hit] <= t_atom[hit]

        sw = hit[switching]
        if sw.size:
            src, dst = reg[sw], switch_to[sw]
            X[sw] += np.einsum("nk,nk->n", pi_h[switching], c.shock[seg_h[switching], src, dst])
            reg[sw] = dst
            next_switch[sw], switch_to[sw] = _next_switch(rng, q, dst, t[sw])

        jp = hit[~switching]
        if jp.size:
            a = np.argmin(next_atom[jp], axis=1)
            X[jp] += np.einsum("nk,nk->n", pi_h[~switching],
                               c.loading[seg_h[~switching], reg[jp], a])
            next_atom[jp, a] = t[jp] + rng.exponential(size=jp.size) * atom_scale[a]
    return X


def simulate_wealth(model: MarketModel, policy: Policy, x0: float, i0: int,
                    config: SimConfig) -> NDArray[np.float64]:
    """Terminal wealth on ``config.paths`` independent paths.

    ``policy(t, X, i)`` receives arrays of equal length and returns an
    ``(n, m)`` array of amounts invested.  Paths that blow up are dropped with
    a warning; more than 0.1% of them is an error.
    """
    _check_regime(model, i0)
    n_blocks = -(-config.paths // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, config.paths - b * BLOCK_SIZE) for b in range(n_blocks)]

    def run(b):
        return _simulate_block(model, policy, x0, i0, sizes[b], block_rng(config.master_seed, b),
                               config.diffusion_substeps_per_unit)

    workers = min(resolve_workers(config.workers), n_blocks)
    if workers == 1:
        parts = [run(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(n_blocks)))
    X = np.concatenate(parts)
    bad = ~np.isfinite(X)
    if bad.any():
        n_bad = int(bad.sum())
        if n_bad > MAX_FLAGGED_FRACTION * X.size:
            raise SolverError(f"{n_bad} of {X.size} paths produced non-finite wealth")
        log.warning("dropping %d paths with non-finite wealth", n_bad)
        X = X[~bad]
    return X


class Stats(NamedTuple):
    mean_hat: float
    var_hat: float
    se_mean: float
    se_var: float


def estimate_stats(samples) -> Stats:
    """Sample mean, unbiased variance and their standard errors.

    The variance error uses the fourth central moment:
    ``Var(s^2) ~ (m4 - s^4 (n - 3) / (n - 1)) / n``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise ModelError("need at least two samples")
    mean = float(x.mean())
    d = x - mean
    var = float(d @ d / (n - 1))
    m4 = float(np.mean(d ** 4))
    var_of_var = max((m4 - var * var * (n - 3) / (n - 1)) / n, 0.0)
    return Stats(mean, var, math.sqrt(var / n), math.sqrt(var_of_var))


@dataclass(frozen=True)
class SimulationReport:
    mean_hat: float
    se_mean: float
    var_hat: float
    se_var: float
    target_mean: float
    closed_form_var: float
    pass_mean: bool
    pass_var: bool
    paths: int
    seed: int

    @property
    def passed(self) -> bool:
        return self.pass_mean and self.pass_var

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimulationReport":
        return cls(**json.loads(text))


def build_policy(solution, query: FrontierQuery) -> FeedbackPolicy:
    return FeedbackPolicy(solution, lambda_star(solution, query))


def verify_frontier(model: MarketModel, solution, query: FrontierQuery,
                    config: SimConfig, *, return_samples: bool = False):
    """Simulate the optimal policy for ``query`` and compare with the closed form.

    Passes when the sample mean is within three standard errors of ``z`` and
    the sample variance within ``max(3 se_var, 5%)`` of the frontier variance.
    With ``return_samples`` the terminal wealth array is returned as well.
    """
    mode = ConstraintMode.parse(query.mode)
    expected = UnconstrainedSolution if mode is ConstraintMode.UNCONSTRAINED else ConstrainedSolution
    if not isinstance(solution, expected):
        raise ModelError(f"{mode.value} mode needs a {expected.__name__}")
    feasible, diag = check_feasibility(model, mode, query.i0)
    if not feasible:
        raise InfeasibleError(f"model is infeasible in {mode.value} mode (diagnostic {diag:.3g})")
    if mode is ConstraintMode.UNCONSTRAINED:
        pos = check_positivity(solution, model, query.i0)
        if not pos.budget_pos:
            raise InfeasibleError(f"budget term {pos.values[1]:.3g} is not positive")
    policy = build_policy(solution, query)
    closed = frontier_variance(solution, query.x, query.i0, query.z, mode)
    X = simulate_wealth(model, policy, query.x, query.i0, config)
    st = estimate_stats(X)
    pass_mean = abs(st.mean_hat - query.z) <= 3.0 * st.se_mean
    pass_var = abs(st.var_hat - closed) <= max(3.0 * st.se_var, 0.05 * closed)
    report = SimulationReport(st.mean_hat, st.se_mean, st.var_hat, st.se_var, float(query.z),
                              float(closed), bool(pass_mean), bool(pass_var), int(X.size),
                              int(config.master_seed))
    return (report, X) if return_samples else report
