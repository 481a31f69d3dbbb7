import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from regime_mv import benchmarks
from regime_mv.errors import ModeError, ModelError
from regime_mv.market_model import (ConstraintMode, MarketModel, PiecewiseConstant,
                                    check_feasibility, map_M, map_N, map_R, psi_rhs,
                                    regime_law, sigma_matrix, solve_psi, validate_model)
from regime_mv.riccati_unconstrained import solve


def two_regime_scalar(*, q12=0.5, q21=0.5, mu=(0.1, 0.05), vol=(0.2, 0.3), gamma12=0.2,
                      gamma21=0.0, rate=0.0, jumps=()):
    shock = {(0, 1): [gamma12], (1, 0): [gamma21]}
    return MarketModel.constant([[-q12, q12], [q21, -q21]], rate, [[mu[0]], [mu[1]]],
                                [[[vol[0]]], [[vol[1]]]], jumps=jumps, shock=shock)


class TestPiecewiseConstant:
    def test_left_continuous_lookup(self):
        tb = PiecewiseConstant(np.array([0.0, 0.5]), np.array([1.0, 2.0]))
        assert tb(0.0) == 1.0
        assert tb(0.5) == 1.0  # value on (0, 0.5]
        assert tb(np.nextafter(0.5, 1.0)) == 2.0
        assert tb(1.0) == 2.0

    @pytest.mark.parametrize("breaks", [[0.1], [0.0, 0.0], [0.0, 0.5, 0.4]])
    def test_bad_breaks(self, breaks):
        with pytest.raises(ModelError):
            PiecewiseConstant(np.array(breaks), np.zeros(len(breaks)))

    def test_records_roundtrip(self):
        tb = PiecewiseConstant(np.array([0.0, 0.25]), np.array([[1.0, 2.0], [3.0, 4.0]]))
        back = PiecewiseConstant.from_records(tb.to_records(), (2,))
        assert np.array_equal(back.breaks, tb.breaks)
        assert np.array_equal(back.values, tb.values)

    def test_bare_value_is_constant(self):
        tb = PiecewiseConstant.from_records([0.1, 0.2], (2,))
        assert np.array_equal(tb(0.7), [0.1, 0.2])

    def test_shape_mismatch(self):
        with pytest.raises(ModelError):
            PiecewiseConstant.from_records([{"t_from": 0.0, "value": [1.0]}], (2,))


class TestValidate:
    def test_scalar_is_valid(self, scalar):
        assert validate_model(scalar).ok
        assert np.isclose(sigma_matrix(scalar, 0, 0.3)[0, 0], 0.04)

    def test_shock_model_is_valid(self, shock):
        assert validate_model(shock).ok

    def test_negative_offdiagonal_row(self):
        model = MarketModel.constant([[0.5, -0.5], [1.0, -1.0]], 0.0, [[0.1], [0.1]],
                                     [[[0.2]], [[0.2]]])
        report = validate_model(model)
        assert not report.ok
        assert any(v.invariant == "generator.offdiag_nonneg" and "(1,2)" in v.location
                   for v in report)

    def test_row_sum(self):
        model = MarketModel.constant([[-0.5, 0.4], [1.0, -1.0]], 0.0, [[0.1], [0.1]],
                                     [[[0.2]], [[0.2]]])
        report = validate_model(model)
        assert [v.invariant for v in report] == ["generator.row_sum"]
        assert report.violations[0].location == "row 1"
        assert "row sum != 0" in str(report.violations[0])

    def test_sigma_floor_absorbing_second_regime(self):
        # regime 1 gets its variance from the shock alone; regime 2 has none
        model = MarketModel.constant([[-1.0, 1.0], [0.0, 0.0]], 0.0, [[0.1], [0.1]],
                                     [[[0.0]], [[0.0]]], shock={(0, 1): [0.2]})
        assert np.isclose(sigma_matrix(model, 0, 0.5)[0, 0], 0.04)
        report = validate_model(model)
        assert len(report) == 1
        v = report.violations[0]
        assert v.invariant == "sigma.delta_floor" and v.location.startswith("regime 2")

    def test_sigma_floor_checked_per_segment(self):
        vol = PiecewiseConstant(np.array([0.0, 0.5]), np.array([[[0.2]], [[0.0]]]))
        model = MarketModel(ell=1, m=1, n1=1, horizon=1.0, generator=[[0.0]],
                            rate=(0.0,), drift=([0.1],), vol=(vol,))
        report = validate_model(model)
        assert len(report) == 1 and "t=0.75" in report.violations[0].location

    def test_jump_and_shock_bounds(self):
        model = MarketModel.constant([[-1.0, 1.0], [1.0, -1.0]], 0.0, [[0.1], [0.1]],
                                     [[[0.2]], [[0.2]]], jumps=[[(-0.1, [-1.5])]],
                                     shock={(0, 1): [-1.0]})
        names = {v.invariant for v in validate_model(model)}
        assert names == {"jump.weight_nonneg", "jump.loading_gt_minus_one", "shock.gt_minus_one"}

    def test_non_finite(self):
        model = MarketModel.constant([[0.0]], np.nan, [[0.1]], [[[0.2]]])
        assert [v.invariant for v in validate_model(model)] == ["table.finite"]

    def test_breakpoint_beyond_horizon(self):
        rate = PiecewiseConstant(np.array([0.0, 2.0]), np.array([0.0, 0.1]))
        model = MarketModel(ell=1, m=1, n1=1, horizon=1.0, generator=[[0.0]],
                            rate=(rate,), drift=([0.1],), vol=([[0.2]],))
        assert [v.invariant for v in validate_model(model)] == ["table.coverage"]

    @pytest.mark.parametrize("kwargs", [
        dict(ell=0), dict(horizon=-1.0), dict(delta=0.0), dict(generator=[[0.0, 0.0]]),
        dict(drift=([0.1, 0.2],)),
    ])
    def test_structural_errors(self, kwargs):
        base = dict(ell=1, m=1, n1=1, horizon=1.0, generator=[[0.0]], rate=(0.0,),
                    drift=([0.1],), vol=([[0.2]],))
        base.update(kwargs)
        with pytest.raises(ModelError):
            MarketModel(**base)

    def test_bad_shock_key(self):
        with pytest.raises(ModelError):
            MarketModel.constant([[-1.0, 1.0], [1.0, -1.0]], 0.0, [[0.1], [0.1]],
                                 [[[0.2]], [[0.2]]], shock={(0, 0): [0.1]})


class TestMappings:
    def test_sigma_atom_and_shock(self):
        model = MarketModel.constant([[-0.5, 0.5], [0.0, 0.0]], 0.0, [[0.1], [0.1]],
                                     [[[0.0]], [[0.2]]], jumps=[[(2.0, [0.1])]],
                                     shock={(0, 1): [0.2]})
        assert math.isclose(sigma_matrix(model, 0, 0.2)[0, 0], 2 * 0.01 + 0.5 * 0.04, rel_tol=1e-14)

    def test_sigma_independent_script(self, rng):
        model = benchmarks.random_model(rng, ell=3, m=2, jumps=True)
        c = model.coefficients
        Q = model.generator
        for i in range(3):
            t = 0.3 * model.horizon
            vol = model.vol[i](t)
            expect = np.zeros((2, 2))
            for a in range(2):
                for b in range(2):
                    expect[a, b] = sum(vol[a, k] * vol[b, k] for k in range(model.n1))
                    for atom in model.atoms:
                        beta = atom.loading[i](t)
                        expect[a, b] += atom.weight * beta[a] * beta[b]
                    for j in range(3):
                        if j != i:
                            g = model.shock[(i, j)](t)
                            expect[a, b] += Q[i, j] * g[a] * g[b]
            S = sigma_matrix(model, i, t)
            assert np.allclose(S, expect, rtol=1e-13, atol=1e-15)
            assert np.abs(S - S.T).max() <= 1e-14
        assert c.sigma.shape == (c.starts.size, 3, 2, 2)

    def test_single_regime_identities(self, scalar):
        assert np.allclose(map_M(scalar, [2.0], 0, 0.5), [0.2])
        assert np.allclose(map_N(scalar, [2.0], 0, 0.5), 2.0 * sigma_matrix(scalar, 0, 0.5))
        assert np.array_equal(map_R(scalar, [2.0], [0.7], 0, 0.5), [0.0])

    def test_hand_values(self):
        model = two_regime_scalar()
        assert math.isclose(map_M(model, [1.0, 2.0], 0, 0.1)[0], 0.3, rel_tol=1e-14)
        assert math.isclose(map_R(model, [1.0, 2.0], [1.0, 1.1], 0, 0.1)[0], 0.02, rel_tol=1e-12)
        assert math.isclose(map_N(model, [1.0, 2.0], 0, 0.1)[0, 0], 0.04 + 0.5 * 2 * 0.04,
                            rel_tol=1e-14)

    def test_nonpositive_P_rejected(self, shock):
        with pytest.raises(ModelError):
            map_N(shock, [1.0, 0.0], 0, 0.1)

    def test_bad_regime_and_time(self, shock):
        with pytest.raises(ModelError):
            sigma_matrix(shock, 2, 0.1)
        with pytest.raises(ModelError):
            sigma_matrix(shock, 0, 1.5)

    @given(seed=st.integers(0, 2 ** 32 - 1), lo=st.floats(0.05, 1.0), span=st.floats(1.0, 5.0))
    def test_N_eigenvalue_floor(self, seed, lo, span):
        rng = np.random.default_rng(seed)
        model = benchmarks.random_model(rng)
        P = rng.uniform(lo, lo * span, size=model.ell)
        for i in range(model.ell):
            t = float(rng.uniform(0, model.horizon))
            N = map_N(model, P, i, t)
            delta = np.linalg.eigvalsh(sigma_matrix(model, i, t))[0]
            assert np.array_equal(N, N.T) or np.abs(N - N.T).max() < 1e-15
            assert np.linalg.eigvalsh(N)[0] >= P.min() * delta * (1 - 1e-10)


class TestPsi:
    def test_regime_independent_rate(self, shock):
        psi = solve_psi(shock)
        expect = np.exp(0.03 * (1.0 - psi.grid))
        assert np.abs(psi.psi - expect[:, None]).max() < 1e-12

    def test_zero_rate(self):
        model = two_regime_scalar(q12=1.3, q21=0.4)
        assert np.abs(solve_psi(model).psi - 1.0).max() < 1e-14

    def test_matches_fine_euler(self):
        model = MarketModel.constant([[-1.0, 1.0], [1.0, -1.0]], [0.01, 0.05], [[0.1], [0.1]],
                                     [[[0.2]], [[0.2]]])
        A = -(np.diag([0.01, 0.05]) + np.array([[-1.0, 1.0], [1.0, -1.0]]))
        n = 1_000_000
        dt = 1.0 / n
        # backward Euler-in-time for d psi/dt = A psi, vectorized via repeated squaring of the step matrix
        step = np.eye(2) - dt * A
        psi_euler = np.linalg.matrix_power(step, n) @ np.ones(2)
        psi = solve_psi(model).psi[0]
        assert np.abs(psi - psi_euler).max() < 1e-8
        assert np.abs(psi - expm(-A) @ np.ones(2)).max() < 1e-12

    def test_equals_P_times_h_without_drift(self):
        # with mu = gamma = 0 the quadratic term vanishes and P h solves the psi system
        Q = [[-1.0, 0.6, 0.4], [0.3, -0.5, 0.2], [1.0, 1.0, -2.0]]
        model = MarketModel.constant(Q, [0.01, 0.04, 0.07], [[0.0]] * 3, [[[0.2]], [[0.3]], [[0.1]]])
        sol = solve(model)
        psi = solve_psi(model)
        assert np.abs(psi.psi - sol.P * sol.h).max() < 1e-9

    def test_finite_difference_residual(self, rng):
        model = benchmarks.random_model(rng, common_rate=False)
        psi = solve_psi(model)
        rhs = psi_rhs(model)
        g = psi.grid
        for k in range(1, g.size - 2, 97):
            d = (psi.psi[k + 1] - psi.psi[k]) / (g[k + 1] - g[k])
            assert np.abs(d - rhs(g[k], psi.psi[k])).max() <= 1e-4

    def test_positive(self, rng):
        assert np.all(solve_psi(benchmarks.random_model(rng, common_rate=False)).psi > 0)


class TestFeasibility:
    def test_regime_law_matches_expm(self, shock):
        g = shock.grid(200)
        law = regime_law(shock, 1, g)
        assert np.allclose(law.sum(axis=1), 1.0, atol=1e-14)
        assert np.allclose(law[-1], expm(shock.generator.T * 1.0)[:, 1], atol=1e-13)

    def test_zero_drift_no_shock(self):
        model = two_regime_scalar(mu=(0.0, 0.0), gamma12=0.0)
        for mode in ConstraintMode:
            feasible, diag = check_feasibility(model, mode, 0)
            assert not feasible and diag == 0.0

    def test_scalar_constant_integrand(self, scalar_r0):
        feasible, diag = check_feasibility(scalar_r0, "unconstrained", 0)
        assert feasible and math.isclose(diag, 0.1, rel_tol=1e-12)

    def test_negative_drift(self):
        model = benchmarks.scalar_model(drift=-0.1)
        assert not check_feasibility(model, ConstraintMode.NO_SHORTING, 0).feasible
        assert check_feasibility(model, ConstraintMode.UNCONSTRAINED, 0).feasible

    def test_shock_only_feasible(self):
        # no drift at all, but the shock has nonzero compensator in regime 1
        model = two_regime_scalar(mu=(0.0, 0.0), gamma12=0.2)
        feasible, diag = check_feasibility(model, "unconstrained", 0)
        assert feasible and diag > 0

    def test_noshort_needs_common_rate(self):
        model = two_regime_scalar(rate=[0.01, 0.02])
        with pytest.raises(ModeError):
            check_feasibility(model, "noshort", 0)

    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_mode_monotone(self, seed):
        model = benchmarks.random_model(np.random.default_rng(seed), common_rate=True)
        i0 = seed % model.ell
        ns = check_feasibility(model, "noshort", i0, n_steps=200)
        un = check_feasibility(model, "unconstrained", i0, n_steps=200)
        assert ns.diagnostic <= un.diagnostic + 1e-15
        if ns.feasible:
            assert un.feasible


def test_discount_requires_common_rate():
    model = two_regime_scalar(rate=[0.01, 0.02])
    assert not model.rate_is_regime_independent
    with pytest.raises(ModeError):
        model.discount(0.0)
    assert math.isclose(model.integrated_rate(1, 0.5), 0.01, rel_tol=1e-12)


def test_grid_contains_breakpoints():
    rate = PiecewiseConstant(np.array([0.0, 1.0 / 3.0]), np.array([0.0, 0.1]))
    model = MarketModel(ell=1, m=1, n1=1, horizon=1.0, generator=[[0.0]],
                        rate=(rate,), drift=([0.1],), vol=([[0.2]],))
    g = model.grid(100)
    assert 1.0 / 3.0 in g and g[0] == 0.0 and g[-1] == 1.0
    assert np.all(np.diff(g) > 0)
