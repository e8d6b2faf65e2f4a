"""Grid solver: oracle solutions, scheme invariants, probe, and MC cross-check."""

import math

import numpy as np
import pytest

from delaysvi import (
    ConstantPolicy,
    GridSpec,
    PolicyFamily,
    PolynomialCost,
    ReducedScenario,
    SolverConfig,
    hamiltonian,
    solve_hjb,
)
from delaysvi.convex import HalfspaceIndicator, ZeroFunction
from delaysvi.errors import ValidationError
from delaysvi.hjb import cfl_numbers, compare_mc, constant_history_y, viscosity_probe
from delaysvi.scenario import PathSegment

from conftest import make_scenario


def grid1(m_time=50, x_lo=-1.0, x_hi=1.0, nx=41, y_lo=-1.0, y_hi=1.0, ny=5):
    return GridSpec(
        m_time=m_time,
        x_lo=(x_lo,),
        x_hi=(x_hi,),
        nx=(nx,),
        y_lo=(y_lo,),
        y_hi=(y_hi,),
        ny=(ny,),
    )


def time_cost_scenario():
    """b = sigma = 0, f = 1, terminal = 0, unconstrained."""
    return make_scenario(
        ZeroFunction(1), running=PolynomialCost(d=1, m=1, c0=1.0)
    )


def steering():
    return make_scenario(
        ZeroFunction(1),
        bu=[[1.0]],
        controls=[[-1.0], [1.0]],
        terminal=PolynomialCost(d=1, cx=[1.0]),
    )


class TestHamiltonian:
    def test_all_zero(self):
        scn = make_scenario(ZeroFunction(1))
        assert hamiltonian(0.0, [0.5], [0.0], [0.0], [0.0], [2.0], [[3.0]], scn) == 0.0

    def test_direct_arithmetic(self):
        # b = 1, q = 2, sigma = 1, Xmat = 3, f = 0 -> 2 + 1.5 = 3.5
        scn = make_scenario(ZeroFunction(1), b0=[1.0], sig0=[[1.0]])
        val = hamiltonian(0.0, [0.0], [0.0], [0.0], [0.0], [2.0], [[3.0]], scn)
        assert val == pytest.approx(3.5, abs=1e-15)

    def test_cost_sign(self):
        scn = make_scenario(
            ZeroFunction(1), running=PolynomialCost(d=1, m=1, c0=5.0)
        )
        val = hamiltonian(0.0, [0.0], [0.0], [0.0], [0.0], [0.0], [[0.0]], scn)
        assert val == -5.0


class TestSolve:
    def test_pure_time_integration(self):
        red = ReducedScenario(base=time_cost_scenario(), zeta="zero")
        field = solve_hjb(red, grid1(), eps=0.1)
        times = field.layer_times()
        # x = 0 is a grid node (index 20): transport vanishes there and the
        # value is exactly the remaining time; with no y-dependence anywhere
        # the same holds at every node.
        for m, t in enumerate(times):
            np.testing.assert_allclose(field.values[m], 1.0 - t, atol=1e-12)

    def test_stationary_terminal(self):
        scn = make_scenario(ZeroFunction(1), terminal=PolynomialCost(d=1, cx=[1.0]))
        red = ReducedScenario(base=scn, zeta="identity")  # ydrift = x - x = 0
        field = solve_hjb(red, grid1(), eps=0.1)
        for m in range(field.values.shape[0]):
            np.testing.assert_array_equal(field.values[m], field.values[-1])

    def test_steering_characteristics_oracle(self):
        red = ReducedScenario(base=steering(), zeta="identity")
        grid = grid1(m_time=100, nx=51)
        field = solve_hjb(red, grid, eps=0.1)
        xs = grid.x_axes()[0]
        times = field.layer_times()
        dx = grid.dx()[0]
        dt = grid.dt(1.0)
        # V = x - (T - s); first-order upwind is exact on linear data, so the
        # interior error is far below the O(dx + dt) budget.
        sub = slice(5, 46)
        for m in (0, 50, 99):
            want = xs[sub] - (1.0 - times[m])
            got = field.values[m][sub, 2]
            assert np.max(np.abs(got - want)) <= 2 * (dx + dt)

    def test_terminal_layer_bitwise(self):
        scn = make_scenario(ZeroFunction(1), terminal=PolynomialCost(d=1, qx=[[1.0]]))
        red = ReducedScenario(base=scn, zeta="zero")
        grid = grid1()
        field = solve_hjb(red, grid, eps=0.1)
        from delaysvi.hjb import terminal_values

        np.testing.assert_array_equal(field.values[-1], terminal_values(scn.terminal_cost, grid))

    def test_comparison_and_constant_shift(self):
        base = steering()
        red1 = ReducedScenario(base=base, zeta="identity")
        shifted = make_scenario(
            ZeroFunction(1),
            bu=[[1.0]],
            controls=[[-1.0], [1.0]],
            terminal=PolynomialCost(d=1, c0=1.0, cx=[1.0]),
        )
        red2 = ReducedScenario(base=shifted, zeta="identity")
        grid = grid1()
        f1 = solve_hjb(red1, grid, eps=0.1)
        f2 = solve_hjb(red2, grid, eps=0.1)
        assert np.all(f1.values <= f2.values + 1e-15)
        np.testing.assert_allclose(f2.values, f1.values + 1.0, atol=5e-13)

    def test_monotone_weights_nonnegative(self):
        red = ReducedScenario(base=steering(), zeta="identity")
        field = solve_hjb(red, grid1(), eps=0.1)
        assert field.cfl["min_diag_weight"] >= 0.0

    def test_cfl_violation_rejected(self):
        scn = make_scenario(ZeroFunction(1), sig0=[[1.0]])
        red = ReducedScenario(base=scn, zeta="zero")
        # diffusion 1 on dx = 0.05 needs dt << 1/400; 10 layers cannot satisfy it
        with pytest.raises(ValidationError, match="CFL"):
            solve_hjb(red, grid1(m_time=10), eps=0.1)

    def test_box_margin_rejected(self, half_line):
        scn = make_scenario(half_line)
        red = ReducedScenario(base=scn, zeta="identity")
        # boundary at 0 sits one node away from the left face
        bad = grid1(x_lo=-0.05, x_hi=2.0, nx=42)
        with pytest.raises(ValidationError, match="box"):
            solve_hjb(red, bad, eps=0.2)

    def test_eps_refinement_cauchy(self, half_line):
        scn = make_scenario(
            half_line,
            bu=[[1.0]],
            controls=[[-1.0], [1.0]],
            sig0=[[0.2]],
            terminal=PolynomialCost(d=1, cx=[1.0]),
        )
        red = ReducedScenario(base=scn, zeta="identity")
        grid = grid1(m_time=400, x_lo=-0.6, x_hi=2.0, nx=53, ny=3)
        fields = [solve_hjb(red, grid, eps=e).values for e in (0.4, 0.2, 0.1)]
        sub = (slice(None), slice(10, 43), slice(None))
        d1 = np.max(np.abs(fields[0][sub] - fields[1][sub]))
        d2 = np.max(np.abs(fields[1][sub] - fields[2][sub]))
        assert d2 < d1

    def test_value_at_interpolation(self):
        red = ReducedScenario(base=time_cost_scenario(), zeta="zero")
        field = solve_hjb(red, grid1(), eps=0.1)
        assert field.value_at(0.37, [0.123], [0.5]) == pytest.approx(1 - 0.37, abs=1e-10)


class TestViscosityProbe:
    def test_trivial_field_brackets(self, half_line):
        scn = make_scenario(
            half_line, running=PolynomialCost(d=1, m=1, c0=1.0)
        )
        red = ReducedScenario(base=scn, zeta="identity")
        grid = grid1(m_time=50, x_lo=-0.5, x_hi=2.0, nx=26, ny=5)
        field = solve_hjb(red, grid, eps=0.25)
        dx = grid.dx()[0]
        dt = grid.dt(1.0)
        xs = grid.x_axes()[0]
        pts = [(0.5, [float(x)], [0.0]) for x in xs[7:20]]
        reports = viscosity_probe(field, half_line, pts)
        for rec in reports:
            assert "skipped" not in rec
            assert rec["subsolution_slack"] >= -5 * (dx + dt)
            assert rec["supersolution_slack"] >= -5 * (dx + dt)

    def test_boundary_point_vacuous(self, half_line):
        scn = make_scenario(
            half_line, running=PolynomialCost(d=1, m=1, c0=1.0)
        )
        red = ReducedScenario(base=scn, zeta="identity")
        grid = grid1(m_time=50, x_lo=-0.5, x_hi=2.0, nx=26, ny=5)
        field = solve_hjb(red, grid, eps=0.25)
        reports = viscosity_probe(field, half_line, [(0.5, [0.0], [0.0])])
        rec = reports[0]
        # flat trial function: the normal-cone test fails strictness, so the
        # supersolution side has right-hand side -inf and is vacuous
        assert rec["supersolution_vacuous"]

    def test_outward_gradient_vacuous(self, half_line):
        # terminal = x gives D_x Psi ~ 1 everywhere, so -D_x Psi points out
        # of {x >= 0} at the boundary: supersolution side -inf.
        scn = make_scenario(
            half_line,
            terminal=PolynomialCost(d=1, cx=[1.0]),
        )
        red = ReducedScenario(base=scn, zeta="identity")
        grid = grid1(m_time=50, x_lo=-0.5, x_hi=2.0, nx=26, ny=5)
        field = solve_hjb(red, grid, eps=0.25)
        reports = viscosity_probe(field, half_line, [(0.5, [0.0], [0.0])])
        assert reports[0]["supersolution_vacuous"]
        assert not reports[0]["subsolution_vacuous"]

    def test_stencil_outside_grid_skipped(self):
        red = ReducedScenario(base=time_cost_scenario(), zeta="zero")
        field = solve_hjb(red, grid1(), eps=0.1)
        reports = viscosity_probe(field, ZeroFunction(1), [(0.0, [0.0], [0.0])])
        assert reports[0]["skipped"]


class TestCompareMc:
    def test_time_cost_agreement(self):
        red = ReducedScenario(base=time_cost_scenario(), zeta="zero")
        field = solve_hjb(red, grid1(), eps=0.1)
        scn = red.base
        family = PolicyFamily((ConstantPolicy(0),))
        cfg = SolverConfig(h=1 / 32, seed=3, n_paths=16)
        rows = compare_mc(field, scn, family, [(0.0, [0.25], [0.0])], cfg)
        assert rows[0]["within_budget"]
        assert rows[0]["discrepancy"] <= 1e-10

    def test_steering_agreement(self):
        red = ReducedScenario(base=steering(), zeta="identity")
        field = solve_hjb(red, grid1(m_time=100, nx=51), eps=0.1)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        cfg = SolverConfig(h=1 / 64, seed=3, n_paths=8)
        rows = compare_mc(
            field, red.base, family, [(0.0, [0.25], [0.0]), (0.5, [-0.5], [0.0])], cfg
        )
        for row in rows:
            assert row["within_budget"]

    def test_off_curve_point_skipped(self):
        scn = make_scenario(ZeroFunction(1), delta=0.5, lam=0.0)
        red = ReducedScenario(base=scn, zeta="zero")
        grid = grid1(m_time=50)
        field = solve_hjb(red, grid, eps=0.1)
        family = PolicyFamily((ConstantPolicy(0),))
        cfg = SolverConfig(h=1 / 32, seed=3, n_paths=8)
        # constant history x = 0.5 with delta = 0.5 forces y = 0.25; y = 0 is off
        rows = compare_mc(field, scn, family, [(0.0, [0.5], [0.0])], cfg)
        assert "skipped" in rows[0]

    def test_constant_history_curve(self):
        x = np.array([0.8])
        assert constant_history_y(x, 0.0, 0.5)[0] == pytest.approx(0.4)
        assert constant_history_y(x, 2.0, 0.5)[0] == pytest.approx(
            0.8 * (1 - math.exp(-1.0)) / 2.0
        )
        assert constant_history_y(x, 1.0, 0.0)[0] == 0.0


def test_cfl_numbers_reports_penalty(half_line):
    scn = make_scenario(half_line, sig0=[[0.3]])
    red = ReducedScenario(base=scn, zeta="identity")
    grid = grid1(m_time=400, x_lo=-0.5, x_hi=2.0, nx=26, ny=3)
    numbers = cfl_numbers(red, grid, eps=0.25)
    assert numbers["denominator"] > 0
    assert numbers["dt_limit"] > 0


def test_z_dependent_coefficients_rejected():
    scn = make_scenario(ZeroFunction(1))
    bad_drift = scn.drift.__class__(d=1, m=1, bz=[[1.0]])
    bad = scn.__class__(
        d=1, n=1, m=1, delta=0.0, lam=0.0, big_t=1.0, s0=0.0,
        constraint=scn.constraint, drift=bad_drift, diffusion=scn.diffusion,
        running_cost=scn.running_cost, terminal_cost=scn.terminal_cost,
        controls=[[0.0]], ell=1.0 + 1e-9, kappa=1e-9, kappa_bar=10.0, p=2,
    )
    with pytest.raises(ValidationError, match="z-independent"):
        ReducedScenario(base=bad, zeta="zero")
