"""Value estimation, the dynamic-programming residual, and value probes."""

import numpy as np
import pytest

from delaysvi import (
    ConstantPolicy,
    PathSegment,
    PiecewiseConstantPolicy,
    PolicyFamily,
    PolynomialCost,
    SolverConfig,
)
from delaysvi.control import (
    dpp_residual,
    estimate_value,
    penalization_gap,
    value_regularity_probe,
)
from delaysvi.convex import HalfspaceIndicator, ZeroFunction
from delaysvi.errors import ValidationError

from conftest import make_scenario


def steering_scenario(terminal=None, sig=0.0, constraint=None, T=1.0):
    """dX = u dt (+ sig dW), controls {-1, +1} as u_index {0, 1}."""
    return make_scenario(
        constraint or ZeroFunction(1),
        bu=[[1.0]],
        sig0=[[sig]],
        controls=[[-1.0], [1.0]],
        terminal=terminal or PolynomialCost(d=1, cx=[1.0]),
        T=T,
    )


class TestEstimateValue:
    def test_control_independent_cost_ties(self):
        scn = make_scenario(
            ZeroFunction(1),
            controls=[[-1.0], [1.0]],
            running=PolynomialCost(d=1, m=1, c0=1.0),
        )
        cfg = SolverConfig(h=0.125, seed=3, n_paths=8)
        xi = PathSegment.constant([0.0], 0.0, 0.125)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        est = estimate_value(scn, family, 0.0, xi, cfg)
        assert est.v_hat == 1.0
        assert est.argmin_id == 0  # tie breaks to the lowest id

    def test_deterministic_steering(self):
        scn = steering_scenario()
        cfg = SolverConfig(h=1 / 64, seed=3, n_paths=4)
        xi = PathSegment.constant([0.0], 0.0, 1 / 64)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        est = estimate_value(scn, family, 0.0, xi, cfg)
        assert est.v_hat == pytest.approx(-1.0, abs=1e-12)
        assert est.argmin_id == 0

    def test_single_policy_family(self):
        scn = steering_scenario()
        cfg = SolverConfig(h=1 / 64, seed=3, n_paths=4)
        xi = PathSegment.constant([0.0], 0.0, 1 / 64)
        family = PolicyFamily((ConstantPolicy(1),))
        est = estimate_value(scn, family, 0.0, xi, cfg)
        assert est.v_hat == pytest.approx(1.0, abs=1e-12)

    def test_family_monotone_and_shift_invariance(self):
        scn = steering_scenario(sig=0.5)
        cfg = SolverConfig(h=1 / 64, seed=5, n_paths=256)
        xi = PathSegment.constant([0.0], 0.0, 1 / 64)
        small = PolicyFamily((ConstantPolicy(1),))
        large = PolicyFamily((ConstantPolicy(1), ConstantPolicy(0)))
        v_small = estimate_value(scn, small, 0.0, xi, cfg)
        v_large = estimate_value(scn, large, 0.0, xi, cfg)
        assert v_large.v_hat <= v_small.v_hat

        # adding a constant to the running cost shifts all values by c (T - s)
        shifted = make_scenario(
            ZeroFunction(1),
            bu=[[1.0]],
            sig0=[[0.5]],
            controls=[[-1.0], [1.0]],
            running=PolynomialCost(d=1, m=1, c0=2.0),
            terminal=PolynomialCost(d=1, cx=[1.0]),
        )
        v_shift = estimate_value(shifted, large, 0.0, xi, cfg)
        assert v_shift.argmin_id == v_large.argmin_id
        assert v_shift.v_hat == pytest.approx(v_large.v_hat + 2.0, abs=1e-12)


class TestDppResidual:
    def test_control_independent_exact(self):
        # binary step size makes every partial cost sum exact: residual == 0
        scn = make_scenario(
            ZeroFunction(1),
            sig0=[[1.0]],
            controls=[[-1.0], [1.0]],
            running=PolynomialCost(d=1, m=1, c0=1.0),
        )
        cfg = SolverConfig(h=1 / 32, seed=7, n_paths=64)
        xi = PathSegment.constant([0.0], 0.0, 1 / 32)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        res = dpp_residual(scn, family, 0.0, xi, 0.5, cfg, inner_paths=32)
        assert res.residual == 0.0
        assert res.combined_stderr == 0.0

    def test_deterministic_steering_zero_residual(self):
        scn = steering_scenario()
        cfg = SolverConfig(h=1 / 64, seed=7, n_paths=4)
        xi = PathSegment.constant([0.0], 0.0, 1 / 64)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        res = dpp_residual(scn, family, 0.0, xi, 0.5, cfg, inner_paths=4)
        assert abs(res.residual) <= 1e-12

    def test_family_truncation_positive_residual(self):
        # quadratic terminal from x0 = 0.25: the optimal policy switches at
        # theta, so a constants-only family leaves lhs = 0.5625 > rhs = 0.0625.
        scn = steering_scenario(terminal=PolynomialCost(d=1, qx=[[1.0]]))
        cfg = SolverConfig(h=1 / 64, seed=7, n_paths=4)
        xi = PathSegment.constant([0.25], 0.0, 1 / 64)
        constants = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        res = dpp_residual(scn, constants, 0.0, xi, 0.5, cfg, inner_paths=4)
        assert res.residual == pytest.approx(0.5, abs=1e-10)

        # enlarging the family with the switching policy removes the gap
        switch = PiecewiseConstantPolicy(knots=(0.0, 0.5), u_indices=(0, 1))
        enlarged = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1), switch))
        res2 = dpp_residual(scn, enlarged, 0.0, xi, 0.5, cfg, inner_paths=4)
        assert abs(res2.residual) <= 1e-10

    def test_budget_cap(self):
        scn = steering_scenario(sig=0.5)
        cfg = SolverConfig(h=1 / 32, seed=7, n_paths=10_000)
        xi = PathSegment.constant([0.0], 0.0, 1 / 32)
        family = PolicyFamily((ConstantPolicy(0),))
        with pytest.raises(ValidationError, match="cap"):
            dpp_residual(scn, family, 0.0, xi, 0.5, cfg, inner_paths=10_000)

    def test_nested_reproducibility(self):
        scn = steering_scenario(sig=0.7)
        cfg = SolverConfig(h=1 / 32, seed=11, n_paths=32)
        xi = PathSegment.constant([0.5], 0.0, 1 / 32)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        a = dpp_residual(scn, family, 0.0, xi, 0.5, cfg, inner_paths=16)
        b = dpp_residual(scn, family, 0.0, xi, 0.5, cfg, inner_paths=16)
        assert a.residual == b.residual
        assert a.rhs == b.rhs


class TestRegularityAndGap:
    def test_identical_pair_zero(self):
        scn = steering_scenario(sig=0.5)
        cfg = SolverConfig(h=1 / 32, seed=13, n_paths=64)
        xi = PathSegment.constant([0.5], 0.0, 1 / 32)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        rows = value_regularity_probe(scn, family, [(0.0, xi), (0.0, xi)], cfg)
        assert rows[0]["dv"] == 0.0

    def test_shrinking_shifts_shrink_dv(self):
        scn = make_scenario(
            ZeroFunction(1),
            bx=[[-1.0]],
            sig0=[[0.5]],
            controls=[[-1.0], [1.0]],
            bu=[[1.0]],
            terminal=PolynomialCost(d=1, cx=[1.0]),
        )
        cfg = SolverConfig(h=1 / 32, seed=13, n_paths=128)
        xi = PathSegment.constant([0.5], 0.0, 1 / 32)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        inits = [(0.0, xi)] + [(0.0, xi.shifted([c])) for c in (0.2, 0.1, 0.05)]
        rows = value_regularity_probe(scn, family, inits, cfg)
        dvs = [r["dv"] for r in rows]
        assert dvs == sorted(dvs, reverse=True)
        assert all(np.isfinite(r["empirical_c"]) for r in rows)

    def test_growth_envelope_reported(self):
        scn = steering_scenario(sig=0.5)
        cfg = SolverConfig(h=1 / 32, seed=13, n_paths=128)
        xi = PathSegment.constant([0.5], 0.0, 1 / 32)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        rows = value_regularity_probe(
            scn, family, [(0.0, xi), (0.0, xi.scaled(2.0))], cfg
        )
        assert rows[0]["dv"] <= rows[0]["shape"] * max(1.0, rows[0]["empirical_c"])

    def test_gap_zero_constraint(self):
        scn = steering_scenario(sig=0.5)
        cfg = SolverConfig(h=1 / 64, seed=17, n_paths=64)
        xi = PathSegment.constant([0.0], 0.0, 1 / 64)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        rows = penalization_gap(scn, family, 0.0, xi, [0.4, 0.2, 0.1], cfg)
        assert all(r["gap"] == 0.0 for r in rows)

    def test_gap_reflected_monotone_within_error(self):
        half = HalfspaceIndicator([-1.0], 0.0)
        scn = make_scenario(
            half,
            bu=[[1.0]],
            sig0=[[0.5]],
            controls=[[-1.0], [1.0]],
            terminal=PolynomialCost(d=1, cx=[1.0]),
        )
        cfg = SolverConfig(h=1 / 64, seed=17, n_paths=512)
        xi = PathSegment.constant([0.25], 0.0, 1 / 64)
        family = PolicyFamily((ConstantPolicy(0), ConstantPolicy(1)))
        rows = penalization_gap(scn, family, 0.0, xi, [0.4, 0.2, 0.1], cfg)
        assert all(r["monotone_within_3se"] for r in rows)
