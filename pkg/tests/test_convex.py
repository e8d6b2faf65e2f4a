"""Convex kernel: closed forms against independent grid/stationarity oracles,
the inequality catalog, and the directional subdifferential branches."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaysvi.convex import (
    BallIndicator,
    BoxIndicator,
    HalfspaceIndicator,
    PolyhedronIndicator,
    QuadraticFunction,
    ZeroFunction,
    dir_subdiff,
    envelope,
    prox,
    yosida_audit,
    yosida_grad,
)
from delaysvi.errors import (
    DomainError,
    InvalidInputError,
    NumericError,
    PreconditionError,
)


def grid_envelope_1d(phi, eps, x, lo=-6.0, hi=6.0, n=240_001):
    """Dense 1-d grid minimization of the defining infimum."""
    vs = np.linspace(lo, hi, n)
    vals = phi.value_rows(vs[:, None]) + (vs - x) ** 2 / (2 * eps)
    return float(np.min(vals))


def grid_envelope_zoom(phi, eps, x, lo, hi, passes=9, n=41):
    """Grid minimization with iterative zoom; independent of the prox path."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    lo = np.full(d, lo, dtype=float)
    hi = np.full(d, hi, dtype=float)
    best_pt, best_val = None, np.inf
    for _ in range(passes):
        axes = [np.linspace(lo[i], hi[i], n) for i in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        vals = phi.value_rows(pts) + np.sum((pts - x) ** 2, axis=1) / (2 * eps)
        k = int(np.argmin(vals))
        best_pt, best_val = pts[k], float(vals[k])
        width = (hi - lo) / (n - 1)
        lo = best_pt - 2 * width
        hi = best_pt + 2 * width
    return best_val


class TestEnvelopeProxExamples:
    def test_zero_envelope(self):
        phi = ZeroFunction(2)
        assert envelope(phi, 0.7, [3.0, -1.0]) == 0.0

    def test_halfline_envelope_closed_form(self):
        # {x <= 0}: envelope at x=1, eps=0.5 equals x^2/(2 eps) = 1.0
        phi = HalfspaceIndicator([1.0], 0.0)
        val = envelope(phi, 0.5, [1.0])
        assert val == pytest.approx(1.0, abs=1e-12)
        oracle = grid_envelope_1d(phi, 0.5, 1.0)
        assert val == pytest.approx(oracle, abs=1e-8)

    def test_quadratic_envelope_stationarity_oracle(self):
        # prox solves (1 + eps) v = x numerically; envelope = |x-v|^2/2 + v^2/2
        phi = QuadraticFunction([[1.0]])
        x, eps = 2.0, 1.0
        v = np.linspace(-4, 4, 1_000_001)
        stationarity = (v - x) / eps + v  # d/dv of the inf objective
        v_star = v[np.argmin(np.abs(stationarity))]
        assert v_star == pytest.approx(1.0, abs=1e-5)
        assert envelope(phi, eps, [x]) == pytest.approx(1.0, abs=1e-12)
        assert prox(phi, eps, [x])[0] == pytest.approx(v_star, abs=1e-5)

    def test_box_prox_clamps(self):
        phi = BoxIndicator([-1, -1], [1, 1])
        np.testing.assert_allclose(prox(phi, 0.2, [2.0, 0.5]), [1.0, 0.5])

    def test_zero_prox_identity(self):
        phi = ZeroFunction(1)
        np.testing.assert_allclose(prox(phi, 7.0, [4.0]), [4.0])

    def test_halfline_gradient(self):
        phi = HalfspaceIndicator([1.0], 0.0)
        assert yosida_grad(phi, 0.5, [1.0])[0] == pytest.approx(2.0, abs=1e-12)
        assert yosida_grad(phi, 0.5, [-3.0])[0] == 0.0
        assert yosida_grad(ZeroFunction(1), 0.3, [5.0])[0] == 0.0

    def test_nonfinite_input_rejected(self):
        with pytest.raises(InvalidInputError):
            envelope(ZeroFunction(1), 0.5, [np.nan])
        with pytest.raises(InvalidInputError):
            prox(ZeroFunction(1), -0.5, [1.0])


CONSTRAINTS_1D = [
    ZeroFunction(1),
    QuadraticFunction([[2.0]]),
    HalfspaceIndicator([1.0], 0.5),
    BoxIndicator([-1.0], [1.5]),
    BallIndicator([0.25], 1.0),
    PolyhedronIndicator(a=[[1.0], [-1.0]], c=[1.0, 1.0]),
]

CONSTRAINTS_2D = [
    ZeroFunction(2),
    QuadraticFunction([[2.0, 0.5], [0.5, 1.0]]),
    BoxIndicator([-1.0, -0.5], [1.0, 2.0]),
    BallIndicator([0.0, 0.5], 1.5),
    HalfspaceIndicator([0.6, 0.8], 1.0),
    PolyhedronIndicator(a=[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], c=[1.0, 1.0, 1.0]),
]


@pytest.mark.parametrize("phi", CONSTRAINTS_1D)
def test_envelope_grid_oracle_1d(phi):
    for x in (-2.3, -0.4, 0.0, 0.7, 1.9):
        for eps in (0.3, 1.1):
            got = envelope(phi, eps, [x])
            want = grid_envelope_1d(phi, eps, x)
            assert got == pytest.approx(want, abs=1e-6)


@pytest.mark.parametrize("phi", CONSTRAINTS_2D)
def test_envelope_grid_oracle_2d(phi):
    for x in ([-1.7, 0.3], [0.2, 1.4], [2.0, -2.0]):
        for eps in (0.4, 1.0):
            got = envelope(phi, eps, x)
            want = grid_envelope_zoom(phi, eps, x, -5.0, 5.0)
            assert got == pytest.approx(want, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    y=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    eps=st.floats(0.05, 3.0),
    which=st.integers(0, len(CONSTRAINTS_2D) - 1),
)
def test_prox_nonexpansive_and_monotone(x, y, eps, which):
    phi = CONSTRAINTS_2D[which]
    px = prox(phi, eps, x)
    py = prox(phi, eps, y)
    assert np.linalg.norm(px - py) <= np.linalg.norm(np.subtract(x, y)) + 1e-9
    gx = yosida_grad(phi, eps, x)
    gy = yosida_grad(phi, eps, y)
    assert np.dot(gx - gy, np.subtract(x, y)) >= -1e-9


@settings(max_examples=60, deadline=None)
@given(
    x=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    eps=st.floats(0.05, 3.0),
    which=st.integers(0, len(CONSTRAINTS_2D) - 1),
)
def test_envelope_decomposition_and_sandwich(x, eps, which):
    phi = CONSTRAINTS_2D[which]
    g = yosida_grad(phi, eps, x)
    j = prox(phi, eps, x)
    fe = envelope(phi, eps, x)
    # decomposition: phi_eps(x) = eps/2 |g|^2 + phi(x - eps g)
    recomposed = 0.5 * eps * float(np.dot(g, g)) + phi.evaluate(np.subtract(x, eps * g))
    assert fe == pytest.approx(recomposed, abs=1e-9, rel=1e-9)
    # sandwich
    assert phi.evaluate(j) <= fe + 1e-9
    assert fe <= phi.evaluate(x) + 1e-9
    # prox of indicators is the projection at every eps
    if not phi.full_domain:
        np.testing.assert_allclose(j, phi.project(x), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    x=st.lists(st.floats(-4, 4), min_size=2, max_size=2),
    y=st.lists(st.floats(-4, 4), min_size=2, max_size=2),
    eps=st.floats(0.05, 2.0),
    delt=st.floats(0.05, 2.0),
    which=st.integers(0, len(CONSTRAINTS_2D) - 1),
)
def test_cross_eps_bound(x, y, eps, delt, which):
    phi = CONSTRAINTS_2D[which]
    gx = yosida_grad(phi, eps, x)
    gy = yosida_grad(phi, delt, y)
    lhs = float(np.dot(gx - gy, np.subtract(x, y)))
    rhs = -(eps + delt) * float(np.dot(gx, gy))
    assert lhs >= rhs - 1e-9


class TestDirSubdiff:
    def test_interior_box(self):
        phi = BoxIndicator([-1, -1], [1, 1])
        assert dir_subdiff(phi, [0.0, 0.0], [5.0, -5.0], "lower") == 0.0

    def test_halfline_boundary_branches(self):
        phi = HalfspaceIndicator([1.0], 0.0)  # {x <= 0}, outward normal +1
        assert dir_subdiff(phi, [0.0], [-1.0], "lower") == -math.inf
        assert dir_subdiff(phi, [0.0], [1.0], "lower") == 0.0

    def test_upper_lower_consistency(self):
        rng = np.random.default_rng(11)
        for phi in CONSTRAINTS_2D:
            for _ in range(25):
                z = rng.normal(size=2)
                x = phi.project(rng.normal(size=2) * 1.5)
                up = dir_subdiff(phi, x, z, "upper")
                lo = dir_subdiff(phi, x, -z, "lower")
                assert up == -lo

    def test_full_domain_inner_product(self):
        phi = QuadraticFunction([[2.0, 0.0], [0.0, 1.0]])
        x, z = np.array([1.0, 3.0]), np.array([1.0, -1.0])
        assert dir_subdiff(phi, x, z, "lower") == pytest.approx(float(2 * 1 * 1 + 3 * -1))

    def test_outside_domain_raises(self):
        phi = BoxIndicator([-1.0], [1.0])
        with pytest.raises(DomainError):
            dir_subdiff(phi, [2.0], [1.0], "lower")


class TestYosidaAudit:
    def test_zero_function_all_identities(self):
        phi = ZeroFunction(2)
        samples = [(np.array([1.0, 2.0]), np.array([-1.0, 0.5]))]
        report = yosida_audit(phi, [0.5, 1.0], samples, np.zeros(2))
        assert report.all_passed
        assert report.min_slack("i") == pytest.approx(0.0, abs=1e-15)

    def test_halfline_ix_example(self):
        # {x <= 0}, eps=0.5, x=1: the chain eps/2 |g|^2 = 1 <= phi_eps = 1 <= <g, x> = 2
        phi = HalfspaceIndicator([1.0], 0.0)
        g = yosida_grad(phi, 0.5, [1.0])
        assert 0.5 / 2 * float(g @ g) == pytest.approx(1.0, abs=1e-12)
        assert envelope(phi, 0.5, [1.0]) == pytest.approx(1.0, abs=1e-12)
        assert float(g @ np.array([1.0])) == pytest.approx(2.0, abs=1e-12)
        report = yosida_audit(phi, [0.5], [(np.array([1.0]), np.array([-0.5]))], np.array([-1.0]))
        rows = [
            (l, r)
            for q, l, r in zip(report.inequality, report.lhs, report.rhs)
            if q == "ix"
        ]
        assert rows
        lhs, rhs = rows[0]
        # the record keeps the binding side of the chain: 1 <= 1 with zero slack
        assert lhs == pytest.approx(1.0, abs=1e-12)
        assert rhs == pytest.approx(1.0, abs=1e-12)
        assert report.all_passed

    def test_quadratic_v_example(self):
        phi = QuadraticFunction([[1.0]])
        report = yosida_audit(phi, [1.0], [(np.array([2.0]), np.array([0.0]))], np.zeros(1))
        mono = [
            r for q, r in zip(report.inequality, report.rhs) if q == "v"
        ]
        assert mono[0] == pytest.approx(2.0, abs=1e-12)
        assert report.all_passed

    def test_u0_not_interior_rejected(self):
        phi = HalfspaceIndicator([1.0], 0.0)
        with pytest.raises(PreconditionError):
            yosida_audit(phi, [0.5], [(np.zeros(1), np.zeros(1))], np.array([1.0]))

    def test_normalization_enforced(self):
        # 0 outside the domain: (viii)/(ix) have no meaning, audit refuses.
        phi = BoxIndicator([1.0], [2.0])
        with pytest.raises(PreconditionError):
            yosida_audit(phi, [0.5], [(np.zeros(1), np.zeros(1))], np.array([1.5]))

    def test_constants_vii_recorded(self):
        phi = BallIndicator([0.0], 1.0)
        report = yosida_audit(
            phi, [0.3, 0.7], [(np.array([2.0]), np.array([0.5]))], np.array([0.2])
        )
        u0, r0, m0 = report.constants_vii
        assert r0 == pytest.approx(0.8)
        assert m0 > 0
        assert report.all_passed


class TestPolyhedron:
    def test_projection_matches_box(self):
        # box [-1, 1]^2 encoded as four halfspaces
        poly = PolyhedronIndicator(
            a=[[1, 0], [-1, 0], [0, 1], [0, -1]], c=[1, 1, 1, 1]
        )
        box = BoxIndicator([-1, -1], [1, 1])
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(64, 2)) * 2
        np.testing.assert_allclose(
            poly.project_rows(pts), box.project_rows(pts), atol=1e-8
        )

    def test_empty_intersection_caps_out(self):
        poly = PolyhedronIndicator(a=[[1.0], [-1.0]], c=[-1.0, -1.0])  # x<=-1 and x>=1
        with pytest.raises(NumericError):
            poly.project_rows(np.array([[0.0]]))
