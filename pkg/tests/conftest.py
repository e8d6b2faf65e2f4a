"""Shared scenario builders for the test suite."""

import numpy as np
import pytest

from delaysvi import (
    AffineDiffusion,
    AffineDrift,
    PathSegment,
    PolynomialCost,
    Scenario,
)
from delaysvi.convex import HalfspaceIndicator, ZeroFunction


def make_scenario(
    constraint,
    *,
    n=1,
    m=1,
    delta=0.0,
    lam=0.0,
    T=1.0,
    bx=None,
    bu=None,
    b0=None,
    sig0=None,
    running=None,
    terminal=None,
    controls=None,
    ell=None,
    kappa=None,
    kappa_bar=10.0,
    p=2,
):
    """Scenario with sensible defaults; declared constants auto-dominate."""
    d = constraint.d
    drift = AffineDrift(d=d, m=m, bx=bx, bu=bu, b0=b0)
    sig = np.zeros((n, d))
    if sig0 is not None:
        sig = np.asarray(sig0, dtype=float).reshape(n, d)
    diffusion = AffineDiffusion(d=d, n=n, m=m, c0=sig)
    if controls is None:
        controls = [[0.0] * m]
    if ell is None:
        ell = drift.lipschitz_xyz() + diffusion.lipschitz_xyz() + 1e-9
    if kappa is None:
        ctrl = np.asarray(controls, dtype=float)
        worst = 0.0
        for u in ctrl:
            b_at0 = drift.b0 + drift.bu @ u
            s_at0 = np.stack([diffusion.c0[j] + diffusion.cu[j] @ u for j in range(n)])
            worst = max(worst, float(np.linalg.norm(b_at0) + np.linalg.norm(s_at0)))
        kappa = worst + 1e-9
    return Scenario(
        d=d,
        n=n,
        m=m,
        delta=delta,
        lam=lam,
        big_t=T,
        s0=0.0,
        constraint=constraint,
        drift=drift,
        diffusion=diffusion,
        running_cost=running or PolynomialCost(d=d, m=m),
        terminal_cost=terminal or PolynomialCost(d=d),
        controls=controls,
        ell=ell,
        kappa=kappa,
        kappa_bar=kappa_bar,
        p=p,
    )


@pytest.fixture
def half_line():
    """Indicator of {x >= 0} in one dimension."""
    return HalfspaceIndicator([-1.0], 0.0)


@pytest.fixture
def frozen_scenario():
    """No drift, no noise, no constraint: the state never moves."""
    return make_scenario(ZeroFunction(1))


def constant_segment(value, delta, h):
    return PathSegment.constant(value, delta, h)
