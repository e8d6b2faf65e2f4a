"""Monte Carlo estimation of path moments, costs, and quantitative bounds.

Studies that compare two systems (shifted initial data, different penalty
strengths) reuse identical Brownian increments per path index, so sampling
noise cancels in the differences.  Paths are simulated in fixed-size blocks;
per-path results are bitwise independent of the blocking, and reductions run
once over arrays ordered by path index, which makes every estimate
independent of the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexConstraint, _row_norm_sq
from .engine import BlockResult, SolverConfig, simulate_block
from .errors import ValidationError
from .noise import noise_checksum
from .policies import Policy
from .scenario import PathSegment, Scenario, steps_in

DEFAULT_BLOCK = 2048


def _blocks(n_paths: int, block_size: int = DEFAULT_BLOCK):
    out = []
    lo = 0
    while lo < n_paths:
        hi = min(lo + block_size, n_paths)
        out.append(np.arange(lo, hi, dtype=np.int64))
        lo = hi
    return out


def run_blocks(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    *,
    record: bool = False,
    with_cost: bool = False,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK,
) -> list[BlockResult]:
    """Simulate cfg.n_paths paths in fixed blocks, optionally in parallel.

    The block partition is independent of ``workers``; threads only change
    scheduling, never results.
    """
    parts = _blocks(cfg.n_paths, block_size)
    run = lambda idx: simulate_block(
        scn, policy, start, xi, cfg, idx, record=record, with_cost=with_cost
    )
    if workers <= 1 or len(parts) == 1:
        return [run(idx) for idx in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, parts))


def _gather(results: list[BlockResult], name: str) -> np.ndarray:
    return np.concatenate([getattr(r, name) for r in results])


def mean_stderr(values: np.ndarray) -> tuple[float, float]:
    n = values.shape[0]
    mean = float(np.mean(values))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(n))


# ---------------------------------------------------------------------------
# Moments and a-priori bound ratios
# ---------------------------------------------------------------------------


@dataclass
class MomentReport:
    """Plug-in estimates (mean, stderr) of the solution-size functionals."""

    n_paths: int
    sup_x2: tuple[float, float]
    sup_x4: tuple[float, float]
    sup_y2: tuple[float, float]
    int_z2: tuple[float, float]
    sup_k2: tuple[float, float]
    k_bv: tuple[float, float]
    k_bv2: tuple[float, float]
    int_phi: tuple[float, float]
    int_phi2: tuple[float, float]

    def as_dict(self) -> dict:
        out = {"n_paths": self.n_paths}
        for name in (
            "sup_x2",
            "sup_x4",
            "sup_y2",
            "int_z2",
            "sup_k2",
            "k_bv",
            "k_bv2",
            "int_phi",
            "int_phi2",
        ):
            est, se = getattr(self, name)
            out[name] = est
            out[name + "_stderr"] = se
        return out


def estimate_moments(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    workers: int = 1,
) -> MomentReport:
    results = run_blocks(scn, policy, start, xi, cfg, workers=workers)
    sup_x2 = _gather(results, "sup_x2")
    k_bv = _gather(results, "k_bv")
    int_phi = _gather(results, "int_phi")
    report = MomentReport(
        n_paths=cfg.n_paths,
        sup_x2=mean_stderr(sup_x2),
        sup_x4=mean_stderr(sup_x2 * sup_x2),
        sup_y2=mean_stderr(_gather(results, "sup_y2")),
        int_z2=mean_stderr(_gather(results, "int_z2")),
        sup_k2=mean_stderr(_gather(results, "sup_k2")),
        k_bv=mean_stderr(k_bv),
        k_bv2=mean_stderr(k_bv * k_bv),
        int_phi=mean_stderr(int_phi),
        int_phi2=mean_stderr(int_phi * int_phi),
    )
    return report


def apriori_bound_check(report: MomentReport, xi: PathSegment, phi: ConvexConstraint) -> dict:
    """Empirical constants for the solution-size bounds.

    Each entry is the estimate divided by the matching initial-data envelope
    (1 + |xi|^2 or 1 + |xi|^4); the check passes when every ratio is finite.
    """
    norm = xi.sup_norm()
    env2 = 1.0 + norm**2
    env4 = 1.0 + norm**4
    ratios = {
        "x2_over_env2": report.sup_x2[0] / env2,
        "first_order": (report.sup_x2[0] + report.sup_k2[0] + report.k_bv[0] + report.int_phi[0])
        / env2,
        "memory": (report.sup_y2[0] + report.int_z2[0]) / env2,
        "second_order": (report.sup_x4[0] + report.k_bv2[0] + report.int_phi2[0]) / env4,
    }
    ratios["all_finite"] = all(np.isfinite(v) for v in ratios.values())
    return ratios


def apriori_scaling_study(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    factors=(1.0, 2.0, 4.0),
    workers: int = 1,
) -> list[dict]:
    """Companion runs with the initial path scaled; common random numbers.

    Stability of the ratios across the scaling factors is the empirical
    content of "the constant depends only on the coefficients and horizon".
    """
    rows = []
    for fac in factors:
        xs = xi.scaled(fac)
        report = estimate_moments(scn, policy, start, xs, cfg, workers=workers)
        ratios = apriori_bound_check(report, xs, scn.constraint)
        row = {"factor": fac, "sup_norm": xs.sup_norm()}
        row.update(ratios)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Initial-data discrepancy functionals
# ---------------------------------------------------------------------------


def gamma1(start: float, xi: PathSegment, start2: float, xi2: PathSegment) -> float:
    """Squared discrepancy of initial data: sup-norm part plus the
    time-shift integral of the later path on the overlap grid."""
    if xi.length != xi2.length or abs(xi.h - xi2.h) > 1e-12:
        raise ValidationError("initial segments must share the grid")
    diff = xi.values - xi2.values
    sup_part = float(np.max(_row_norm_sq(diff)))

    h = xi.h
    if start >= start2:
        s_hi, seg = start, xi2
        shift = start - start2
    else:
        s_hi, seg = start2, xi
        shift = start2 - start
    k = steps_in(shift, h)
    shift_part = 0.0
    if k > 0:
        vals = seg.values
        length = vals.shape[0]
        if k < length:
            sq = _row_norm_sq(vals[: length - k] - vals[k:])
            w = np.full(length - k, h)
            w[0] = w[-1] = h / 2.0
            if length - k == 1:
                w[:] = 0.0
            shift_part = float(np.sum(w * sq))
    return sup_part + shift_part


def gamma2(phi: ConvexConstraint, xi: PathSegment) -> float:
    """Initial-data size functional 1 + phi(xi(0))^2 + |xi|_sup^4."""
    val = phi.evaluate(xi.end_value())
    return 1.0 + float(val) ** 2 + xi.sup_norm() ** 4


# ---------------------------------------------------------------------------
# Continuous dependence
# ---------------------------------------------------------------------------


@dataclass
class DependenceRecord:
    lhs_x: tuple[float, float]
    lhs_k: tuple[float, float]
    gamma1: float
    rhs_shape: float
    empirical_c_x: float
    empirical_c_k: float
    noise_checksum: str

    def as_dict(self) -> dict:
        return {
            "lhs_x": self.lhs_x[0],
            "lhs_x_stderr": self.lhs_x[1],
            "lhs_k": self.lhs_k[0],
            "lhs_k_stderr": self.lhs_k[1],
            "gamma1": self.gamma1,
            "rhs_shape": self.rhs_shape,
            "empirical_c_x": self.empirical_c_x,
            "empirical_c_k": self.empirical_c_k,
            "noise_checksum": self.noise_checksum,
        }


def dependence_study(
    scn: Scenario,
    init_a: tuple[float, PathSegment],
    init_b: tuple[float, PathSegment],
    policy: Policy,
    cfg: SolverConfig,
    block_size: int = DEFAULT_BLOCK,
) -> DependenceRecord:
    """Paired simulation of two initial data under identical noise.

    Reports E sup |dX|^2 and E sup |dK|^2 over the common grid
    [max(s, s'), T] against the shape Gamma1 + |s - s'| (1 + |xi|^2 + |xi'|^2).
    """
    s_a, xi_a = init_a
    s_b, xi_b = init_b
    common = max(s_a, s_b)
    h = cfg.h
    steps_in(abs(s_a - s_b), h)
    n_common = steps_in(scn.big_t - common, h)

    sup_dx = np.empty(cfg.n_paths)
    sup_dk = np.empty(cfg.n_paths)
    for idx in _blocks(cfg.n_paths, block_size):
        ra = simulate_block(scn, policy, s_a, xi_a, cfg, idx, record=True)
        rb = simulate_block(scn, policy, s_b, xi_b, cfg, idx, record=True)
        xa = ra.X[:, ra.X.shape[1] - (n_common + 1) :, :]
        xb = rb.X[:, rb.X.shape[1] - (n_common + 1) :, :]
        ka = ra.K[:, ra.K.shape[1] - (n_common + 1) :, :]
        kb = rb.K[:, rb.K.shape[1] - (n_common + 1) :, :]
        dx = xa - xb
        dk = ka - kb
        sup_dx[idx] = np.max(np.sum(dx * dx, axis=2), axis=1)
        sup_dk[idx] = np.max(np.sum(dk * dk, axis=2), axis=1)

    # Both runs consumed identical increments on the common range by
    # construction; record the shared checksum as evidence of the pairing.
    first_step = steps_in(common, h)
    checksum = noise_checksum(
        cfg.seed, range(min(cfg.n_paths, 8)), first_step, n_common, scn.n, h
    )

    g1 = gamma1(s_a, xi_a, s_b, xi_b)
    shape = g1 + abs(s_a - s_b) * (1.0 + xi_a.sup_norm() ** 2 + xi_b.sup_norm() ** 2)
    lhs_x = mean_stderr(sup_dx)
    lhs_k = mean_stderr(sup_dk)
    c_x = lhs_x[0] / shape if shape > 0 else (0.0 if lhs_x[0] == 0 else np.inf)
    c_k = lhs_k[0] / shape if shape > 0 else (0.0 if lhs_k[0] == 0 else np.inf)
    return DependenceRecord(
        lhs_x=lhs_x,
        lhs_k=lhs_k,
        gamma1=g1,
        rhs_shape=shape,
        empirical_c_x=c_x,
        empirical_c_k=c_k,
        noise_checksum=checksum,
    )


# ---------------------------------------------------------------------------
# Penalization Cauchy rate
# ---------------------------------------------------------------------------


@dataclass
class CauchyRateStudy:
    rows: list[dict]
    slope: float
    monotone: bool
    gamma2: float
    reference_gaps: list[dict] = field(default_factory=list)

    def ratios(self) -> list[float]:
        return [row["ratio"] for row in self.rows]


def cauchy_rate_study(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    eps_list,
    cfg: SolverConfig,
    *,
    with_reference: bool = True,
    block_size: int = DEFAULT_BLOCK,
) -> CauchyRateStudy:
    """Pairwise differences of penalty solutions under identical noise.

    For consecutive (eps, eps') the study reports E sup |X_eps - X_eps'|^2,
    its ratio to (eps^{1/8} + eps'^{1/8}) Gamma2^{1/4}, and the least-squares
    slope of log lhs against log(eps^{1/8} + eps'^{1/8}).  Optionally the
    unconditionally stable prox scheme is run on the same noise as the
    zero-penalty reference.
    """
    eps_list = [float(e) for e in eps_list]
    if any(eps_list[i] <= eps_list[i + 1] for i in range(len(eps_list) - 1)):
        raise ValidationError("eps_list must be strictly decreasing")
    if any(e < 2 * cfg.h for e in eps_list):
        raise ValidationError("penalized scheme needs every eps >= 2h")

    g2 = gamma2(scn.constraint, xi)
    n_eps = len(eps_list)
    sup_pair = np.zeros((n_eps - 1, cfg.n_paths))
    sup_ref = np.zeros((n_eps, cfg.n_paths)) if with_reference else None

    for idx in _blocks(cfg.n_paths, block_size):
        runs = []
        for e in eps_list:
            cfg_e = cfg.replace(scheme="penalized", eps=e)
            runs.append(simulate_block(scn, policy, start, xi, cfg_e, idx, record=True).X)
        ref = None
        if with_reference:
            cfg_ref = cfg.replace(scheme="prox_implicit", eps=None)
            ref = simulate_block(scn, policy, start, xi, cfg_ref, idx, record=True).X
        for i in range(n_eps - 1):
            diff = runs[i] - runs[i + 1]
            sup_pair[i, idx] = np.max(np.sum(diff * diff, axis=2), axis=1)
        if with_reference:
            for i in range(n_eps):
                diff = runs[i] - ref
                sup_ref[i, idx] = np.max(np.sum(diff * diff, axis=2), axis=1)

    first_step = steps_in(start, cfg.h)
    n_steps = steps_in(scn.big_t - start, cfg.h)
    checksum = noise_checksum(
        cfg.seed, range(min(cfg.n_paths, 8)), first_step, n_steps, scn.n, cfg.h
    )

    rows = []
    for i in range(n_eps - 1):
        e, e2 = eps_list[i], eps_list[i + 1]
        lhs, se = mean_stderr(sup_pair[i])
        scale = (e ** 0.125 + e2 ** 0.125) * g2 ** 0.25
        rows.append(
            {
                "eps": e,
                "eps2": e2,
                "lhs": lhs,
                "lhs_stderr": se,
                "scale": scale,
                "ratio": lhs / scale,
                "noise_checksum": checksum,
            }
        )

    lhs_vals = np.array([r["lhs"] for r in rows])
    scales = np.array([r["scale"] for r in rows])
    if len(rows) >= 2 and np.all(lhs_vals > 0):
        slope = float(np.polyfit(np.log(scales), np.log(lhs_vals), 1)[0])
    else:
        slope = np.nan
    monotone = bool(np.all(np.diff(lhs_vals) < 0))

    ref_rows = []
    if with_reference:
        for i, e in enumerate(eps_list):
            est, se = mean_stderr(sup_ref[i])
            ref_rows.append({"eps": e, "gap_to_reference": est, "stderr": se})

    return CauchyRateStudy(
        rows=rows, slope=slope, monotone=monotone, gamma2=g2, reference_gaps=ref_rows
    )


# ---------------------------------------------------------------------------
# Cost functional
# ---------------------------------------------------------------------------


@dataclass
class CostEstimate:
    j_hat: float
    stderr: float
    n_paths: int

    def as_dict(self) -> dict:
        return {"j_hat": self.j_hat, "stderr": self.stderr, "n_paths": self.n_paths}


def estimate_cost(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    workers: int = 1,
) -> CostEstimate:
    """Sample mean of the running-plus-terminal cost along simulated paths."""
    results = run_blocks(scn, policy, start, xi, cfg, with_cost=True, workers=workers)
    cost = _gather(results, "cost")
    est, se = mean_stderr(cost)
    return CostEstimate(j_hat=est, stderr=se, n_paths=cfg.n_paths)
