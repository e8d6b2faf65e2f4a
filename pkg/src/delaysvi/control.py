"""Value estimation over a finite policy family and its consistency checks.

The admissible-control infimum is approximated from above by the minimum
over a user-configured family; every study evaluates the whole family on
common random numbers, so the argmin and all differences are free of
between-policy sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SolverConfig, simulate_block
from .errors import ValidationError
from .mclab import DEFAULT_BLOCK, _blocks, estimate_cost, gamma1, mean_stderr
from .noise import nested_normals
from .policies import PolicyFamily
from .scenario import PathSegment, Scenario, steps_in

_DPP_SALT = 0x6E657374  # tags the nested-continuation substreams


@dataclass
class ValueEstimate:
    v_hat: float
    argmin_id: int
    per_policy: list[tuple[float, float]]  # (j_hat, stderr) in family order

    @property
    def stderr(self) -> float:
        return self.per_policy[self.argmin_id][1]

    def as_dict(self) -> dict:
        return {
            "v_hat": self.v_hat,
            "argmin_id": self.argmin_id,
            "per_policy": [
                {"policy_id": i, "j_hat": j, "stderr": s}
                for i, (j, s) in enumerate(self.per_policy)
            ],
        }


def estimate_value(
    scn: Scenario,
    family: PolicyFamily,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    workers: int = 1,
) -> ValueEstimate:
    """Minimum estimated cost over the family; ties break to the lowest id."""
    family.validate_against(scn)
    per_policy = []
    for pol in family:
        est = estimate_cost(scn, pol, start, xi, cfg, workers=workers)
        per_policy.append((est.j_hat, est.stderr))
    argmin = 0
    for i, (j, _) in enumerate(per_policy):
        if j < per_policy[argmin][0]:
            argmin = i
    return ValueEstimate(v_hat=per_policy[argmin][0], argmin_id=argmin, per_policy=per_policy)


# ---------------------------------------------------------------------------
# Dynamic-programming residual at a deterministic intermediate time
# ---------------------------------------------------------------------------


@dataclass
class DppResidual:
    lhs: float
    rhs: float
    residual: float
    stderr_lhs: float
    stderr_rhs: float
    combined_stderr: float
    theta: float
    outer_paths: int
    inner_paths: int
    per_policy_rhs: list[tuple[float, float]]

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "stderr_lhs": self.stderr_lhs,
            "stderr_rhs": self.stderr_rhs,
            "combined_stderr": self.combined_stderr,
            "theta": self.theta,
            "outer_paths": self.outer_paths,
            "inner_paths": self.inner_paths,
            "per_policy_rhs": [
                {"policy_id": i, "rhs": r, "stderr": s}
                for i, (r, s) in enumerate(self.per_policy_rhs)
            ],
        }


def _truncated_scenario(scn: Scenario, horizon: float) -> Scenario:
    return Scenario(
        d=scn.d,
        n=scn.n,
        m=scn.m,
        delta=scn.delta,
        lam=scn.lam,
        big_t=horizon,
        s0=scn.s0 if scn.s0 < horizon else 0.0,
        constraint=scn.constraint,
        drift=scn.drift,
        diffusion=scn.diffusion,
        running_cost=scn.running_cost,
        terminal_cost=scn.terminal_cost,
        controls=scn.controls,
        ell=scn.ell,
        kappa=scn.kappa,
        kappa_bar=scn.kappa_bar,
        p=scn.p,
    )


def _continuation_values(
    scn: Scenario,
    family: PolicyFamily,
    theta: float,
    windows: np.ndarray,
    outer_ids: np.ndarray,
    cfg: SolverConfig,
    inner_paths: int,
) -> np.ndarray:
    """Value estimate at (theta, window) for each outer path.

    Each outer path owns one substream; its inner batch reuses that stream
    for every policy (common random numbers inside the nested stage).
    """
    n_outer = windows.shape[0]
    n_steps = steps_in(scn.big_t - theta, cfg.h)
    out = np.empty(n_outer)
    inner_cfg = cfg.replace(n_paths=inner_paths)
    for i in range(n_outer):
        normals = nested_normals(
            cfg.seed, _DPP_SALT, int(outer_ids[i]), (inner_paths, n_steps, scn.n)
        )
        dw = normals * np.sqrt(cfg.h)
        best = np.inf
        for pol in family:
            costs = _inner_costs(scn, pol, theta, windows[i], inner_cfg, dw)
            best = min(best, float(np.mean(costs)))
        out[i] = best
    return out


def _inner_costs(scn, policy, start, window, cfg, dw) -> np.ndarray:
    """Costs of an inner batch driven by a pre-drawn increment array."""
    from .engine import DelayBuffer, _drift_rows, _memory_y_rows, _sigma_dw_rows, _constraint_step

    n_paths, n_steps, _ = dw.shape
    d = scn.d
    phi = scn.constraint
    h = cfg.h
    length = window.shape[0]
    buf = DelayBuffer(n_paths, length, d, h)
    buf.fill(np.broadcast_to(window, (n_paths, length, d)), start)
    x = np.tile(window[-1], (n_paths, 1))
    drift_tab = scn.drift.control_table(scn.controls)
    sigma_tab = scn.diffusion.control_table(scn.controls)
    fu_tab = scn.running_cost.control_term(scn.controls)
    prox_h = phi.prox_operator(h)
    cost = np.zeros(n_paths)
    for k in range(n_steps):
        t = start + k * h
        y = _memory_y_rows(buf, scn.lam)
        z = buf.slot(0).copy()
        u_idx = policy.control_indices(t, x, y)
        cost = cost + (scn.running_cost.eval_rows(x, y) + fu_tab[u_idx]) * h
        drift = _drift_rows(scn, t, x, y, z, drift_tab[u_idx])
        sdw = _sigma_dw_rows(scn, t, x, y, z, sigma_tab[u_idx], dw[:, k, :])
        r = x + drift * h + sdw
        x, _ = _constraint_step(phi, cfg.scheme, cfg.eps, h, x, r, prox_h)
        buf.push(x, t + h)
    y_end = _memory_y_rows(buf, scn.lam)
    return cost + scn.terminal_cost.eval_rows(x, y_end)


def dpp_residual(
    scn: Scenario,
    family: PolicyFamily,
    start: float,
    xi: PathSegment,
    theta: float,
    cfg: SolverConfig,
    inner_paths: int = 500,
    product_cap: int = 10**7,
    block_size: int = DEFAULT_BLOCK,
) -> DppResidual:
    """Signed gap between the value at (start, xi) and its one-stage
    decomposition at the deterministic time theta.

    The continuation value at theta is itself estimated (nested batches
    restarted from each outer path's full delay window), so the residual
    carries both family-truncation bias and nested sampling error; the
    combined standard error is reported alongside.
    """
    family.validate_against(scn)
    if not (start < theta <= scn.big_t):
        raise ValidationError("theta must lie in (start, T]")
    steps_in(theta - start, cfg.h)
    if cfg.n_paths * inner_paths > product_cap:
        raise ValidationError(
            f"nested budget {cfg.n_paths} x {inner_paths} exceeds the cap {product_cap}"
        )

    lhs_est = estimate_value(scn, family, start, xi, cfg)

    head = _truncated_scenario(scn, theta)
    per_policy_rhs: list[tuple[float, float]] = []
    for pol in family:
        samples = np.empty(cfg.n_paths)
        for idx in _blocks(cfg.n_paths, block_size):
            block = simulate_block(
                head, pol, start, xi, cfg, idx,
                record=True, with_cost=True, terminal_in_cost=False,
            )
            running = block.cost
            windows = block.window_at_end(xi)
            cont = _continuation_values(scn, family, theta, windows, idx, cfg, inner_paths)
            samples[idx] = running + cont
        per_policy_rhs.append(mean_stderr(samples))

    rhs_id = 0
    for i, (r, _) in enumerate(per_policy_rhs):
        if r < per_policy_rhs[rhs_id][0]:
            rhs_id = i
    rhs, se_rhs = per_policy_rhs[rhs_id]
    residual = lhs_est.v_hat - rhs
    combined = float(np.sqrt(lhs_est.stderr**2 + se_rhs**2))
    return DppResidual(
        lhs=lhs_est.v_hat,
        rhs=rhs,
        residual=residual,
        stderr_lhs=lhs_est.stderr,
        stderr_rhs=se_rhs,
        combined_stderr=combined,
        theta=theta,
        outer_paths=cfg.n_paths,
        inner_paths=inner_paths,
        per_policy_rhs=per_policy_rhs,
    )


# ---------------------------------------------------------------------------
# Value regularity and penalization gap
# ---------------------------------------------------------------------------


def value_regularity_probe(
    scn: Scenario,
    family: PolicyFamily,
    inits: list[tuple[float, PathSegment]],
    cfg: SolverConfig,
    workers: int = 1,
) -> list[dict]:
    """Value differences against the initial-data discrepancy shape.

    The first entry is the reference; each row compares one later entry to
    it: |dV|, Gamma1^{1/2}, |ds|^{1/2}, and the composite modulus envelope
    (1 + |xi|^p + |xi'|^p)(Gamma1^{1/2} + |ds|^{1/2}(1 + |xi| + |xi'|)).
    """
    if len(inits) < 2:
        raise ValidationError("regularity probe needs a reference and at least one variant")
    s0, xi0 = inits[0]
    v0 = estimate_value(scn, family, s0, xi0, cfg, workers=workers)
    rows = []
    for s1, xi1 in inits[1:]:
        v1 = estimate_value(scn, family, s1, xi1, cfg, workers=workers)
        g1 = gamma1(s0, xi0, s1, xi1)
        ds = abs(s1 - s0)
        n0, n1 = xi0.sup_norm(), xi1.sup_norm()
        shape = (1.0 + n0**scn.p + n1**scn.p) * (
            np.sqrt(g1) + np.sqrt(ds) * (1.0 + n0 + n1)
        )
        dv = abs(v1.v_hat - v0.v_hat)
        rows.append(
            {
                "dv": dv,
                "gamma1_sqrt": float(np.sqrt(g1)),
                "ds_sqrt": float(np.sqrt(ds)),
                "shape": float(shape),
                "empirical_c": dv / shape if shape > 0 else (0.0 if dv == 0 else np.inf),
                "v_ref": v0.v_hat,
                "v_alt": v1.v_hat,
            }
        )
    return rows


def penalization_gap(
    scn: Scenario,
    family: PolicyFamily,
    start: float,
    xi: PathSegment,
    eps_list,
    cfg: SolverConfig,
    workers: int = 1,
) -> list[dict]:
    """Value gap between penalty runs and the prox reference per eps.

    Identical noise across all runs; the gap is expected to shrink (within
    combined sampling error) as eps decreases.
    """
    eps_list = [float(e) for e in eps_list]
    if any(eps_list[i] <= eps_list[i + 1] for i in range(len(eps_list) - 1)):
        raise ValidationError("eps_list must be strictly decreasing")
    if any(e < 2 * cfg.h for e in eps_list):
        raise ValidationError("penalized scheme needs every eps >= 2h")

    ref_cfg = cfg.replace(scheme="prox_implicit", eps=None)
    v_ref = estimate_value(scn, family, start, xi, ref_cfg, workers=workers)
    rows = []
    for e in eps_list:
        cfg_e = cfg.replace(scheme="penalized", eps=e)
        v_e = estimate_value(scn, family, start, xi, cfg_e, workers=workers)
        combined = float(np.sqrt(v_e.stderr**2 + v_ref.stderr**2))
        rows.append(
            {
                "eps": e,
                "v_eps": v_e.v_hat,
                "v_ref": v_ref.v_hat,
                "gap": abs(v_e.v_hat - v_ref.v_hat),
                "combined_stderr": combined,
            }
        )
    for i in range(len(rows) - 1):
        allowance = 3.0 * np.sqrt(
            rows[i]["combined_stderr"] ** 2 + rows[i + 1]["combined_stderr"] ** 2
        )
        rows[i + 1]["monotone_within_3se"] = bool(
            rows[i + 1]["gap"] <= rows[i]["gap"] + allowance
        )
    if rows:
        rows[0]["monotone_within_3se"] = True
    return rows
