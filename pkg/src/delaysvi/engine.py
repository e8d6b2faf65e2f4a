"""Time-discretized simulation of the constrained delay SDE.

The state advances by explicit Euler on the drift/diffusion part; the
multivalued constraint term is handled by one of three interchangeable
step rules:

``penalized``
    explicit penalty drift ``-grad phi_eps(x) * h`` (requires ``h <= eps/2``
    because the penalty drift is (1/eps)-Lipschitz),
``prox_implicit``
    backward-Euler treatment of the constraint: ``x_next = prox(phi, h, R)``,
    unconditionally stable, the default,
``projection``
    project the unconstrained update onto the domain (indicator kinds only).

In every case the constraint force accumulated so far is tracked as
``K`` with per-step increment ``dK = R - x_next`` (``R`` the unconstrained
update), so ``X(t) + K(t)`` reproduces the unconstrained integral exactly.

Delay terms: ``Y(t)`` is the exponentially weighted trapezoid quadrature of
the path over ``[t - delta, t]`` and ``Z(t)`` the exact grid lookup at
``t - delta``.  All batch arithmetic uses fixed-order loops over the small
space dimensions, so each path's output is bitwise independent of how paths
are grouped into blocks (worker-count invariance).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import ConvexConstraint, _matvec_rows, _row_norm, _row_norm_sq
from .errors import NumericError, StateError, ValidationError
from .noise import brownian_increments
from .policies import Policy
from .scenario import PathSegment, Scenario, profile_value, steps_in

SCHEMES = ("penalized", "prox_implicit", "projection")


@dataclass(frozen=True)
class SolverConfig:
    h: float
    seed: int
    n_paths: int
    scheme: str = "prox_implicit"
    eps: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.h > 0:
            raise ValidationError("step size h must be positive")
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")
        if self.scheme == "penalized":
            if self.eps is None or not self.eps > 0:
                raise ValidationError("penalized scheme requires eps > 0")
            if self.h > self.eps / 2 + 1e-15:
                raise ValidationError(
                    f"penalized scheme requires h <= eps/2 (h={self.h}, eps={self.eps})"
                )

    def validate_for(self, scn: Scenario, start: float) -> None:
        steps_in(scn.delta, self.h)
        if not (0 <= start < scn.big_t):
            raise ValidationError(f"start time {start} outside [0, T)")
        steps_in(scn.big_t - start, self.h)
        # Global step alignment keeps per-step noise indices well defined
        # across runs started at different times (common random numbers).
        steps_in(start, self.h)
        if self.scheme == "projection" and scn.constraint.full_domain:
            raise ValidationError("projection scheme requires an indicator-kind constraint")

    def replace(self, **kw) -> "SolverConfig":
        data = {
            "h": self.h,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "scheme": self.scheme,
            "eps": self.eps,
        }
        data.update(kw)
        return SolverConfig(**data)

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "scheme": self.scheme,
            "eps": self.eps,
        }


class DelayBuffer:
    """Ring buffer holding the most recent ``delta/h + 1`` states per path."""

    def __init__(self, n_paths: int, length: int, d: int, h: float):
        if length < 1:
            raise ValidationError("delay buffer length must be >= 1")
        self.n_paths = n_paths
        self.length = length
        self.d = d
        self.h = h
        self._slots = np.zeros((n_paths, length, d))
        self._head = 0
        self._filled = False
        self._t_newest: float | None = None
        self._weights: dict[float, np.ndarray] = {}

    def fill(self, values: np.ndarray, t_newest: float) -> None:
        """Load a full window (oldest first); values is (length, d) or (n_paths, length, d)."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = np.broadcast_to(values, (self.n_paths,) + values.shape)
        if values.shape != self._slots.shape:
            raise StateError(
                f"window shape {values.shape} does not match buffer {self._slots.shape}"
            )
        self._slots[...] = values
        self._head = 0
        self._filled = True
        self._t_newest = t_newest

    def push(self, x: np.ndarray, t: float) -> None:
        if not self._filled:
            raise StateError("delay buffer must be filled before pushing")
        self._slots[:, self._head, :] = x
        self._head = (self._head + 1) % self.length
        self._t_newest = t

    @property
    def is_full(self) -> bool:
        return self._filled

    def slot(self, k: int) -> np.ndarray:
        """k-th window entry, 0 = oldest (time t - delta), length-1 = newest."""
        return self._slots[:, (self._head + k) % self.length, :]

    def state(self) -> np.ndarray:
        return self.slot(self.length - 1)

    def weights_for(self, lam: float) -> np.ndarray:
        w = self._weights.get(lam)
        if w is None:
            if self.length == 1:
                w = np.zeros(1)
            else:
                r = -((self.length - 1) * self.h) + self.h * np.arange(self.length)
                w = np.full(self.length, self.h)
                w[0] = w[-1] = self.h / 2.0
                w = w * np.exp(lam * r)
            self._weights[lam] = w
        return w


def memory_y(buf: DelayBuffer, lam: float, delta: float) -> np.ndarray:
    """Trapezoid quadrature of exp(lam*r) X(t+r) over r in [-delta, 0].

    Returns the zero vector when delta == 0.  Single-path buffers collapse
    the leading axis.
    """
    if not buf.is_full:
        raise StateError("delay buffer does not cover the full window yet")
    out = _memory_y_rows(buf, lam)
    return out[0] if buf.n_paths == 1 else out


def _memory_y_rows(buf: DelayBuffer, lam: float) -> np.ndarray:
    w = buf.weights_for(lam)
    if buf.length == 1:
        return np.zeros((buf.n_paths, buf.d))
    out = w[0] * buf.slot(0)
    for k in range(1, buf.length):
        out = out + w[k] * buf.slot(k)
    return out


def memory_z(buf: DelayBuffer, delta: float) -> np.ndarray:
    """Exact grid lookup X(t - delta); equals the current state when delta == 0."""
    if not buf.is_full:
        raise StateError("delay buffer does not cover the full window yet")
    out = buf.slot(0)
    return out[0].copy() if buf.n_paths == 1 else out.copy()


# ---------------------------------------------------------------------------
# Coefficient evaluation (batched, fixed-order arithmetic)
# ---------------------------------------------------------------------------


def _drift_rows(scn: Scenario, t: float, x, y, z, base) -> np.ndarray:
    dr = scn.drift
    out = np.array(base, copy=True)
    p = profile_value(dr.profile, t)
    if p != 0.0 and np.any(dr.bt):
        out = out + p * dr.bt
    if np.any(dr.bx):
        out = out + _matvec_rows(dr.bx, x)
    if np.any(dr.by):
        out = out + _matvec_rows(dr.by, y)
    if np.any(dr.bz):
        out = out + _matvec_rows(dr.bz, z)
    return out


def _sigma_dw_rows(scn: Scenario, t: float, x, y, z, base_cols, dw) -> np.ndarray:
    df = scn.diffusion
    p = profile_value(df.profile, t)
    out = np.zeros((x.shape[0], scn.d))
    for j in range(scn.n):
        col = base_cols[:, j, :]
        extra = None
        if p != 0.0 and np.any(df.ct[j]):
            extra = p * df.ct[j]
        if np.any(df.cx[j]):
            add = _matvec_rows(df.cx[j], x)
            col = col + add
        if np.any(df.cy[j]):
            col = col + _matvec_rows(df.cy[j], y)
        if np.any(df.cz[j]):
            col = col + _matvec_rows(df.cz[j], z)
        if extra is not None:
            col = col + extra
        out = out + dw[:, j][:, None] * col
    return out


def _constraint_step(phi: ConvexConstraint, scheme: str, eps, h: float, x, r, prox_h):
    """Apply the constraint rule; returns (x_next, dK)."""
    if scheme == "penalized":
        grad = (x - phi.prox_rows(eps, x)) / eps
        dk = grad * h
        return r - dk, dk
    if scheme == "prox_implicit":
        x_next = prox_h(r)
        return x_next, r - x_next
    x_next = phi.project_rows(r)
    return x_next, r - x_next


def step(x, buf: DelayBuffer, scn: Scenario, u, cfg: SolverConfig, t: float, dw):
    """One Euler step from state ``x`` at time ``t`` with Brownian increment ``dw``.

    ``u`` is a control point (any vector in R^m, not necessarily from the
    scenario's finite list).  Returns ``(x_next, dK)``.
    """
    if cfg.scheme == "projection" and scn.constraint.full_domain:
        raise ValidationError("projection scheme requires an indicator-kind constraint")
    if not buf.is_full:
        raise StateError("delay buffer does not cover the full window yet")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dw = np.atleast_2d(np.asarray(dw, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if buf.n_paths != x.shape[0]:
        raise StateError("delay buffer path count does not match the state")
    y = _memory_y_rows(buf, scn.lam)
    z = buf.slot(0)
    b_base = np.broadcast_to(scn.drift.b0 + scn.drift.bu @ u, x.shape)
    s_base = np.broadcast_to(
        np.stack([scn.diffusion.c0[j] + scn.diffusion.cu[j] @ u for j in range(scn.n)]),
        (x.shape[0], scn.n, scn.d),
    )
    drift = _drift_rows(scn, t, x, y, z, b_base)
    sdw = _sigma_dw_rows(scn, t, x, y, z, s_base, dw)
    r = x + drift * cfg.h + sdw
    prox_h = scn.constraint.prox_operator(cfg.h)
    x_next, dk = _constraint_step(scn.constraint, cfg.scheme, cfg.eps, cfg.h, x, r, prox_h)
    return x_next[0], dk[0]


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------


@dataclass
class BlockResult:
    """Outputs of a batched simulation run over one block of paths."""

    start: float
    h: float
    times: np.ndarray
    path_indices: np.ndarray
    scheme: str
    eps: float | None
    X: np.ndarray | None
    K: np.ndarray | None
    Y: np.ndarray | None
    Z: np.ndarray | None
    sup_x2: np.ndarray
    sup_y2: np.ndarray
    int_z2: np.ndarray
    sup_k2: np.ndarray
    k_bv: np.ndarray
    int_phi: np.ndarray
    cost: np.ndarray | None

    @property
    def sup_x4(self) -> np.ndarray:
        return self.sup_x2 * self.sup_x2

    def window_at_end(self, xi: PathSegment) -> np.ndarray:
        """Per-path delay window [t_end - delta, t_end], shape (P, L, d)."""
        if self.X is None:
            raise StateError("run was not recorded; windows unavailable")
        length = xi.length
        n_rec = self.X.shape[1]
        n_paths = self.X.shape[0]
        if n_rec >= length:
            return np.array(self.X[:, n_rec - length :, :], copy=True)
        out = np.empty((n_paths, length, self.X.shape[2]))
        n_from_hist = length - n_rec
        # Simulation covered fewer points than the window; take the tail of
        # the initial segment for times before the start.  The recorded array
        # begins at xi's final knot, so history indices line up at n_rec - 1
        # steps past the window head.
        hist = xi.values[n_rec - 1 : n_rec - 1 + n_from_hist]
        out[:, :n_from_hist, :] = hist[None, :, :]
        out[:, n_from_hist:, :] = self.X
        return out

    def trajectory(self, row: int, xi: PathSegment) -> "Trajectory":
        if self.X is None:
            raise StateError("run was not recorded; trajectories unavailable")
        return Trajectory(
            start=self.start,
            h=self.h,
            times=self.times.copy(),
            X=self.X[row].copy(),
            K=self.K[row].copy(),
            Y=self.Y[row].copy(),
            Z=self.Z[row].copy(),
            history=xi,
            phi_integral=float(self.int_phi[row]),
            k_variation=float(self.k_bv[row]),
            scheme=self.scheme,
            eps=self.eps,
        )


@dataclass
class Trajectory:
    """One recorded path: grid times from the start time to the horizon."""

    start: float
    h: float
    times: np.ndarray
    X: np.ndarray
    K: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    history: PathSegment
    phi_integral: float
    k_variation: float
    scheme: str
    eps: float | None

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def to_csv(self, path) -> None:
        d = self.d
        header = ",".join(
            ["t"]
            + [f"x_{i}" for i in range(d)]
            + [f"k_{i}" for i in range(d)]
            + [f"y_{i}" for i in range(d)]
            + [f"z_{i}" for i in range(d)]
        )
        table = np.column_stack([self.times, self.X, self.K, self.Y, self.Z])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")


def simulate_block(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    path_indices,
    *,
    record: bool = True,
    with_cost: bool = False,
    terminal_in_cost: bool = True,
    init_windows: np.ndarray | None = None,
) -> BlockResult:
    """Simulate one block of paths on [start, T] with per-path noise streams.

    ``init_windows`` optionally overrides the shared initial segment with a
    per-path window (continuation restarts); it is taken verbatim.
    """
    cfg.validate_for(scn, start)
    policy.validate_against(scn)
    if init_windows is None:
        xi.validate_against(scn)
        if abs(xi.h - cfg.h) > 1e-12 * max(1.0, cfg.h):
            raise ValidationError("initial segment step does not match solver step")
    path_indices = np.asarray(path_indices, dtype=np.int64)
    n_paths = path_indices.shape[0]
    d, n = scn.d, scn.n
    phi = scn.constraint
    h = cfg.h
    n_steps = steps_in(scn.big_t - start, h)
    first_step = steps_in(start, h)
    length = steps_in(scn.delta, h) + 1

    dw = np.empty((n_paths, n_steps, n))
    for i in range(n_paths):
        dw[i] = brownian_increments(cfg.seed, int(path_indices[i]), first_step, n_steps, n, h)

    buf = DelayBuffer(n_paths, length, d, h)
    if init_windows is not None:
        init_windows = np.asarray(init_windows, dtype=float)
        if init_windows.ndim == 2:
            init_windows = np.broadcast_to(init_windows, (n_paths,) + init_windows.shape)
        buf.fill(init_windows, start)
        x = np.array(init_windows[:, -1, :], copy=True)
    else:
        buf.fill(xi.values, start)
        x = np.tile(xi.end_value(), (n_paths, 1))

    drift_tab = scn.drift.control_table(scn.controls)
    sigma_tab = scn.diffusion.control_table(scn.controls)
    fu_tab = scn.running_cost.control_term(scn.controls) if with_cost else None

    k_acc = np.zeros((n_paths, d))
    times = start + h * np.arange(n_steps + 1)
    if record:
        rec_x = np.empty((n_paths, n_steps + 1, d))
        rec_k = np.zeros((n_paths, n_steps + 1, d))
        rec_y = np.empty((n_paths, n_steps + 1, d))
        rec_z = np.empty((n_paths, n_steps + 1, d))
        rec_x[:, 0, :] = x
    else:
        rec_x = rec_k = rec_y = rec_z = None

    sup_x2 = _row_norm_sq(x)
    sup_y2 = np.zeros(n_paths)
    int_z2 = np.zeros(n_paths)
    sup_k2 = np.zeros(n_paths)
    k_bv = np.zeros(n_paths)
    int_phi = np.zeros(n_paths)
    cost = np.zeros(n_paths) if with_cost else None

    prox_h = phi.prox_operator(h)
    penalized = cfg.scheme == "penalized"

    y = z = None
    for k in range(n_steps):
        t = start + k * h
        y = _memory_y_rows(buf, scn.lam)
        z = buf.slot(0).copy()
        if record:
            rec_y[:, k, :] = y
            rec_z[:, k, :] = z
        sup_y2 = np.maximum(sup_y2, _row_norm_sq(y))
        int_z2 = int_z2 + _row_norm_sq(z) * h

        u_idx = policy.control_indices(t, x, y)
        if with_cost:
            f_vals = scn.running_cost.eval_rows(x, y) + fu_tab[u_idx]
            cost = cost + f_vals * h
        if penalized:
            anchor = phi.prox_rows(cfg.eps, x)
        else:
            anchor = x
        int_phi = int_phi + phi.value_rows(anchor) * h

        drift = _drift_rows(scn, t, x, y, z, drift_tab[u_idx])
        sdw = _sigma_dw_rows(scn, t, x, y, z, sigma_tab[u_idx], dw[:, k, :])
        r = x + drift * h + sdw
        if not np.all(np.isfinite(r)):
            bad = np.where(~np.all(np.isfinite(r), axis=1))[0]
            raise NumericError(
                f"non-finite state at t={t + h:.6g} (first bad path index "
                f"{int(path_indices[bad[0]])})"
            )
        x_next, dk = _constraint_step(phi, cfg.scheme, cfg.eps, h, x, r, prox_h)
        if not np.all(np.isfinite(x_next)):
            bad = np.where(~np.all(np.isfinite(x_next), axis=1))[0]
            raise NumericError(
                f"non-finite state at t={t + h:.6g} (first bad path index "
                f"{int(path_indices[bad[0]])})"
            )

        k_acc = k_acc + dk
        k_bv = k_bv + _row_norm(dk)
        sup_k2 = np.maximum(sup_k2, _row_norm_sq(k_acc))
        sup_x2 = np.maximum(sup_x2, _row_norm_sq(x_next))
        buf.push(x_next, t + h)
        x = x_next
        if record:
            rec_x[:, k + 1, :] = x
            rec_k[:, k + 1, :] = k_acc

    # Final-time memory terms.
    y_end = _memory_y_rows(buf, scn.lam)
    z_end = buf.slot(0).copy()
    sup_y2 = np.maximum(sup_y2, _row_norm_sq(y_end))
    if record:
        rec_y[:, n_steps, :] = y_end
        rec_z[:, n_steps, :] = z_end
    if with_cost and terminal_in_cost:
        cost = cost + scn.terminal_cost.eval_rows(x, y_end)

    return BlockResult(
        start=start,
        h=h,
        times=times,
        path_indices=path_indices,
        scheme=cfg.scheme,
        eps=cfg.eps,
        X=rec_x,
        K=rec_k,
        Y=rec_y,
        Z=rec_z,
        sup_x2=sup_x2,
        sup_y2=sup_y2,
        int_z2=int_z2,
        sup_k2=sup_k2,
        k_bv=k_bv,
        int_phi=int_phi,
        cost=cost,
    )


def simulate_path(
    scn: Scenario,
    policy: Policy,
    start: float,
    xi: PathSegment,
    cfg: SolverConfig,
    path_index: int = 0,
) -> Trajectory:
    """Simulate a single path and return its full trajectory."""
    block = simulate_block(scn, policy, start, xi, cfg, [path_index], record=True)
    return block.trajectory(0, xi)


# ---------------------------------------------------------------------------
# Discrete solution audit
# ---------------------------------------------------------------------------


@dataclass
class SolutionAuditReport:
    """Worst-case slacks of the discrete variational inequality checks."""

    test_points: np.ndarray
    vi_violation: np.ndarray  # per test point: max over grid intervals
    vi_pass: np.ndarray
    domain_worst: float
    domain_allowed: float
    tol: float

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.vi_pass)) and self.domain_worst <= self.domain_allowed


def solution_audit(
    traj: Trajectory,
    phi: ConvexConstraint,
    test_points,
    tol: float = 1e-9,
) -> SolutionAuditReport:
    """Check the discrete analog of the defining variational inequality.

    For every comparison point ``u`` with finite ``phi(u)`` and every grid
    interval [t_i, t_j] the audit requires

        sum <u - X, dK> + sum phi(Xhat) h  <=  (t_j - t_i) phi(u) + tol * (j - i)

    with ``Xhat`` the domain-projected state, pairing each increment with the
    end-of-step state (where the constraint force acts).  Domain membership
    is checked with a scheme-dependent allowance: exact (up to roundoff) for
    projection/prox runs, ``eps * max |grad phi_eps(X)|`` for penalized runs.
    """
    pts = np.atleast_2d(np.asarray(test_points, dtype=float))
    phi_u = phi.value_rows(pts)
    if not np.all(np.isfinite(phi_u)):
        raise ValidationError("test points must lie in the domain with finite phi")

    h = traj.h
    x_end = traj.X[1:]
    dk = np.diff(traj.K, axis=0)
    xhat = phi.project_rows(x_end)
    phi_term = phi.value_rows(xhat) * h

    n_pts = pts.shape[0]
    violation = np.empty(n_pts)
    for i in range(n_pts):
        u = pts[i]
        terms = np.zeros(dk.shape[0])
        for j in range(traj.d):
            terms = terms + (u[j] - x_end[:, j]) * dk[:, j]
        terms = terms + phi_term - phi_u[i] * h - tol
        # Max interval sum of `terms` == max_{i<j} (P_j - P_i) via running min.
        prefix = 0.0
        run_min = 0.0
        worst = -np.inf
        for a in terms:
            prefix += float(a)
            worst = max(worst, prefix - run_min)
            run_min = min(run_min, prefix)
        violation[i] = worst

    scale = 1.0 + float(np.max(np.abs(traj.X)))
    dists = phi.distance_rows(traj.X)
    domain_worst = float(np.max(dists))
    if traj.scheme == "penalized":
        grads = _row_norm((traj.X - phi.prox_rows(traj.eps, traj.X)) / traj.eps)
        domain_allowed = traj.eps * float(np.max(grads)) + 1e-12 * scale
    else:
        domain_allowed = 1e-9 * scale

    return SolutionAuditReport(
        test_points=pts,
        vi_violation=violation,
        vi_pass=violation <= 0.0,
        domain_worst=domain_worst,
        domain_allowed=domain_allowed,
        tol=tol,
    )
