"""Finite-difference solver for the reduced value PDE on (s, x, y).

The equation solved backward from the terminal cost is the penalized form:
the multivalued constraint term is replaced by the smooth drift
``-grad phi_eps(x)``, folded into the x-advection so the first-order upwind
differencing keeps the scheme monotone under the CFL restriction.  The
y-coordinate is transported by ``x - exp(-lam*delta)*zeta(x, y) - lam*y``,
where the lag closure ``zeta`` is either zero or the identity in x (the lag
variable cannot appear as a free parameter in a single PDE solve).

Explicit update, one layer per time step:

    V_m = V_{m+1} + dt * [ min_u ( <b(u) - grad phi_eps, DxV>
                                   + 1/2 Tr(sigma sigma' (u) Dxx V) + f(u) )
                           + <ydrift, DyV> ]

with per-node upwind directions chosen by the sign of the transporting
coefficient and central second differences for the diffusion part.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexConstraint, dir_subdiff
from .errors import NumericError, StateError, ValidationError
from .scenario import PolynomialCost, Scenario, profile_value

ZETA_KINDS = ("zero", "identity")


@dataclass(frozen=True)
class ReducedScenario:
    """Scenario with z-independent coefficients plus a lag closure for the y-drift."""

    base: Scenario
    zeta: str = "identity"

    def __post_init__(self):
        if self.zeta not in ZETA_KINDS:
            raise ValidationError(f"zeta must be one of {ZETA_KINDS}")
        if np.any(self.base.drift.bz) or np.any(self.base.diffusion.cz):
            raise ValidationError(
                "reduced solve requires z-independent coefficients (Bz = 0, Cz = 0)"
            )
        if self.base.d > 2:
            raise ValidationError("grid solve supports state dimension d <= 2")

    @property
    def d(self) -> int:
        return self.base.d

    def lag_weight(self) -> float:
        return math.exp(-self.base.lam * self.base.delta)


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid on a box in (x, y) and uniform layers in time."""

    m_time: int
    x_lo: tuple[float, ...]
    x_hi: tuple[float, ...]
    nx: tuple[int, ...]
    y_lo: tuple[float, ...]
    y_hi: tuple[float, ...]
    ny: tuple[int, ...]

    def __post_init__(self):
        for name in ("x_lo", "x_hi", "y_lo", "y_hi"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "nx", tuple(int(v) for v in self.nx))
        object.__setattr__(self, "ny", tuple(int(v) for v in self.ny))
        d = len(self.nx)
        if not (1 <= d <= 2) or len(self.ny) != d:
            raise ValidationError("grid supports 1 or 2 dimensions for x and y each")
        if len(self.x_lo) != d or len(self.x_hi) != d or len(self.y_lo) != d or len(self.y_hi) != d:
            raise ValidationError("grid bounds must match the dimension counts")
        if self.m_time < 1:
            raise ValidationError("grid needs at least one time step")
        for lo, hi, n in zip(self.x_lo + self.y_lo, self.x_hi + self.y_hi, self.nx + self.ny):
            if n < 1:
                raise ValidationError("grid axes need at least one node")
            if n > 1 and not hi > lo:
                raise ValidationError("grid axes need increasing bounds")

    @property
    def d(self) -> int:
        return len(self.nx)

    def x_axes(self) -> list[np.ndarray]:
        return [
            np.linspace(self.x_lo[i], self.x_hi[i], self.nx[i]) for i in range(self.d)
        ]

    def y_axes(self) -> list[np.ndarray]:
        return [
            np.linspace(self.y_lo[i], self.y_hi[i], self.ny[i]) for i in range(self.d)
        ]

    def dx(self) -> list[float]:
        return [
            (self.x_hi[i] - self.x_lo[i]) / (self.nx[i] - 1) if self.nx[i] > 1 else 0.0
            for i in range(self.d)
        ]

    def dy(self) -> list[float]:
        return [
            (self.y_hi[i] - self.y_lo[i]) / (self.ny[i] - 1) if self.ny[i] > 1 else 0.0
            for i in range(self.d)
        ]

    def dt(self, horizon: float) -> float:
        return horizon / self.m_time

    def max_spacing(self) -> float:
        return max([v for v in self.dx() if v > 0] or [0.0])

    def to_dict(self) -> dict:
        return {
            "m_time": self.m_time,
            "x_lo": list(self.x_lo),
            "x_hi": list(self.x_hi),
            "nx": list(self.nx),
            "y_lo": list(self.y_lo),
            "y_hi": list(self.y_hi),
            "ny": list(self.ny),
        }


# ---------------------------------------------------------------------------
# Difference operators (zero on singleton axes; one-sided at box faces)
# ---------------------------------------------------------------------------


def _axis_slices(ndim: int, axis: int, sl: slice) -> tuple:
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def _forward_diff(v: np.ndarray, step: float, axis: int) -> np.ndarray:
    n = v.shape[axis]
    if n < 2 or step == 0.0:
        return np.zeros_like(v)
    out = np.empty_like(v)
    d = np.diff(v, axis=axis) / step
    out[_axis_slices(v.ndim, axis, slice(0, n - 1))] = d
    out[_axis_slices(v.ndim, axis, slice(n - 1, n))] = d[
        _axis_slices(v.ndim, axis, slice(n - 2, n - 1))
    ]
    return out


def _backward_diff(v: np.ndarray, step: float, axis: int) -> np.ndarray:
    n = v.shape[axis]
    if n < 2 or step == 0.0:
        return np.zeros_like(v)
    out = np.empty_like(v)
    d = np.diff(v, axis=axis) / step
    out[_axis_slices(v.ndim, axis, slice(1, n))] = d
    out[_axis_slices(v.ndim, axis, slice(0, 1))] = d[
        _axis_slices(v.ndim, axis, slice(0, 1))
    ]
    return out


def _second_diff(v: np.ndarray, step: float, axis: int) -> np.ndarray:
    n = v.shape[axis]
    out = np.zeros_like(v)
    if n < 3 or step == 0.0:
        return out
    up = v[_axis_slices(v.ndim, axis, slice(2, n))]
    mid = v[_axis_slices(v.ndim, axis, slice(1, n - 1))]
    lo = v[_axis_slices(v.ndim, axis, slice(0, n - 2))]
    out[_axis_slices(v.ndim, axis, slice(1, n - 1))] = (up - 2.0 * mid + lo) / (step * step)
    return out


def _cross_diff(v: np.ndarray, s1: float, a1: int, s2: float, a2: int) -> np.ndarray:
    n1, n2 = v.shape[a1], v.shape[a2]
    out = np.zeros_like(v)
    if n1 < 3 or n2 < 3 or s1 == 0.0 or s2 == 0.0:
        return out
    pp = v[_axis_slices(v.ndim, a1, slice(2, n1))][_axis_slices(v.ndim, a2, slice(2, n2))]
    pm = v[_axis_slices(v.ndim, a1, slice(2, n1))][_axis_slices(v.ndim, a2, slice(0, n2 - 2))]
    mp = v[_axis_slices(v.ndim, a1, slice(0, n1 - 2))][_axis_slices(v.ndim, a2, slice(2, n2))]
    mm = v[_axis_slices(v.ndim, a1, slice(0, n1 - 2))][
        _axis_slices(v.ndim, a2, slice(0, n2 - 2))
    ]
    inner = _axis_slices(v.ndim, a1, slice(1, n1 - 1))
    out[inner][_axis_slices(v.ndim, a2, slice(1, n2 - 1))] = (pp - pm - mp + mm) / (
        4.0 * s1 * s2
    )
    return out


# ---------------------------------------------------------------------------
# Grid coefficient tables
# ---------------------------------------------------------------------------


class _GridCoeffs:
    """Drift, diffusion quadratic form, running cost and y-drift on the grid."""

    def __init__(self, red: ReducedScenario, grid: GridSpec, eps: float):
        scn = red.base
        self.red = red
        self.grid = grid
        self.eps = eps
        d = scn.d
        mesh = np.meshgrid(*(grid.x_axes() + grid.y_axes()), indexing="ij")
        self.xc = mesh[:d]
        self.yc = mesh[d:]
        self.shape = self.xc[0].shape
        if red.zeta == "identity":
            self.zc = self.xc
        else:
            self.zc = [np.zeros(self.shape) for _ in range(d)]

        # Penalty gradient depends on x only; evaluate on flattened x coords.
        pts = np.stack([c.ravel() for c in self.xc], axis=1)
        grad = (pts - scn.constraint.prox_rows(eps, pts)) / eps
        self.pen = [grad[:, i].reshape(self.shape) for i in range(d)]

        lagw = red.lag_weight()
        self.ydrift = [
            self.xc[j] - lagw * self.zc[j] - scn.lam * self.yc[j] for j in range(d)
        ]

        self._drift_tab = scn.drift.control_table(scn.controls)
        self._sigma_tab = scn.diffusion.control_table(scn.controls)
        self._fu = scn.running_cost.control_term(scn.controls)
        self._time_varying = (
            (scn.drift.profile != "zero" and np.any(scn.drift.bt))
            or (scn.diffusion.profile != "zero" and np.any(scn.diffusion.ct))
        )
        self._cache: dict | None = None

    @property
    def time_varying(self) -> bool:
        return self._time_varying

    def at_time(self, t: float) -> dict:
        if self._cache is not None and not self._time_varying:
            return self._cache
        scn = self.red.base
        d = scn.d
        n_u = scn.n_controls
        pb = profile_value(scn.drift.profile, t)
        ps = profile_value(scn.diffusion.profile, t)

        drift = []
        diff = []
        cost = []
        for k in range(n_u):
            bvec = []
            for i in range(d):
                g = np.full(self.shape, self._drift_tab[k, i] + pb * scn.drift.bt[i])
                for j in range(d):
                    if scn.drift.bx[i, j] != 0.0:
                        g = g + scn.drift.bx[i, j] * self.xc[j]
                    if scn.drift.by[i, j] != 0.0:
                        g = g + scn.drift.by[i, j] * self.yc[j]
                bvec.append(g)
            drift.append(bvec)

            cols = []
            for jn in range(scn.n):
                col = []
                for i in range(d):
                    g = np.full(
                        self.shape,
                        self._sigma_tab[k, jn, i] + ps * scn.diffusion.ct[jn, i],
                    )
                    for j in range(d):
                        if scn.diffusion.cx[jn][i, j] != 0.0:
                            g = g + scn.diffusion.cx[jn][i, j] * self.xc[j]
                        if scn.diffusion.cy[jn][i, j] != 0.0:
                            g = g + scn.diffusion.cy[jn][i, j] * self.yc[j]
                    col.append(g)
                cols.append(col)
            a = [[np.zeros(self.shape) for _ in range(d)] for _ in range(d)]
            for i1 in range(d):
                for i2 in range(i1, d):
                    acc = np.zeros(self.shape)
                    for jn in range(scn.n):
                        acc = acc + cols[jn][i1] * cols[jn][i2]
                    a[i1][i2] = acc
                    a[i2][i1] = acc
            diff.append(a)

            xs = np.stack([c.ravel() for c in self.xc], axis=1)
            ys = np.stack([c.ravel() for c in self.yc], axis=1)
            f_flat = scn.running_cost.eval_rows(xs, ys) + self._fu[k]
            cost.append(f_flat.reshape(self.shape))

        tables = {"drift": drift, "diff": diff, "cost": cost}
        if not self._time_varying:
            self._cache = tables
        return tables


def terminal_values(cost: PolynomialCost, grid: GridSpec) -> np.ndarray:
    d = grid.d
    mesh = np.meshgrid(*(grid.x_axes() + grid.y_axes()), indexing="ij")
    xs = np.stack([c.ravel() for c in mesh[:d]], axis=1)
    ys = np.stack([c.ravel() for c in mesh[d:]], axis=1)
    return cost.eval_rows(xs, ys).reshape(mesh[0].shape)


def cfl_numbers(red: ReducedScenario, grid: GridSpec, eps: float) -> dict:
    """Coefficient bounds over the box and the resulting time-step limit."""
    coeffs = _GridCoeffs(red, grid, eps)
    scn = red.base
    d = scn.d
    dx = grid.dx()
    dy = grid.dy()
    dt = grid.dt(scn.big_t)
    times = (0.0, scn.big_t / 2.0, scn.big_t) if coeffs.time_varying else (0.0,)
    denom = 0.0
    max_off = 0.0
    for t in times:
        tab = coeffs.at_time(t)
        total = 0.0
        for k in range(scn.n_controls):
            contrib = 0.0
            for i in range(d):
                c = tab["drift"][k][i] - coeffs.pen[i]
                if dx[i] > 0:
                    contrib += float(np.max(np.abs(c))) / dx[i]
                if dx[i] > 0:
                    contrib += float(np.max(tab["diff"][k][i][i])) / (dx[i] * dx[i])
                for j in range(i + 1, d):
                    if dx[i] > 0 and dx[j] > 0:
                        off = float(np.max(np.abs(tab["diff"][k][i][j])))
                        contrib += off / (2.0 * dx[i] * dx[j])
                        max_off = max(max_off, off)
            total = max(total, contrib)
        for j in range(d):
            if dy[j] > 0:
                total += float(np.max(np.abs(coeffs.ydrift[j]))) / dy[j]
        denom = max(denom, total)
    return {
        "dt": dt,
        "dx": dx,
        "dy": dy,
        "denominator": denom,
        "dt_limit": 0.9 / denom if denom > 0 else math.inf,
        "eps": eps,
        "max_offdiag_diffusion": max_off,
    }


def _check_box_margin(red: ReducedScenario, grid: GridSpec) -> None:
    """Each x-face must be either inside the domain or >= 3 dx away from it."""
    phi = red.base.constraint
    if phi.full_domain:
        return
    d = grid.d
    axes = grid.x_axes()
    dx = grid.max_spacing()
    for i in range(d):
        for side_val in (grid.x_lo[i], grid.x_hi[i]):
            if d == 1:
                face = np.array([[side_val]])
            else:
                other = axes[1 - i]
                face = np.empty((other.shape[0], 2))
                face[:, i] = side_val
                face[:, 1 - i] = other
            dist = phi.distance_rows(face)
            inside = np.all(dist <= 1e-9 * (1.0 + abs(side_val)))
            far = np.all(dist >= 3.0 * dx)
            if not (inside or far):
                raise ValidationError(
                    f"x-box face at {side_val} cuts the constraint boundary closer "
                    f"than 3 grid spacings; enlarge the box"
                )


@dataclass
class ValueField:
    """Backward-solved value on the grid; layer m holds time m * dt."""

    values: np.ndarray
    grid: GridSpec
    eps: float
    red: ReducedScenario
    cfl: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return self.red.base.big_t

    def layer_times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.grid.m_time + 1)

    def value_at(self, s: float, x, y) -> float:
        """Multilinear interpolation in (s, x, y)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        coords = [s * self.grid.m_time / self.horizon]
        for i, ax in enumerate(self.grid.x_axes()):
            coords.append(_fractional_index(ax, x[i], "x"))
        for j, ax in enumerate(self.grid.y_axes()):
            coords.append(_fractional_index(ax, y[j], "y"))
        return _multilinear(self.values, coords)

    def to_csv(self, path) -> None:
        d = self.grid.d
        if d == 1:
            header = "s,x,y,v"
        else:
            header = (
                "s,"
                + ",".join(f"x_{i}" for i in range(d))
                + ","
                + ",".join(f"y_{i}" for i in range(d))
                + ",v"
            )
        times = self.layer_times()
        mesh = np.meshgrid(*(self.grid.x_axes() + self.grid.y_axes()), indexing="ij")
        flat = [c.ravel() for c in mesh]
        n_nodes = flat[0].shape[0]
        rows = []
        for m, t in enumerate(times):
            block = np.column_stack(
                [np.full(n_nodes, t)] + flat + [self.values[m].ravel()]
            )
            rows.append(block)
        np.savetxt(
            path, np.vstack(rows), fmt="%.17g", delimiter=",", header=header, comments=""
        )

    def metadata(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "eps": self.eps,
            "zeta": self.red.zeta,
            "cfl": self.cfl,
        }


def _fractional_index(axis: np.ndarray, v: float, label: str) -> float:
    if axis.shape[0] == 1:
        return 0.0
    lo, hi = axis[0], axis[-1]
    if v < lo - 1e-9 or v > hi + 1e-9:
        raise StateError(f"{label}-coordinate {v} outside the grid box [{lo}, {hi}]")
    step = axis[1] - axis[0]
    return float(np.clip((v - lo) / step, 0.0, axis.shape[0] - 1))


def _multilinear(values: np.ndarray, coords: list[float]) -> float:
    idx0 = [int(math.floor(c)) for c in coords]
    idx0 = [min(max(i, 0), values.shape[k] - 1) for k, i in enumerate(idx0)]
    out = 0.0
    n_axes = len(coords)
    for corner in range(1 << n_axes):
        weight = 1.0
        index = []
        for a in range(n_axes):
            hi = (corner >> a) & 1
            base = idx0[a]
            frac = coords[a] - base
            if hi:
                if base + 1 >= values.shape[a]:
                    weight *= frac  # frac == 0 at the top node
                    index.append(base)
                else:
                    weight *= frac
                    index.append(base + 1)
            else:
                weight *= 1.0 - frac
                index.append(base)
        if weight != 0.0:
            out += weight * float(values[tuple(index)])
    return out


def solve_hjb(red: ReducedScenario, grid: GridSpec, eps: float) -> ValueField:
    """Backward explicit solve from the terminal cost layer.

    Raises at load when the CFL bound or the box margin fails, and at run
    time if a layer produces non-finite values or the monotonicity weight
    goes negative on interior nodes.
    """
    if not eps > 0:
        raise ValidationError("penalty eps must be positive")
    scn = red.base
    cfl = cfl_numbers(red, grid, eps)
    dt = cfl["dt"]
    if dt > cfl["dt_limit"]:
        raise ValidationError(
            f"CFL violated: dt={dt:.3e} exceeds limit {cfl['dt_limit']:.3e}; "
            f"increase m_time or coarsen the spatial grid"
        )
    _check_box_margin(red, grid)

    coeffs = _GridCoeffs(red, grid, eps)
    d = scn.d
    dx = grid.dx()
    dy = grid.dy()
    m_time = grid.m_time

    values = np.empty((m_time + 1,) + coeffs.shape)
    values[m_time] = terminal_values(scn.terminal_cost, grid)

    min_weight = math.inf
    interior = tuple(
        slice(1, -1) if n > 2 else slice(None) for n in coeffs.shape
    )

    for m in range(m_time - 1, -1, -1):
        t = m * dt
        tab = coeffs.at_time(t)
        v_next = values[m + 1]

        dps = [_forward_diff(v_next, dx[i], i) for i in range(d)]
        dms = [_backward_diff(v_next, dx[i], i) for i in range(d)]
        d2s = [_second_diff(v_next, dx[i], i) for i in range(d)]

        best = None
        weight_track = np.zeros(coeffs.shape)
        for k in range(scn.n_controls):
            val = np.array(tab["cost"][k], copy=True)
            w = np.zeros(coeffs.shape)
            for i in range(d):
                c = tab["drift"][k][i] - coeffs.pen[i]
                cp = np.maximum(c, 0.0)
                cm = np.minimum(c, 0.0)
                val = val + cp * dps[i] + cm * dms[i]
                if dx[i] > 0:
                    w = w + np.abs(c) / dx[i]
                a_ii = tab["diff"][k][i][i]
                if dx[i] > 0:
                    val = val + 0.5 * a_ii * d2s[i]
                    w = w + a_ii / (dx[i] * dx[i])
                for j in range(i + 1, d):
                    a_ij = tab["diff"][k][i][j]
                    if np.any(a_ij):
                        val = val + a_ij * _cross_diff(v_next, dx[i], i, dx[j], j)
            if best is None:
                best = val
                weight_track = w
            else:
                best = np.minimum(best, val)
                weight_track = np.maximum(weight_track, w)

        source = best
        for j in range(d):
            c = coeffs.ydrift[j]
            cp = np.maximum(c, 0.0)
            cm = np.minimum(c, 0.0)
            axis = d + j
            source = source + cp * _forward_diff(v_next, dy[j], axis) + cm * _backward_diff(
                v_next, dy[j], axis
            )
            if dy[j] > 0:
                weight_track = weight_track + np.abs(c) / dy[j]

        layer = v_next + dt * source
        if not np.all(np.isfinite(layer)):
            raise NumericError(f"non-finite values in layer {m} (t={t:.6g})")
        w_min = float(np.min(1.0 - dt * weight_track[interior]))
        min_weight = min(min_weight, w_min)
        if w_min < -1e-12:
            raise NumericError(
                f"monotonicity weight {w_min:.3e} negative in layer {m}; CFL bound "
                f"was violated at run time"
            )
        values[m] = layer

    cfl["min_diag_weight"] = min_weight
    return ValueField(values=values, grid=grid, eps=eps, red=red, cfl=cfl)


# ---------------------------------------------------------------------------
# Pointwise Hamiltonian
# ---------------------------------------------------------------------------


def hamiltonian(s, x, y, z, u, q, x_mat, scn: Scenario) -> float:
    """<b(s,x,y,z,u), q> + 1/2 Tr(sigma sigma' x_mat) - f(s,x,y,u)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    x_mat = np.atleast_2d(np.asarray(x_mat, dtype=float))
    d = scn.d

    pb = profile_value(scn.drift.profile, s)
    b = scn.drift.b0 + scn.drift.bu @ u + pb * scn.drift.bt
    b = b + scn.drift.bx @ x + scn.drift.by @ y + scn.drift.bz @ z

    ps = profile_value(scn.diffusion.profile, s)
    sig = np.empty((d, scn.n))
    for j in range(scn.n):
        col = scn.diffusion.c0[j] + scn.diffusion.cu[j] @ u + ps * scn.diffusion.ct[j]
        col = col + scn.diffusion.cx[j] @ x + scn.diffusion.cy[j] @ y + scn.diffusion.cz[j] @ z
        sig[:, j] = col
    a = sig @ sig.T

    f_val = float(scn.running_cost.eval_rows(x[None, :], y[None, :])[0])
    if scn.m and scn.running_cost.cu.shape[0]:
        f_val += float(np.dot(scn.running_cost.cu, u))
    return float(np.dot(b, q) + 0.5 * np.trace(a @ x_mat) - f_val)


def sup_hamiltonian(s, x, y, z, q, x_mat, scn: Scenario) -> float:
    """Exact enumeration of the finite control list."""
    return max(
        hamiltonian(s, x, y, z, scn.controls[k], q, x_mat, scn)
        for k in range(scn.n_controls)
    )


# ---------------------------------------------------------------------------
# Viscosity probe
# ---------------------------------------------------------------------------


def viscosity_probe(
    field: ValueField,
    phi: ConvexConstraint,
    points,
    stencil_radius: int = 2,
) -> list[dict]:
    """Local quadratic fits and the two-sided inequality slacks at each point.

    At each (s, x, y) a quadratic-in-x, linear-in-(s, y) trial function is
    least-squares fitted on the surrounding stencil; both inequality sides
    are evaluated with the directional subdifferential limits as right-hand
    sides.  Infinite right-hand sides make the corresponding side vacuous and
    are recorded as such.  Stencils that do not fit inside the grid or are
    rank deficient produce a skip record.
    """
    red = field.red
    scn = red.base
    grid = field.grid
    d = grid.d
    times = field.layer_times()
    dt = grid.dt(scn.big_t)
    x_axes = grid.x_axes()
    y_axes = grid.y_axes()
    reports: list[dict] = []

    for point in points:
        s, x, y = point
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        rec = {"point": {"s": float(s), "x": x.tolist(), "y": y.tolist()}}

        m0 = int(round(s / dt))
        ix = [int(round((x[i] - x_axes[i][0]) / (x_axes[i][1] - x_axes[i][0]))) if grid.nx[i] > 1 else 0 for i in range(d)]
        iy = [int(round((y[j] - y_axes[j][0]) / (y_axes[j][1] - y_axes[j][0]))) if grid.ny[j] > 1 else 0 for j in range(d)]
        r = stencil_radius
        ok_time = r <= m0 <= grid.m_time - r
        ok_x = all(grid.nx[i] == 1 or r <= ix[i] <= grid.nx[i] - 1 - r for i in range(d))
        ok_y = all(grid.ny[j] == 1 or r <= iy[j] <= grid.ny[j] - 1 - r for j in range(d))
        if not (ok_time and ok_x and ok_y):
            rec["skipped"] = "stencil does not fit inside the grid"
            reports.append(rec)
            continue

        # Assemble the stencil samples.
        offsets_t = range(-r, r + 1)
        offsets_x = [range(-r, r + 1) if grid.nx[i] > 1 else [0] for i in range(d)]
        offsets_y = [range(-r, r + 1) if grid.ny[j] > 1 else [0] for j in range(d)]
        rows = []
        rhs = []
        for ot in offsets_t:
            for ox in _product(offsets_x):
                for oy in _product(offsets_y):
                    ts = (m0 + ot) * dt - s
                    xs = [x_axes[i][ix[i] + ox[i]] - x[i] for i in range(d)]
                    ys = [y_axes[j][iy[j] + oy[j]] - y[j] for j in range(d)]
                    terms = [1.0, ts]
                    terms += xs
                    for i in range(d):
                        for j in range(i, d):
                            terms.append(xs[i] * xs[j])
                    terms += ys
                    rows.append(terms)
                    index = (m0 + ot,) + tuple(ix[i] + ox[i] for i in range(d)) + tuple(
                        iy[j] + oy[j] for j in range(d)
                    )
                    rhs.append(float(field.values[index]))
        a_mat = np.array(rows)
        b_vec = np.array(rhs)
        coef, _, rank, _ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
        if rank < a_mat.shape[1]:
            rec["skipped"] = "rank-deficient stencil fit"
            reports.append(rec)
            continue

        pos = 2
        dpsi_dx = coef[pos : pos + d]
        pos += d
        hess = np.zeros((d, d))
        for i in range(d):
            for j in range(i, d):
                c = coef[pos]
                pos += 1
                if i == j:
                    hess[i, i] = 2.0 * c
                else:
                    hess[i, j] = hess[j, i] = c
        dpsi_dy = coef[pos : pos + d]
        dpsi_dt = coef[1]

        zeta = x if red.zeta == "identity" else np.zeros(d)
        lagw = red.lag_weight()
        ydrift = x - lagw * zeta - scn.lam * y
        g_val = (
            -dpsi_dt
            + sup_hamiltonian(s, x, y, zeta, -dpsi_dx, -hess, scn)
            - float(np.dot(ydrift, dpsi_dy))
        )
        upper = dir_subdiff(phi, x, -dpsi_dx, "upper")
        lower = dir_subdiff(phi, x, -dpsi_dx, "lower")

        sub_vacuous = math.isinf(upper) and upper > 0
        super_vacuous = math.isinf(lower) and lower < 0
        rec.update(
            {
                "g": float(g_val),
                "subsolution_rhs": upper,
                "supersolution_rhs": lower,
                "subsolution_slack": math.inf if sub_vacuous else float(upper - g_val),
                "supersolution_slack": math.inf if super_vacuous else float(g_val - lower),
                "subsolution_vacuous": bool(sub_vacuous),
                "supersolution_vacuous": bool(super_vacuous),
            }
        )
        reports.append(rec)
    return reports


def _product(ranges):
    if len(ranges) == 1:
        for a in ranges[0]:
            yield (a,)
    else:
        for a in ranges[0]:
            for rest in _product(ranges[1:]):
                yield (a,) + rest


# ---------------------------------------------------------------------------
# Monte Carlo cross-check
# ---------------------------------------------------------------------------


def constant_history_y(x: np.ndarray, lam: float, delta: float) -> np.ndarray:
    """Memory coordinate generated by a constant history equal to x."""
    if delta == 0.0:
        return np.zeros_like(x)
    if lam == 0.0:
        return x * delta
    return x * (1.0 - math.exp(-lam * delta)) / lam


def compare_mc(
    field: ValueField,
    scn: Scenario,
    family,
    points,
    cfg,
    *,
    grid_error_coeff: float = 5.0,
    curve_tol: float = 1e-6,
    workers: int = 1,
) -> list[dict]:
    """Grid value vs Monte Carlo value at constant-history points.

    Only points whose (x, y) pair is generated by a constant initial segment
    are comparable; anything else is skipped with a reason.  The per-point
    budget is ``grid_error_coeff * (dx + dt) + 3 * stderr``; the finite
    policy family biases the Monte Carlo side upward, which is flagged, not
    corrected.
    """
    from .control import estimate_value
    from .scenario import PathSegment

    rows: list[dict] = []
    dt = field.grid.dt(scn.big_t)
    dx = field.grid.max_spacing()
    for point in points:
        s, x, y = point
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        rec = {"s": float(s), "x": x.tolist(), "y": y.tolist()}
        expect = constant_history_y(x, scn.lam, scn.delta)
        if np.max(np.abs(y - expect)) > curve_tol * (1.0 + float(np.max(np.abs(x)))):
            rec["skipped"] = (
                "point is not on the constant-history curve "
                f"(expected y={expect.tolist()})"
            )
            rows.append(rec)
            continue
        xi = PathSegment.constant(x, scn.delta, cfg.h)
        est = estimate_value(scn, family, float(s), xi, cfg, workers=workers)
        v_grid = field.value_at(float(s), x, y)
        budget = grid_error_coeff * (dx + dt) + 3.0 * est.stderr
        rec.update(
            {
                "v_grid": v_grid,
                "v_mc": est.v_hat,
                "mc_stderr": est.stderr,
                "discrepancy": abs(v_grid - est.v_hat),
                "budget": budget,
                "within_budget": bool(abs(v_grid - est.v_hat) <= budget),
                "family_bias": "mc upper-biased: finite family approximates the infimum from above",
            }
        )
        rows.append(rec)
    return rows


def field_to_json(field: ValueField, path) -> None:
    with open(path, "w") as fh:
        json.dump(field.metadata(), fh, indent=2, default=float)
