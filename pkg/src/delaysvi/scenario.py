"""Problem data: coefficient catalog, cost catalog, Scenario, PathSegment.

Drift and diffusion come from a parametric affine catalog

    b(t, x, y, z, u)      = Bx x + By y + Bz z + Bu u + b0 + bt * profile(t)
    sigma_col_j(t,x,y,z,u) = Cx[j] x + Cy[j] y + Cz[j] z + Cu[j] u + c0[j] + ct[j] * profile(t)

which keeps the global Lipschitz and boundedness constants computable at
load time so the declared ``ell`` / ``kappa`` can be verified.  Running and
terminal costs are quadratic polynomials in (x, y) (plus affine control
terms for the running cost), checked against the declared growth envelope
``kappa_bar (1 + |x|^p + |y|^p)`` on a sample box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexConstraint, _matvec_rows, _row_norm
from .errors import ValidationError

TIME_PROFILES = ("zero", "one", "linear", "sine")


def profile_value(name: str, t: float) -> float:
    if name == "zero":
        return 0.0
    if name == "one":
        return 1.0
    if name == "linear":
        return t
    if name == "sine":
        return float(np.sin(t))
    raise ValidationError(f"unknown time profile {name!r}")


def profile_max(name: str, horizon: float) -> float:
    if name == "zero":
        return 0.0
    if name == "one":
        return 1.0
    if name == "linear":
        return abs(horizon)
    if name == "sine":
        return 1.0
    raise ValidationError(f"unknown time profile {name!r}")


def _zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=float)


def _as_array(value, shape, name: str) -> np.ndarray:
    if value is None:
        return _zeros(shape)
    arr = np.asarray(value, dtype=float)
    if arr.shape != tuple(shape):
        raise ValidationError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def _spec_norm(m: np.ndarray) -> float:
    if not np.any(m):
        return 0.0
    return float(np.linalg.norm(m, 2))


@dataclass(frozen=True)
class AffineDrift:
    d: int
    m: int
    bx: np.ndarray | None = None
    by: np.ndarray | None = None
    bz: np.ndarray | None = None
    bu: np.ndarray | None = None
    b0: np.ndarray | None = None
    bt: np.ndarray | None = None
    profile: str = "zero"

    def __post_init__(self):
        d, m = self.d, self.m
        object.__setattr__(self, "bx", _as_array(self.bx, (d, d), "drift.bx"))
        object.__setattr__(self, "by", _as_array(self.by, (d, d), "drift.by"))
        object.__setattr__(self, "bz", _as_array(self.bz, (d, d), "drift.bz"))
        object.__setattr__(self, "bu", _as_array(self.bu, (d, m), "drift.bu"))
        object.__setattr__(self, "b0", _as_array(self.b0, (d,), "drift.b0"))
        object.__setattr__(self, "bt", _as_array(self.bt, (d,), "drift.bt"))
        if self.profile not in TIME_PROFILES:
            raise ValidationError(f"drift profile must be one of {TIME_PROFILES}")

    def lipschitz_xyz(self) -> float:
        return max(_spec_norm(self.bx), _spec_norm(self.by), _spec_norm(self.bz))

    def control_table(self, controls: np.ndarray) -> np.ndarray:
        """Per-control constant part b0 + Bu u, shape (n_controls, d)."""
        table = np.empty((controls.shape[0], self.d))
        for k in range(controls.shape[0]):
            table[k] = self.b0 + self.bu @ controls[k]
        return table

    def to_dict(self) -> dict:
        return {
            "bx": self.bx.tolist(),
            "by": self.by.tolist(),
            "bz": self.bz.tolist(),
            "bu": self.bu.tolist(),
            "b0": self.b0.tolist(),
            "bt": self.bt.tolist(),
            "profile": self.profile,
        }


@dataclass(frozen=True)
class AffineDiffusion:
    d: int
    n: int
    m: int
    cx: np.ndarray | None = None
    cy: np.ndarray | None = None
    cz: np.ndarray | None = None
    cu: np.ndarray | None = None
    c0: np.ndarray | None = None
    ct: np.ndarray | None = None
    profile: str = "zero"

    def __post_init__(self):
        d, n, m = self.d, self.n, self.m
        object.__setattr__(self, "cx", _as_array(self.cx, (n, d, d), "diffusion.cx"))
        object.__setattr__(self, "cy", _as_array(self.cy, (n, d, d), "diffusion.cy"))
        object.__setattr__(self, "cz", _as_array(self.cz, (n, d, d), "diffusion.cz"))
        object.__setattr__(self, "cu", _as_array(self.cu, (n, d, m), "diffusion.cu"))
        object.__setattr__(self, "c0", _as_array(self.c0, (n, d), "diffusion.c0"))
        object.__setattr__(self, "ct", _as_array(self.ct, (n, d), "diffusion.ct"))
        if self.profile not in TIME_PROFILES:
            raise ValidationError(f"diffusion profile must be one of {TIME_PROFILES}")

    def lipschitz_xyz(self) -> float:
        total = 0.0
        for j in range(self.n):
            mj = max(_spec_norm(self.cx[j]), _spec_norm(self.cy[j]), _spec_norm(self.cz[j]))
            total += mj * mj
        return float(np.sqrt(total))

    def control_table(self, controls: np.ndarray) -> np.ndarray:
        """Per-control constant columns c0 + Cu u, shape (n_controls, n, d)."""
        table = np.empty((controls.shape[0], self.n, self.d))
        for k in range(controls.shape[0]):
            for j in range(self.n):
                table[k, j] = self.c0[j] + self.cu[j] @ controls[k]
        return table

    def state_dependent(self) -> bool:
        return bool(np.any(self.cx) or np.any(self.cy) or np.any(self.cz))

    def to_dict(self) -> dict:
        return {
            "cx": self.cx.tolist(),
            "cy": self.cy.tolist(),
            "cz": self.cz.tolist(),
            "cu": self.cu.tolist(),
            "c0": self.c0.tolist(),
            "ct": self.ct.tolist(),
            "profile": self.profile,
        }


@dataclass(frozen=True)
class PolynomialCost:
    """Quadratic polynomial cost c0 + <cx,x> + <cy,y> + x'Qx x + y'Qy y (+ control terms)."""

    d: int
    m: int = 0
    c0: float = 0.0
    cx: np.ndarray | None = None
    cy: np.ndarray | None = None
    qx: np.ndarray | None = None
    qy: np.ndarray | None = None
    cu: np.ndarray | None = None

    def __post_init__(self):
        d, m = self.d, self.m
        object.__setattr__(self, "c0", float(self.c0))
        object.__setattr__(self, "cx", _as_array(self.cx, (d,), "cost.cx"))
        object.__setattr__(self, "cy", _as_array(self.cy, (d,), "cost.cy"))
        object.__setattr__(self, "qx", _as_array(self.qx, (d, d), "cost.qx"))
        object.__setattr__(self, "qy", _as_array(self.qy, (d, d), "cost.qy"))
        if m:
            object.__setattr__(self, "cu", _as_array(self.cu, (m,), "cost.cu"))
        else:
            object.__setattr__(self, "cu", _zeros((0,)))

    def degree(self) -> int:
        return 2 if (np.any(self.qx) or np.any(self.qy)) else 1

    def eval_rows(self, x: np.ndarray, y: np.ndarray, u_const: float = 0.0) -> np.ndarray:
        out = np.full(x.shape[0], self.c0 + u_const)
        for j in range(self.d):
            out = out + self.cx[j] * x[:, j] + self.cy[j] * y[:, j]
        if np.any(self.qx):
            qx = _matvec_rows(self.qx, x)
            for j in range(self.d):
                out = out + x[:, j] * qx[:, j]
        if np.any(self.qy):
            qy = _matvec_rows(self.qy, y)
            for j in range(self.d):
                out = out + y[:, j] * qy[:, j]
        return out

    def control_term(self, controls: np.ndarray) -> np.ndarray:
        """Per-control additive constants <cu, u>, shape (n_controls,)."""
        if self.m == 0 or self.cu.shape[0] == 0:
            return np.zeros(controls.shape[0])
        return np.array([float(np.dot(self.cu, u)) for u in controls])

    def to_dict(self) -> dict:
        return {
            "c0": self.c0,
            "cx": self.cx.tolist(),
            "cy": self.cy.tolist(),
            "qx": self.qx.tolist(),
            "qy": self.qy.tolist(),
            "cu": self.cu.tolist(),
        }


@dataclass(frozen=True)
class PathSegment:
    """Initial path on [-delta, 0], sampled at steps of h (oldest first)."""

    h: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValidationError("path segment values must be a (length, d) array")
        if not np.all(np.isfinite(values)):
            raise ValidationError("path segment values must be finite")
        if not self.h > 0:
            raise ValidationError("path segment step must be positive")
        object.__setattr__(self, "values", values)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def delta(self) -> float:
        return (self.length - 1) * self.h

    @classmethod
    def constant(cls, value, delta: float, h: float) -> "PathSegment":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        length = steps_in(delta, h) + 1
        return cls(h=h, values=np.tile(value, (length, 1)))

    def end_value(self) -> np.ndarray:
        return self.values[-1]

    def sup_norm(self) -> float:
        return float(np.max(_row_norm(self.values)))

    def shifted(self, offset) -> "PathSegment":
        return PathSegment(h=self.h, values=self.values + np.asarray(offset, dtype=float))

    def scaled(self, factor: float) -> "PathSegment":
        return PathSegment(h=self.h, values=self.values * float(factor))

    def validate_against(self, scn: "Scenario") -> None:
        if self.d != scn.d:
            raise ValidationError(f"path segment dimension {self.d} != scenario d {scn.d}")
        if not np.isclose(self.delta, scn.delta, atol=1e-9 * max(1.0, scn.delta)):
            raise ValidationError(
                f"path segment spans {self.delta}, scenario delay is {scn.delta}"
            )
        worst = float(np.max(scn.constraint.distance_rows(self.values)))
        if worst > 1e-9 * (1.0 + self.sup_norm()):
            raise ValidationError(
                f"path segment leaves the constraint domain (max distance {worst:.3e})"
            )


def steps_in(span: float, h: float) -> int:
    """Number of steps of size h in span; errors unless span is a multiple of h."""
    if not h > 0:
        raise ValidationError("step size must be positive")
    if span < -1e-12:
        raise ValidationError("time span must be nonnegative")
    k = round(span / h)
    if abs(k * h - span) > 1e-9 * max(1.0, abs(span)):
        raise ValidationError(f"span {span} is not an integer multiple of step {h}")
    return int(k)


@dataclass(frozen=True)
class Scenario:
    """Full problem description for the constrained delay SDE and its costs."""

    d: int
    n: int
    m: int
    delta: float
    lam: float
    big_t: float
    s0: float
    constraint: ConvexConstraint
    drift: AffineDrift
    diffusion: AffineDiffusion
    running_cost: PolynomialCost
    terminal_cost: PolynomialCost
    controls: np.ndarray
    ell: float
    kappa: float
    kappa_bar: float
    p: int
    growth_box: float = 10.0

    def __post_init__(self):
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        if controls.ndim != 2 or controls.shape[0] < 1 or controls.shape[1] != self.m:
            raise ValidationError("controls must be a nonempty (count, m) array")
        object.__setattr__(self, "controls", controls)
        self.validate()

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def validate(self) -> None:
        if self.d < 1 or self.d > 8:
            raise ValidationError("state dimension must be in 1..8")
        if self.n < 1 or self.m < 0:
            raise ValidationError("noise dimension must be >= 1, control dimension >= 0")
        if self.constraint.d != self.d:
            raise ValidationError("constraint dimension does not match scenario")
        if self.delta < 0:
            raise ValidationError("delay must be nonnegative")
        if not (0 <= self.s0 < self.big_t):
            raise ValidationError("initial time must satisfy 0 <= s0 < T")
        if self.ell < 0 or self.kappa < 0 or self.kappa_bar < 0 or self.p < 1:
            raise ValidationError("growth constants must be nonnegative, p >= 1")

        induced = self.drift.lipschitz_xyz() + self.diffusion.lipschitz_xyz()
        if induced > self.ell + 1e-9:
            raise ValidationError(
                f"declared ell={self.ell} below induced Lipschitz constant {induced:.6g}"
            )
        worst = self._origin_bound()
        if worst > self.kappa + 1e-9:
            raise ValidationError(
                f"declared kappa={self.kappa} below coefficient size at the origin {worst:.6g}"
            )
        self._check_growth()

    def _origin_bound(self) -> float:
        """max over a time grid and controls of |b(t,0,0,0,u)| + |sigma(t,0,0,0,u)|_F."""
        ts = np.linspace(0.0, self.big_t, 201)
        b_tab = self.drift.control_table(self.controls)
        s_tab = self.diffusion.control_table(self.controls)
        worst = 0.0
        for k in range(self.n_controls):
            for t in ts:
                pb = profile_value(self.drift.profile, float(t))
                ps = profile_value(self.diffusion.profile, float(t))
                bvec = b_tab[k] + pb * self.drift.bt
                smat = s_tab[k] + ps * self.diffusion.ct
                worst = max(worst, float(np.sqrt(np.sum(bvec * bvec)) + np.sqrt(np.sum(smat * smat))))
        return worst

    def _check_growth(self) -> None:
        deg = max(self.running_cost.degree(), self.terminal_cost.degree())
        if deg > self.p:
            raise ValidationError(f"declared growth power p={self.p} below cost degree {deg}")
        rng = np.random.Generator(np.random.Philox(key=np.array([17, 29], dtype=np.uint64)))
        pts = rng.uniform(-self.growth_box, self.growth_box, size=(256, 2 * self.d))
        xs, ys = pts[:, : self.d], pts[:, self.d :]
        env = self.kappa_bar * (1.0 + _row_norm(xs) ** self.p + _row_norm(ys) ** self.p)
        u_terms = self.running_cost.control_term(self.controls)
        for k in range(self.n_controls):
            f_vals = np.abs(self.running_cost.eval_rows(xs, ys, float(u_terms[k])))
            if np.any(f_vals > env + 1e-9):
                raise ValidationError(
                    "running cost exceeds the declared growth envelope on the sample box"
                )
        h_vals = np.abs(self.terminal_cost.eval_rows(xs, ys))
        if np.any(h_vals > env + 1e-9):
            raise ValidationError(
                "terminal cost exceeds the declared growth envelope on the sample box"
            )

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "m": self.m,
            "delta": self.delta,
            "lambda": self.lam,
            "T": self.big_t,
            "s0": self.s0,
            "constraint": self.constraint.to_dict(),
            "drift": self.drift.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "running_cost": self.running_cost.to_dict(),
            "terminal_cost": self.terminal_cost.to_dict(),
            "controls": self.controls.tolist(),
            "ell": self.ell,
            "kappa": self.kappa,
            "kappa_bar": self.kappa_bar,
            "p": self.p,
        }
