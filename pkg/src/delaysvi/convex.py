"""Convex constraint functions and their Moreau/proximal calculus.

A constraint is a convex lower-semicontinuous function ``phi`` on R^d with
nonempty domain interior.  The catalog is closed-form: the zero function, a
PSD quadratic form, and indicator functions of boxes, balls, halfspaces and
halfspace intersections.  On top of the per-kind projections the module
provides the proximal point ``J_eps``, the Moreau envelope ``phi_eps``, its
gradient ``(x - J_eps(x)) / eps``, directional lower/upper subdifferential
limits used by the viscosity checks, and a numerical audit of the standard
inequality catalog tying all of these together.

All batch operations use fixed-order loops over the (small) space dimension,
so per-row results are bitwise independent of how rows are grouped into
batches.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import (
    DomainError,
    InvalidInputError,
    NumericError,
    PreconditionError,
    ValidationError,
)

_BOUNDARY_TOL = 1e-9
_MEMBER_TOL = 1e-9

__all__ = [
    "ConvexConstraint",
    "ZeroFunction",
    "QuadraticFunction",
    "BoxIndicator",
    "BallIndicator",
    "HalfspaceIndicator",
    "PolyhedronIndicator",
    "prox",
    "envelope",
    "yosida_grad",
    "dir_subdiff",
    "yosida_audit",
    "YosidaAuditReport",
    "constraint_from_dict",
]


def _as_matrix_rows(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _dot_rows(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = x[:, 0] * v[0]
    for j in range(1, v.shape[0]):
        out = out + x[:, j] * v[j]
    return out


def _row_norm_sq(x: np.ndarray) -> np.ndarray:
    out = x[:, 0] * x[:, 0]
    for j in range(1, x.shape[1]):
        out = out + x[:, j] * x[:, j]
    return out


def _row_norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_row_norm_sq(x))


def _matvec_rows(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply matrix ``m`` to every row of ``x``: out[p] = m @ x[p]."""
    d_out, d_in = m.shape
    out = np.empty((x.shape[0], d_out), dtype=float)
    for i in range(d_out):
        acc = m[i, 0] * x[:, 0]
        for j in range(1, d_in):
            acc = acc + m[i, j] * x[:, j]
        out[:, i] = acc
    return out


def _require_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return arr


class ConvexConstraint:
    """Base class: a convex l.s.c. function with closed-form projection."""

    kind: str = "abstract"
    #: True when the effective domain is all of R^d (function-type kinds).
    full_domain: bool = False

    def __init__(self, d: int):
        if d < 1:
            raise ValidationError("constraint dimension must be >= 1")
        self.d = int(d)

    # -- per-kind primitives -------------------------------------------------

    def value_rows(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project_rows(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection of each row onto closure(Dom)."""
        raise NotImplementedError

    def prox_rows(self, eps: float, x: np.ndarray) -> np.ndarray:
        """Minimizer of |v - x|^2/(2 eps) + phi(v), per row.

        For indicator kinds this is the projection at every eps.
        """
        return self.project_rows(x)

    def grad_rows(self, x: np.ndarray) -> np.ndarray:
        """The (unique) element of the subdifferential; full-domain kinds only."""
        raise NotImplementedError

    def boundary_normals(self, x: np.ndarray) -> list[np.ndarray]:
        """Unit generators of the outward normal cone at a boundary point.

        Empty list for interior points.  Only meaningful for indicator kinds.
        """
        raise NotImplementedError

    def interior_distance(self, x: np.ndarray) -> float:
        """Distance from x to the boundary of Dom (inf for full-domain kinds)."""
        raise NotImplementedError

    def prox_operator(self, eps: float):
        """Batch prox with any per-eps factorization precomputed once."""
        return lambda rows: self.prox_rows(eps, rows)

    # -- shared conveniences --------------------------------------------------

    def evaluate(self, x) -> float:
        x = _require_finite("x", x)
        return float(self.value_rows(np.atleast_2d(x))[0])

    def project(self, x) -> np.ndarray:
        x = _require_finite("x", x)
        rows, single = _as_matrix_rows(x)
        out = self.project_rows(rows)
        return out[0] if single else out

    def distance_rows(self, x: np.ndarray) -> np.ndarray:
        return _row_norm(x - self.project_rows(x))

    def distance(self, x) -> float:
        rows, _ = _as_matrix_rows(np.asarray(x, dtype=float))
        return float(self.distance_rows(rows)[0])

    def contains(self, x, tol: float = _MEMBER_TOL) -> bool:
        return self.distance(x) <= tol

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"{type(self).__name__}(d={self.d})"


class ZeroFunction(ConvexConstraint):
    """phi == 0 on all of R^d; the unconstrained case."""

    kind = "zero"
    full_domain = True

    def value_rows(self, x):
        return np.zeros(x.shape[0])

    def project_rows(self, x):
        return np.array(x, copy=True)

    def grad_rows(self, x):
        return np.zeros_like(x)

    def interior_distance(self, x):
        return math.inf

    def to_dict(self):
        return {"kind": "zero", "d": self.d}


class QuadraticFunction(ConvexConstraint):
    """phi(x) = x' Q x / 2 with Q symmetric positive semidefinite."""

    kind = "quadratic"
    full_domain = True

    def __init__(self, q: np.ndarray):
        q = np.asarray(q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValidationError("quadratic constraint needs a square matrix")
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValidationError("quadratic constraint matrix must be symmetric")
        eigs = np.linalg.eigvalsh(q)
        if eigs.min() < -1e-10:
            raise ValidationError("quadratic constraint matrix must be PSD")
        super().__init__(q.shape[0])
        self.q = q

    def value_rows(self, x):
        qx = _matvec_rows(self.q, x)
        out = x[:, 0] * qx[:, 0]
        for j in range(1, self.d):
            out = out + x[:, j] * qx[:, j]
        return 0.5 * out

    def project_rows(self, x):
        return np.array(x, copy=True)

    def _inverse(self, eps: float) -> np.ndarray:
        mat = np.eye(self.d) + eps * self.q
        try:
            return np.linalg.inv(mat)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - PSD guards this
            raise NumericError(f"prox solve failed for quadratic constraint: {exc}")

    def prox_rows(self, eps, x):
        return _matvec_rows(self._inverse(eps), x)

    def prox_operator(self, eps):
        inv = self._inverse(eps)
        return lambda rows: _matvec_rows(inv, rows)

    def grad_rows(self, x):
        return _matvec_rows(self.q, x)

    def interior_distance(self, x):
        return math.inf

    def to_dict(self):
        return {"kind": "quadratic", "q": self.q.tolist()}


class _Indicator(ConvexConstraint):
    """Indicator of a closed convex set: 0 inside, +inf outside."""

    full_domain = False

    def value_rows(self, x):
        scale = 1.0 + _row_norm(x)
        return np.where(self.distance_rows(x) <= _MEMBER_TOL * scale, 0.0, math.inf)

    def _active_tol(self, x: np.ndarray) -> float:
        return _BOUNDARY_TOL * (1.0 + float(np.max(np.abs(x), initial=0.0)))


class BoxIndicator(_Indicator):
    kind = "box"

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValidationError("box bounds must be 1-d arrays of equal length")
        if not np.all(hi > lo):
            raise ValidationError("box must have nonempty interior (hi > lo)")
        super().__init__(lo.shape[0])
        self.lo, self.hi = lo, hi

    def project_rows(self, x):
        out = np.empty_like(x)
        for j in range(self.d):
            out[:, j] = np.minimum(np.maximum(x[:, j], self.lo[j]), self.hi[j])
        return out

    def boundary_normals(self, x):
        tol = self._active_tol(x)
        normals = []
        for j in range(self.d):
            if abs(x[j] - self.lo[j]) <= tol:
                e = np.zeros(self.d)
                e[j] = -1.0
                normals.append(e)
            if abs(x[j] - self.hi[j]) <= tol:
                e = np.zeros(self.d)
                e[j] = 1.0
                normals.append(e)
        return normals

    def interior_distance(self, x):
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lo), np.min(self.hi - x)))

    def to_dict(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class BallIndicator(_Indicator):
    kind = "ball"

    def __init__(self, center, radius: float):
        center = np.asarray(center, dtype=float)
        if center.ndim != 1:
            raise ValidationError("ball center must be a 1-d array")
        if not radius > 0:
            raise ValidationError("ball radius must be positive")
        super().__init__(center.shape[0])
        self.center, self.radius = center, float(radius)

    def project_rows(self, x):
        shift = x - self.center[None, :]
        nrm = _row_norm(shift)
        factor = np.where(nrm > self.radius, self.radius / np.maximum(nrm, 1e-300), 1.0)
        return self.center[None, :] + shift * factor[:, None]

    def boundary_normals(self, x):
        shift = np.asarray(x, dtype=float) - self.center
        nrm = float(np.sqrt(np.sum(shift * shift)))
        if abs(nrm - self.radius) <= self._active_tol(x):
            return [shift / nrm]
        return []

    def interior_distance(self, x):
        shift = np.asarray(x, dtype=float) - self.center
        return float(self.radius - np.sqrt(np.sum(shift * shift)))

    def to_dict(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


class HalfspaceIndicator(_Indicator):
    """Indicator of {x : <a, x> <= c} with a stored as a unit vector."""

    kind = "halfspace"

    def __init__(self, a, c: float):
        a = np.asarray(a, dtype=float)
        if a.ndim != 1:
            raise ValidationError("halfspace normal must be a 1-d array")
        nrm = float(np.sqrt(np.sum(a * a)))
        if nrm <= 0:
            raise ValidationError("halfspace normal must be nonzero")
        super().__init__(a.shape[0])
        self.a = a / nrm
        self.c = float(c) / nrm

    def project_rows(self, x):
        viol = np.maximum(_dot_rows(x, self.a) - self.c, 0.0)
        return x - viol[:, None] * self.a[None, :]

    def boundary_normals(self, x):
        s = float(np.sum(np.asarray(x, dtype=float) * self.a))
        if abs(s - self.c) <= self._active_tol(x):
            return [self.a]
        return []

    def interior_distance(self, x):
        return float(self.c - np.sum(np.asarray(x, dtype=float) * self.a))

    def to_dict(self):
        return {"kind": "halfspace", "a": self.a.tolist(), "c": self.c}


class PolyhedronIndicator(_Indicator):
    """Indicator of an intersection of halfspaces {<a_i, x> <= c_i}.

    Projection runs cyclic Dykstra iterations; a row that fails to converge
    within the iteration cap raises rather than returning a possibly wrong
    point.
    """

    kind = "polyhedron"
    max_iter = 10_000
    residual_tol = 1e-10

    def __init__(self, halfspaces: Sequence[HalfspaceIndicator] | None = None, *, a=None, c=None):
        if halfspaces is not None:
            a = np.stack([hs.a for hs in halfspaces])
            c = np.array([hs.c for hs in halfspaces], dtype=float)
        else:
            a = np.asarray(a, dtype=float)
            c = np.asarray(c, dtype=float)
        if a.ndim != 2 or a.shape[0] != c.shape[0] or a.shape[0] < 1:
            raise ValidationError("polyhedron needs matching normal rows and offsets")
        norms = np.sqrt(np.sum(a * a, axis=1))
        if np.any(norms <= 0):
            raise ValidationError("polyhedron normals must be nonzero")
        super().__init__(a.shape[1])
        self.a = a / norms[:, None]
        self.c = c / norms

    def project_rows(self, x):
        m = self.a.shape[0]
        out = np.array(x, copy=True)
        corr = np.zeros((m,) + x.shape)
        active = np.arange(x.shape[0])
        for _ in range(self.max_iter):
            if active.size == 0:
                return out
            cur = out[active]
            start = cur.copy()
            for i in range(m):
                y = cur + corr[i, active]
                viol = np.maximum(_dot_rows(y, self.a[i]) - self.c[i], 0.0)
                proj = y - viol[:, None] * self.a[i][None, :]
                corr[i, active] = y - proj
                cur = proj
            out[active] = cur
            moved = _row_norm(cur - start)
            feas = np.zeros(cur.shape[0])
            for i in range(m):
                feas = np.maximum(feas, _dot_rows(cur, self.a[i]) - self.c[i])
            done = (moved <= self.residual_tol) & (feas <= self.residual_tol)
            active = active[~done]
        raise NumericError(
            f"Dykstra projection did not converge within {self.max_iter} cycles "
            f"for {active.size} point(s)"
        )

    def boundary_normals(self, x):
        tol = self._active_tol(x)
        x = np.asarray(x, dtype=float)
        normals = []
        for i in range(self.a.shape[0]):
            if abs(float(np.sum(x * self.a[i])) - self.c[i]) <= tol:
                normals.append(self.a[i])
        return normals

    def interior_distance(self, x):
        x = np.asarray(x, dtype=float)
        slacks = [self.c[i] - float(np.sum(x * self.a[i])) for i in range(self.a.shape[0])]
        return float(min(slacks))

    def to_dict(self):
        return {"kind": "polyhedron", "a": self.a.tolist(), "c": self.c.tolist()}


def constraint_from_dict(spec: dict) -> ConvexConstraint:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "zero":
            return ZeroFunction(int(spec["d"]))
        if kind == "quadratic":
            return QuadraticFunction(np.asarray(spec["q"], dtype=float))
        if kind == "box":
            return BoxIndicator(spec["lo"], spec["hi"])
        if kind == "ball":
            return BallIndicator(spec["center"], float(spec["radius"]))
        if kind == "halfspace":
            return HalfspaceIndicator(spec["a"], float(spec["c"]))
        if kind == "polyhedron":
            return PolyhedronIndicator(a=spec["a"], c=spec["c"])
    except KeyError as exc:
        raise ValidationError(f"constraint spec missing field {exc}") from None
    raise ValidationError(f"unknown constraint kind {kind!r}")


# ---------------------------------------------------------------------------
# Moreau/proximal operations
# ---------------------------------------------------------------------------


def prox(phi: ConvexConstraint, eps: float, x) -> np.ndarray:
    """Proximal point J_eps(x): unique minimizer of |v-x|^2/(2 eps) + phi(v)."""
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    x = _require_finite("x", x)
    rows, single = _as_matrix_rows(x)
    out = phi.prox_rows(eps, rows)
    return out[0] if single else out


def envelope(phi: ConvexConstraint, eps: float, x) -> float:
    """Moreau envelope phi_eps(x) = |x - J|^2/(2 eps) + phi(J) with J = prox."""
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    x = _require_finite("x", x)
    rows, _ = _as_matrix_rows(x)
    return float(envelope_rows(phi, eps, rows)[0])


def envelope_rows(phi: ConvexConstraint, eps: float, rows: np.ndarray) -> np.ndarray:
    j = phi.prox_rows(eps, rows)
    return _row_norm_sq(rows - j) / (2.0 * eps) + phi.value_rows(j)


def yosida_grad(phi: ConvexConstraint, eps: float, x) -> np.ndarray:
    """Gradient of the envelope: (x - J_eps(x)) / eps."""
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    x = _require_finite("x", x)
    rows, single = _as_matrix_rows(x)
    out = (rows - phi.prox_rows(eps, rows)) / eps
    return out[0] if single else out


def dir_subdiff(phi: ConvexConstraint, x, z, mode: str = "lower") -> float:
    """Directional subdifferential limits.

    ``lower`` returns liminf over (x', z') -> (x, z), g in subdiff(x') of
    <g, z'>;  ``upper`` is -lower(x, -z).  For full-domain kinds the
    subdifferential is a singleton and the value is the plain inner product.
    For indicator kinds the closed form is 0 when every unit outward normal
    n at x satisfies <n, z> > 0 (or x is interior), and -inf otherwise.
    """
    if mode not in ("lower", "upper"):
        raise InvalidInputError(f"mode must be 'lower' or 'upper', got {mode!r}")
    x = _require_finite("x", x)
    z = _require_finite("z", z)
    if mode == "upper":
        return -dir_subdiff(phi, x, -z, "lower")

    if phi.full_domain:
        g = phi.grad_rows(x[None, :])[0]
        return float(np.sum(g * z))

    scale = 1.0 + float(np.max(np.abs(x), initial=0.0))
    if phi.distance(x) > _BOUNDARY_TOL * scale:
        raise DomainError("point lies strictly outside the constraint domain")
    normals = phi.boundary_normals(x)
    if not normals:
        return 0.0
    worst = min(float(np.sum(n * z)) for n in normals)
    return 0.0 if worst > 0.0 else -math.inf


# ---------------------------------------------------------------------------
# Inequality audit
# ---------------------------------------------------------------------------

AUDIT_IDS = ("i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix")


class YosidaAuditReport:
    """Per-(inequality, sample) slack records from :func:`yosida_audit`.

    Every record encodes an inequality ``lhs <= rhs`` (identities keep both
    sides and a slack of ``-|lhs - rhs|``); a record passes when its slack is
    at least ``-tolerance``.
    """

    def __init__(self, tol_abs: float, tol_rel: float):
        self.tol_abs = tol_abs
        self.tol_rel = tol_rel
        self.inequality: list[str] = []
        self.sample: list[int] = []
        self.eps: list[float] = []
        self.eps2: list[float] = []
        self.lhs: list[float] = []
        self.rhs: list[float] = []
        self.slack: list[float] = []
        self.passed: list[bool] = []
        self.constants_vii: tuple[np.ndarray, float, float] | None = None

    def _add(self, ineq, sample, eps, eps2, lhs, rhs, slack):
        tol = self.tol_abs + self.tol_rel * max(
            abs(lhs) if math.isfinite(lhs) else 0.0,
            abs(rhs) if math.isfinite(rhs) else 0.0,
            1.0,
        )
        self.inequality.append(ineq)
        self.sample.append(sample)
        self.eps.append(eps)
        self.eps2.append(eps2 if eps2 is not None else math.nan)
        self.lhs.append(lhs)
        self.rhs.append(rhs)
        self.slack.append(slack)
        self.passed.append(bool(slack >= -tol))

    @property
    def all_passed(self) -> bool:
        return all(self.passed)

    def min_slack(self, ineq: str) -> float:
        vals = [s for q, s in zip(self.inequality, self.slack) if q == ineq]
        return min(vals) if vals else math.inf

    def failures(self) -> list[tuple[str, int, float]]:
        return [
            (q, s, sl)
            for q, s, sl, ok in zip(self.inequality, self.sample, self.slack, self.passed)
            if not ok
        ]

    def __len__(self) -> int:
        return len(self.slack)


def yosida_audit(
    phi: ConvexConstraint,
    eps_list: Sequence[float],
    samples: Sequence[tuple],
    u0,
    tol_abs: float = 1e-9,
    tol_rel: float = 1e-9,
) -> YosidaAuditReport:
    """Check the envelope/gradient inequality catalog on concrete samples.

    Items (vii)-(ix) require the normalization phi >= phi(0) = 0 with 0 in
    the domain, and (vii) additionally an interior point ``u0``; the fitted
    constants (u0, r0, M0) are recorded in the report.  r0 is the distance
    from u0 to the domain boundary, capped at 1 for full-domain kinds, and
    M0 is the largest observed violation plus a small margin, so the (vii)
    records document a feasible constant rather than test an external one.
    """
    if len(samples) == 0:
        raise PreconditionError("audit needs at least one sample pair")
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise InvalidInputError("all eps values must be positive")
    u0 = _require_finite("u0", u0)
    r0 = phi.interior_distance(u0)
    if not r0 > 0:
        raise PreconditionError("u0 must lie in the interior of the domain")
    r0 = min(1.0, r0)
    origin = np.zeros(phi.d)
    if not (phi.contains(origin) and abs(phi.evaluate(origin)) <= tol_abs):
        raise PreconditionError("audit requires phi(0) = 0 with 0 in the domain")

    xs = np.stack([np.asarray(x, dtype=float) for x, _ in samples])
    ys = np.stack([np.asarray(y, dtype=float) for _, y in samples])
    _require_finite("samples", xs)
    _require_finite("samples", ys)
    n = xs.shape[0]

    report = YosidaAuditReport(tol_abs, tol_rel)

    # Cache prox-derived quantities per eps.
    grads_x = {e: (xs - phi.prox_rows(e, xs)) / e for e in eps_list}
    grads_y = {e: (ys - phi.prox_rows(e, ys)) / e for e in eps_list}
    prox_x = {e: phi.prox_rows(e, xs) for e in eps_list}
    env_x = {e: envelope_rows(phi, e, xs) for e in eps_list}
    phi_x = phi.value_rows(xs)
    phi_y = phi.value_rows(ys)

    raw_vii = -math.inf
    for e in eps_list:
        gx = grads_x[e]
        inner = gx[:, 0] * (xs[:, 0] - u0[0])
        for j in range(1, phi.d):
            inner = inner + gx[:, j] * (xs[:, j] - u0[j])
        raw_vii = max(raw_vii, float(np.max(r0 * _row_norm(gx) - inner)))
    m0 = max(raw_vii, 0.0) * 1.01 + tol_abs
    report.constants_vii = (u0.copy(), r0, m0)

    for e in eps_list:
        gx, gy = grads_x[e], grads_y[e]
        jx = prox_x[e]
        fe = env_x[e]
        phi_jx = phi.value_rows(jx)
        gnorm2 = _row_norm_sq(gx)
        for s in range(n):
            x, y = xs[s], ys[s]
            g = gx[s]
            # (i) envelope decomposition (identity).
            rhs_i = 0.5 * e * gnorm2[s] + phi_jx[s]
            report._add("i", s, e, None, fe[s], rhs_i, -abs(fe[s] - rhs_i))
            # (ii) sandwich phi(J) <= phi_eps <= phi(x).
            s1 = fe[s] - phi_jx[s]
            s2 = phi_x[s] - fe[s]
            if s1 <= s2:
                report._add("ii", s, e, None, phi_jx[s], fe[s], s1)
            else:
                report._add("ii", s, e, None, fe[s], phi_x[s], s2)
            # (iii) gradient is a subgradient at the prox point: test the
            # defining inequality against the sample's partner points.
            worst = math.inf
            for w, phi_w in ((y, phi_y[s]), (u0, phi.evaluate(u0)), (origin, 0.0)):
                lhs = float(np.sum(g * (w - jx[s]))) + phi_jx[s]
                worst = min(worst, phi_w - lhs)
            report._add("iii", s, e, None, 0.0, worst, worst)
            # (iv) gradient Lipschitz bound 1/eps.
            diff_g = float(np.sqrt(np.sum((g - gy[s]) ** 2)))
            bound = float(np.sqrt(np.sum((x - y) ** 2))) / e
            report._add("iv", s, e, None, diff_g, bound, bound - diff_g)
            # (v) monotonicity.
            mono = float(np.sum((g - gy[s]) * (x - y)))
            report._add("v", s, e, None, 0.0, mono, mono)
            # (viii) |grad| <= |x| / eps (needs the normalization).
            lhs8 = float(np.sqrt(gnorm2[s]))
            rhs8 = float(np.sqrt(np.sum(x * x))) / e
            report._add("viii", s, e, None, lhs8, rhs8, rhs8 - lhs8)
            # (ix) (eps/2)|grad|^2 <= phi_eps <= <grad, x>.
            s1 = fe[s] - 0.5 * e * gnorm2[s]
            s2 = float(np.sum(g * x)) - fe[s]
            if s1 <= s2:
                report._add("ix", s, e, None, 0.5 * e * gnorm2[s], fe[s], s1)
            else:
                report._add("ix", s, e, None, fe[s], float(np.sum(g * x)), s2)
            # (vii) with the fitted constants.
            inner = float(np.sum(g * (x - u0)))
            report._add("vii", s, e, None, r0 * lhs8, inner + m0, inner + m0 - r0 * lhs8)

    # (vi) cross-eps monotonicity on ordered eps pairs.
    for e in eps_list:
        for e2 in eps_list:
            gx = grads_x[e]
            gy2 = grads_y[e2]
            for s in range(n):
                lhs = float(np.sum((gx[s] - gy2[s]) * (xs[s] - ys[s])))
                rhs = -(e + e2) * float(np.sum(gx[s] * gy2[s]))
                report._add("vi", s, e, e2, rhs, lhs, lhs - rhs)

    return report
