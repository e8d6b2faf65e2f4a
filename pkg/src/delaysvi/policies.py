"""Control policies over a finite control set.

Policies address controls by index into ``Scenario.controls`` so the
simulation engine can gather precomputed per-control coefficient tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


class Policy:
    """Maps (t, x, y) to an index into the scenario's control list."""

    def control_indices(self, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def max_index(self) -> int:
        raise NotImplementedError

    def validate_against(self, scn) -> None:
        if self.max_index() >= scn.n_controls:
            raise ValidationError(
                f"policy references control index {self.max_index()}, "
                f"scenario has {scn.n_controls} controls"
            )

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPolicy(Policy):
    u_index: int = 0

    def control_indices(self, t, x, y):
        return np.full(x.shape[0], self.u_index, dtype=np.intp)

    def max_index(self):
        return self.u_index

    def to_dict(self):
        return {"kind": "constant", "u_index": self.u_index}


@dataclass(frozen=True)
class PiecewiseConstantPolicy(Policy):
    """Constant control on [knots[i], knots[i+1]); first knot is the start time."""

    knots: tuple[float, ...]
    u_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.knots) != len(self.u_indices):
            raise ValidationError("piecewise policy needs one control index per knot")
        if len(self.knots) < 1 or any(
            self.knots[i] >= self.knots[i + 1] for i in range(len(self.knots) - 1)
        ):
            raise ValidationError("piecewise policy knots must be strictly increasing")
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        object.__setattr__(self, "u_indices", tuple(int(i) for i in self.u_indices))

    def control_indices(self, t, x, y):
        slot = int(np.searchsorted(self.knots, t + 1e-12, side="right") - 1)
        slot = max(slot, 0)
        return np.full(x.shape[0], self.u_indices[slot], dtype=np.intp)

    def max_index(self):
        return max(self.u_indices)

    def to_dict(self):
        return {
            "kind": "piecewise",
            "knots": list(self.knots),
            "u_indices": list(self.u_indices),
        }


@dataclass(frozen=True)
class FeedbackTablePolicy(Policy):
    """Nearest-cell lookup on a rectangular grid over the scalar pair (x_0, y_0).

    The grid must cover the state box the experiment operates in; states
    outside are clamped to the nearest cell.
    """

    x_lo: float
    x_hi: float
    nx: int
    y_lo: float
    y_hi: float
    ny: int
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.intp)
        if table.shape != (self.nx, self.ny):
            raise ValidationError(
                f"feedback table must have shape ({self.nx}, {self.ny}), got {table.shape}"
            )
        if self.nx < 1 or self.ny < 1 or not (self.x_hi > self.x_lo) or not (self.y_hi > self.y_lo):
            raise ValidationError("feedback grid must be nonempty with increasing bounds")
        object.__setattr__(self, "table", table)

    def _cell(self, v: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
        if n == 1:
            return np.zeros(v.shape[0], dtype=np.intp)
        step = (hi - lo) / (n - 1)
        idx = np.rint((v - lo) / step)
        return np.clip(idx, 0, n - 1).astype(np.intp)

    def control_indices(self, t, x, y):
        ix = self._cell(x[:, 0], self.x_lo, self.x_hi, self.nx)
        iy = self._cell(y[:, 0], self.y_lo, self.y_hi, self.ny)
        return self.table[ix, iy]

    def max_index(self):
        return int(self.table.max())

    def to_dict(self):
        return {
            "kind": "feedback",
            "x_lo": self.x_lo,
            "x_hi": self.x_hi,
            "nx": self.nx,
            "y_lo": self.y_lo,
            "y_hi": self.y_hi,
            "ny": self.ny,
            "table": self.table.tolist(),
        }


@dataclass(frozen=True)
class PolicyFamily:
    """Finite, ordered collection of policies; ties in studies break to the lowest id."""

    policies: tuple[Policy, ...]

    def __post_init__(self):
        if len(self.policies) == 0:
            raise ValidationError("policy family must be nonempty")
        object.__setattr__(self, "policies", tuple(self.policies))

    def __len__(self):
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def validate_against(self, scn) -> None:
        for pol in self.policies:
            pol.validate_against(scn)


def policy_from_dict(spec: dict) -> Policy:
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "constant":
            return ConstantPolicy(u_index=int(spec["u_index"]))
        if kind == "piecewise":
            return PiecewiseConstantPolicy(
                knots=tuple(spec["knots"]), u_indices=tuple(spec["u_indices"])
            )
        if kind == "feedback":
            return FeedbackTablePolicy(
                x_lo=float(spec["x_lo"]),
                x_hi=float(spec["x_hi"]),
                nx=int(spec["nx"]),
                y_lo=float(spec["y_lo"]),
                y_hi=float(spec["y_hi"]),
                ny=int(spec["ny"]),
                table=np.asarray(spec["table"]),
            )
    except KeyError as exc:
        raise ValidationError(f"policy spec missing field {exc}") from None
    raise ValidationError(f"unknown policy kind {kind!r}")
