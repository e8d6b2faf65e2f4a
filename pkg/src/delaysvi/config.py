"""Experiment configuration: YAML tree -> validated objects.

The file is a single tree with four blocks::

    experiment: <id>
    scenario:  {dimensions, horizon, constraint, coefficients, costs, controls, initial}
    solver:    {scheme, h, seed, n_paths, eps}
    study:     {kind, <study-specific parameters>}
    output:    {dir}                      # optional

Unknown keys anywhere are rejected.  Overrides (``a.b.c=value``) re-enter
the full validation path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .convex import constraint_from_dict
from .engine import SolverConfig
from .errors import ValidationError
from .hjb import GridSpec, ReducedScenario
from .policies import PolicyFamily, policy_from_dict
from .scenario import (
    AffineDiffusion,
    AffineDrift,
    PathSegment,
    PolynomialCost,
    Scenario,
)

STUDY_KINDS = (
    "simulate",
    "moments",
    "dependence",
    "cauchy-rate",
    "cost",
    "value",
    "dpp",
    "regularity",
    "gap",
    "hjb",
    "viscosity-probe",
    "compare",
)

_TOP_KEYS = {"experiment", "scenario", "solver", "study", "output"}
_SCENARIO_KEYS = {
    "d",
    "n",
    "m",
    "delta",
    "lambda",
    "T",
    "s0",
    "ell",
    "kappa",
    "kappa_bar",
    "p",
    "constraint",
    "drift",
    "diffusion",
    "running_cost",
    "terminal_cost",
    "controls",
    "initial",
}
_SOLVER_KEYS = {"scheme", "h", "seed", "n_paths", "eps"}
_DRIFT_KEYS = {"bx", "by", "bz", "bu", "b0", "bt", "profile"}
_DIFFUSION_KEYS = {"cx", "cy", "cz", "cu", "c0", "ct", "profile"}
_COST_KEYS = {"c0", "cx", "cy", "qx", "qy", "cu"}
_INITIAL_KEYS = {"kind", "value", "values"}
_GRID_KEYS = {"m_time", "x_lo", "x_hi", "nx", "y_lo", "y_hi", "ny"}
_STUDY_KEYS = {
    "simulate": {"kind", "path_index", "audit_points", "audit_tol"},
    "moments": {"kind", "scaling_factors"},
    "dependence": {"kind", "s2", "shift", "initial2"},
    "cauchy-rate": {"kind", "eps_list", "with_reference"},
    "cost": {"kind"},
    "value": {"kind", "family"},
    "dpp": {"kind", "family", "theta", "inner_paths", "product_cap"},
    "regularity": {"kind", "family", "variants"},
    "gap": {"kind", "family", "eps_list"},
    "hjb": {"kind", "zeta", "grid", "eps"},
    "viscosity-probe": {"kind", "zeta", "grid", "eps", "points", "stencil_radius"},
    "compare": {"kind", "zeta", "grid", "eps", "family", "points", "grid_error_coeff"},
}


def _check_keys(block: dict, allowed: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ValidationError(f"{where} must be a mapping")
    unknown = set(block) - allowed
    if unknown:
        raise ValidationError(f"unknown field(s) {sorted(unknown)} in {where}")


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ValidationError(f"missing required field {key!r} in {where}")
    return block[key]


@dataclass
class ExperimentConfig:
    experiment: str
    scenario: Scenario
    start: float
    initial: PathSegment
    solver: SolverConfig
    study: dict
    output_dir: str | None
    raw: dict

    @property
    def study_kind(self) -> str:
        return self.study["kind"]


def _build_initial(block: dict, scn: Scenario, h: float) -> PathSegment:
    _check_keys(block, _INITIAL_KEYS, "scenario.initial")
    kind = _require(block, "kind", "scenario.initial")
    if kind == "constant":
        value = _require(block, "value", "scenario.initial")
        seg = PathSegment.constant(value, scn.delta, h)
    elif kind == "values":
        seg = PathSegment(h=h, values=np.asarray(_require(block, "values", "scenario.initial"), dtype=float))
    else:
        raise ValidationError(f"unknown initial kind {kind!r}")
    seg.validate_against(scn)
    return seg


def _build_scenario(block: dict) -> Scenario:
    _check_keys(block, _SCENARIO_KEYS, "scenario")
    d = int(_require(block, "d", "scenario"))
    n = int(block.get("n", 1))
    m = int(block.get("m", 1))
    drift_block = dict(block.get("drift", {}) or {})
    _check_keys(drift_block, _DRIFT_KEYS, "scenario.drift")
    diffusion_block = dict(block.get("diffusion", {}) or {})
    _check_keys(diffusion_block, _DIFFUSION_KEYS, "scenario.diffusion")
    rc_block = dict(block.get("running_cost", {}) or {})
    _check_keys(rc_block, _COST_KEYS, "scenario.running_cost")
    tc_block = dict(block.get("terminal_cost", {}) or {})
    _check_keys(tc_block, _COST_KEYS, "scenario.terminal_cost")
    tc_block.pop("cu", None)

    return Scenario(
        d=d,
        n=n,
        m=m,
        delta=float(block.get("delta", 0.0)),
        lam=float(block.get("lambda", 0.0)),
        big_t=float(_require(block, "T", "scenario")),
        s0=float(block.get("s0", 0.0)),
        constraint=constraint_from_dict(_require(block, "constraint", "scenario")),
        drift=AffineDrift(d=d, m=m, **drift_block),
        diffusion=AffineDiffusion(d=d, n=n, m=m, **diffusion_block),
        running_cost=PolynomialCost(d=d, m=m, **rc_block),
        terminal_cost=PolynomialCost(d=d, m=0, **tc_block),
        controls=np.asarray(block.get("controls", [[0.0] * m]), dtype=float),
        ell=float(_require(block, "ell", "scenario")),
        kappa=float(_require(block, "kappa", "scenario")),
        kappa_bar=float(block.get("kappa_bar", 1.0)),
        p=int(block.get("p", 2)),
    )


def _build_solver(block: dict) -> SolverConfig:
    _check_keys(block, _SOLVER_KEYS, "solver")
    return SolverConfig(
        h=float(_require(block, "h", "solver")),
        seed=int(_require(block, "seed", "solver")),
        n_paths=int(block.get("n_paths", 1)),
        scheme=str(block.get("scheme", "prox_implicit")),
        eps=None if block.get("eps") is None else float(block["eps"]),
    )


def build_family(spec, scn: Scenario) -> PolicyFamily:
    if not isinstance(spec, (list, tuple)) or not spec:
        raise ValidationError("family must be a nonempty list of policy specs")
    fam = PolicyFamily(tuple(policy_from_dict(p) for p in spec))
    fam.validate_against(scn)
    return fam


def build_grid(spec: dict) -> GridSpec:
    _check_keys(spec, _GRID_KEYS, "study.grid")
    d_guess = len(np.atleast_1d(_require(spec, "x_lo", "study.grid")))

    def tup(key, default=None):
        val = spec.get(key, default)
        if val is None:
            raise ValidationError(f"missing required field {key!r} in study.grid")
        return tuple(np.atleast_1d(np.asarray(val, dtype=float)).tolist())

    return GridSpec(
        m_time=int(_require(spec, "m_time", "study.grid")),
        x_lo=tup("x_lo"),
        x_hi=tup("x_hi"),
        nx=tuple(int(v) for v in np.atleast_1d(spec.get("nx", [51] * d_guess))),
        y_lo=tup("y_lo"),
        y_hi=tup("y_hi"),
        ny=tuple(int(v) for v in np.atleast_1d(spec.get("ny", [3] * d_guess))),
    )


def build_reduced(scn: Scenario, study: dict) -> ReducedScenario:
    return ReducedScenario(base=scn, zeta=str(study.get("zeta", "identity")))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config root must be a mapping")
    _check_keys(raw, _TOP_KEYS, "config")
    experiment = str(_require(raw, "experiment", "config"))
    scn = _build_scenario(dict(_require(raw, "scenario", "config")))
    solver = _build_solver(dict(_require(raw, "solver", "config")))

    study = dict(_require(raw, "study", "config"))
    kind = _require(study, "kind", "study")
    if kind not in STUDY_KINDS:
        raise ValidationError(f"unknown study kind {kind!r}; expected one of {STUDY_KINDS}")
    _check_keys(study, _STUDY_KEYS[kind], f"study ({kind})")

    start = scn.s0
    initial = _build_initial(
        dict(_require(dict(raw["scenario"]), "initial", "scenario")), scn, solver.h
    )
    # Cross-field validation (alignment, stability guard, scheme/kind match).
    if kind not in ("hjb", "viscosity-probe"):
        solver.validate_for(scn, start)

    output = raw.get("output") or {}
    _check_keys(output, {"dir"}, "output")

    return ExperimentConfig(
        experiment=experiment,
        scenario=scn,
        start=start,
        initial=initial,
        solver=solver,
        study=study,
        output_dir=output.get("dir"),
        raw=raw,
    )


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply dotted-path key=value overrides and return a new tree."""
    import copy

    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form path=value")
        path, value = item.split("=", 1)
        keys = path.strip().split(".")
        node = out
        for key in keys[:-1]:
            if not isinstance(node, dict):
                raise ValidationError(f"override path {path!r} does not address a mapping")
            node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValidationError(f"override path {path!r} does not address a mapping")
        node[keys[-1]] = yaml.safe_load(value)
    return out
