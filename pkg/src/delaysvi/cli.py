"""Config-driven batch front end.

``delaysvi run <config.yaml> [--override k=v]... [--workers N] [--out DIR]``

Each run executes one study, writes ``<out>/<id>/<study>.csv`` and
``<study>.json`` plus a ``manifest.json`` holding the fully resolved config,
the seed, and SHA-256 checksums of every artifact.  Exit codes: 0 success,
2 validation error, 3 numeric error.  The default output directory comes
from ``$DELAYSVI_OUT`` (falling back to ``./out``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import control, hjb, mclab
from .config import (
    ExperimentConfig,
    apply_overrides,
    build_family,
    build_grid,
    build_reduced,
    config_from_dict,
)
from .engine import simulate_path, solution_audit
from .errors import DelaySviError, NumericError, ValidationError
from .scenario import PathSegment

ENV_OUT = "DELAYSVI_OUT"


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value)
    return value


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    fields: list[str] = []
    for row in rows:
        for key in row:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})


def write_json(path: Path, payload) -> None:
    def default(obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        if isinstance(obj, float) and not math.isfinite(obj):
            return repr(obj)
        return str(obj)

    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=default)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Study implementations: each returns (rows_for_csv, json_payload, summary)
# ---------------------------------------------------------------------------


def _study_simulate(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    traj = simulate_path(
        cfg.scenario, _default_policy(cfg), cfg.start, cfg.initial, cfg.solver,
        path_index=int(params.get("path_index", 0)),
    )
    csv_path = outdir / "simulate.csv"
    traj.to_csv(csv_path)
    payload = {
        "phi_integral": traj.phi_integral,
        "k_variation": traj.k_variation,
        "scheme": traj.scheme,
        "final_state": traj.X[-1].tolist(),
    }
    if params.get("audit_points") is not None:
        report = solution_audit(
            traj,
            cfg.scenario.constraint,
            np.asarray(params["audit_points"], dtype=float),
            tol=float(params.get("audit_tol", 1e-9)),
        )
        payload["audit"] = {
            "vi_violation": report.vi_violation.tolist(),
            "vi_pass": report.vi_pass.tolist(),
            "domain_worst": report.domain_worst,
            "domain_allowed": report.domain_allowed,
            "all_passed": report.all_passed,
        }
    summary = f"final_state={traj.X[-1].tolist()} k_variation={traj.k_variation:.6g}"
    return None, payload, summary


def _default_policy(cfg: ExperimentConfig):
    from .policies import ConstantPolicy

    return ConstantPolicy(0)


def _study_moments(cfg: ExperimentConfig, workers: int, outdir: Path):
    report = mclab.estimate_moments(
        cfg.scenario, _default_policy(cfg), cfg.start, cfg.initial, cfg.solver, workers=workers
    )
    ratios = mclab.apriori_bound_check(report, cfg.initial, cfg.scenario.constraint)
    payload = {"moments": report.as_dict(), "bound_ratios": ratios}
    rows = [report.as_dict()]
    factors = cfg.study.get("scaling_factors")
    if factors:
        payload["scaling_study"] = mclab.apriori_scaling_study(
            cfg.scenario, _default_policy(cfg), cfg.start, cfg.initial, cfg.solver,
            factors=tuple(float(f) for f in factors), workers=workers,
        )
    summary = f"sup_x2={report.sup_x2[0]:.6g}±{report.sup_x2[1]:.2g}"
    return rows, payload, summary


def _study_dependence(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    s2 = float(params.get("s2", cfg.start))
    if params.get("initial2") is not None:
        from .config import _build_initial

        xi2 = _build_initial(dict(params["initial2"]), cfg.scenario, cfg.solver.h)
    elif params.get("shift") is not None:
        xi2 = cfg.initial.shifted(params["shift"])
        xi2.validate_against(cfg.scenario)
    else:
        raise ValidationError("dependence study needs 'shift' or 'initial2'")
    record = mclab.dependence_study(
        cfg.scenario, (cfg.start, cfg.initial), (s2, xi2), _default_policy(cfg), cfg.solver
    )
    rows = [record.as_dict()]
    summary = f"lhs_x={record.lhs_x[0]:.6g} C={record.empirical_c_x:.4g}"
    return rows, record.as_dict(), summary


def _study_cauchy(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    study = mclab.cauchy_rate_study(
        cfg.scenario,
        _default_policy(cfg),
        cfg.start,
        cfg.initial,
        params.get("eps_list", [0.4, 0.2, 0.1, 0.05]),
        cfg.solver,
        with_reference=bool(params.get("with_reference", True)),
    )
    payload = {
        "rows": study.rows,
        "slope": study.slope,
        "monotone": study.monotone,
        "gamma2": study.gamma2,
        "reference_gaps": study.reference_gaps,
    }
    summary = f"slope={study.slope:.4g} monotone={study.monotone}"
    return study.rows, payload, summary


def _study_cost(cfg: ExperimentConfig, workers: int, outdir: Path):
    est = mclab.estimate_cost(
        cfg.scenario, _default_policy(cfg), cfg.start, cfg.initial, cfg.solver, workers=workers
    )
    return [est.as_dict()], est.as_dict(), f"j_hat={est.j_hat:.6g}±{est.stderr:.2g}"


def _study_value(cfg: ExperimentConfig, workers: int, outdir: Path):
    family = build_family(cfg.study.get("family"), cfg.scenario)
    est = control.estimate_value(
        cfg.scenario, family, cfg.start, cfg.initial, cfg.solver, workers=workers
    )
    rows = [
        {"policy_id": i, "j_hat": j, "stderr": s} for i, (j, s) in enumerate(est.per_policy)
    ]
    return rows, est.as_dict(), f"v_hat={est.v_hat:.6g} argmin={est.argmin_id}"


def _study_dpp(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    family = build_family(params.get("family"), cfg.scenario)
    res = control.dpp_residual(
        cfg.scenario,
        family,
        cfg.start,
        cfg.initial,
        float(params["theta"]),
        cfg.solver,
        inner_paths=int(params.get("inner_paths", 500)),
        product_cap=int(params.get("product_cap", 10**7)),
    )
    return [res.as_dict()], res.as_dict(), f"residual={res.residual:.3e}±{res.combined_stderr:.2e}"


def _study_regularity(cfg: ExperimentConfig, workers: int, outdir: Path):
    from .config import _build_initial

    params = cfg.study
    family = build_family(params.get("family"), cfg.scenario)
    inits = [(cfg.start, cfg.initial)]
    for var in params.get("variants", []):
        s = float(var.get("s", cfg.start))
        if "initial" in var:
            xi = _build_initial(dict(var["initial"]), cfg.scenario, cfg.solver.h)
        elif "shift" in var:
            xi = cfg.initial.shifted(var["shift"])
            xi.validate_against(cfg.scenario)
        else:
            raise ValidationError("regularity variant needs 'initial' or 'shift'")
        inits.append((s, xi))
    rows = control.value_regularity_probe(
        cfg.scenario, family, inits, cfg.solver, workers=workers
    )
    return rows, {"rows": rows}, f"pairs={len(rows)}"


def _study_gap(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    family = build_family(params.get("family"), cfg.scenario)
    rows = control.penalization_gap(
        cfg.scenario,
        family,
        cfg.start,
        cfg.initial,
        params.get("eps_list", [0.4, 0.2, 0.1]),
        cfg.solver,
        workers=workers,
    )
    return rows, {"rows": rows}, f"final_gap={rows[-1]['gap']:.4g}"


def _study_hjb(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    red = build_reduced(cfg.scenario, params)
    grid = build_grid(dict(params["grid"]))
    eps = float(params.get("eps", 2.0 * grid.max_spacing()))
    field = hjb.solve_hjb(red, grid, eps)
    csv_path = outdir / "hjb.csv"
    field.to_csv(csv_path)
    payload = field.metadata()
    return None, payload, f"layers={grid.m_time + 1} min_weight={field.cfl['min_diag_weight']:.4g}"


def _parse_points(raw_points) -> list[tuple]:
    points = []
    for p in raw_points:
        s, x, y = p
        points.append((float(s), np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(y, dtype=float))))
    return points


def _study_viscosity(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    red = build_reduced(cfg.scenario, params)
    grid = build_grid(dict(params["grid"]))
    eps = float(params.get("eps", 2.0 * grid.max_spacing()))
    field = hjb.solve_hjb(red, grid, eps)
    reports = hjb.viscosity_probe(
        field,
        cfg.scenario.constraint,
        _parse_points(params.get("points", [])),
        stencil_radius=int(params.get("stencil_radius", 2)),
    )
    rows = [
        {
            "s": r["point"]["s"],
            "x": r["point"]["x"],
            "y": r["point"]["y"],
            "subsolution_slack": r.get("subsolution_slack"),
            "supersolution_slack": r.get("supersolution_slack"),
            "subsolution_vacuous": r.get("subsolution_vacuous"),
            "supersolution_vacuous": r.get("supersolution_vacuous"),
            "skipped": r.get("skipped", ""),
        }
        for r in reports
    ]
    return rows, {"reports": reports}, f"points={len(reports)}"


def _study_compare(cfg: ExperimentConfig, workers: int, outdir: Path):
    params = cfg.study
    red = build_reduced(cfg.scenario, params)
    grid = build_grid(dict(params["grid"]))
    eps = float(params.get("eps", 2.0 * grid.max_spacing()))
    field = hjb.solve_hjb(red, grid, eps)
    family = build_family(params.get("family"), cfg.scenario)
    rows = hjb.compare_mc(
        field,
        cfg.scenario,
        family,
        _parse_points(params.get("points", [])),
        cfg.solver,
        grid_error_coeff=float(params.get("grid_error_coeff", 5.0)),
        workers=workers,
    )
    n_ok = sum(1 for r in rows if r.get("within_budget"))
    return rows, {"rows": rows}, f"within_budget={n_ok}/{len(rows)}"


_STUDIES = {
    "simulate": _study_simulate,
    "moments": _study_moments,
    "dependence": _study_dependence,
    "cauchy-rate": _study_cauchy,
    "cost": _study_cost,
    "value": _study_value,
    "dpp": _study_dpp,
    "regularity": _study_regularity,
    "gap": _study_gap,
    "hjb": _study_hjb,
    "viscosity-probe": _study_viscosity,
    "compare": _study_compare,
}


def run_experiment(raw: dict, workers: int = 1, out_root: str | None = None) -> Path:
    """Validate, run the configured study, and write artifacts; returns the dir."""
    cfg = config_from_dict(raw)
    out_base = out_root or cfg.output_dir or os.environ.get(ENV_OUT, "out")
    outdir = Path(out_base) / cfg.experiment
    outdir.mkdir(parents=True, exist_ok=True)

    kind = cfg.study_kind
    rows, payload, summary = _STUDIES[kind](cfg, workers, outdir)

    csv_path = outdir / f"{kind}.csv"
    if rows is not None:
        write_csv(csv_path, rows)
    json_path = outdir / f"{kind}.json"
    write_json(json_path, payload)

    artifacts = {}
    for p in sorted(outdir.iterdir()):
        if p.name != "manifest.json" and p.is_file():
            artifacts[p.name] = _sha256(p)
    manifest = {
        "experiment": cfg.experiment,
        "study": kind,
        "seed": cfg.solver.seed,
        "workers": workers,
        "resolved_config": raw,
        "artifacts": artifacts,
    }
    write_json(outdir / "manifest.json", manifest)
    print(f"[{kind}] {summary} -> {outdir}")
    return outdir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="delaysvi", description="Batch studies for constrained delay SDEs"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("config", help="path to the YAML experiment file")
    run_p.add_argument(
        "--override", action="append", default=[], metavar="K=V",
        help="dotted-path config override, may repeat",
    )
    run_p.add_argument("--workers", type=int, default=1, help="worker cap (results invariant)")
    run_p.add_argument("--out", default=None, help="output root directory")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh)
        raw = apply_overrides(raw, args.override)
        run_experiment(raw, workers=args.workers, out_root=args.out)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, DelaySviError, OSError, yaml.YAMLError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
