"""Scenario runner.

A scenario is one JSON file (schema: ``scenario.schema.json`` next to this
module) naming a profile, an experiment and its parameters. Outputs land in
``<out>/`` together with ``manifest.json`` listing sha256 checksums.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import io as fio
from .elliptic import (
    BLOWUP_MARGIN,
    BarrierSpec,
    barrier_field,
    barrier_laplacian,
    graded_barrier_field,
    nonexistence_experiment,
    verify_supersolution,
)
from .errors import NumericalError, ValidationError
from .estimates import check_hp_datum, check_hp_ordered, check_hp_strong, uniqueness_probe
from .geometry import Profile, RadialGrid, classify_completeness, make_profile, radial_laplacian
from .parabolic import (
    Datum,
    FdeConfig,
    LiftedProblem,
    LiftSchedule,
    datum_constant,
    datum_gaussian,
    datum_power,
    datum_tent,
    datum_zero,
    mass,
    minimal_solution,
    solve_fde,
    solve_lifted,
)

log = logging.getLogger("fdelab")

EXPERIMENTS = {
    "classify": "classify",
    "barrier": "barrier",
    "elliptic": "elliptic-nonexistence",
    "fde": "fde",
    "minimal": "minimal",
    "hp-check": "hp-check",
    "probe": "uniqueness-probe",
    "demo": "demo-nonuniqueness",
}


def load_schema() -> dict:
    return json.loads(resources.files("fdelab").joinpath("scenario.schema.json").read_text())


@dataclass
class Scenario:
    name: str
    profile: dict
    experiment: str
    parameters: dict = field(default_factory=dict)
    output_dir: str | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "profile": self.profile, "experiment": self.experiment,
                "parameters": self.parameters}


def _schema_error(doc) -> ValidationError | None:
    v = jsonschema.Draft202012Validator(load_schema())
    err = jsonschema.exceptions.best_match(v.iter_errors(doc))
    if err is None:
        return None
    path = ".".join(str(x) for x in err.absolute_path) or "<root>"
    desc = err.schema.get("description") if isinstance(err.schema, dict) else None
    msg = err.message + (f" (expected {desc})" if desc else "")
    return ValidationError(msg, path)


def parse_scenario(doc: dict, experiment: str | None = None) -> Scenario:
    """Validate a scenario document; the subcommand may supply or must match ``experiment``."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario must be a JSON object", "<root>")
    doc = dict(doc)
    if experiment is not None:
        if "experiment" in doc and doc["experiment"] != experiment:
            raise ValidationError(f"config says {doc['experiment']!r}, subcommand runs {experiment!r}", "experiment")
        doc["experiment"] = experiment
    if "experiment" not in doc:
        raise ValidationError("missing experiment", "experiment")
    doc.setdefault("parameters", {})
    err = _schema_error(doc)
    if err is not None:
        raise err
    return Scenario(doc["name"], doc["profile"], doc["experiment"], doc["parameters"], doc.get("output_dir"))


def load_scenario(path, experiment: str | None = None) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"no such file {path}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}", "--config") from None
    return parse_scenario(doc, experiment)


# --------------------------------------------------------------------------
# parameter helpers
# --------------------------------------------------------------------------


def make_datum(d: dict) -> Datum:
    kind = d["kind"]
    if kind == "zero":
        out = datum_zero()
    elif kind == "constant":
        out = datum_constant(d.get("value", 1.0))
    elif kind == "tent":
        out = datum_tent(d.get("height", 1.0), d.get("width", 1.0))
    elif kind == "gaussian":
        out = datum_gaussian(d.get("height", 1.0), d.get("width", 1.0))
    else:
        out = datum_power(d.get("height", 1.0), d.get("exponent", 1.0))
    if "mode" in d:
        out = Datum(out.func, d["mode"], out.name)
    return out


def make_config(P: dict) -> FdeConfig:
    keys = ("m", "dt", "t_end", "newton_tol", "newton_max", "delta", "store_every")
    return FdeConfig(**{k: P[k] for k in keys if k in P})


def make_ladder(L: dict, datum_sup: float = 1.0) -> LiftSchedule:
    if "R_list" in L:
        try:
            R_list = tuple(L["R_list"])
            return LiftSchedule(
                R_list,
                tuple(L["ell_list"]),
                tuple(L["beta_list"]),
                L.get("tol", 1e-4 * max(datum_sup, 1.0)),
                L.get("probe_radius", R_list[0] / 2),
                L.get("h", 0.05),
            )
        except KeyError as exc:
            raise ValidationError("explicit ladders need R_list, ell_list and beta_list", f"ladder.{exc.args[0]}") from None
    keys = ("R0", "K", "ell0", "J", "beta0", "I", "h")
    lad = LiftSchedule.geometric(datum_sup=datum_sup, **{k: L[k] for k in keys if k in L})
    if "tol" in L or "probe_radius" in L:
        lad = LiftSchedule(lad.R_list, lad.ell_list, lad.beta_list, L.get("tol", lad.tol),
                           L.get("probe_radius", lad.probe_radius), lad.h)
    return lad


def _datum_sup(profile, datum, ladder_dict):
    R = ladder_dict.get("R_list", [ladder_dict.get("R0", 2.0)])[0]
    h = ladder_dict.get("h", 0.05)
    g = RadialGrid.uniform(R, max(8, int(round(R / h))))
    return float(np.max(datum.sample(g, profile).values))


# --------------------------------------------------------------------------
# experiments: each returns the list of files written
# --------------------------------------------------------------------------


def run_classify(p: Profile, P: dict, out: Path) -> list:
    rep = classify_completeness(p, P.get("horizon", 50.0), P.get("samples", 40), P.get("eps_fit", 0.1))
    files = [fio.write_json(out / "completeness.json", rep.to_dict())]
    rows = zip(rep.r_samples, rep.H_samples, rep.Hprime_samples)
    files.append(fio.write_table_csv(out / "h_tail.csv", ["r", "H", "H_prime"], rows))
    log.info("verdict %s (sigma=%.4f)", rep.verdict, rep.sigma)
    return files


def run_barrier(p: Profile, P: dict, out: Path) -> list:
    spec = BarrierSpec(P["p"], P.get("alpha", 1.0), P["R"], P.get("C"))
    reports, rows = [], []
    for h in P.get("h_list", [4e-3, 2e-3, 1e-3]):
        if P.get("grid", "graded") == "graded":
            W = graded_barrier_field(p, spec, h)
        else:
            outer = spec.R * (1 - BLOWUP_MARGIN)
            W = barrier_field(p, spec, max(8, int(math.ceil(outer / h))))
        grid = W.grid
        rep = verify_supersolution(p, W, spec, P.get("tol", 0.0))
        reports.append({"h": h, "N": grid.N, **rep.to_dict()})
        log.info("h=%g max_violation=%.3e", h, rep.max_violation)
    lap_h = radial_laplacian(p, W).values
    lap = barrier_laplacian(p, spec, grid.nodes)
    for i, r in enumerate(grid.nodes[:-1]):
        rows.append((r, W.values[i], lap[i], lap_h[i], rep.violations[i]))
    files = [fio.write_table_csv(out / "barrier.csv", ["r", "W", "lap_exact", "lap_h", "violation"], rows)]
    files.append(fio.write_json(out / "supersolution.json", {"C": spec.C, "p": spec.p, "alpha": spec.alpha,
                                                             "R": spec.R, "reports": reports}))
    return files


def run_elliptic(p: Profile, P: dict, out: Path) -> list:
    rows = nonexistence_experiment(p, P["p"], P.get("alpha", 1.0), P["R_list"], P["probe_radius"], P.get("C"),
                                   P.get("boundary_factor", 1e3), P.get("h", 5e-3))
    cols = ["R", "sup_barrier", "sup_solution", "newton_iters", "residual", "error"]
    files = [fio.write_table_csv(out / "decay.csv", cols, [[getattr(r, c) for c in cols] for r in rows])]
    files.append(fio.write_json(out / "decay.json", [r.to_dict() for r in rows]))
    return files


def run_fde(p: Profile, P: dict, out: Path) -> list:
    cfg = make_config(P)
    grid = RadialGrid.uniform(P["R"], P["N"])
    u0 = make_datum(P["u0"]).sample(grid, p)
    traj = solve_fde(p, cfg, grid, u0, P["boundary"])
    fmt_ = P.get("format", "csv")
    files = []
    if fmt_ in ("csv", "both"):
        files.append(fio.write_trajectory_csv(out / "trajectory.csv", traj))
    if fmt_ in ("binary", "both"):
        files.append(fio.write_trajectory_bin(out / "trajectory.bin", traj))
    summary = {"times": traj.times, "mass": mass(p, traj), "u_origin": traj.states[:, 0], **traj.meta}
    files.append(fio.write_json(out / "fde.json", summary))
    return files


def run_minimal(p: Profile, P: dict, out: Path) -> list:
    cfg = make_config(P)
    datum = make_datum(P["u0"])
    ladder = make_ladder(P["ladder"], _datum_sup(p, datum, P["ladder"]))
    res = minimal_solution(p, cfg, datum, ladder)
    files = [fio.write_trajectory_csv(out / "minimal.csv", res.field)]
    cols = ["stage", "k", "j", "i", "R", "ell", "beta", "increment"]
    files.append(fio.write_table_csv(out / "ladder_log.csv", cols, [[e.get(c) for c in cols] for e in res.ladder_log]))
    summary = {"converged": res.converged, "stages": len(res.ladder_log)}
    radii = P.get("hp_radii", [ladder.probe_radius])
    u0 = datum.sample(res.field.grid, p)
    hp = {}
    for R in radii:
        reps = check_hp_datum(res.field, u0, p, cfg.m, R)
        hp[str(R)] = {"pass": all(r.pass_ for r in reps), "min_slack": min(r.slack for r in reps),
                      "reports": [r.to_dict() for r in reps]}
    summary["hp_datum"] = hp
    files.append(fio.write_json(out / "minimal.json", summary))
    log.info("converged=%s", res.converged)
    return files


def run_hp(p: Profile, P: dict, out: Path) -> list:
    cfg = make_config(P)
    grid = RadialGrid.uniform(P["R_solve"], max(8, int(round(P["R_solve"] / P["h"]))))
    u0 = make_datum(P["u0"]).sample(grid, p)
    if np.any(u0.values < 0):
        raise ValidationError("hp-check needs a nonnegative datum", "parameters.u0")
    b1, b2 = sorted(P["beta_pair"])
    lo = solve_lifted(p, cfg, LiftedProblem(P["ell"], b1, grid.R, u0), grid)
    hi = solve_lifted(p, cfg, LiftedProblem(P["ell"], b2, grid.R, u0), grid)
    tol = P.get("rel_tol", 0.02)
    reports, rows = [], []
    for R in P["R_list"]:
        for t, s in P["time_pairs"]:
            for kind, fn in (("ordered", check_hp_ordered), ("strong", check_hp_strong)):
                rep = fn(hi, lo, p, cfg.m, R, t, s, rel_tol=tol)
                reports.append({"kind": kind, "R": R, **rep.to_dict()})
                rows.append((kind, R, t, s, rep.lhs, rep.rhs, rep.h_r, rep.slack, rep.pass_))
    files = [fio.write_table_csv(out / "hp.csv", ["kind", "R", "t", "s", "lhs", "rhs", "h_r", "slack", "pass"], rows)]
    files.append(fio.write_json(out / "hp.json", {"pass": all(r["pass"] for r in reports), "reports": reports}))
    return files


def run_probe(p: Profile, P: dict, out: Path) -> list:
    cfg = make_config(P)
    datum = make_datum(P["u0"])
    la = make_ladder(P["ladder_a"], _datum_sup(p, datum, P["ladder_a"]))
    lb = make_ladder(P["ladder_b"], _datum_sup(p, datum, P["ladder_b"]))
    if not la.grid(len(la.R_list) - 1).same_as(lb.grid(len(lb.R_list) - 1)):
        raise ValidationError("both ladders must end on the same grid (same last R and h)", "parameters.ladder_b")
    ua = minimal_solution(p, cfg, datum, la)
    ub = minimal_solution(p, cfg, datum, lb)
    rep = uniqueness_probe(ua.field, ub.field, p, cfg.m, P["t0"], probe_radius=P.get("probe_radius"))
    files = [fio.write_json(out / "probe.json", {**rep.to_dict(), "converged_a": ua.converged,
                                                 "converged_b": ub.converged})]
    g = rep.W.grid
    rows = [(r, w, d) for r, w, d in zip(g.nodes, rep.W.values, np.append(rep.defect, np.nan))]
    files.append(fio.write_table_csv(out / "contraction.csv", ["r", "W", "defect"], rows))
    return files


def demo_nonuniqueness(p_complete: Profile, p_incomplete: Profile, m: float, R_list, t_star: float,
                       h: float = 0.05, dt: float = 0.01, boundary: float = 1.0) -> dict:
    """``u(0, t*)`` for zero data and boundary value ``boundary`` on growing balls, for two profiles.

    On a stochastically complete profile the value should fade as ``R`` grows;
    on an incomplete one it should settle at a positive level.
    """
    R_list = [float(R) for R in R_list]
    if any(b <= a for a, b in zip(R_list, R_list[1:])):
        raise ValidationError("R_list must be increasing", "R_list")
    if not t_star > 0:
        raise ValidationError("t_star must be > 0", "t_star")
    cfg = FdeConfig(m, min(dt, t_star), t_star)
    seqs, errors = {}, {}
    for label, prof in (("complete", p_complete), ("incomplete", p_incomplete)):
        vals = []
        for R in R_list:
            grid = RadialGrid.uniform(R, max(8, int(round(R / h))))
            try:
                traj = solve_fde(prof, cfg, grid, np.zeros(grid.nodes.size), boundary)
                vals.append(float(traj.states[-1, 0]))
            except NumericalError as exc:
                vals.append(math.nan)
                errors[f"{label}:{R}"] = exc.payload
        seqs[label] = vals
    c, ic = np.array(seqs["complete"]), np.array(seqs["incomplete"])
    steps = np.abs(np.diff(ic))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = ic / c
    return {
        "R": R_list,
        "complete": seqs["complete"],
        "incomplete": seqs["incomplete"],
        "ratio": ratio.tolist(),
        "complete_decreasing": bool(np.all(np.diff(c) <= 0)),
        "incomplete_stabilizing": bool(steps.size > 0 and np.all(np.diff(steps) <= 0)
                                       and ic[-1] > 0 and steps[-1] < 0.1 * ic[-1]),
        "contrast_at_Rmax": float(ratio[-1]),
        "profiles": {"complete": p_complete.describe(), "incomplete": p_incomplete.describe()},
        "errors": errors,
    }


def run_demo(p: Profile, P: dict, out: Path) -> list:
    q = make_profile(P["incomplete_profile"])
    res = demo_nonuniqueness(p, q, P["m"], P["R_list"], P["t_star"], P.get("h", 0.05), P.get("dt", 0.01),
                             P.get("boundary", 1.0))
    rows = zip(res["R"], res["complete"], res["incomplete"], res["ratio"])
    files = [fio.write_table_csv(out / "contrast.csv", ["R", "u_complete", "u_incomplete", "ratio"], rows)]
    files.append(fio.write_json(out / "contrast.json", res))
    # both sequences go into the manifest whatever the verdict
    return files, {k: res[k] for k in ("R", "complete", "incomplete", "complete_decreasing",
                                       "incomplete_stabilizing", "contrast_at_Rmax")}


RUNNERS = {
    "classify": run_classify,
    "barrier": run_barrier,
    "elliptic-nonexistence": run_elliptic,
    "fde": run_fde,
    "minimal": run_minimal,
    "hp-check": run_hp,
    "uniqueness-probe": run_probe,
    "demo-nonuniqueness": run_demo,
}


def run_scenario(s: Scenario, out_dir=None) -> int:
    """Run ``s`` and write its artifacts; returns the exit status (0, 2 or 3)."""
    out = Path(out_dir or s.output_dir or Path("out") / s.name)
    try:
        p = make_profile(s.profile)
        files = RUNNERS[s.experiment](p, s.parameters, out)
        summary = None
        if isinstance(files, tuple):
            files, summary = files
    except ValidationError as exc:
        msg = str(exc)
        if exc.path and not exc.path.startswith(("profile", "parameters")):
            msg = f"parameters.{msg}"
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        fio.write_json(out / "error.json", exc.payload)
        fio.write_manifest(out, [out / "error.json"], s.to_dict())
        print(json.dumps(fio._jsonable(exc.payload)), file=sys.stderr)
        return 3
    fio.write_manifest(out, files, s.to_dict(), summary)
    log.info("wrote %d files to %s", len(files) + 1, out)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fdelab", description="Fast diffusion on model manifolds: scenario runner")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario JSON file")
        sp.add_argument("--out", help="output directory (default: scenario output_dir or out/<name>)")
        sp.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        s = load_scenario(args.config, EXPERIMENTS[args.command])
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run_scenario(s, args.out)


if __name__ == "__main__":
    sys.exit(main())
