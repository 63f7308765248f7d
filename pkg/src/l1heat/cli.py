"""Command-line entry point: ``l1heat <experiment> --config PATH [--out DIR] [--seed N] [--workers K]``.

Exit codes: 0 success, 1 a report assertion failed, 2 invalid configuration,
3 numerical failure (the witness is written to ``report.json`` and stderr).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, conditions, harness
from .config import ConfigError, ExperimentConfig, set_path
from .field import norm, pointwise_leq, save
from .nonlinearity import EvaluationOverflow, check_hypothesis_m, check_structure
from .semigroup import HeatPropagator
from .solver import (NoHorizon, OrderingViolation, SolverError, TimeGrid, continue_maximally, horizon,
                     monotone_solve, reference_integrate)

log = logging.getLogger("l1heat")

COMMANDS = {
    "classify": "classify",
    "solve": "solve",
    "compare": "compare",
    "cdep": "continuous_dependence",
    "global": "global_envelope",
    "sweep": "sweep",
}

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, witness: dict | None = None):
        super().__init__(message)
        self.witness = witness


# -- output helpers ---------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(harness._jsonable(obj), indent=2, sort_keys=True) + "\n")


def manifest(cfg: ExperimentConfig, outputs: list[str]) -> dict:
    return {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "experiment": cfg.experiment,
        "versions": {"l1heat": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": sorted(outputs),
    }


def config_from_manifest(doc: dict) -> ExperimentConfig:
    return ExperimentConfig.from_dict(doc["config"])


def _write_trajectory(out: Path, stem: str, traj, outputs: list[str]) -> None:
    (out / f"{stem}.csv").write_text(traj.norm_csv())
    (out / f"{stem}.dat").write_text(traj.gnuplot())
    save(traj.final, out / f"{stem}_final.field")
    outputs += [f"{stem}.csv", f"{stem}.dat", f"{stem}_final.field"]


def _time_grid(cfg, env, n, data) -> tuple[TimeGrid, dict]:
    mass = max(norm(d, 1) for d in data)
    info: dict = {"mass_bound": 2.0 * mass}
    try:
        t_b = horizon(env, 2.0 * mass, n).t_b if mass > 0 else float("inf")
    except NoHorizon as exc:
        if cfg.numerics.t_end is None:
            raise NumericalFailure(f"no guaranteed horizon ({exc}); set numerics.t_end") from None
        t_b = 0.0
    info["t_b"] = t_b
    t_end = cfg.numerics.t_end
    if t_end is None:
        if not np.isfinite(t_b):
            raise ConfigError("numerics.t_end", "horizon is unbounded; an explicit end time is required")
        t_end = 0.5 * t_b
    info["t_end"] = t_end
    return TimeGrid.graded(t_end, cfg.numerics.steps), info


def _solve_one(cfg, prop, nl, phi, grid, t_b, cls):
    num = cfg.numerics
    if grid.t_end <= t_b:
        lower, upper, state = monotone_solve(prop, nl, phi, grid, tol=num.tol, max_iter=num.max_iter)
        return upper, state
    traj = continue_maximally(prop, nl, phi, grid.t_end, tol=num.tol, steps=num.steps,
                              max_iter=num.max_iter, classification=cls)
    return traj, None


# -- experiments -------------------------------------------------------------------------

def run_classify(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> int:
    nl = cfg.build_nonlinearity()
    n = cfg.grid.dim
    cls = conditions.classify(nl, n)
    m = check_hypothesis_m(nl)
    st = check_structure(nl)
    report = {"experiment": "classify", "nonlinearity": nl.name, "dim": n,
              "hypothesis_m": {"passed": m.passed, "reason": m.reason, "witness": m.witness},
              "structure": {"odd": st.odd, "convex_on_positives": st.convex_on_positives},
              **cls.to_dict()}
    _write_json(out / "report.json", report)
    outputs.append("report.json")
    return EXIT_OK


def run_solve(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> int:
    nl = cfg.build_nonlinearity()
    phi = cfg.build_data()
    n = cfg.grid.dim
    prop = HeatPropagator(phi.spec)
    cls = conditions.classify(nl, n)
    grid, info = _time_grid(cfg, cls.envelopes, n, [phi])
    save(phi, out / "phi.field")
    outputs.append("phi.field")
    traj, state = _solve_one(cfg, prop, nl, phi, grid, info["t_b"], cls)
    _write_trajectory(out, "norms", traj, outputs)
    report = {"experiment": "solve", "classification": cls.classification, "horizon": info,
              "status": traj.status, "t_max_reached": traj.t_max_reached, "t_detect": traj.t_detect,
              "detail": traj.detail}
    code = EXIT_OK
    if state is not None:
        uniq = cls.satisfies_I2 or (phi.values.min() >= 0 and cls.satisfies_I2_plus)
        gap = harness.verify_uniqueness_gap(state, uniq)
        report["iterations"] = state.iteration_count
        report["uniqueness_gap"] = gap.to_dict()
        code = EXIT_OK if gap.passed else EXIT_FAILED
    if cfg.numerics.reference:
        ref = reference_integrate(prop, nl, phi, grid, substeps=cfg.numerics.substeps)
        _write_trajectory(out, "reference", ref, outputs)
        m = min(len(ref.times), len(traj.times))
        rel = [float(norm(traj.field(j) - ref.field(j), 1) / max(norm(ref.field(j), 1), 1e-300)) for j in range(m)]
        report["reference"] = {"status": ref.status, "max_relative_l1": max(rel), "final_relative_l1": rel[-1]}
    _write_json(out / "report.json", report)
    outputs.append("report.json")
    return code


def _pair(cfg: ExperimentConfig):
    nl = cfg.build_nonlinearity()
    phi, psi = cfg.build_data(), cfg.build_data("second_data")
    n = cfg.grid.dim
    prop = HeatPropagator(phi.spec)
    cls = conditions.classify(nl, n)
    grid, info = _time_grid(cfg, cls.envelopes, n, [phi, psi])
    if grid.t_end > info["t_b"]:
        raise ConfigError("numerics.t_end", f"pair experiments need t_end <= T_B = {info['t_b']:.6g}")
    u = monotone_solve(prop, nl, phi, grid, tol=cfg.numerics.tol, max_iter=cfg.numerics.max_iter)[1]
    v = monotone_solve(prop, nl, psi, grid, tol=cfg.numerics.tol, max_iter=cfg.numerics.max_iter)[1]
    return nl, phi, psi, cls, info, u, v


def run_compare(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> int:
    nl, phi, psi, cls, info, u, v = _pair(cfg)
    if not pointwise_leq(phi, psi, 0.0):
        raise ConfigError("second_data", "compare needs initial_data <= second_data pointwise")
    rep = harness.verify_comparison(u, v, phi, psi)
    rep.data["horizon"] = info
    _write_trajectory(out, "norms_phi", u, outputs)
    _write_trajectory(out, "norms_psi", v, outputs)
    _write_json(out / "report.json", rep.to_dict())
    outputs.append("report.json")
    return EXIT_OK if rep.passed else EXIT_FAILED


def run_cdep(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> int:
    nl, phi, psi, cls, info, u, v = _pair(cfg)
    cone = nl.positive_cone_only
    envelope = "big_l_plus" if cone else "big_l"
    rep = harness.verify_continuous_dependence(u, v, phi, psi, cls.envelopes, cfg.grid.dim, envelope=envelope)
    rep.data["horizon"] = info
    _write_trajectory(out, "norms_phi", u, outputs)
    _write_trajectory(out, "norms_psi", v, outputs)
    _write_json(out / "report.json", rep.to_dict())
    outputs.append("report.json")
    return EXIT_OK if rep.passed else EXIT_FAILED


def run_global(cfg: ExperimentConfig, out: Path, outputs: list[str]) -> int:
    nl = cfg.build_nonlinearity()
    phi = cfg.build_data()
    g = cfg.global_envelope
    gconf = harness.GlobalEnvelopeConfig(g.amplification, g.smallness, g.horizon)
    prop = HeatPropagator(phi.spec)
    rep = harness.verify_global_envelope(prop, nl, phi, gconf, tol=cfg.numerics.tol, steps=cfg.numerics.steps)
    traj = getattr(rep, "trajectory", None)
    if traj is not None:
        _write_trajectory(out, "norms", traj, outputs)
    _write_json(out / "report.json", rep.to_dict())
    outputs.append("report.json")
    return EXIT_OK if rep.passed else EXIT_FAILED


RUNNERS = {
    "classify": run_classify,
    "solve": run_solve,
    "compare": run_compare,
    "continuous_dependence": run_cdep,
    "global_envelope": run_global,
}


def run(cfg: ExperimentConfig, out: Path | None = None, workers: int = 1) -> int:
    """Run one experiment (or a sweep) and write its artifacts; returns the exit code."""
    out = Path(out if out is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.experiment == "sweep":
        return run_sweep(cfg, out, workers)
    outputs: list[str] = []
    try:
        code = RUNNERS[cfg.experiment](cfg, out, outputs)
    except (OrderingViolation, NumericalFailure) as exc:
        witness = getattr(exc, "witness", None)
        _write_json(out / "report.json", {"experiment": cfg.experiment, "error": str(exc), "witness": witness})
        outputs.append("report.json")
        print(f"numerical failure: {exc}", file=sys.stderr)
        if witness:
            print(f"witness: {json.dumps(witness)}", file=sys.stderr)
        code = EXIT_NUMERIC
    except (SolverError, EvaluationOverflow) as exc:
        _write_json(out / "report.json", {"experiment": cfg.experiment, "error": str(exc),
                                          "witness": {"at": getattr(exc, "at", None)}})
        outputs.append("report.json")
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    _write_json(out / "manifest.json", manifest(cfg, outputs + ["manifest.json"]))
    return code


def _sweep_worker(args) -> tuple[int, dict]:
    cfg_dict, out = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    code = run(cfg, Path(out))
    summary: dict = {}
    report = Path(out) / "report.json"
    if report.exists():
        doc = json.loads(report.read_text())
        for key in ("classification", "global_for_small_data", "status", "passed", "error"):
            if key in doc:
                summary[key] = doc[key]
        if "verdicts" in doc:
            for kind, v in doc["verdicts"].items():
                summary[kind] = v["verdict"]
    return code, summary


def sweep_dirname(index: int, parameter: str, value) -> str:
    return f"{index:03d}_{parameter.replace('.', '-')}={value}"


def run_sweep(cfg: ExperimentConfig, out: Path, workers: int = 1) -> int:
    jobs = []
    for i, value in enumerate(cfg.sweep.values):
        sub = cfg.sweep_point(value)
        jobs.append((sub.to_dict(), str(out / sweep_dirname(i, cfg.sweep.parameter, value))))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    keys = sorted({k for _, s in results for k in s})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([cfg.sweep.parameter, "exit_code", *keys])
    for value, (code, summary) in zip(cfg.sweep.values, results):
        w.writerow([value, code, *[summary.get(k, "") for k in keys]])
    (out / "sweep.csv").write_text(buf.getvalue())
    outputs = ["sweep.csv", "manifest.json"] + [Path(d).name for _, d in jobs]
    _write_json(out / "manifest.json", manifest(cfg, outputs))
    codes = [c for c, _ in results]
    return max(codes) if codes else EXIT_OK


# -- argument parsing ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l1heat", description="Semilinear heat equation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {COMMANDS[name]} experiment")
        p.add_argument("--config", required=True, type=Path, help="YAML experiment file")
        p.add_argument("--out", type=Path, help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="seed for randomized data (overrides config 'seed')")
        p.add_argument("--workers", type=int, default=1, help="parallel workers for sweeps")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry by dotted path, e.g. grid.dim=2")
        p.add_argument("--dry-run", action="store_true", help="validate and print the resolved plan")
        p.add_argument("-v", "--verbose", action="count", default=0, help="log progress (-vv for debug)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(args.config).read_text()) or {}
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    raw["experiment"] = COMMANDS[args.command]
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output"] = str(args.out)
    for item in args.set:
        if "=" not in item:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        set_path(raw, key.strip(), yaml.safe_load(value))
    if args.workers < 1:
        raise ConfigError("--workers", "must be at least 1")
    return ExperimentConfig.from_dict(raw)


def plan(cfg: ExperimentConfig) -> str:
    lines = [f"experiment: {cfg.experiment}", f"output: {cfg.output}"]
    if cfg.experiment == "sweep":
        for i, v in enumerate(cfg.sweep.values):
            lines.append(f"  run {sweep_dirname(i, cfg.sweep.parameter, v)}: {cfg.sweep.experiment}")
    lines.append("resolved config:")
    lines.append(cfg.to_yaml())
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        print(plan(cfg))
        return EXIT_OK
    try:
        return run(cfg, Path(cfg.output), workers=args.workers)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
