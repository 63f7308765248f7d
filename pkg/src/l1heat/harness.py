"""Experiment procedures that check qualitative conclusions on computed trajectories.

Every check returns a :class:`Report`; failed assertions carry a witness
``(t, x, lhs, rhs)`` locating the first offending node and lattice point.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import conditions
from .field import GridField, norm, pointwise_leq
from .nonlinearity import EnvelopeFunctions, Nonlinearity
from .semigroup import HeatPropagator
from .solver import (IterationState, SolutionTrajectory, SolverError, continue_maximally,
                     propagate_nodes)


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""
    witness: Optional[dict] = None


@dataclass
class Report:
    experiment: str
    assertions: list[Assertion] = field(default_factory=list)
    data: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def add(self, name: str, passed: bool, detail: str = "", witness: dict | None = None) -> Assertion:
        a = Assertion(name, bool(passed), detail, witness)
        self.assertions.append(a)
        return a

    def to_dict(self) -> dict:
        return _jsonable({
            "experiment": self.experiment,
            "passed": self.passed,
            "assertions": [asdict(a) for a in self.assertions],
            "data": self.data,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def ordering_witness(lo: np.ndarray, hi: np.ndarray, slack: float, times: np.ndarray, spec) -> dict | None:
    """First (in time, then lattice order) node where lo > hi + slack, or None."""
    bad = lo - hi > slack
    if not bad.any():
        return None
    j = int(np.argmax(bad.reshape(len(times), -1).any(axis=1)))
    k = int(np.argmax(bad[j].reshape(-1)))
    idx = np.unravel_index(k, spec.shape)
    ax = spec.axis()
    return {"t": float(times[j]), "x": [float(ax[i]) for i in idx],
            "lhs": float(lo[j][idx]), "rhs": float(hi[j][idx])}


def _common_nodes(u: SolutionTrajectory, v: SolutionTrajectory) -> int:
    m = min(len(u.times), len(v.times))
    if not np.allclose(u.times[:m], v.times[:m], rtol=1e-12, atol=0):
        raise ValueError("trajectories are not on a common time grid")
    return m


# -- comparison ---------------------------------------------------------------------

def verify_comparison(u_phi: SolutionTrajectory, u_psi: SolutionTrajectory, phi: GridField, psi: GridField,
                      slack_factor: float = 1e-6) -> Report:
    """u(t; phi) <= u(t; psi) whenever phi <= psi; phi >= 0 gives u(t; phi) >= 0."""
    if not pointwise_leq(phi, psi, 0.0):
        raise ValueError("comparison needs phi <= psi pointwise")
    m = _common_nodes(u_phi, u_psi)
    a, b = u_phi.values[:m], u_psi.values[:m]
    scale = max(float(np.abs(a).max()), float(np.abs(b).max()), 1e-300)
    # the spectral flow of the ordered difference psi - phi is itself only nonnegative up to
    # aliasing ringing; that floor is measured and added, as in the monotone iteration
    linear = propagate_nodes(HeatPropagator(phi.spec), psi - phi, u_phi.times[:m])
    ringing = float(np.maximum(-linear, 0.0).max())
    slack = slack_factor * scale + 4.0 * ringing
    report = Report("comparison", data={"nodes": m, "slack": slack, "scale": scale, "ringing": ringing})
    w = ordering_witness(a, b, slack, u_phi.times[:m], phi.spec)
    report.add("u(phi) <= u(psi)", w is None, "order preserved at all nodes" if w is None else "order violated", w)
    for label, data, traj in (("phi", phi, a), ("psi", psi, b)):
        if data.values.min() >= 0:
            w = ordering_witness(np.zeros_like(traj), traj, slack, u_phi.times[:m], phi.spec)
            report.add(f"u({label}) >= 0", w is None, "nonnegative data, nonnegative solution", w)
    return report


# -- continuous dependence ---------------------------------------------------------------

def dimension_constant(n: int) -> float:
    """k_n = 1 + 2^{n/2}."""
    return 1.0 + 2.0 ** (n / 2.0)


@dataclass
class ContinuousDependenceBound:
    k_n: float
    times: np.ndarray
    q_curve: np.ndarray
    tau: float
    ratio_series: np.ndarray

    def to_dict(self) -> dict:
        return _jsonable({"k_n": self.k_n, "tau": self.tau, "times": self.times,
                          "q": self.q_curve, "ratio": self.ratio_series})


def q_function(envelopes: EnvelopeFunctions, n: int, times, envelope: str = "big_l") -> np.ndarray:
    """q(t) = k_n int_0^t L(s^{-n/2}) ds at each time (inf where the tail diverges)."""
    tail = conditions.TailIntegral(envelopes.get(envelope), n)
    k_n = dimension_constant(n)
    return np.array([k_n * conditions.time_integral(None, float(t), n, tail) for t in times])


def validity_prefix(traj: SolutionTrajectory) -> int:
    """Number of leading nodes (t = 0 included) with ||u(t)||_inf <= t^{-n/2}."""
    scaled = traj.scaled_linf()
    ok = scaled[1:] <= 1.0
    bad = np.flatnonzero(~ok)
    return 1 + (int(bad[0]) if bad.size else len(ok))


def verify_continuous_dependence(u: SolutionTrajectory, v: SolutionTrajectory, phi: GridField, psi: GridField,
                                 envelopes: EnvelopeFunctions, n: int, tol: float = 1e-2,
                                 envelope: str = "big_l") -> Report:
    """||u - v||_1 + t^{n/2}||u - v||_inf <= 2||phi - psi||_1 e^{q(t)} (1 + tol) on (0, tau]."""
    m = min(_common_nodes(u, v), validity_prefix(u), validity_prefix(v))
    times = u.times[:m]
    report = Report("continuous_dependence")
    dist0 = norm(phi - psi, 1)
    k_n = dimension_constant(n)
    if m <= 1:
        report.data["empty_window"] = True
        report.add("validity window", False, "||u(t)||_inf <= t^{-n/2} fails at the first positive node")
        return report
    q = q_function(envelopes, n, times, envelope)
    diff = u.values[:m] - v.values[:m]
    axes = tuple(range(1, diff.ndim))
    spec = phi.spec
    lhs = np.abs(diff).sum(axis=axes) * spec.cell_volume + times ** (n / 2.0) * np.abs(diff).max(axis=axes)
    rhs = 2.0 * dist0 * np.exp(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    bound = ContinuousDependenceBound(k_n, times, q, float(times[-1]), ratio)
    report.data.update({"distance_l1": dist0, "bound": bound.to_dict(), "max_ratio": float(ratio[1:].max())})
    report.add("q(0) = 0", q[0] == 0.0)
    report.add("q non-decreasing", bool(np.all(np.diff(q) >= -1e-12 * np.abs(q[1:]).max(initial=1.0))))
    j = np.flatnonzero(ratio[1:] > 1.0 + tol)
    w = None
    if j.size:
        jj = int(j[0]) + 1
        w = {"t": float(times[jj]), "x": None, "lhs": float(lhs[jj]), "rhs": float(rhs[jj] * (1 + tol))}
    report.add("blended distance within bound", w is None,
               f"max ratio {float(ratio[1:].max()):.4g} over {m - 1} nodes up to tau={times[-1]:.4g}", w)
    report.bound = bound
    return report


# -- global envelope ---------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalEnvelopeConfig:
    amplification: float = 2.0
    smallness: float = 1e-2
    horizon: float = 10.0

    def __post_init__(self):
        if not self.amplification > 1:
            raise ValueError(f"amplification must exceed 1, got {self.amplification}")
        if not self.smallness > 0:
            raise ValueError(f"smallness must be positive, got {self.smallness}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")


def fit_decay_exponent(times: np.ndarray, values: np.ndarray, t_lo: float, t_hi: float) -> float:
    """Least-squares slope of ln(values) against ln(t) over [t_lo, t_hi]."""
    sel = (times >= t_lo * (1 - 1e-12)) & (times <= t_hi * (1 + 1e-12)) & (values > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than three nodes in the fitting window")
    slope, _ = np.polyfit(np.log(times[sel]), np.log(values[sel]), 1)
    return float(slope)


def verify_global_envelope(prop: HeatPropagator, nl: Nonlinearity, phi: GridField, config: GlobalEnvelopeConfig,
                           tol: float = 1e-8, classification=None, slack_factor: float = 1e-8,
                           steps: int = 128) -> Report:
    """Envelope A S(t)phi^- <= u <= A S(t)phi^+ up to the horizon, plus the decay-exponent fit."""
    n = phi.spec.dim
    if classification is None:
        classification = conditions.classify(nl, n)
    report = Report("global_envelope", data={"config": asdict(config), "phi_l1": norm(phi, 1)})
    cone = nl.positive_cone_only or phi.values.min() >= 0
    route_i2 = classification.satisfies_I2 or (cone and classification.satisfies_I2_plus)
    route_i3 = classification.satisfies_I3 or (cone and classification.verdicts["I3_plus"].convergent)
    if not route_i3:
        raise SolverError("global envelope needs I3 (or I3_plus on the cone)")
    if not route_i2:
        raise SolverError("global envelope needs I2 for the continuation route")
    if norm(phi, 1) > config.smallness:
        raise ValueError(f"||phi||_1 = {norm(phi, 1):.4g} exceeds the smallness bound {config.smallness:.4g}")
    if norm(phi, 1) == 0:
        report.add("envelope", True, "phi = 0: envelope is 0 <= 0 <= 0")
        report.data["status"] = "horizon_reached"
        return report

    traj = continue_maximally(prop, nl, phi, config.horizon, tol=tol, steps=steps,
                              classification=classification, amplification=config.amplification)
    report.data["status"] = traj.status
    report.data["t_max_reached"] = traj.t_max_reached
    report.trajectory = traj
    report.add("reached horizon", traj.status == "horizon_reached",
               traj.detail or f"status {traj.status} at t={traj.t_max_reached:.4g}")
    from .field import negative_part, positive_part

    times = traj.times
    upper = config.amplification * propagate_nodes(prop, positive_part(phi), times)
    lower = config.amplification * propagate_nodes(prop, negative_part(phi), times)
    scale = max(float(np.abs(upper).max()), float(np.abs(lower).max()), 1e-300)
    ringing = max(float(np.maximum(-upper, 0).max()), float(np.maximum(lower, 0).max()))
    slack = slack_factor * scale + 4.0 * ringing
    w_hi = ordering_witness(traj.values, upper, slack, times, phi.spec)
    w_lo = ordering_witness(lower, traj.values, slack, times, phi.spec)
    report.add("u <= A S(t) phi^+", w_hi is None, "", w_hi)
    report.add("A S(t) phi^- <= u", w_lo is None, "", w_lo)

    t_end = float(times[-1])
    window = prop.validity_window()
    t_hi = min(t_end, window)
    if traj.status == "horizon_reached" and t_hi > 0:
        linf = traj.linf()
        exponent = fit_decay_exponent(times, linf, t_hi / 10.0, t_hi)
        report.data["decay_exponent"] = exponent
        report.data["fit_window"] = [t_hi / 10.0, t_hi]
        report.data["expected_exponent"] = -n / 2.0
        report.data["max_scaled_linf_over_mass"] = float(
            (traj.scaled_linf()[1:] / norm(phi, 1)).max())
    return report


def largest_passing_smallness(prop: HeatPropagator, nl: Nonlinearity, profile: GridField,
                              config: GlobalEnvelopeConfig, lo: float, hi: float, rounds: int = 8,
                              **kwargs) -> tuple[float, list[tuple[float, bool]]]:
    """Bisect (in log mass) for the largest mass of ``profile`` whose envelope check passes.

    Returns the largest passing mass found (0 if none) and the probe log.
    """
    shape_mass = norm(profile, 1)
    if shape_mass == 0:
        raise ValueError("profile must be nonzero")
    probes: list[tuple[float, bool]] = []

    def passes(mass: float) -> bool:
        phi = profile * (mass / shape_mass)
        cfg = GlobalEnvelopeConfig(config.amplification, max(mass, config.smallness), config.horizon)
        try:
            ok = verify_global_envelope(prop, nl, phi, cfg, **kwargs).passed
        except SolverError:
            ok = False
        probes.append((mass, ok))
        return ok

    if not passes(lo):
        return 0.0, probes
    if passes(hi):
        return hi, probes
    a, b = math.log(lo), math.log(hi)
    for _ in range(rounds):
        mid = 0.5 * (a + b)
        if passes(math.exp(mid)):
            a = mid
        else:
            b = mid
    return math.exp(a), probes


# -- uniqueness -----------------------------------------------------------------------------

def verify_uniqueness_gap(state: IterationState, uniqueness_holds: bool) -> Report:
    """Under I2 (or I2_plus on the cone) the lower and upper limits must coincide."""
    report = Report("uniqueness_gap", data={
        "sup_gap": state.sup_gap, "blended_gap": state.blended_gap, "threshold": state.gap_threshold,
        "iterations": state.iteration_count, "uniqueness_condition": bool(uniqueness_holds),
        "gap_history": list(state.gap_history),
    })
    if uniqueness_holds:
        ok = state.sup_gap <= state.gap_threshold
        report.add("sup gap within tolerance", ok,
                   f"gap {state.sup_gap:.3g} vs threshold {state.gap_threshold:.3g}",
                   None if ok else {"t": None, "x": None, "lhs": state.sup_gap, "rhs": state.gap_threshold})
    return report
