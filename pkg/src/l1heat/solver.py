"""Variation-of-constants operator, monotone iteration, and a splitting reference integrator.

Trajectories are stored as arrays of shape ``(nodes, *grid.shape)``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp

from . import conditions
from .field import GridField, negative_part, norm, positive_part
from .nonlinearity import EnvelopeFunctions, EvaluationOverflow, Nonlinearity
from .semigroup import HeatPropagator

log = logging.getLogger(__name__)

BLOWUP_LINF = 1e8
BLOWUP_L1_FACTOR = 1e6
ORDER_SLACK = 1e-8
UNBOUNDED = float("inf")


class SolverError(RuntimeError):
    pass


class OrderingViolation(SolverError):
    """A monotone-iteration ordering failed beyond slack; carries the witness."""

    def __init__(self, relation: str, iteration: int, t: float, x: tuple, lhs: float, rhs: float):
        super().__init__(
            f"iteration {iteration}: {relation} violated at t={t:.6g}, x={x}: {lhs:.6g} > {rhs:.6g}"
        )
        self.witness = {"relation": relation, "iteration": iteration, "t": t, "x": list(x), "lhs": lhs, "rhs": rhs}


class NoHorizon(SolverError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    steps: int
    nodes: np.ndarray

    @classmethod
    def graded(cls, t_end: float, steps: int = 128) -> "TimeGrid":
        """Nodes t_j = t_end (j/M)^2."""
        if not t_end > 0 or steps < 1:
            raise ValueError("need t_end > 0 and steps >= 1")
        j = np.arange(steps + 1)
        nodes = t_end * (j / steps) ** 2
        nodes[-1] = t_end
        return cls(float(t_end), int(steps), nodes)

    @classmethod
    def uniform(cls, t_end: float, steps: int) -> "TimeGrid":
        return cls(float(t_end), int(steps), np.linspace(0.0, t_end, steps + 1))


@dataclass
class SolutionTrajectory:
    times: np.ndarray
    values: np.ndarray
    spec: object
    status: str = "horizon_reached"  # converged | horizon_reached | blow_up_detected | iteration_limit
    t_max_reached: float = 0.0
    t_detect: Optional[float] = None
    final_gap: Optional[float] = None
    detail: str = ""

    def __post_init__(self):
        if not self.t_max_reached:
            self.t_max_reached = float(self.times[-1])

    def field(self, j: int) -> GridField:
        return GridField(self.spec, self.values[j])

    @property
    def final(self) -> GridField:
        return self.field(len(self.times) - 1)

    def l1(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return np.abs(self.values).sum(axis=axes) * self.spec.cell_volume

    def linf(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return np.abs(self.values).max(axis=axes)

    def scaled_linf(self) -> np.ndarray:
        return self.times ** (self.spec.dim / 2.0) * self.linf()

    def norm_rows(self) -> list[tuple]:
        return list(zip(self.times, self.l1(), self.linf(), self.scaled_linf()))

    def norm_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "l1", "linf", "t_half_n_linf", "status"])
        last = len(self.times) - 1
        for j, (t, a, b, c) in enumerate(self.norm_rows()):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b)), repr(float(c)),
                        self.status if j == last else "running"])
        return buf.getvalue()

    def gnuplot(self) -> str:
        lines = ["# t l1 linf t_half_n_linf"]
        for t, a, b, c in self.norm_rows():
            lines.append(f"{t:.17g} {a:.17g} {b:.17g} {c:.17g}")
        return "\n".join(lines) + "\n"


@dataclass
class HorizonEstimate:
    mass_bound: float
    t_b: float
    g_values: list[tuple[float, float]]

    @property
    def unbounded(self) -> bool:
        return np.isinf(self.t_b)


@dataclass
class IterationState:
    sub_envelope: np.ndarray
    super_envelope: np.ndarray
    lower_iterates: np.ndarray
    upper_iterates: np.ndarray
    iteration_count: int
    sup_gap: float
    blended_gap: float
    converged: bool
    gap_history: list[float] = field(default_factory=list)
    phi_l1: float = 0.0
    tol: float = 0.0
    history: Optional[list] = None

    @property
    def gap_threshold(self) -> float:
        return self.tol * (1.0 + self.phi_l1)


# -- variation of constants ------------------------------------------------------

def _spatial_axes(values: np.ndarray) -> tuple[int, ...]:
    return tuple(range(1, values.ndim))


def propagate_nodes(prop: HeatPropagator, phi: GridField, nodes: np.ndarray) -> np.ndarray:
    """S(t_j) phi for every node, batched."""
    spec_hat = prop.forward(phi.values)
    mult = np.exp(-np.multiply.outer(nodes, prop.frequency_grid))
    return _inverse_batch(prop, spec_hat[None] * mult)


def _inverse_batch(prop: HeatPropagator, spectra: np.ndarray) -> np.ndarray:
    z = np.fft.ifftn(spectra, axes=_spatial_axes(spectra))
    scale = max(float(np.abs(z.real).max()), 1e-300)
    resid = float(np.abs(z.imag).max())
    if resid > 1e-12 * scale:
        from .semigroup import ConjugateSymmetryError

        raise ConjugateSymmetryError(f"imaginary residue {resid:.3g} at field scale {scale:.3g}")
    return z.real


def duhamel(prop: HeatPropagator, nl: Nonlinearity, phi: GridField, u, grid: TimeGrid,
            free: np.ndarray | None = None) -> np.ndarray:
    """F(u; phi)(t_j) = S(t_j) phi + int_0^{t_j} S(t_j - s) f(u(s)) ds at every node.

    The integral uses the product trapezoid rule: f(u) is taken at the interval
    endpoints and S is applied exactly.  Accumulation is recursive in Fourier space,
    D_j = S(h_j) D_{j-1} + h_j/2 (S(h_j) f_{j-1} + f_j).
    Raises EvaluationOverflow if f(u) is not finite.
    """
    values = u.values if isinstance(u, SolutionTrajectory) else np.asarray(u)
    if free is None:
        free = propagate_nodes(prop, phi, grid.nodes)
    if getattr(nl, "is_zero", False):
        return free.copy()
    fu = nl(values)
    f_hat = np.fft.fftn(fu, axes=_spatial_axes(fu))
    acc = np.zeros_like(f_hat)
    out_hat = np.empty_like(f_hat)
    out_hat[0] = 0.0
    d = np.zeros(f_hat.shape[1:], dtype=complex)
    for j in range(1, len(grid.nodes)):
        h = grid.nodes[j] - grid.nodes[j - 1]
        e = prop.multiplier(h)
        d = e * (d + 0.5 * h * f_hat[j - 1]) + 0.5 * h * f_hat[j]
        out_hat[j] = d
    del acc
    return free + _inverse_batch(prop, out_hat)


# -- existence horizon ------------------------------------------------------------

class HorizonCalculator:
    """Horizon T_B(K) for fixed envelopes and dimension; condition verdicts and tails are cached."""

    def __init__(self, envelopes: EnvelopeFunctions, n: int):
        self.envelopes = envelopes
        self.n = n
        self.i1 = conditions.check_condition("I1", envelopes, n)
        self.i3 = conditions.check_condition("I3", envelopes, n)
        self.tail = conditions.TailIntegral(envelopes.ell, n) if self.i1.convergent else None
        # int_0^inf s^{-p_F} ell(s) ds, finite iff I1 and I3 both hold
        self.full_integral = UNBOUNDED
        if self.i1.convergent and self.i3.convergent:
            lower = self.i3.value + (self.i3.tail_estimate if np.isfinite(self.i3.tail_estimate) else 0.0)
            self.full_integral = lower + self.tail(1.0)

    def g(self, t: float, mass_bound: float) -> float:
        """g(t) = (2K)^{2/n} int_0^{t (2K)^{-2/n}} ell(tau^{-n/2}) dtau."""
        c = (2.0 * mass_bound) ** (2.0 / self.n)
        return c * conditions.time_integral(self.envelopes.ell, t / c, self.n, self.tail)

    def __call__(self, mass_bound: float, rel_tol: float = 1e-10) -> HorizonEstimate:
        if not mass_bound > 0:
            raise ValueError("mass bound K must be positive")
        if not self.i1.convergent:
            raise NoHorizon(f"I1 is {self.i1.verdict} ({self.i1.rule}); no horizon under this scheme")
        g = lambda t: self.g(t, mass_bound)  # noqa: E731
        g_inf = (2 * mass_bound) ** (2.0 / self.n) * (2.0 / self.n) * self.full_integral
        if g_inf <= 0.5:
            ts = np.geomspace(1e-6, 1e3, 32)
            return HorizonEstimate(mass_bound, UNBOUNDED, [(float(t), g(t)) for t in ts])
        lo = hi = 1.0
        if g(1.0) > 0.5:
            while g(lo) > 0.5:
                lo /= 4.0
                if lo < 1e-300:
                    raise NoHorizon("g exceeds 1/2 at every sampled time")
            hi = lo * 4.0
        else:
            while g(hi) <= 0.5:
                hi *= 4.0
                if hi > 1e300:
                    return HorizonEstimate(mass_bound, UNBOUNDED, [])
            lo = hi / 4.0
        x = optimize.brentq(lambda y: g(np.exp(y)) - 0.5, np.log(lo), np.log(hi), xtol=rel_tol, rtol=1e-15)
        t_b = float(np.exp(x))
        # the root finder lands on either side of the root; keep g(t_b) <= 1/2
        while g(t_b) > 0.5:
            t_b *= 1.0 - rel_tol
        ts = np.geomspace(t_b * 1e-4, t_b, 32)
        return HorizonEstimate(mass_bound, t_b, [(float(t), g(t)) for t in ts])


def g_function(envelopes: EnvelopeFunctions, mass_bound: float, n: int):
    calc = HorizonCalculator(envelopes, n)
    return lambda t: calc.g(t, mass_bound)


def horizon(envelopes: EnvelopeFunctions, mass_bound: float, n: int, rel_tol: float = 1e-10) -> HorizonEstimate:
    """Largest T_B with g(T_B) <= 1/2; ``inf`` when g never reaches 1/2.

    f = 0 gives g = 0 and an unbounded horizon, as does any f whose total
    integral int_0^inf s^{-p_F} ell keeps g below 1/2 for this K.
    """
    return HorizonCalculator(envelopes, n)(mass_bound, rel_tol)


# -- monotone iteration -----------------------------------------------------------

def _blended(diff: np.ndarray, nodes: np.ndarray, spec) -> np.ndarray:
    axes = _spatial_axes(diff)
    a = np.abs(diff)
    return a.sum(axis=axes) * spec.cell_volume + nodes ** (spec.dim / 2.0) * a.max(axis=axes)


def _check_order(lo: np.ndarray, hi: np.ndarray, slack: float, relation: str, k: int,
                 nodes: np.ndarray, spec) -> None:
    excess = lo - hi - slack
    idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
    if excess[idx] > 0:
        ax = spec.axis()
        x = tuple(float(ax[i]) for i in idx[1:])
        raise OrderingViolation(relation, k, float(nodes[idx[0]]), x, float(lo[idx]), float(hi[idx]))


def monotone_solve(prop: HeatPropagator, nl: Nonlinearity, phi: GridField, grid: TimeGrid,
                   tol: float = 1e-8, max_iter: int = 60, amplification: float = 2.0,
                   horizon_estimate: HorizonEstimate | None = None, keep_history: bool = False):
    """Iterate w_{k+1} = F(w_k), v_{k+1} = F(v_k) from w_0 = A S(t) phi^+, v_0 = A S(t) phi^-.

    Ordering v_0 <= v_k <= v_{k+1} <= w_{k+1} <= w_k <= w_0 is asserted at every
    iteration (slack 1e-8 times the envelope scale).  Stops when both the sup-norm gap
    and the blended gap ||.||_1 + t^{n/2}||.||_inf fall below tol (1 + ||phi||_1).
    Returns ``(lower, upper, state)``.
    """
    if horizon_estimate is not None:
        if grid.t_end > horizon_estimate.t_b * (1 + 1e-12):
            raise SolverError(f"t_end={grid.t_end:.6g} exceeds horizon T_B={horizon_estimate.t_b:.6g}")
        if horizon_estimate.mass_bound < norm(phi, 1) * (1 - 1e-12):
            raise SolverError("horizon mass bound is smaller than ||phi||_1")
    if nl.positive_cone_only and phi.values.min() < 0:
        raise SolverError(f"{nl.name} is defined on the positive cone only; phi has negative values")

    nodes = grid.nodes
    spec = phi.spec
    free = propagate_nodes(prop, phi, nodes)
    w0 = amplification * propagate_nodes(prop, positive_part(phi), nodes)
    v0 = amplification * propagate_nodes(prop, negative_part(phi), nodes)
    scale = max(float(np.abs(w0).max()), float(np.abs(v0).max()), 1e-300)
    # w0 >= 0 >= v0 holds exactly in the continuum; any sign error is spectral ringing
    # from the kinks of phi^+ and phi^-, and sets the floor for the ordering checks.
    ringing = max(float(np.maximum(-w0, 0).max()), float(np.maximum(v0, 0).max()))
    slack = ORDER_SLACK * scale + 4.0 * ringing
    phi_l1 = norm(phi, 1)
    threshold = tol * (1.0 + phi_l1)

    w, v = w0, v0
    gaps: list[float] = []
    history = [] if keep_history else None
    converged = False
    sup_gap = blended_gap = float(np.abs(w0 - v0).max())
    k = 0
    for k in range(1, max_iter + 1):
        w_new = duhamel(prop, nl, phi, w, grid, free)
        v_new = duhamel(prop, nl, phi, v, grid, free)
        _check_order(w_new, w, slack, "w_{k+1} <= w_k", k, nodes, spec)
        _check_order(v, v_new, slack, "v_k <= v_{k+1}", k, nodes, spec)
        _check_order(v_new, w_new, slack, "v_{k+1} <= w_{k+1}", k, nodes, spec)
        _check_order(w_new, w0, slack, "w_{k+1} <= w", k, nodes, spec)
        _check_order(v0, v_new, slack, "v <= v_{k+1}", k, nodes, spec)
        w, v = w_new, v_new
        if history is not None:
            history.append((w, v))
        diff = w - v
        sup_gap = float(np.abs(diff).max())
        blended_gap = float(_blended(diff, nodes, spec).max())
        gaps.append(max(sup_gap, blended_gap))
        log.debug("iteration %d: sup gap %.3e, blended gap %.3e", k, sup_gap, blended_gap)
        if max(sup_gap, blended_gap) <= threshold:
            converged = True
            break

    status = "converged" if converged else "iteration_limit"
    gap = max(sup_gap, blended_gap)
    lower = SolutionTrajectory(nodes.copy(), v, spec, status=status, final_gap=gap)
    upper = SolutionTrajectory(nodes.copy(), w, spec, status=status, final_gap=gap)
    state = IterationState(
        sub_envelope=v0, super_envelope=w0, lower_iterates=v, upper_iterates=w,
        iteration_count=k, sup_gap=sup_gap, blended_gap=blended_gap, converged=converged,
        gap_history=gaps, phi_l1=phi_l1, tol=tol, history=history,
    )
    return lower, upper, state


# -- splitting reference ------------------------------------------------------------

def _blowup_reason(values: np.ndarray, spec, phi_l1: float) -> str | None:
    linf = float(np.abs(values).max()) if np.all(np.isfinite(values)) else np.inf
    if linf > BLOWUP_LINF:
        return f"||u||_inf = {linf:.3g} > {BLOWUP_LINF:g}"
    l1 = float(np.abs(values).sum() * spec.cell_volume)
    if l1 > BLOWUP_L1_FACTOR * (1.0 + phi_l1):
        return f"||u||_1 = {l1:.3g} > {BLOWUP_L1_FACTOR:g} (1 + ||phi||_1)"
    return None


class _Escape(Exception):
    pass


def _ode_flow(nl: Nonlinearity, u: np.ndarray, dt: float, rtol: float) -> np.ndarray:
    """Advance u' = f(u) pointwise by dt; raises _Escape if a point runs away."""
    if nl.is_zero or dt == 0:
        return u
    shape = u.shape
    y0 = u.reshape(-1)
    cap = BLOWUP_LINF

    def rhs(_t, y):
        return nl(y)

    def escape(_t, y):
        return cap - np.abs(y).max()

    escape.terminal = True
    try:
        sol = solve_ivp(rhs, (0.0, dt), y0, method="DOP853", rtol=rtol,
                        atol=rtol * max(1e-300, float(np.abs(y0).max())) + 1e-300, events=escape)
    except EvaluationOverflow as exc:
        raise _Escape(str(exc)) from None
    if sol.status == 1 or not sol.success:
        raise _Escape(sol.message if not sol.success else "pointwise ODE escaped within the substep")
    return sol.y[:, -1].reshape(shape)


def reference_integrate(prop: HeatPropagator, nl: Nonlinearity, phi: GridField, grid: TimeGrid,
                        substeps: int = 8, rtol: float = 1e-11) -> SolutionTrajectory:
    """Strang splitting: half nonlinear step, exact diffusion, half nonlinear step."""
    nodes = grid.nodes
    spec = phi.spec
    if nl.is_zero:
        values = np.array([phi.values if t == 0 else prop.apply_array(phi.values, t) for t in nodes])
        return SolutionTrajectory(nodes.copy(), values, spec, status="horizon_reached")
    u = phi.values.copy()
    out = [u.copy()]
    phi_l1 = norm(phi, 1)
    for j in range(1, len(nodes)):
        h = nodes[j] - nodes[j - 1]
        t0 = nodes[j - 1]
        try:
            dt = h / substeps
            for _ in range(substeps):
                u = _ode_flow(nl, u, 0.5 * dt, rtol)
                u = prop.apply_array(u, dt)
                u = _ode_flow(nl, u, 0.5 * dt, rtol)
                reason = _blowup_reason(u, spec, phi_l1)
                if reason:
                    raise _Escape(reason)
        except _Escape as exc:
            t_detect = float(t0 + h)
            return SolutionTrajectory(nodes[:j].copy(), np.array(out), spec, status="blow_up_detected",
                                      t_max_reached=float(nodes[j - 1]), t_detect=t_detect, detail=str(exc))
        out.append(u.copy())
    return SolutionTrajectory(nodes.copy(), np.array(out), spec, status="horizon_reached")


# -- maximal continuation -----------------------------------------------------------

def continue_maximally(prop: HeatPropagator, nl: Nonlinearity, phi: GridField, t_limit: float,
                       tol: float = 1e-8, steps: int = 48, max_iter: int = 40,
                       classification: "conditions.WellPosednessClass | None" = None,
                       min_step: float | None = None, amplification: float = 2.0) -> SolutionTrajectory:
    """Glue monotone solves on successive windows until t_limit, blow-up, or horizon collapse.

    Each window starts at the guaranteed horizon for K = 2||u||_1 and grows
    (doubling) while the iteration keeps certifying the window: envelope ordering
    holds and the gap closes.  Failures halve the window; a window below
    ``min_step`` is reported as blow-up at the current time.  ``amplification``
    sets the envelope factor A of the first window; restarts use A = 2.
    """
    n = phi.spec.dim
    if classification is None:
        classification = conditions.classify(nl, n)
    cone = nl.positive_cone_only or phi.values.min() >= 0
    uniqueness = classification.satisfies_I2 or (cone and classification.satisfies_I2_plus)
    if not uniqueness:
        raise SolverError("continuation needs I2 (or I2_plus on the cone); uniqueness is not guaranteed")
    env = classification.envelopes or conditions.classification_envelopes(nl)
    horizon_of = HorizonCalculator(env, n)
    if min_step is None:
        min_step = 1e-12 * t_limit
    spec = phi.spec
    phi_l1 = norm(phi, 1)

    times = [0.0]
    values = [phi.values.copy()]
    t = 0.0
    u = phi
    window_prev = None
    while t < t_limit * (1 - 1e-14):
        remaining = t_limit - t
        mass = norm(u, 1)
        if mass == 0:
            grid = TimeGrid.graded(remaining, steps)
            times.extend(t + grid.nodes[1:])
            values.extend(np.zeros((steps,) + spec.shape))
            break
        try:
            t_b = horizon_of(2.0 * mass).t_b
        except NoHorizon:
            t_b = 0.0
        window = min(remaining, max(t_b, 2.0 * window_prev if window_prev else t_b))
        accepted = None
        failure = ""
        while window >= min_step:
            grid = TimeGrid.graded(window, steps)
            try:
                amp = amplification if t == 0.0 else 2.0
                _, upper, state = monotone_solve(prop, nl, u, grid, tol=tol, max_iter=max_iter,
                                                 amplification=amp)
            except (OrderingViolation, EvaluationOverflow) as exc:
                failure = str(exc)
            else:
                if state.converged:
                    accepted = (grid, upper)
                    break
                failure = f"gap {state.sup_gap:.3g} after {state.iteration_count} iterations"
            window *= 0.5
        if accepted is None:
            log.info("horizon collapse at t=%.6g: %s", t, failure)
            return SolutionTrajectory(np.array(times), np.array(values), spec, status="blow_up_detected",
                                      t_max_reached=t, t_detect=t, detail=f"horizon collapse: {failure}")
        grid, upper = accepted
        for j in range(1, len(grid.nodes)):
            times.append(t + grid.nodes[j])
            values.append(upper.values[j])
            reason = _blowup_reason(upper.values[j], spec, phi_l1)
            if reason:
                return SolutionTrajectory(np.array(times), np.array(values), spec, status="blow_up_detected",
                                          t_max_reached=times[-1], t_detect=times[-1], detail=reason)
        t += grid.t_end
        u = upper.final
        window_prev = grid.t_end
    return SolutionTrajectory(np.array(times), np.array(values), spec, status="horizon_reached",
                              t_max_reached=float(times[-1]))
