"""Numeric verdicts on the integral growth conditions and the well-posedness classifier.

All conditions integrate s^{-p_F} E(s) for an envelope E and p_F = 1 + 2/n:

    I1: E = ell      on [1, inf)      I1_plus: E = ell_plus
    I2: E = big_l    on [1, inf)      I2_plus: E = big_l_plus
    I3: E = ell      on (0, 1]        I3_plus: E = ell_plus

Integrals are accumulated over dyadic bands [2^k, 2^{k+1}] (or [2^{-k-1}, 2^{-k}]
downward) with composite Simpson in ln s.  Verdicts are evidence, not proofs.
"""
from __future__ import annotations


import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .nonlinearity import (
    EnvelopeError,
    EnvelopeFunctions,
    Nonlinearity,
    check_structure,
    compute_envelopes,
)

KINDS = ("I1", "I2", "I3", "I1_plus", "I2_plus", "I3_plus")
_ENVELOPE_OF = {
    "I1": "ell", "I2": "big_l", "I3": "ell",
    "I1_plus": "ell_plus", "I2_plus": "big_l_plus", "I3_plus": "ell_plus",
}

SIMPSON_POINTS = 129
MAX_BANDS = 40
# envelope range needed to reach the band caps with one band of headroom
CLASSIFY_S_MIN = 2.0 ** -(MAX_BANDS + 1)
CLASSIFY_S_MAX = 2.0 ** (MAX_BANDS + 1)

GEOMETRIC_RATIO = 0.75
TAIL_FRACTION = 1e-6
STEADY_RATIO = 0.98
RATIO_TREND = 1e-6
RAABE_CONVERGENT = 1.2
RAABE_DIVERGENT = 0.8


def fujita_exponent(n: int) -> float:
    return 1.0 + 2.0 / n


def band_integral(fn: Callable, a: float, b: float, points: int = SIMPSON_POINTS) -> float:
    """Simpson's rule for int_a^b fn(s) ds on a uniform grid in ln s."""
    x = np.linspace(np.log(a), np.log(b), points)
    s = np.exp(x)
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.asarray(fn(s), dtype=float) * s
    h = (x[-1] - x[0]) / (points - 1)
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum()))


@dataclass
class BandSeries:
    """Result of accumulating an integral over dyadic bands."""

    cutoffs: list[float]
    increments: list[float]
    verdict: str
    rule: str
    tail_estimate: float

    @property
    def total(self) -> float:
        return float(np.sum(self.increments))

    @property
    def partials(self) -> list[float]:
        return list(np.cumsum(self.increments))


def _decide(inc: list[float], bands_from: float, final: bool, rel_tol: float) -> tuple[str, str, float] | None:
    """Apply the convergence tests to the increments so far.

    Returns None while undecided and not final.  ``bands_from`` is the band-index
    offset used by the power-decay test (the integrand's scale origin).
    """
    total = float(np.sum(inc))
    if not np.isfinite(total):
        return "divergent", "non-finite partial integral", np.inf
    if len(inc) < 4:
        return ("inconclusive", "too few bands", np.nan) if final else None
    last = np.asarray(inc[-4:])
    if np.all(last == 0):
        return "convergent", "vanishing increments", 0.0
    if np.all(last > 0):
        ratios = last[1:] / last[:-1]
        rho = float(ratios.max())
        if rho <= GEOMETRIC_RATIO:
            tail = float(last[-1] * rho / (1.0 - rho))
            if tail < rel_tol * total:
                return "convergent", f"geometric decay, ratio <= {rho:.3g}", tail
    if not final:
        return None

    if last[-1] > 0 and last[-3] <= last[-2] <= last[-1]:
        return "divergent", "increments non-decreasing over the last three doublings", np.inf
    if np.any(last <= 0):
        return "inconclusive", "sign or zero pattern in final increments", np.nan
    ratios = last[1:] / last[:-1]
    rho = float(ratios.max())
    if rho < 1.0 and ratios[-1] - ratios[0] <= RATIO_TREND and rho <= STEADY_RATIO:
        tail = float(last[-1] * rho / (1.0 - rho))
        return "convergent", f"steady geometric decay at ratio {rho:.4g} (tail bound {tail:.3g})", tail
    # power-law decay of band increments, I_k ~ k^-beta: convergent iff beta > 1
    m = min(len(inc), 6)
    k = bands_from + np.arange(len(inc) - m, len(inc)) + 0.5
    vals = np.asarray(inc[-m:])
    if np.any(vals <= 0):
        return "inconclusive", "non-positive increments", np.nan
    beta = -float(np.polyfit(np.log(k), np.log(vals), 1)[0])
    if beta > RAABE_CONVERGENT:
        tail = float(vals[-1] * k[-1] / (beta - 1.0))
        return "convergent", f"band increments decay like k^-{beta:.3g}", tail
    if beta < RAABE_DIVERGENT:
        return "divergent", f"band increments decay like k^-{beta:.3g}, not summable", np.inf
    return "inconclusive", f"band increments decay like k^-{beta:.3g}, too close to 1", np.nan


def accumulate_bands(integrand: Callable, start: float, direction: int, max_bands: int = MAX_BANDS,
                     rel_tol: float = TAIL_FRACTION, limit: float | None = None) -> BandSeries:
    """Integrate from ``start`` over successive doubling (direction=+1) or halving
    (direction=-1) bands until a decision is reached or ``max_bands`` is hit.

    ``limit`` additionally caps the outermost cutoff (envelope validity range).
    """
    cutoffs, inc = [], []
    a = start
    bands_from = abs(np.log2(start)) if start > 0 and direction > 0 else 0.0
    decision = None
    for _ in range(max_bands):
        b = a * 2.0 if direction > 0 else a / 2.0
        if limit is not None and ((direction > 0 and b > limit) or (direction < 0 and b < limit)):
            break
        lo, hi = (a, b) if direction > 0 else (b, a)
        inc.append(band_integral(integrand, lo, hi))
        cutoffs.append(b)
        a = b
        decision = _decide(inc, bands_from, final=False, rel_tol=rel_tol)
        if decision is not None:
            break
    if decision is None:
        decision = _decide(inc, bands_from, final=True, rel_tol=rel_tol)
    verdict, rule, tail = decision
    return BandSeries(cutoffs, inc, verdict, rule, tail)


@dataclass
class ConditionVerdict:
    kind: str
    verdict: str
    partial_values: list[tuple[float, float]]
    tail_exponent_estimate: float
    rule: str = ""
    tail_estimate: float = float("nan")

    @property
    def convergent(self) -> bool:
        return self.verdict == "convergent"

    @property
    def value(self) -> float:
        return self.partial_values[-1][1] if self.partial_values else 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "rule": self.rule,
            "cutoffs": [c for c, _ in self.partial_values],
            "partial_values": [v for _, v in self.partial_values],
            "tail_exponent_estimate": _json_float(self.tail_exponent_estimate),
            "tail_estimate": _json_float(self.tail_estimate),
        }


def _json_float(x: float):
    return float(x) if np.isfinite(x) else str(x)


def condition_integrand(envelope: Callable, n: int) -> Callable:
    pf = fujita_exponent(n)
    return lambda s: s ** -pf * envelope(s)


def _local_slope(fn: Callable, s: float) -> float:
    a, b = s / 1.01, s * 1.01
    with np.errstate(all="ignore"):
        ya, yb = float(np.asarray(fn(np.array([a])))[0]), float(np.asarray(fn(np.array([b])))[0])
    if ya > 0 and yb > 0 and np.isfinite(ya) and np.isfinite(yb):
        return float(np.log(yb / ya) / np.log(b / a))
    return float("nan")


def _verdict_for(kind: str, integrand: Callable, n: int, envelopes: EnvelopeFunctions | None) -> ConditionVerdict:
    upward = not kind.startswith("I3")
    limit = None
    if envelopes is not None and envelopes.provenance == "numeric":
        limit = envelopes.s_max if upward else envelopes.s_min
    try:
        series = accumulate_bands(integrand, 1.0, +1 if upward else -1, limit=limit)
    except EnvelopeError as exc:
        return ConditionVerdict(kind, "inconclusive", [], float("nan"), rule=f"envelope failure: {exc}")
    partial = list(zip(series.cutoffs, series.partials))
    slope = _local_slope(integrand, series.cutoffs[-1]) if series.cutoffs else float("nan")
    return ConditionVerdict(kind, series.verdict, partial, slope, rule=series.rule, tail_estimate=series.tail_estimate)


def check_condition(kind: str, envelopes: EnvelopeFunctions, n: int) -> ConditionVerdict:
    if kind not in KINDS:
        raise ValueError(f"unknown condition {kind!r}; expected one of {KINDS}")
    if n not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {n}")
    env = envelopes.get(_ENVELOPE_OF[kind])
    return _verdict_for(kind, condition_integrand(env, n), n, envelopes)


def check_growth_criterion(nl: Nonlinearity, n: int) -> ConditionVerdict:
    """int_1^inf s^{-(2+2/n)} f(s) ds, the convex-case criterion on the positive half-line."""
    pf = fujita_exponent(n)

    def integrand(s):
        return s ** -(pf + 1.0) * np.maximum(nl(s), 0.0)

    try:
        return _verdict_for("growth", integrand, n, None)
    except ArithmeticError as exc:
        return ConditionVerdict("growth", "divergent", [], float("nan"), rule=f"overflow: {exc}")


def substituted_partial(envelope: Callable, cutoff: float, n: int) -> float:
    """(n/2) int_{S^{-2/n}}^1 E(tau^{-n/2}) dtau, equal to int_1^S s^{-p_F} E(s) ds.

    Uses adaptive quadrature in tau, independent of the banded rule.
    """
    lo = cutoff ** (-2.0 / n)
    fn = lambda tau: float(envelope(np.array([tau ** (-n / 2.0)]))[0])
    # split on a log grid so the adaptive rule sees each scale
    edges = np.geomspace(lo, 1.0, max(2, int(np.log2(1.0 / lo)) + 2))
    total = 0.0
    # tabulated envelopes are only piecewise smooth, so quad may report roundoff
    # well below the tolerance this value is compared at
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(fn, a, b, epsabs=0.0, epsrel=1e-10, limit=200)
            total += val
    return 0.5 * n * total


def upper_tail(envelope: Callable, lower: float, n: int, rel_tol: float = 1e-13, max_bands: int = 120) -> float:
    """int_lower^inf s^{-p_F} E(s) ds, with the decided tail estimate added; inf if divergent."""
    integrand = condition_integrand(envelope, n)
    series = accumulate_bands(integrand, lower, +1, max_bands=max_bands, rel_tol=rel_tol)
    if series.verdict == "divergent":
        return float("inf")
    tail = series.tail_estimate if np.isfinite(series.tail_estimate) else 0.0
    return series.total + tail


class TailIntegral:
    """Memoized x -> int_x^inf s^{-p_F} E(s) ds.

    Tails are cached at dyadic anchors 2^k; a query adds one partial band to the
    nearest anchor above it, so repeated evaluation (root finding, restarts) is cheap.
    """

    def __init__(self, envelope: Callable, n: int):
        self.envelope = envelope
        self.n = n
        self._integrand = condition_integrand(envelope, n)
        self._anchors: dict[int, float] = {}

    def _anchor(self, k: int) -> float:
        if k in self._anchors:
            return self._anchors[k]
        above = [j for j in self._anchors if j > k]
        if not above:
            value = upper_tail(self.envelope, 2.0 ** k, self.n)
        else:
            j = min(above)
            value = self._anchors[j]
            for m in range(j - 1, k - 1, -1):
                value = value + band_integral(self._integrand, 2.0 ** m, 2.0 ** (m + 1))
                self._anchors[m] = value
        self._anchors[k] = value
        return value

    def __call__(self, x: float) -> float:
        if not x > 0:
            raise ValueError("lower limit must be positive")
        k = int(np.floor(np.log2(x)))
        if 2.0 ** k == x:
            return self._anchor(k)
        upper = self._anchor(k + 1)
        return upper + band_integral(self._integrand, x, 2.0 ** (k + 1))


def time_integral(envelope: Callable, t: float, n: int, tail: TailIntegral | None = None) -> float:
    """int_0^t E(s^{-n/2}) ds = (2/n) int_{t^{-n/2}}^inf sigma^{-p_F} E(sigma) dsigma."""
    if t <= 0:
        return 0.0
    x = t ** (-n / 2.0)
    return (2.0 / n) * (tail(x) if tail is not None else upper_tail(envelope, x, n))


# -- classification --------------------------------------------------------------

CLASSES = ("well_posed_L1", "well_posed_L1_plus_only", "not_well_posed_L1_plus", "indeterminate")


@dataclass
class WellPosednessClass:
    satisfies_I1: bool
    satisfies_I2: bool
    satisfies_I3: bool
    odd: bool
    convex_on_positives: bool
    classification: str
    global_for_small_data: bool
    citations: list[str]
    verdicts: dict[str, ConditionVerdict]
    growth_criterion: ConditionVerdict | None = None
    diagnostics: list[str] = field(default_factory=list)
    positive_cone_only: bool = False
    envelopes: EnvelopeFunctions | None = field(default=None, repr=False)

    @property
    def satisfies_I2_plus(self) -> bool:
        return self.verdicts["I2_plus"].convergent

    def to_dict(self) -> dict:
        out = {
            "classification": self.classification,
            "global_for_small_data": self.global_for_small_data,
            "flags": {
                "satisfies_I1": self.satisfies_I1,
                "satisfies_I2": self.satisfies_I2,
                "satisfies_I3": self.satisfies_I3,
                "odd": self.odd,
                "convex_on_positives": self.convex_on_positives,
                "positive_cone_only": self.positive_cone_only,
            },
            "citations": list(self.citations),
            "diagnostics": list(self.diagnostics),
            "verdicts": {k: v.to_dict() for k, v in self.verdicts.items()},
        }
        if self.growth_criterion is not None:
            out["growth_criterion"] = self.growth_criterion.to_dict()
        return out


def classification_envelopes(nl: Nonlinearity) -> EnvelopeFunctions:
    """Envelopes covering the band caps, shrinking the range if f overflows."""
    s_max = CLASSIFY_S_MAX
    while True:
        try:
            return compute_envelopes(nl, s_max=s_max, s_min=CLASSIFY_S_MIN)
        except EnvelopeError as exc:
            s_max = exc.at / 4.0
            if s_max <= 16.0:
                raise


def classify(nl: Nonlinearity, n: int, envelopes: EnvelopeFunctions | None = None) -> WellPosednessClass:
    """Run structure probes and all condition checks and combine them."""
    structure = check_structure(nl)
    env = envelopes or classification_envelopes(nl)
    verdicts = {kind: check_condition(kind, env, n) for kind in KINDS}
    diagnostics: list[str] = []

    # L >= ell, so a convergent I2 cannot sit next to a divergent I1
    consistent = True
    for strong, weak in (("I2", "I1"), ("I2_plus", "I1_plus")):
        if verdicts[strong].convergent and verdicts[weak].verdict == "divergent":
            diagnostics.append(f"{strong} convergent but {weak} divergent; envelope ordering violated")
            consistent = False
    odd_convex = structure.odd and structure.convex_on_positives
    if odd_convex and verdicts["I1"].convergent and not verdicts["I2"].convergent:
        diagnostics.append("odd convex f with I1 convergent must satisfy I2; verdicts disagree")
        consistent = False

    convex_pos = structure.convex_on_positives
    growth = check_growth_criterion(nl, n) if convex_pos else None
    citations: list[str] = []
    cone = nl.positive_cone_only

    v = verdicts
    if not consistent:
        cls, global_small = "indeterminate", False
    elif not cone and v["I2"].convergent:
        cls = "well_posed_L1"
        citations.append("I2: existence, uniqueness, continuous dependence and comparison in L1")
        if odd_convex:
            citations.append("odd convex source: I1 and I2 coincide")
        global_small = v["I3"].convergent
        if global_small:
            citations.append("I2 and I3: small L1 data give global solutions decaying like t^(-n/2)")
    elif v["I2_plus"].convergent:
        cls = "well_posed_L1_plus_only"
        citations.append("I2_plus: well-posedness, continuous dependence and comparison on the positive cone")
        global_small = v["I3_plus"].convergent
        if global_small:
            citations.append("I2_plus and I3_plus: small nonnegative data give global solutions")
    elif convex_pos and growth is not None and growth.verdict == "divergent":
        cls, global_small = "not_well_posed_L1_plus", False
        citations.append("convex source: well-posed on the positive cone iff int_1^inf s^-(2+2/n) f(s) ds < inf")
        if odd_convex and not cone:
            citations.append("odd convex source failing I2: not well-posed in L1 or comparison fails")
    else:
        cls, global_small = "indeterminate", False
        undecided = [k for k, vv in v.items() if vv.verdict == "inconclusive"]
        if undecided:
            diagnostics.append(f"inconclusive verdicts: {', '.join(undecided)}")
        else:
            diagnostics.append("no sufficient condition applies")

    i1 = v["I1_plus" if cone else "I1"].convergent
    i2 = v["I2_plus" if cone else "I2"].convergent
    i3 = v["I3_plus" if cone else "I3"].convergent
    return WellPosednessClass(
        satisfies_I1=i1,
        satisfies_I2=i2,
        satisfies_I3=i3,
        odd=structure.odd,
        convex_on_positives=convex_pos,
        classification=cls,
        global_for_small_data=global_small,
        citations=citations,
        verdicts=verdicts,
        growth_criterion=growth,
        diagnostics=diagnostics,
        positive_cone_only=cone,
        envelopes=env,
    )
