"""Growth envelopes of a source term.

ell(s)    = sup_{0<|t|<=s} f(t)/t
big_l(s)  = sup_{|u|,|v|<=s, u!=v} (f(u) - f(v))/(u - v)
and the positive-cone versions restricted to 0 < t, u, v <= s.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EvaluationOverflow, Nonlinearity

Evaluator = Callable[[np.ndarray], np.ndarray]


class EnvelopeError(ArithmeticError):
    def __init__(self, message: str, at: float):
        super().__init__(message)
        self.at = at


class EnvelopeTable:
    """Non-decreasing tabulated function with log-log interpolation.

    Between nodes with positive values the interpolant is linear in (ln s, ln v),
    raised where needed to the lower of the two neighbouring secants extended into
    the interval.  The raise bounds locally concave stretches (and concave kinks)
    from above, so the table stays an upper envelope between its nodes; it is exact
    at nodes and for pure power laws.  Zero-valued stretches are interpolated
    linearly in (s, v).  All pieces are non-decreasing.  Outside the table the last
    (first) local power-law exponent is continued.
    """

    def __init__(self, s: np.ndarray, values: np.ndarray):
        self.s = np.asarray(s, dtype=float)
        self.values = np.maximum.accumulate(np.asarray(values, dtype=float))
        self.lo_exp = _local_exponent(self.s[:2], self.values[:2])
        self.hi_exp = _local_exponent(self.s[-2:], self.values[-2:])
        with np.errstate(divide="ignore", invalid="ignore"):
            lv = np.log(self.values)
            lv[~(self.values > 0)] = np.nan
            self._logs = np.log(self.s)
            self._logv = lv
            self._slopes = np.diff(lv) / np.diff(self._logs)  # nan where a value is zero

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape)
        sv, vv = self.s, self.values
        inside = (s >= sv[0]) & (s <= sv[-1])
        if inside.any():
            x = s[inside]
            i = np.clip(np.searchsorted(sv, x, side="right") - 1, 0, len(sv) - 2)
            s0, s1, v0, v1 = sv[i], sv[i + 1], vv[i], vv[i + 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                w_log = np.log(x / s0) / np.log(s1 / s0)
                loglog = v0 * np.power(np.where(v0 > 0, v1 / np.where(v0 > 0, v0, 1.0), 1.0), w_log)
            lin = v0 + (v1 - v0) * (x - s0) / (s1 - s0)
            loglog = np.maximum(loglog, self._secant_bound(x, i))
            out[inside] = np.where((v0 > 0) & (v1 > 0), loglog, lin)
        above = s > sv[-1]
        if above.any():
            out[above] = vv[-1] * (s[above] / sv[-1]) ** self.hi_exp
        below = (s > 0) & (s < sv[0])
        if below.any():
            out[below] = vv[0] * (s[below] / sv[0]) ** self.lo_exp
        return out


    def _secant_bound(self, x: np.ndarray, i: np.ndarray) -> np.ndarray:
        """min(left secant extended forward, right secant extended backward), or 0."""
        m = len(self.s)
        X = np.log(x)
        left_ok = i >= 1
        right_ok = i + 2 <= m - 1
        il = np.where(left_ok, i - 1, 0)
        ir = np.where(right_ok, i + 1, 0)
        with np.errstate(invalid="ignore"):
            ext_l = self._logv[i] + self._slopes[il] * (X - self._logs[i])
            ext_r = self._logv[i + 1] - self._slopes[ir] * (self._logs[i + 1] - X)
            bound = np.minimum(ext_l, ext_r)
        ok = left_ok & right_ok & np.isfinite(bound)
        return np.where(ok, np.exp(np.where(ok, bound, -np.inf)), 0.0)


def _local_exponent(s, v) -> float:
    if v[0] > 0 and v[1] > 0 and s[1] > s[0]:
        return max(float((np.log(v[1]) - np.log(v[0])) / (np.log(s[1]) - np.log(s[0]))), 0.0)
    return 0.0


@dataclass(frozen=True)
class EnvelopeFunctions:
    ell: Evaluator
    big_l: Evaluator
    ell_plus: Evaluator
    big_l_plus: Evaluator
    provenance: str  # "closed-form" or "numeric"
    s_min: float = 0.0
    s_max: float = np.inf

    def get(self, name: str) -> Evaluator:
        return getattr(self, name)


def _probe(nl: Nonlinearity, t: np.ndarray) -> np.ndarray:
    try:
        return nl(t)
    except EvaluationOverflow as exc:
        raise EnvelopeError(f"evaluation of {nl.name} overflowed at t={exc.at:.6g}", exc.at) from None


def _step(t: np.ndarray) -> np.ndarray:
    return np.minimum(np.maximum(1e-8, 1e-8 * np.abs(t)), 1e-3 * np.abs(t))


def _sym_quotient(nl: Nonlinearity, t: np.ndarray) -> np.ndarray:
    d = _step(t)
    return (_probe(nl, t + d) - _probe(nl, t - d)) / (2 * d)


def _refined_quotients(nl: Nonlinearity, t: np.ndarray, dq: np.ndarray, sign: float,
                       levels: int = 6, points: int = 12) -> np.ndarray:
    """Best quotient found between t[i-1] and t[i] when the quotient jumps by > 10% there.

    Each flagged interval is sampled at ``points`` points and the search zooms into
    the neighbours of the best sample ``levels`` times, so a kink is approached to
    within about (interval width) / 5^levels.
    """
    extra = np.full(t.shape, -np.inf)
    a, b = dq[:-1], dq[1:]
    jump = np.abs(b - a) > 0.1 * np.maximum(np.abs(a), np.abs(b))
    for i in np.nonzero(jump)[0]:
        lo, hi = t[i], t[i + 1]
        best = -np.inf
        for _ in range(levels):
            sub = np.linspace(lo, hi, points)
            q = _sym_quotient(nl, sign * sub)
            j = int(np.argmax(q))
            best = max(best, float(q[j]))
            lo, hi = sub[max(j - 1, 0)], sub[min(j + 1, points - 1)]
        extra[i + 1] = best
    return extra


def numeric_envelopes(nl: Nonlinearity, s_max: float = 1e3, samples_per_decade: int = 64,
                      s_min: float = 1e-6) -> EnvelopeFunctions:
    if not s_max > s_min > 0:
        raise ValueError(f"need 0 < s_min < s_max, got {s_min}, {s_max}")
    decades = np.log10(s_max / s_min)
    t = np.geomspace(s_min, s_max, int(np.ceil(decades * samples_per_decade)) + 1)
    fp, fm = _probe(nl, t), _probe(nl, -t)

    ratio_p = fp / t
    ratio_m = -fm / t
    ell_plus = np.maximum.accumulate(np.maximum(ratio_p, 0.0))
    ell = np.maximum.accumulate(np.maximum(np.maximum(ratio_p, ratio_m), 0.0))

    dq_p = _sym_quotient(nl, t)
    dq_m = _sym_quotient(nl, -t)
    chord_p = np.concatenate([[-np.inf], np.diff(fp) / np.diff(t)])
    chord_m = np.concatenate([[-np.inf], np.diff(fm) / -np.diff(-t)])
    ref_p = _refined_quotients(nl, t, dq_p, 1.0)
    ref_m = _refined_quotients(nl, t, dq_m, -1.0)

    # chords from 0 are difference quotients too, hence ell <= big_l
    lp = np.max([dq_p, chord_p, ref_p, ell_plus], axis=0)
    big_l_plus = np.maximum.accumulate(np.maximum(lp, 0.0))
    lm = np.max([dq_m, chord_m, ref_m, ell], axis=0)
    big_l = np.maximum.accumulate(np.maximum(np.maximum(lm, big_l_plus), 0.0))

    return EnvelopeFunctions(
        ell=EnvelopeTable(t, ell),
        big_l=EnvelopeTable(t, big_l),
        ell_plus=EnvelopeTable(t, ell_plus),
        big_l_plus=EnvelopeTable(t, big_l_plus),
        provenance="numeric",
        s_min=s_min,
        s_max=s_max,
    )


def compute_envelopes(nl: Nonlinearity, s_max: float = 1e3, samples_per_decade: int = 64,
                      s_min: float = 1e-6, use_closed_form: bool = True) -> EnvelopeFunctions:
    """Envelopes of ``nl``; closed forms win when the nonlinearity carries them."""
    cf = nl.closed_form
    if use_closed_form and cf is not None:
        return EnvelopeFunctions(
            ell=cf.ell,
            big_l=cf.big_l,
            ell_plus=cf.ell_plus or cf.ell,
            big_l_plus=cf.big_l_plus or cf.big_l,
            provenance="closed-form",
        )
    return numeric_envelopes(nl, s_max=s_max, samples_per_decade=samples_per_decade, s_min=s_min)
