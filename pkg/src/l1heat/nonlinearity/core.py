"""Source terms f: R -> R, their builtin family, and numeric probes of their structure."""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .expr import compile_expression

Evaluator = Callable[[np.ndarray], np.ndarray]


class NonlinearityError(ValueError):
    pass


class EvaluationOverflow(ArithmeticError):
    """f produced a non-finite value from finite input."""

    def __init__(self, message: str, at: float | None = None):
        super().__init__(message)
        self.at = at


@dataclass(frozen=True)
class ClosedFormEnvelopes:
    ell: Evaluator
    big_l: Evaluator
    ell_plus: Optional[Evaluator] = None
    big_l_plus: Optional[Evaluator] = None


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    func: Evaluator
    name: str
    source: dict
    claims_monotone: bool = True
    claims_odd: bool = False
    claims_convex_on_positives: bool = False
    positive_cone_only: bool = False
    is_zero: bool = False
    closed_form: Optional[ClosedFormEnvelopes] = None
    scale: float = 1.0

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(all="ignore"):
            out = self.scale * np.asarray(self.func(u), dtype=float)
        if out.shape != u.shape:
            out = np.broadcast_to(out, u.shape).copy()
        bad = ~np.isfinite(out) & np.isfinite(u)
        if bad.any():
            at = float(u[bad].flat[0])
            raise EvaluationOverflow(f"{self.name}: non-finite value at u={at:.6g}", at)
        return out

    def scaled(self, c: float) -> "Nonlinearity":
        """c * f for c > 0, closed-form envelopes scaled along."""
        if not c > 0:
            raise ValueError("scale factor must be positive")
        cf = self.closed_form
        if cf is not None:
            cf = ClosedFormEnvelopes(
                *(None if g is None else _scaled_eval(g, c) for g in (cf.ell, cf.big_l, cf.ell_plus, cf.big_l_plus))
            )
        return replace(self, scale=self.scale * c, closed_form=cf, name=f"{c:g}*{self.name}",
                       source={**self.source, "scale": self.scale * c})


def _scaled_eval(g: Evaluator, c: float) -> Evaluator:
    return lambda s: c * g(s)


# -- parsing -----------------------------------------------------------------

_PROBES = np.array([0.0, 1e-3, -1e-3, 0.1, -0.1, 0.5, -0.5, 1.0, -1.0, 2.0, -2.0, 10.0, -10.0])


def parse(text: str) -> Nonlinearity:
    """Compile an expression in ``u`` and validate f(0) = 0 and finiteness at probes."""
    fn = compile_expression(text)
    nl = Nonlinearity(fn, name=text.strip(), source={"expr": text.strip()})
    _validate(nl)
    return nl


def _validate(nl: Nonlinearity) -> None:
    with np.errstate(all="ignore"):
        vals = nl.scale * np.asarray(nl.func(_PROBES), dtype=float)
    vals = np.broadcast_to(vals, _PROBES.shape)
    if not np.all(np.isfinite(vals)):
        at = float(_PROBES[~np.isfinite(vals)][0])
        raise NonlinearityError(f"{nl.name}: non-finite value at u={at:g}")
    if vals[0] != 0.0:
        raise NonlinearityError(f"{nl.name}: f(0) = {vals[0]:g}, must be 0")


# -- builtins ----------------------------------------------------------------

def power(p: float) -> Nonlinearity:
    """|u|^{p-1} u."""
    p = float(p)
    if p < 1:
        raise NonlinearityError(f"power(p) needs p >= 1 for local Lipschitz continuity, got {p}")
    ell = lambda s: np.where(np.asarray(s) > 0, np.power(np.abs(s), p - 1), 0.0)
    big_l = lambda s: p * ell(s)
    return Nonlinearity(
        lambda u: np.sign(u) * np.abs(u) ** p,
        name=f"power({p:g})",
        source={"builtin": "power", "params": {"p": p}},
        claims_odd=True,
        claims_convex_on_positives=True,
        closed_form=ClosedFormEnvelopes(ell, big_l, ell, big_l),
    )


def minpower(p: float, q: float) -> Nonlinearity:
    """Odd extension of min(u^p, u^q), 1 <= p < q: u^q below 1 and u^p above."""
    p, q = float(p), float(q)
    if not 1 <= p < q:
        raise NonlinearityError(f"minpower needs 1 <= p < q, got p={p}, q={q}")

    def ell(s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= 1, np.power(s, q - 1), np.power(s, p - 1)) * (s > 0)

    def big_l(s):
        s = np.asarray(s, dtype=float)
        below = q * np.power(np.minimum(s, 1.0), q - 1)
        above = np.where(s > 1, p * np.power(s, p - 1), 0.0)
        return np.maximum(below, above) * (s > 0)

    return Nonlinearity(
        lambda u: np.sign(u) * np.minimum(np.abs(u) ** p, np.abs(u) ** q),
        name=f"minpower({p:g},{q:g})",
        source={"builtin": "minpower", "params": {"p": p, "q": q}},
        claims_odd=True,
        closed_form=ClosedFormEnvelopes(ell, big_l, ell, big_l),
    )


def logcorrected(gamma: float, beta: float, a: float = 0.01, b: float = 10.0, dim: int = 1) -> Nonlinearity:
    """u^{p_F} g(u) on u > 0 and 0 for u <= 0, with p_F = 1 + 2/dim and

    g(u) = ln(1/u)^-gamma on (0, a), ln(e + u)^-beta on (b, inf), and a
    monotone cubic (smoothstep) blend of the two end values on [a, b].
    Only meaningful on the positive cone.
    """
    gamma, beta, a, b = float(gamma), float(beta), float(a), float(b)
    if not (0 < a < 1 and b > a):
        raise NonlinearityError(f"logcorrected needs 0 < a < 1 and b > a, got a={a}, b={b}")
    if gamma <= 0 or beta <= 0:
        raise NonlinearityError("logcorrected needs positive gamma and beta")
    pf = 1.0 + 2.0 / dim
    ga = np.log(1.0 / a) ** -gamma
    gb = np.log(np.e + b) ** -beta
    if gb < ga:
        raise NonlinearityError(
            f"logcorrected: g(a)={ga:.4g} > g(b)={gb:.4g}; the blend would not be monotone, "
            "take a smaller a or a different b"
        )

    def g(u):
        out = np.zeros_like(u)
        lo = (u > 0) & (u < a)
        mid = (u >= a) & (u <= b)
        hi = u > b
        out[lo] = np.log(1.0 / u[lo]) ** -gamma
        x = (u[mid] - a) / (b - a)
        out[mid] = ga + (gb - ga) * x * x * (3.0 - 2.0 * x)
        out[hi] = np.log(np.e + u[hi]) ** -beta
        return out

    def f(u):
        u = np.asarray(u, dtype=float)
        pos = np.maximum(u, 0.0)
        return pos ** pf * g(pos)

    return Nonlinearity(
        f,
        name=f"logcorrected({gamma:g},{beta:g},{a:g},{b:g})",
        source={"builtin": "logcorrected", "params": {"gamma": gamma, "beta": beta, "a": a, "b": b}},
        positive_cone_only=True,
    )


def linear(c: float) -> Nonlinearity:
    c = float(c)
    if c < 0:
        raise NonlinearityError("linear(c) needs c >= 0 to be non-decreasing")
    const = lambda s: np.where(np.asarray(s) > 0, c, 0.0)
    return Nonlinearity(
        lambda u: c * u,
        name=f"linear({c:g})",
        source={"builtin": "linear", "params": {"c": c}},
        claims_odd=True,
        claims_convex_on_positives=True,
        is_zero=c == 0,
        closed_form=ClosedFormEnvelopes(const, const, const, const),
    )


def zero() -> Nonlinearity:
    z = lambda s: np.zeros(np.shape(s))
    return Nonlinearity(
        lambda u: np.zeros_like(u),
        name="zero",
        source={"builtin": "zero", "params": {}},
        claims_odd=True,
        claims_convex_on_positives=True,
        is_zero=True,
        closed_form=ClosedFormEnvelopes(z, z, z, z),
    )


BUILTINS: dict[str, Callable[..., Nonlinearity]] = {
    "power": power,
    "minpower": minpower,
    "logcorrected": logcorrected,
    "linear": linear,
    "zero": zero,
}

_PARAM_ORDER = {
    "power": ("p",),
    "minpower": ("p", "q"),
    "logcorrected": ("gamma", "beta", "a", "b"),
    "linear": ("c",),
    "zero": (),
}

_CALL_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def builtin(name: str, params: dict | None = None, dim: int = 1) -> Nonlinearity:
    """Build a registered nonlinearity; ``name`` may also be a call like ``"power(1.5)"``."""
    params = dict(params or {})
    m = _CALL_RE.match(name)
    if m and m.group(2) is not None:
        name = m.group(1)
        args = [float(x) for x in m.group(2).split(",") if x.strip()]
        order = _PARAM_ORDER.get(name, ())
        if len(args) > len(order):
            raise NonlinearityError(f"{name} takes at most {len(order)} parameters")
        params.update(zip(order, args))
    if name not in BUILTINS:
        raise NonlinearityError(f"unknown builtin {name!r}; known: {sorted(BUILTINS)}")
    if name == "logcorrected":
        params.setdefault("dim", dim)
    try:
        return BUILTINS[name](**params)
    except TypeError as exc:
        raise NonlinearityError(f"bad parameters for {name}: {exc}") from None


def from_source(source: dict, dim: int = 1) -> Nonlinearity:
    """Inverse of ``Nonlinearity.source``."""
    if "expr" in source:
        nl = parse(source["expr"])
    elif "builtin" in source:
        nl = builtin(source["builtin"], source.get("params"), dim=dim)
    else:
        raise NonlinearityError("nonlinearity needs either 'expr' or 'builtin'")
    scale = float(source.get("scale", 1.0))
    return nl if scale == 1.0 else nl.scaled(scale)


# -- structural probes ---------------------------------------------------------

@dataclass(frozen=True)
class MVerdict:
    passed: bool
    reason: str = ""
    witness: tuple[float, float] | None = None


def probe_grid(count: int, extent: float, smallest: float = 1e-6) -> np.ndarray:
    """Symmetric log-spaced probes in [-extent, extent], including 0 and +-1 when in range."""
    pos = np.geomspace(min(smallest, extent), extent, max(count, 2))
    if extent >= 1:
        pos = np.union1d(pos, [1.0])
    return np.concatenate([-pos[::-1], [0.0], pos])


def check_hypothesis_m(nl: Nonlinearity, probe_count: int = 64, range: float = 100.0) -> MVerdict:
    """Probe monotonicity, f(0) = 0 and boundedness of local difference quotients."""
    if probe_count < 2:
        raise ValueError("probe_count must be at least 2")
    try:
        if float(nl(np.array([0.0]))[0]) != 0.0:
            return MVerdict(False, "f(0) != 0", (0.0, 0.0))
        u = probe_grid(probe_count, range)
        fu = nl(u)
        # unit-scale anchors are checked first so the witness is the simplest available
        for a, b in ((0.0, 1.0), (-1.0, 0.0)):
            if b <= range:
                fa, fb = nl(np.array([a, b]))
                if fb < fa - _tol(fa, fb):
                    return MVerdict(False, "not non-decreasing", (a, b))
        drop = fu[1:] < fu[:-1] - 1e-12 * np.maximum(np.abs(fu[1:]), np.abs(fu[:-1]))
        if drop.any():
            i = int(np.argmax(drop))
            return MVerdict(False, "not non-decreasing", (float(u[i]), float(u[i + 1])))
        # local Lipschitz: symmetric quotients must settle under refinement
        quotients = []
        for rel in (1e-4, 1e-6, 1e-8):
            d = rel * np.maximum(1.0, np.abs(u))
            quotients.append((nl(u + d) - nl(u - d)) / (2 * d))
        q0, q1, q2 = (np.abs(q) for q in quotients)
        growing = (q1 > 3 * q0 + 1e-12) & (q2 > 3 * q1 + 1e-12)
        if growing.any():
            i = int(np.argmax(growing))
            d = 1e-8 * max(1.0, abs(u[i]))
            return MVerdict(False, "difference quotients diverge under refinement", (float(u[i]), float(u[i] + d)))
    except EvaluationOverflow as exc:
        return MVerdict(False, f"evaluation failed: {exc}", (exc.at, exc.at) if exc.at is not None else None)
    return MVerdict(True)


def _tol(a: float, b: float) -> float:
    return 1e-12 * max(abs(a), abs(b))


@dataclass(frozen=True)
class StructureFlags:
    odd: bool
    convex_on_positives: bool
    odd_witness: float | None = None
    convex_witness: tuple[float, float] | None = None


def check_structure(nl: Nonlinearity, range: float = 100.0, count: int = 48) -> StructureFlags:
    """Probe oddness f(-u) = -f(u) and midpoint convexity of f on (0, range]."""
    u = np.geomspace(1e-4, range, count)
    if range >= 1:
        u = np.union1d(u, [1.0])
    fp, fm = nl(u), nl(-u)
    defect = np.abs(fp + fm)
    bad = defect > 1e-10 * np.maximum(np.abs(fp), np.abs(fm)) + 1e-300
    odd_witness = float(u[np.argmax(bad)]) if bad.any() else None

    a, b = np.meshgrid(u, u, indexing="ij")
    mask = a < b
    a, b = a[mask], b[mask]
    fa, fb = nl(a), nl(b)
    fmid = nl(0.5 * (a + b))
    chord = 0.5 * (fa + fb)
    excess = fmid - chord - 1e-10 * np.abs(chord) - 1e-300
    convex_witness = None
    if (excess > 0).any():
        i = int(np.argmax(excess))
        convex_witness = (float(a[i]), float(b[i]))
    return StructureFlags(odd_witness is None, convex_witness is None, odd_witness, convex_witness)
