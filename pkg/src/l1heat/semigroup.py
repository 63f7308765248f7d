"""Heat semigroup on the periodic grid via its Fourier multiplier."""
from __future__ import annotations

import numpy as np

from .field import GridField, GridSpec, SpecMismatch, norm

# relative size of the imaginary residue tolerated after inversion
IMAG_TOL = 1e-12


class ConjugateSymmetryError(RuntimeError):
    pass


def heat_kernel(x, t: float, dim: int | None = None) -> np.ndarray:
    """Gaussian kernel (4 pi t)^{-n/2} exp(-|x|^2 / 4t).

    ``x`` is a point (length-n sequence) or an array whose last axis holds
    coordinates; a scalar or 1-d array with ``dim=1`` is read as points on the line.
    """
    if not t > 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    if dim == 1 or x.ndim == 0:
        r2 = x ** 2
        n = 1
    else:
        r2 = np.sum(x ** 2, axis=-1)
        n = x.shape[-1]
    return (4.0 * np.pi * t) ** (-n / 2.0) * np.exp(-r2 / (4.0 * t))


def gaussian_field(spec: GridSpec, t: float, center=None, mass: float = 1.0) -> GridField:
    """``mass * G(x - center, t)`` sampled on the grid."""
    r2 = spec.radius_squared(center)
    return GridField(spec, mass * (4.0 * np.pi * t) ** (-spec.dim / 2.0) * np.exp(-r2 / (4.0 * t)))


class HeatPropagator:
    """Applies S(t) = exp(t Delta) spectrally on a periodic grid."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        k = 2.0 * np.pi * np.fft.fftfreq(spec.points_per_axis, d=spec.spacing)
        grids = np.meshgrid(*([k ** 2] * spec.dim), indexing="ij")
        xi2 = sum(grids)
        xi2.setflags(write=False)
        self.frequency_grid = xi2

    def multiplier(self, t: float) -> np.ndarray:
        return np.exp(-self.frequency_grid * t)

    def forward(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fftn(values)

    def inverse(self, spectrum: np.ndarray) -> np.ndarray:
        z = np.fft.ifftn(spectrum)
        scale = max(float(np.abs(z.real).max()), 1e-300)
        resid = float(np.abs(z.imag).max())
        if resid > IMAG_TOL * scale and resid > 1e-300:
            raise ConjugateSymmetryError(
                f"imaginary residue {resid:.3g} exceeds {IMAG_TOL:g} of field scale {scale:.3g}"
            )
        return z.real

    def apply(self, f: GridField, t: float) -> GridField:
        if f.spec != self.spec:
            raise SpecMismatch(f"propagator grid {self.spec} vs field grid {f.spec}")
        if t < 0:
            raise ValueError(f"negative time {t}")
        if t == 0:
            return f
        return GridField(self.spec, self.apply_array(f.values, t))

    def apply_array(self, values: np.ndarray, t: float) -> np.ndarray:
        return self.inverse(self.forward(values) * self.multiplier(t))

    def smoothing_ratio(self, f: GridField, q: float, r: float, t: float) -> float:
        """||S(t) f||_r t^alpha / ||f||_q with alpha = (n/2)(1/q - 1/r); at most 1 in R^n."""
        if not (1 <= q <= r):
            raise ValueError(f"need 1 <= q <= r, got q={q}, r={r}")
        if not t > 0:
            raise ValueError("smoothing ratio needs t > 0")
        base = norm(f, q)
        if base == 0:
            raise ValueError("smoothing ratio undefined for the zero field")
        return norm(self.apply(f, t), r) * t ** _alpha(self.spec.dim, q, r) / base

    def smoothing_decay_profile(self, f: GridField, q: float, r: float, times) -> list[tuple[float, float]]:
        """Pairs ``(t, t^alpha ||S(t) f||_r)``; tends to 0 as t -> 0 for f in L^q."""
        times = [float(t) for t in times]
        if not times:
            raise ValueError("empty time list")
        if not q < r:
            raise ValueError("decay profile needs q < r")
        if any(t <= 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("times must be positive and increasing")
        alpha = _alpha(self.spec.dim, q, r)
        spectrum = self.forward(f.values)
        out = []
        for t in times:
            vals = self.inverse(spectrum * self.multiplier(t))
            out.append((t, t ** alpha * norm(GridField(self.spec, vals), r)))
        return out

    def validity_window(self) -> float:
        """Largest time for which whole-space decay estimates are checked."""
        return (self.spec.half_width / 4.0) ** 2


def _alpha(n: int, q: float, r: float) -> float:
    inv_r = 0.0 if np.isinf(r) else 1.0 / r
    return 0.5 * n * (1.0 / q - inv_r)
