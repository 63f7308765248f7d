"""Uniform periodic grids on [-L, L]^n and real fields sampled on them."""
from __future__ import annotations

import csv
import io
import struct
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np


class SpecMismatch(ValueError):
    """Two fields live on different grids."""


@dataclass(frozen=True)
class GridSpec:
    dim: int
    half_width: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        n = self.points_per_axis
        if n < 8 or n & (n - 1):
            raise ValueError(f"points_per_axis must be a power of two >= 8, got {n}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    def axis(self) -> np.ndarray:
        """Node coordinates along one axis: -L, -L + h, ..., L - h."""
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    def coordinates(self) -> list[np.ndarray]:
        ax = self.axis()
        return list(np.meshgrid(*([ax] * self.dim), indexing="ij"))

    def radius_squared(self, center=None) -> np.ndarray:
        center = _as_point(center, self.dim)
        return sum((x - c) ** 2 for x, c in zip(self.coordinates(), center))

    def index_of(self, point) -> tuple[int, ...]:
        point = _as_point(point, self.dim)
        idx = np.rint((point + self.half_width) / self.spacing).astype(int)
        return tuple(int(i) % self.points_per_axis for i in idx)


def _as_point(point, dim: int) -> np.ndarray:
    if point is None:
        return np.zeros(dim)
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.size == 1:
        return np.full(dim, float(p[0]))
    if p.size != dim:
        raise ValueError(f"point {point!r} does not have {dim} coordinates")
    return p


@dataclass(frozen=True, eq=False)
class GridField:
    """Real samples on a GridSpec, stored with shape ``spec.shape``.

    Values are read-only; every operation returns a new field.
    """

    spec: GridSpec
    values: np.ndarray
    blown_up: bool = dc_field(default=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.spec.shape)
        if not self.blown_up and not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridField":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def from_function(cls, spec: GridSpec, fn) -> "GridField":
        """Sample ``fn(*coordinates)`` on the grid."""
        return cls(spec, np.broadcast_to(fn(*spec.coordinates()), spec.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def integral(self) -> float:
        return float(self.values.sum() * self.spec.cell_volume)

    def with_values(self, values) -> "GridField":
        return GridField(self.spec, values)

    def __add__(self, other):
        return self.with_values(self.values + _values_of(self, other))

    def __sub__(self, other):
        return self.with_values(self.values - _values_of(self, other))

    def __mul__(self, scalar: float):
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _values_of(a: GridField, b) -> np.ndarray:
    if isinstance(b, GridField):
        check_same_spec(a, b)
        return b.values
    return np.asarray(b, dtype=float)


def check_same_spec(a: GridField, b: GridField) -> None:
    if a.spec != b.spec:
        raise SpecMismatch(f"grid mismatch: {a.spec} vs {b.spec}")


def norm(f: GridField, q: float = 1.0) -> float:
    """Discrete L^q norm with midpoint weights h^n; ``q=np.inf`` gives the max."""
    if not q >= 1:
        raise ValueError(f"norm exponent must be >= 1, got {q}")
    a = np.abs(f.values)
    if np.isinf(q):
        return float(a.max())
    if q == 1:
        return float(a.sum() * f.spec.cell_volume)
    # scale first so large fields do not overflow a**q
    m = a.max()
    if m == 0:
        return 0.0
    return float(m * ((a / m) ** q).sum() ** (1.0 / q) * f.spec.cell_volume ** (1.0 / q))


def positive_part(f: GridField) -> GridField:
    return f.with_values(np.maximum(f.values, 0.0))


def negative_part(f: GridField) -> GridField:
    return f.with_values(np.minimum(f.values, 0.0))


def pointwise_leq(a: GridField, b: GridField, slack: float = 0.0) -> bool:
    check_same_spec(a, b)
    return bool(np.all(a.values <= b.values + slack))


def first_violation(a: GridField, b: GridField, slack: float = 0.0):
    """Return ``(point, a_value, b_value)`` at the worst point where a > b + slack, else None."""
    check_same_spec(a, b)
    excess = a.values - b.values - slack
    idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
    if excess[idx] <= 0:
        return None
    ax = a.spec.axis()
    point = tuple(float(ax[i]) for i in idx)
    return point, float(a.values[idx]), float(b.values[idx])


def outer_shell_fraction(f: GridField) -> float:
    """Fraction of the L^1 mass lying outside the central half of the box."""
    total = norm(f, 1)
    if total == 0:
        return 0.0
    half = 0.5 * f.spec.half_width
    inside = np.ones(f.spec.shape, dtype=bool)
    for x in f.spec.coordinates():
        inside &= np.abs(x) < half
    outer = np.abs(f.values[~inside]).sum() * f.spec.cell_volume
    return float(outer / total)


def check_support(f: GridField, threshold: float = 1e-6) -> float:
    """Warn if too much mass sits near the periodic boundary; return the fraction."""
    frac = outer_shell_fraction(f)
    if frac > threshold:
        warnings.warn(
            f"{frac:.3g} of the mass lies in the outer shell of the box; "
            "periodic wraparound may contaminate whole-space behaviour",
            RuntimeWarning,
            stacklevel=2,
        )
    return frac


# Serialization. Binary layout (little-endian):
#   int64 dim | float64 half_width | int64 points_per_axis | N^n float64 values (row-major)
_HEADER = struct.Struct("<qdq")


def to_bytes(f: GridField) -> bytes:
    s = f.spec
    header = _HEADER.pack(s.dim, s.half_width, s.points_per_axis)
    return header + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def from_bytes(data: bytes) -> GridField:
    dim, half_width, n = _HEADER.unpack_from(data, 0)
    spec = GridSpec(int(dim), float(half_width), int(n))
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != spec.size:
        raise ValueError(f"expected {spec.size} values, found {body.size}")
    return GridField(spec, body.reshape(spec.shape).astype(float), blown_up=not np.all(np.isfinite(body)))


def save(f: GridField, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(f))
    return path


def load(path) -> GridField:
    return from_bytes(Path(path).read_bytes())


def to_csv(f: GridField) -> str:
    """CSV with one integer index column per axis followed by the value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"i{k}" for k in range(f.spec.dim)] + ["value"])
    for idx in np.ndindex(*f.spec.shape):
        w.writerow(list(idx) + [repr(float(f.values[idx]))])
    return buf.getvalue()
