"""
Sampled space-time fields on uniform grids with an exterior tail model.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.ndimage import map_coordinates
from scipy.special import roots_jacobi
from scipy.stats import linregress

from app.lab.exceptions import DivergenceError, ParameterError, PreconditionError
from app.lab.kernels import WeightOmega

PointRule = Callable[[np.ndarray, float], np.ndarray]

DEFAULT_R_GRID = 8.0
DEFAULT_KAPPA_Q = 2.0

# relative tolerance for on-grid detection and time lookups
_SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform lattice h * {-N..N}^n covering [-R, R]^n."""

    n: int
    h: float
    R: float = DEFAULT_R_GRID

    def __post_init__(self) -> None:
        if self.n not in (1, 2):
            raise ParameterError(f"Only n in {{1, 2}} is supported, got {self.n}")
        if not self.h > 0.0:
            raise ParameterError(f"grid spacing must be positive, got {self.h}")
        if self.R < 4.0:
            raise ParameterError(f"R_grid must be >= 4, got {self.R}", {"R_grid": self.R})
        N = round(self.R / self.h)
        if abs(N * self.h - self.R) > _SNAP * self.R:
            raise ParameterError(
                "R_grid must be an integer multiple of h", {"h": self.h, "R_grid": self.R}
            )

    @property
    def N(self) -> int:
        return int(round(self.R / self.h))

    @property
    def shape(self) -> Tuple[int, ...]:
        return (2 * self.N + 1,) * self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(-self.N, self.N + 1) * self.h

    @cached_property
    def points(self) -> np.ndarray:
        """All nodes as a (size, n) array in C order."""
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.n)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=-1).reshape(self.shape)

    def interior_mask(self, radius: float = 1.0) -> np.ndarray:
        """Nodes with |x| < radius."""
        return self.radii < radius - _SNAP * self.h

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Map points to (fractional index coordinates, on-grid mask, inside mask).
        Index coordinates run from 0 to 2N along each axis.
        """
        coords = np.asarray(points, dtype=float) / self.h + self.N
        nearest = np.rint(coords)
        on_grid = np.all(np.abs(coords - nearest) <= _SNAP, axis=-1)
        inside = np.all((coords >= -_SNAP) & (coords <= 2 * self.N + _SNAP), axis=-1)
        return coords, on_grid & inside, inside

    def flat_index(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.shape)

    def refined(self) -> "Grid":
        return Grid(self.n, self.h / 2.0, self.R)


# ---------------------------------------------------------------------------
# Far-field quadrature and growth estimates
# ---------------------------------------------------------------------------

FAR_NODES = 24
FAR_ANGLES = 8

# growth is read off shells R * 4^k, k < _SHELLS, and snapped to _GROWTH_STEP
_SHELLS = 6
_SHELL_SAMPLES = 16
_GROWTH_STEP = 0.05
_TINY = 1e-300


def _half_sphere(n: int, angles: int = FAR_ANGLES) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    theta = np.pi * (np.arange(angles) + 0.5) / angles
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


@lru_cache(maxsize=128)
def far_quadrature(
    n: int, R: float, sigma: float, growth: float = 0.0, nodes: int = FAR_NODES
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Radii, weights and half-sphere directions for means over |y| > R against
    |y|^-(n+sigma).

    With r = R * s^(-1/sigma) the normalized measure is ds on (0, 1). Gauss-Jacobi
    with weight s^(-growth/sigma) integrates c * |y|^growth exactly; growth = 0
    is Gauss-Legendre, exact on constants.
    """
    beta = -growth / sigma
    x, w = roots_jacobi(nodes, 0.0, beta)
    s = 0.5 * (x + 1.0)
    weights = w * 2.0 ** (-1.0 - beta) * s ** (-beta)
    return R * s ** (-1.0 / sigma), weights, _half_sphere(n)


def symmetric_far_mean(
    rule: Callable[[np.ndarray, float], np.ndarray],
    points: np.ndarray,
    R: float,
    sigma: float,
    t: float,
    growth: float = 0.0,
) -> np.ndarray:
    """Per point x, the mean of (u(x+y) + u(x-y)) / 2 over |y| > R against |y|^-(n+sigma)."""
    points = np.asarray(points, dtype=float)
    n = points.shape[1]
    radii, weights, directions = far_quadrature(n, float(R), float(sigma), float(growth))
    offsets = (radii[:, None, None] * directions[None, :, :]).reshape(-1, n)
    P = points[:, None, :]
    plus = np.asarray(rule((P + offsets[None]).reshape(-1, n), t), dtype=float)
    minus = np.asarray(rule((P - offsets[None]).reshape(-1, n), t), dtype=float)
    pair = (0.5 * (plus + minus)).reshape(points.shape[0], radii.size, -1).mean(axis=2)
    return pair @ weights


def _shell_slope(shells: np.ndarray, sups: np.ndarray) -> float:
    if not np.all(np.isfinite(sups)):
        return np.inf
    fit = linregress(np.log(shells[-4:]), np.log(np.maximum(sups[-4:], _TINY)))
    return max(0.0, round(fit.slope / _GROWTH_STEP) * _GROWTH_STEP)


def estimate_growth(
    rule: Callable[[np.ndarray, float], np.ndarray], n: int, R: float, t: float
) -> Tuple[float, float]:
    """(growth of |u|, growth of the even part of u) from log-log slopes of shell maxima."""
    shells = R * 4.0 ** np.arange(_SHELLS)
    radii = shells[:, None] * 2.0 ** np.linspace(0.0, 1.0, _SHELL_SAMPLES)[None, :]
    pts = (radii[:, :, None, None] * _half_sphere(n)[None, None, :, :]).reshape(-1, n)
    plus = np.asarray(rule(pts, t), dtype=float).reshape(_SHELLS, -1)
    minus = np.asarray(rule(-pts, t), dtype=float).reshape(_SHELLS, -1)
    full = np.maximum(np.abs(plus), np.abs(minus)).max(axis=1)
    even = np.abs(0.5 * (plus + minus)).max(axis=1)
    return _shell_slope(shells, full), _shell_slope(shells, even)


def _radial_tail_integral(tail: "TailModel", R: float, omega: WeightOmega, t: float) -> float:
    if omega.n == 1:
        def integrand(r: float) -> float:
            pts = np.array([[r], [-r]])
            return float(np.sum(np.abs(tail.evaluate(pts, t)))) / (1.0 + r ** (1.0 + omega.exponent))
    else:
        theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
        directions = np.stack([np.cos(theta), np.sin(theta)], axis=-1)

        def integrand(r: float) -> float:
            values = np.abs(tail.evaluate(r * directions, t))
            return float(values.mean() * 2.0 * np.pi * r) / (1.0 + r ** (2.0 + omega.exponent))

    result = quad(integrand, R, np.inf, limit=200, full_output=1)
    value, error = float(result[0]), float(result[1])
    if len(result) > 3 and error > 1e-8 + 1e-6 * abs(value):
        raise DivergenceError(
            "omega-weighted tail integral did not converge",
            {"value": value, "error": error, "message": str(result[3])},
        )
    return value


# ---------------------------------------------------------------------------
# Tail models
# ---------------------------------------------------------------------------


class TailModel(ABC):
    """
    Values of u for |y| beyond R_grid.

    Operators read the tail through `far_levels`: at each evaluation point x the
    kernel-weighted mean of (u(x+y) + u(x-y)) / 2 over |y| > R. The even part of
    the tail must grow slower than |y|^sigma and the whole tail slower than
    |y|^(1+sigma); sums, multiples and shifts keep their terms so levels stay linear.
    """

    kind = "abstract"

    @abstractmethod
    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray: ...

    def growth(self, n: int, R: float, t: float) -> Tuple[float, float]:
        """(growth of |u|, growth of the even part)."""
        return estimate_growth(self.evaluate, n, R, t)

    def check_kernel(self, n: int, R: float, sigma: float, t: float) -> Tuple[float, float]:
        full, even = self.growth(n, R, t)
        if even >= sigma or full >= 1.0 + sigma:
            raise DivergenceError(
                f"tail growth is not integrable against a kernel of order {sigma}",
                {"growth": full, "even_growth": even, "sigma": sigma, "kind": self.kind},
            )
        return full, even

    def far_levels(self, points: np.ndarray, R: float, sigma: float, t: float) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        _, even = self.check_kernel(points.shape[1], R, sigma, t)
        return symmetric_far_mean(self.evaluate, points, R, sigma, t, even)

    def omega_integral(self, R: float, omega: WeightOmega, t: float = 0.0) -> float:
        """Integral of |u| * omega over |y| > R."""
        full, _ = self.growth(omega.n, R, t)
        if full >= omega.exponent:
            raise DivergenceError(
                f"tail growth {full} is not integrable against omega",
                {"growth": full, "exponent": omega.exponent, "kind": self.kind},
            )
        return _radial_tail_integral(self, R, omega, t)

    def terms(self) -> Tuple[Tuple[float, "TailModel"], ...]:
        return ((1.0, self),)

    def scaled(self, c: float) -> "TailModel":
        if c == 1.0:
            return self
        return CombinedTail(tuple((c * w, term) for w, term in self.terms()))

    def combined(self, other: "TailModel", sign: float) -> "TailModel":
        return CombinedTail(self.terms() + tuple((sign * w, term) for w, term in other.terms()))

    def shifted(self, shift: np.ndarray) -> "TailModel":
        return ShiftedTail(self, np.asarray(shift, dtype=float))

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind}

    @classmethod
    def zero(cls) -> "TailModel":
        return ZeroTail()

    @classmethod
    def even(cls, growth: float, coefficient: float) -> "TailModel":
        return PowerTail(growth, coefficient)

    @classmethod
    def constant(cls, value: float) -> "TailModel":
        return PowerTail(0.0, value)

    @classmethod
    def explicit(
        cls,
        rule: PointRule,
        far_level: Union[float, Callable[[float], float], None] = None,
        growth: Optional[float] = None,
    ) -> "TailModel":
        return RuleTail(rule, far_level, growth)


class ZeroTail(TailModel):
    kind = "zero"

    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray:
        return np.zeros(np.asarray(points).shape[0])

    def growth(self, n: int, R: float, t: float) -> Tuple[float, float]:
        return 0.0, 0.0

    def far_levels(self, points: np.ndarray, R: float, sigma: float, t: float) -> np.ndarray:
        return np.zeros(np.asarray(points).shape[0])

    def omega_integral(self, R: float, omega: WeightOmega, t: float = 0.0) -> float:
        return 0.0

    def terms(self) -> Tuple[Tuple[float, TailModel], ...]:
        return ()

    def scaled(self, c: float) -> TailModel:
        return self

    def shifted(self, shift: np.ndarray) -> TailModel:
        return self


class PowerTail(TailModel):
    """u = coefficient * |y|^growth, radially even."""

    kind = "even"

    def __init__(self, growth: float, coefficient: float):
        if growth < 0.0:
            raise ParameterError(f"tail growth must be >= 0, got {growth}")
        self.exponent = float(growth)
        self.coefficient = float(coefficient)

    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray:
        r = np.linalg.norm(np.asarray(points, dtype=float), axis=-1)
        if self.exponent == 0.0:
            return np.full(r.shape, self.coefficient)
        return self.coefficient * r**self.exponent

    def growth(self, n: int, R: float, t: float) -> Tuple[float, float]:
        if self.coefficient == 0.0:
            return 0.0, 0.0
        return self.exponent, self.exponent

    def omega_integral(self, R: float, omega: WeightOmega, t: float = 0.0) -> float:
        if self.coefficient == 0.0:
            return 0.0
        return abs(self.coefficient) * omega.tail_integral(R, self.exponent)

    def scaled(self, c: float) -> TailModel:
        return PowerTail(self.exponent, c * self.coefficient)

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "growth": self.exponent, "coefficient": self.coefficient}


class RuleTail(TailModel):
    """
    u = rule(points, t). `far_level` replaces the computed far means by one
    declared level (scalar or function of t); `growth` replaces the estimate.
    """

    kind = "explicit"

    def __init__(
        self,
        rule: PointRule,
        far_level: Union[float, Callable[[float], float], None] = None,
        growth: Optional[float] = None,
    ):
        if growth is not None and growth < 0.0:
            raise ParameterError(f"tail growth must be >= 0, got {growth}")
        self.rule = rule
        self.far_level = far_level
        self.declared_growth = growth

    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.asarray(self.rule(points, t), dtype=float).reshape(points.shape[0])

    def growth(self, n: int, R: float, t: float) -> Tuple[float, float]:
        if self.declared_growth is not None:
            return self.declared_growth, self.declared_growth
        return super().growth(n, R, t)

    def far_levels(self, points: np.ndarray, R: float, sigma: float, t: float) -> np.ndarray:
        if self.far_level is None:
            return super().far_levels(points, R, sigma, t)
        level = self.far_level(t) if callable(self.far_level) else self.far_level
        return np.full(np.asarray(points).shape[0], float(level))

    def describe(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"kind": self.kind}
        if self.far_level is not None and not callable(self.far_level):
            out["far_level"] = float(self.far_level)
        if self.declared_growth is not None:
            out["growth"] = self.declared_growth
        return out


class CombinedTail(TailModel):
    """sum of weight * tail; far levels are the same combination of the term levels."""

    kind = "sum"

    def __init__(self, terms: Tuple[Tuple[float, TailModel], ...]):
        self._terms = tuple((float(w), tail) for w, tail in terms if w != 0.0)

    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray:
        out = np.zeros(np.asarray(points).shape[0])
        for w, tail in self._terms:
            out += w * tail.evaluate(points, t)
        return out

    def growth(self, n: int, R: float, t: float) -> Tuple[float, float]:
        pairs = [tail.growth(n, R, t) for _, tail in self._terms] or [(0.0, 0.0)]
        return max(p[0] for p in pairs), max(p[1] for p in pairs)

    def far_levels(self, points: np.ndarray, R: float, sigma: float, t: float) -> np.ndarray:
        out = np.zeros(np.asarray(points).shape[0])
        for w, tail in self._terms:
            out += w * tail.far_levels(points, R, sigma, t)
        return out

    def terms(self) -> Tuple[Tuple[float, TailModel], ...]:
        return self._terms

    def describe(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "weights": [w for w, _ in self._terms],
            "terms": [tail.describe() for _, tail in self._terms],
        }


class ShiftedTail(TailModel):
    """y -> base(y + shift)."""

    kind = "shifted"

    def __init__(self, base: TailModel, shift: np.ndarray):
        self.base = base
        self.shift = np.asarray(shift, dtype=float).reshape(-1)

    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray:
        return self.base.evaluate(np.asarray(points, dtype=float) + self.shift, t)

    def growth(self, n: int, R: float, t: float) -> Tuple[float, float]:
        return self.base.growth(n, R, t)

    def far_levels(self, points: np.ndarray, R: float, sigma: float, t: float) -> np.ndarray:
        return self.base.far_levels(np.asarray(points, dtype=float) + self.shift, R, sigma, t)

    def describe(self) -> Dict[str, Any]:
        return {"kind": self.kind, "shift": self.shift.tolist(), "base": self.base.describe()}


@dataclass(frozen=True)
class QuadratureScheme:
    """
    Near field |y| < kappa_q * h via a local second-derivative estimate,
    mid field on the lattice annulus, far field through the tail's far means.
    """

    kappa_q: float = DEFAULT_KAPPA_Q
    compensation_radius: float = 1.0

    def __post_init__(self) -> None:
        if self.kappa_q < 2.0:
            raise ParameterError(f"kappa_q must be >= 2, got {self.kappa_q}")
        if self.compensation_radius <= 0.0:
            raise ParameterError("compensation radius must be positive")

    def near_radius(self, h: float) -> float:
        return self.kappa_q * h


@dataclass(frozen=True, eq=False)
class Field:
    """Samples u(x_i, t_j) on grid x times plus the tail beyond R_grid."""

    grid: Grid
    values: np.ndarray
    times: np.ndarray = field(default_factory=lambda: np.zeros(1))
    tail: TailModel = field(default_factory=TailModel.zero)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if values.shape == self.grid.shape:
            values = values[None, ...]
        if values.shape != (times.size,) + self.grid.shape:
            raise ParameterError(
                "field values do not match grid and times",
                {"values": list(values.shape), "grid": list(self.grid.shape), "times": times.size},
            )
        if not np.all(np.isfinite(values)):
            raise ParameterError("field values must be finite")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ParameterError("field times must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", times)

    @classmethod
    def from_function(
        cls,
        grid: Grid,
        rule: PointRule,
        times: Sequence[float] = (0.0,),
        tail: Optional[TailModel] = None,
    ) -> "Field":
        """Sample rule(points, t) on the grid; the tail defaults to the same rule."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        values = np.stack(
            [np.asarray(rule(grid.points, t), dtype=float).reshape(grid.shape) for t in times]
        )
        if tail is None:
            tail = TailModel.explicit(rule)
        return cls(grid, values, times, tail)

    @property
    def n(self) -> int:
        return self.grid.n

    def time_index(self, t: float) -> int:
        """Left-continuous lookup: the last sample time not after t."""
        scale = max(1.0, float(np.max(np.abs(self.times))))
        idx = int(np.searchsorted(self.times, t + _SNAP * scale, side="right")) - 1
        if idx < 0:
            raise PreconditionError(
                f"time {t} precedes the first field sample {self.times[0]}", {"t": t}
            )
        return idx

    def slice(self, t: float) -> np.ndarray:
        return self.values[self.time_index(t)]

    def at_index(self, k: int) -> "Field":
        return Field(self.grid, self.values[k], self.times[k : k + 1], self.tail)

    def sample(self, points: Any, t: float) -> np.ndarray:
        """Exact on grid nodes, cubic interpolation between nodes, tail outside."""
        points = np.asarray(points, dtype=float).reshape(-1, self.n)
        data = self.slice(t)
        coords, on_grid, inside = self.grid.locate(points)
        out = np.empty(points.shape[0])
        if np.any(on_grid):
            idx = np.rint(coords[on_grid]).astype(int)
            out[on_grid] = data[tuple(idx.T)]
        between = inside & ~on_grid
        if np.any(between):
            out[between] = map_coordinates(data, coords[between].T, order=3, mode="nearest")
        outside = ~inside
        if np.any(outside):
            out[outside] = self.tail.evaluate(points[outside], t)
        return out

    def far_levels(self, points: np.ndarray, sigma: float, t: float) -> np.ndarray:
        return self.tail.far_levels(np.asarray(points, dtype=float).reshape(-1, self.n), self.grid.R, sigma, t)

    def scaled(self, c: float) -> "Field":
        return Field(self.grid, c * self.values, self.times, self.tail.scaled(c))

    def __add__(self, other: "Field") -> "Field":
        return self._combine(other, 1.0)

    def __sub__(self, other: "Field") -> "Field":
        return self._combine(other, -1.0)

    def __neg__(self) -> "Field":
        return self.scaled(-1.0)

    def _combine(self, other: "Field", sign: float) -> "Field":
        if other.grid != self.grid or not np.array_equal(other.times, self.times):
            raise ParameterError("fields must share grid and times")
        tail = self.tail.combined(other.tail, sign)
        return Field(self.grid, self.values + sign * other.values, self.times, tail)

    def translated(self, shift: Any) -> "Field":
        """The field y -> u(x + y) for a grid-aligned shift x."""
        shift = np.asarray(shift, dtype=float).reshape(self.n)
        steps = np.rint(shift / self.grid.h)
        if np.any(np.abs(steps * self.grid.h - shift) > _SNAP):
            raise PreconditionError("translations must be grid aligned", {"shift": shift.tolist()})
        shifted_points = self.grid.points + shift
        values = np.stack(
            [
                self.sample(shifted_points, t).reshape(self.grid.shape)
                for t in self.times
            ]
        )
        return Field(self.grid, values, self.times, self.tail.shifted(shift))
