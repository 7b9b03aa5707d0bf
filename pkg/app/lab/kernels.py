"""
Kernel families, weights and ellipticity classes.

A kernel is K(x,t;y) = (2-sigma) * a(x,t,y) / |y|^(n+sigma) where the
coefficient a is an evaluation rule. Membership in the L0 and L1 classes is
checked on declared sample lattices.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.special import gamma as gamma_fn
from scipy.special import hyp2f1

from app.config.logger import Logger
from app.lab.exceptions import DivergenceError, ParameterError, PreconditionError
from app.schemas.reports import MembershipReport

if TYPE_CHECKING:
    from app.lab.fields import Field

logger = Logger.get_logger(__name__)

CoefficientRule = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _norm(y: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.asarray(y, dtype=float) ** 2, axis=-1))


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in R^n (2 for n = 1)."""
    return float(2.0 * np.pi ** (n / 2.0) / gamma_fn(n / 2.0))


def validate_order(sigma: float, Lambda: float = 1.0, n: int = 1) -> None:
    if not 0.0 < sigma < 2.0:
        raise ParameterError(f"sigma must lie in (0, 2), got {sigma}", {"sigma": sigma})
    if Lambda < 1.0:
        raise ParameterError(f"Lambda must be >= 1, got {Lambda}", {"Lambda": Lambda})
    if n not in (1, 2):
        raise ParameterError(f"Only n in {{1, 2}} is supported, got {n}", {"n": n})


def normalization_metadata(n: int, sigma: float) -> Dict[str, float]:
    """
    Relate the (2 - sigma) normalization to the standard fractional Laplacian.

    With a = 1 the linear operator equals -multiplier * (-Delta)^(sigma/2),
    where (-Delta)^(sigma/2) carries the constant c_{n,sigma}.
    """
    s = sigma / 2.0
    standard = 4.0**s * gamma_fn(n / 2.0 + s) / (np.pi ** (n / 2.0) * abs(gamma_fn(-s)))
    return {
        "kernel_prefactor": 2.0 - sigma,
        "standard_constant": float(standard),
        "multiplier": float(2.0 * (2.0 - sigma) / standard),
    }


# ---------------------------------------------------------------------------
# Coefficient rules
# ---------------------------------------------------------------------------


class Coefficient(ABC):
    """Evaluation rule a(x, t, y) with numpy broadcasting over leading axes."""

    translation_invariant_in_space: bool = False
    translation_invariant_in_time: bool = False

    @abstractmethod
    def __call__(self, x: np.ndarray, t: Any, y: np.ndarray) -> np.ndarray:
        ...

    def describe(self) -> Dict[str, Any]:
        return {"family": type(self).__name__}

    def rescaled(
        self,
        beta: float,
        sigma: Optional[float] = None,
        gamma: float = 1.0,
        factor: float = 1.0,
    ) -> "Coefficient":
        """
        Return factor * a(beta x, tau t, beta y) with tau = beta**sigma when
        sigma is given, otherwise tau = gamma.
        """
        return RescaledCoefficient(self, beta, sigma, gamma, factor)

    def scaled(self, c: float) -> "Coefficient":
        return self.rescaled(1.0, None, 1.0, c)


class ConstantCoefficient(Coefficient):
    translation_invariant_in_space = True
    translation_invariant_in_time = True

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, x: np.ndarray, t: Any, y: np.ndarray) -> np.ndarray:
        shape = np.broadcast_shapes(
            np.shape(x)[:-1], np.shape(t), np.shape(y)[:-1]
        )
        return np.full(shape, self.value)

    def describe(self) -> Dict[str, Any]:
        return {"family": "constant", "value": self.value}

    def rescaled(self, beta, sigma=None, gamma=1.0, factor=1.0) -> Coefficient:
        # constants are scale invariant
        if factor == 1.0:
            return self
        return ConstantCoefficient(self.value * factor)


class FunctionCoefficient(Coefficient):
    """Coefficient given by an arbitrary vectorized rule."""

    def __init__(
        self,
        rule: CoefficientRule,
        name: str = "function",
        translation_invariant_in_space: bool = False,
        translation_invariant_in_time: bool = False,
        params: Optional[Dict[str, Any]] = None,
    ):
        self.rule = rule
        self.name = name
        self.translation_invariant_in_space = translation_invariant_in_space
        self.translation_invariant_in_time = translation_invariant_in_time
        self.params = dict(params or {})

    def __call__(self, x: np.ndarray, t: Any, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape, y.shape[:-1])
        return np.broadcast_to(self.rule(x, t, y), shape)

    def describe(self) -> Dict[str, Any]:
        return {"family": self.name, **self.params}


class RescaledCoefficient(Coefficient):
    """factor * base(beta x, tau t, beta y); nested rescalings are merged."""

    def __init__(
        self,
        base: Coefficient,
        beta: float,
        sigma: Optional[float] = None,
        gamma: float = 1.0,
        factor: float = 1.0,
    ):
        if isinstance(base, RescaledCoefficient):
            if sigma is not None and base.sigma == sigma and base.gamma == 1.0 and gamma == 1.0:
                beta_total, sigma_total, gamma_total = base.beta * beta, sigma, 1.0
            else:
                beta_total = base.beta * beta
                sigma_total = None
                gamma_total = base.time_scale * (beta**sigma if sigma is not None else gamma)
            factor *= base.factor
            base = base.base
            beta, sigma, gamma = beta_total, sigma_total, gamma_total
        self.base = base
        self.beta = float(beta)
        self.sigma = sigma
        self.gamma = float(gamma)
        self.factor = float(factor)
        self.translation_invariant_in_space = base.translation_invariant_in_space
        self.translation_invariant_in_time = base.translation_invariant_in_time

    @property
    def time_scale(self) -> float:
        if self.sigma is not None:
            return self.gamma * self.beta**self.sigma
        return self.gamma

    def __call__(self, x: np.ndarray, t: Any, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        values = self.base(self.beta * x, self.time_scale * np.asarray(t, dtype=float), self.beta * y)
        if self.factor == 1.0:
            return values
        return self.factor * values

    def describe(self) -> Dict[str, Any]:
        return {
            "family": "rescaled",
            "beta": self.beta,
            "time_scale": self.time_scale,
            "factor": self.factor,
            "base": self.base.describe(),
        }


def sine_x_coefficient(base: float = 1.0, amplitude: float = 0.5) -> FunctionCoefficient:
    """a(x, t, y) = base * (1 + amplitude * sin(x_1))."""

    def rule(x, t, y):
        return base * (1.0 + amplitude * np.sin(x[..., 0]))

    return FunctionCoefficient(
        rule, "sine_x", translation_invariant_in_time=True,
        params={"base": base, "amplitude": amplitude},
    )


def sine_inverse_y_coefficient(base: float = 1.0, amplitude: float = 0.4) -> FunctionCoefficient:
    """a(y) = base + amplitude * sin(1/|y|); oscillates without bound in derivative."""

    def rule(x, t, y):
        r = np.maximum(_norm(y), 1e-300)
        return base + amplitude * np.sin(1.0 / r)

    return FunctionCoefficient(
        rule, "sine_inverse_y", True, True, {"base": base, "amplitude": amplitude}
    )


def cosine_y_coefficient(base: float = 1.0, amplitude: float = 0.2) -> FunctionCoefficient:
    """a(y) = base * (1 + amplitude * cos(y_1)), even in y."""

    def rule(x, t, y):
        return base * (1.0 + amplitude * np.cos(y[..., 0]))

    return FunctionCoefficient(
        rule, "cosine_y", True, True, {"base": base, "amplitude": amplitude}
    )


def sine_time_coefficient(base: float = 1.0, amplitude: float = 0.2) -> FunctionCoefficient:
    """a(t) = base * (1 + amplitude * sin(pi t))."""

    def rule(x, t, y):
        return base * (1.0 + amplitude * np.sin(np.pi * t))

    return FunctionCoefficient(
        rule, "sine_time", translation_invariant_in_space=True,
        params={"base": base, "amplitude": amplitude},
    )


COEFFICIENT_FAMILIES: Dict[str, Callable[..., Coefficient]] = {
    "constant": lambda value=1.0: ConstantCoefficient(value),
    "sine_x": sine_x_coefficient,
    "sine_inverse_y": sine_inverse_y_coefficient,
    "cosine_y": cosine_y_coefficient,
    "sine_time": sine_time_coefficient,
}


def build_coefficient(family: str, **params: Any) -> Coefficient:
    if family not in COEFFICIENT_FAMILIES:
        raise ParameterError(
            f"Unknown coefficient family '{family}'",
            {"known": sorted(COEFFICIENT_FAMILIES)},
        )
    return COEFFICIENT_FAMILIES[family](**params)


# ---------------------------------------------------------------------------
# Kernels, weights, operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """K(x,t;y) = (2 - sigma) a(x,t,y) / |y|^(n+sigma)."""

    n: int
    sigma: float
    coefficient: Coefficient
    Lambda: float = 1.0

    def __post_init__(self) -> None:
        validate_order(self.sigma, self.Lambda, self.n)

    @property
    def translation_invariant(self) -> bool:
        return (
            self.coefficient.translation_invariant_in_space
            and self.coefficient.translation_invariant_in_time
        )

    def a(self, x: np.ndarray, t: Any, y: np.ndarray) -> np.ndarray:
        return self.coefficient(x, t, y)

    def __call__(self, x: np.ndarray, t: Any, y: np.ndarray) -> np.ndarray:
        r = _norm(y)
        return (2.0 - self.sigma) * self.coefficient(x, t, y) / r ** (self.n + self.sigma)

    def with_coefficient(self, coefficient: Coefficient) -> "KernelSpec":
        return KernelSpec(self.n, self.sigma, coefficient, self.Lambda)

    def scaled(self, c: float) -> "KernelSpec":
        return self.with_coefficient(self.coefficient.scaled(c))


def make_fractional_kernel(
    n: int, sigma: float, scale: float = 1.0, Lambda: float = 1.0
) -> KernelSpec:
    """Constant-coefficient kernel a = scale; scale = 1 is the fractional Laplacian."""
    validate_order(sigma, Lambda, n)
    if not (1.0 / Lambda) - 1e-15 <= scale <= Lambda + 1e-15:
        raise ParameterError(
            f"scale {scale} outside [1/Lambda, Lambda] = [{1.0 / Lambda}, {Lambda}]",
            {"scale": scale, "Lambda": Lambda},
        )
    return KernelSpec(n, sigma, ConstantCoefficient(scale), Lambda)


@dataclass(frozen=True)
class WeightOmega:
    """omega(y) = 1 / (1 + |y|^(n + exponent))."""

    n: int
    exponent: float

    def __post_init__(self) -> None:
        if not 0.0 < self.exponent < 2.0:
            raise ParameterError(f"omega exponent must lie in (0, 2), got {self.exponent}")

    @classmethod
    def for_order(cls, n: int, sigma: float) -> "WeightOmega":
        return cls(n, sigma)

    @classmethod
    def for_lower_order(cls, n: int, sigma0: float) -> "WeightOmega":
        return cls(n, sigma0)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + _norm(y) ** (self.n + self.exponent))

    def tail_integral(self, R: float, growth: float = 0.0) -> float:
        """Closed form of the integral of |y|^growth * omega over |y| > R."""
        q = self.n + self.exponent
        p = self.n - 1 + growth
        if growth >= self.exponent:
            raise DivergenceError(
                f"|y|^{growth} is not integrable against omega with exponent {self.exponent}",
                {"growth": growth, "exponent": self.exponent},
            )

        c = (q - p - 1.0) / q
        radial = R ** (p + 1.0 - q) / (q - p - 1.0) * hyp2f1(1.0, c, 1.0 + c, -(R ** -q))
        return float(sphere_area(self.n) * radial)


class OperatorKind(str, Enum):
    LINEAR = "linear"
    PUCCI_PLUS = "pucci_plus"
    PUCCI_MINUS = "pucci_minus"
    INFSUP = "infsup"


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """
    A nonlocal operator: a linear kernel, a Pucci extremal operator, or
    inf over alpha of sup over beta of linear operators L_{K_{alpha,beta}}.
    """

    kind: OperatorKind
    n: int
    sigma: float
    Lambda: float = 1.0
    family: Tuple[Tuple[KernelSpec, ...], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        validate_order(self.sigma, self.Lambda, self.n)
        if self.kind in (OperatorKind.LINEAR, OperatorKind.INFSUP):
            if not self.family or any(len(row) == 0 for row in self.family):
                raise ParameterError("inf-sup family must have nonempty index sets A and B")
            for row in self.family:
                for kernel in row:
                    if kernel.n != self.n or kernel.sigma != self.sigma:
                        raise ParameterError(
                            "all member kernels must share n and sigma",
                            {"n": kernel.n, "sigma": kernel.sigma},
                        )
            if self.kind is OperatorKind.LINEAR and (
                len(self.family) != 1 or len(self.family[0]) != 1
            ):
                raise ParameterError("a linear operator has exactly one kernel")

    @classmethod
    def linear(cls, kernel: KernelSpec) -> "OperatorSpec":
        return cls(OperatorKind.LINEAR, kernel.n, kernel.sigma, kernel.Lambda, ((kernel,),))

    @classmethod
    def pucci_plus(cls, n: int, sigma: float, Lambda: float) -> "OperatorSpec":
        return cls(OperatorKind.PUCCI_PLUS, n, sigma, Lambda)

    @classmethod
    def pucci_minus(cls, n: int, sigma: float, Lambda: float) -> "OperatorSpec":
        return cls(OperatorKind.PUCCI_MINUS, n, sigma, Lambda)

    @classmethod
    def infsup(cls, family: Sequence[Sequence[KernelSpec]]) -> "OperatorSpec":
        rows = tuple(tuple(row) for row in family)
        if not rows or not rows[0]:
            raise ParameterError("inf-sup family must have nonempty index sets A and B")
        first = rows[0][0]
        Lambda = max(k.Lambda for row in rows for k in row)
        return cls(OperatorKind.INFSUP, first.n, first.sigma, Lambda, rows)

    @property
    def kernels(self) -> Tuple[KernelSpec, ...]:
        return tuple(k for row in self.family for k in row)

    @property
    def translation_invariant_in_space(self) -> bool:
        return all(k.coefficient.translation_invariant_in_space for k in self.kernels)

    @property
    def translation_invariant_in_time(self) -> bool:
        return all(k.coefficient.translation_invariant_in_time for k in self.kernels)

    def map_kernels(self, fn: Callable[[KernelSpec], KernelSpec]) -> "OperatorSpec":
        if not self.family:
            return self
        rows = tuple(tuple(fn(k) for k in row) for row in self.family)
        return OperatorSpec(self.kind, self.n, self.sigma, self.Lambda, rows)


# ---------------------------------------------------------------------------
# Membership checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplePlan:
    """Finite lattices in x, t and y (y != 0) for sampled class checks."""

    xs: np.ndarray
    ts: np.ndarray
    ys: np.ndarray
    fd_slack: Optional[float] = None
    fd_relative_step: float = 1e-4
    even_tolerance: float = 1e-12

    def __post_init__(self) -> None:
        if np.any(np.linalg.norm(self.ys, axis=-1) == 0.0):
            raise ParameterError("sample lattice in y must exclude the origin")

    @classmethod
    def lattice(
        cls,
        n: int,
        count: int = 10,
        x_extent: float = 1.0,
        t_range: Tuple[float, float] = (-1.0, 0.0),
        y_extent: float = 2.0,
        **kwargs: Any,
    ) -> "SamplePlan":
        """Tensor lattices with `count` points per axis; y uses an even count so 0 is skipped."""
        axis_x = np.linspace(-x_extent, x_extent, count)
        y_count = count if count % 2 == 0 else count + 1
        axis_y = np.linspace(-y_extent, y_extent, y_count)
        xs = np.stack(np.meshgrid(*([axis_x] * n), indexing="ij"), axis=-1).reshape(-1, n)
        ys = np.stack(np.meshgrid(*([axis_y] * n), indexing="ij"), axis=-1).reshape(-1, n)
        return cls(xs, np.linspace(t_range[0], t_range[1], count), ys, **kwargs)

    @property
    def y_spacing(self) -> float:
        coords = np.unique(np.round(self.ys[:, 0], 14))
        if coords.size < 2:
            return 1.0
        return float(np.min(np.diff(coords)))

    @property
    def slack(self) -> float:
        return self.fd_slack if self.fd_slack is not None else 10.0 * self.y_spacing


def _coefficient_on_plan(K: KernelSpec, plan: SamplePlan, flip: bool = False) -> np.ndarray:
    ys = -plan.ys if flip else plan.ys
    X = plan.xs[:, None, None, :]
    T = plan.ts[None, :, None]
    Y = ys[None, None, :, :]
    return np.asarray(K.a(X, T, Y), dtype=float)


def check_L0_membership(K: KernelSpec, plan: SamplePlan) -> MembershipReport:
    """Sampled check of Lambda^-1 <= a <= Lambda and a(x,t,-y) = a(x,t,y)."""
    values = _coefficient_on_plan(K, plan)
    mirrored = _coefficient_on_plan(K, plan, flip=True)
    a_min, a_max = float(values.min()), float(values.max())
    scale = max(1.0, float(np.abs(values).max()))
    evenness = float(np.max(np.abs(values - mirrored)))
    bound_violation = max(0.0, 1.0 / K.Lambda - a_min, a_max - K.Lambda)
    even_ok = evenness <= plan.even_tolerance * scale
    passed = bound_violation == 0.0 and even_ok
    worst = max(bound_violation, 0.0 if even_ok else evenness)
    if not passed:
        logger.info(f"L0 check failed: range [{a_min}, {a_max}], Lambda={K.Lambda}, evenness={evenness}")
    return MembershipReport(
        kind="L0",
        passed=passed,
        worst_violation=worst,
        a_min=a_min,
        a_max=a_max,
        evenness_violation=evenness,
        lattice={"x": len(plan.xs), "t": len(plan.ts), "y": len(plan.ys)},
        normalization=normalization_metadata(K.n, K.sigma),
    )


def kernel_gradient(K: KernelSpec, ys: np.ndarray, relative_step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a translation-invariant kernel at the rows of ys."""
    ys = np.asarray(ys, dtype=float)
    r = np.linalg.norm(ys, axis=-1)
    steps = relative_step * r
    origin = np.zeros_like(ys)
    grad = np.empty_like(ys)
    for axis in range(K.n):
        e = np.zeros(K.n)
        e[axis] = 1.0
        plus = K(origin, 0.0, ys + steps[:, None] * e)
        minus = K(origin, 0.0, ys - steps[:, None] * e)
        grad[:, axis] = (plus - minus) / (2.0 * steps)
    return grad


def check_L1_membership(K: KernelSpec, plan: SamplePlan) -> MembershipReport:
    """L0 check plus the gradient bound |DK(y)| <= Lambda |y|^-(n+sigma+1)."""
    if not K.translation_invariant:
        raise PreconditionError(
            "L1 membership is defined for translation-invariant kernels only",
            {"coefficient": K.coefficient.describe()},
        )
    base = check_L0_membership(K, plan)
    grad = kernel_gradient(K, plan.ys, plan.fd_relative_step)
    r = np.linalg.norm(plan.ys, axis=-1)
    scaled = np.linalg.norm(grad, axis=-1) * r ** (K.n + K.sigma + 1.0)
    measured = float(np.max(scaled))
    gradient_violation = max(0.0, measured - (K.Lambda + plan.slack))
    passed = base.passed and gradient_violation == 0.0
    return base.model_copy(
        update={
            "kind": "L1",
            "passed": passed,
            "worst_violation": max(base.worst_violation, gradient_violation),
            "gradient_sup": measured,
            "slack": plan.slack,
        }
    )


# ---------------------------------------------------------------------------
# Weighted norms
# ---------------------------------------------------------------------------


def omega_l1_norm(u: "Field", t: float, omega: WeightOmega) -> float:
    """Integral of |u(., t)| * omega over the grid plus the tail beyond R_grid."""
    grid = u.grid
    values = np.abs(u.slice(t))
    weight = omega(grid.points).reshape(grid.shape)
    if grid.n == 1:
        inner = float(simpson(values * weight, x=grid.axis))
    else:
        inside = (np.linalg.norm(grid.points, axis=-1) <= grid.R).reshape(grid.shape)
        inner = float(np.sum(values * weight * inside) * grid.h**grid.n)
    return inner + u.tail.omega_integral(grid.R, omega, t)


def shift_ratio_bound(omega: WeightOmega, x: Any, samples: np.ndarray) -> float:
    """max over the sample lattice of omega(y - x) / omega(y)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    samples = np.asarray(samples, dtype=float).reshape(-1, omega.n)
    if not np.any(x):
        return 1.0
    return float(np.max(omega(samples - x) / omega(samples)))


def shifted_norm_bound(u: "Field", t: float, omega: WeightOmega, x: Any) -> Dict[str, float]:
    """Measured ||u(x + ., t)||_{L1(omega)} next to ratio * ||u(., t)||_{L1(omega)}."""
    shifted = u.translated(x)
    measured = omega_l1_norm(shifted, t, omega)
    base = omega_l1_norm(u, t, omega)
    ratio = shift_ratio_bound(omega, x, u.grid.points)
    return {"shifted_norm": measured, "norm": base, "ratio": ratio, "bound": ratio * base}
