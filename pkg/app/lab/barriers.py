"""
Barriers for the boundary estimates and moduli of continuity.

Moduli are nondecreasing piecewise-linear tables vanishing at 0. The
composition formulas take an infimum over r on a log lattice refined by a
bounded scalar minimization around the best lattice point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.ndimage import maximum_filter, maximum_filter1d, minimum_filter, minimum_filter1d
from scipy.optimize import minimize_scalar
from scipy.stats import linregress

from app.config.logger import Logger
from app.lab.exceptions import InsufficientDataError, ParameterError, PreconditionError
from app.lab.fields import Field, Grid, QuadratureScheme, TailModel
from app.lab.kernels import OperatorSpec, sphere_area
from app.lab.nonlocal_eval import StencilPlan, operator_values, stencil_for
from app.schemas.reports import BarrierReport

logger = Logger.get_logger(__name__)

MODULUS_KNOTS = 256
INFIMUM_SAMPLES = 512
R_RANGE = (1e-4, 1.0)


@dataclass(frozen=True, eq=False)
class Modulus:
    """Piecewise-linear table (d, rho(d)) with d[0] = 0 = rho(0)."""

    d: np.ndarray
    rho: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if d.shape != rho.shape or d.size < 2:
            raise ParameterError("a modulus table needs matching knots and values")
        if d[0] != 0.0 or rho[0] != 0.0:
            raise ParameterError("a modulus must vanish at 0", {"d0": float(d[0]), "rho0": float(rho[0])})
        if np.any(np.diff(d) <= 0.0):
            raise ParameterError("modulus knots must be strictly increasing")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def from_function(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        d_max: float = 1.0,
        knots: int = MODULUS_KNOTS,
        d_min: float = 1e-6,
        label: str = "",
    ) -> "Modulus":
        d = np.concatenate([[0.0], np.geomspace(d_min, d_max, knots)])
        rho = np.concatenate([[0.0], np.asarray(fn(d[1:]), dtype=float)])
        return cls(d, np.maximum.accumulate(rho), label)

    @classmethod
    def power(cls, constant: float, exponent: float, **kwargs: Any) -> "Modulus":
        return cls.from_function(lambda d: constant * d**exponent, label=f"{constant}*d^{exponent}", **kwargs)

    @property
    def d_max(self) -> float:
        return float(self.d[-1])

    def __call__(self, d: Any) -> Any:
        """Interpolate, extending the last segment linearly beyond d_max."""
        d = np.asarray(d, dtype=float)
        values = np.interp(d, self.d, self.rho)
        slope = (self.rho[-1] - self.rho[-2]) / (self.d[-1] - self.d[-2])
        beyond = d > self.d[-1]
        values = np.where(beyond, self.rho[-1] + slope * (d - self.d[-1]), values)
        return float(values) if values.ndim == 0 else values

    def bounded(self, d: Any) -> Any:
        """Interpolate, holding the last tabulated value beyond d_max."""
        values = np.interp(np.asarray(d, dtype=float), self.d, self.rho)
        return float(values) if np.ndim(values) == 0 else values

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.rho) >= 0.0))

    def concavity_defect(self) -> float:
        """Largest amount by which a knot lies below the chord of its neighbours."""
        d, r = self.d, self.rho
        if d.size < 3:
            return 0.0
        chord = r[:-2] + (r[2:] - r[:-2]) * (d[1:-1] - d[:-2]) / (d[2:] - d[:-2])
        return float(max(0.0, np.max(chord - r[1:-1])))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"d": self.d, "rho": self.rho})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, label: str = "") -> "Modulus":
        return cls(frame["d"].to_numpy(), frame["rho"].to_numpy(), label)


@dataclass(frozen=True, eq=False)
class BarrierCandidate:
    """psi(x, t) with a time depth kappa; provenance 'lateral' or 'bump'."""

    rule: Callable[[np.ndarray, float], np.ndarray]
    kappa: float
    provenance: str
    params: Dict[str, float] = field(default_factory=dict)

    def __call__(self, points: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(self.rule(np.asarray(points, dtype=float), t), dtype=float)

    def scaled(self, c: float) -> "BarrierCandidate":
        rule = self.rule
        return BarrierCandidate(lambda p, t: c * rule(p, t), self.kappa, self.provenance, {**self.params, "factor": c})


def lateral_candidate(c: float, C_t: float, sigma0: float) -> BarrierCandidate:
    """psi(x, t) = min(1, c ((|x| - 1)^+)^(sigma0/2)) - C_t t, kappa = 1 / C_t."""
    if c <= 0.0 or C_t <= 0.0:
        raise ParameterError("lateral barrier parameters must be positive", {"c": c, "C_t": C_t})

    def rule(points: np.ndarray, t: float) -> np.ndarray:
        r = np.linalg.norm(points, axis=-1)
        return np.minimum(1.0, c * np.maximum(r - 1.0, 0.0) ** (sigma0 / 2.0)) - C_t * t

    return BarrierCandidate(rule, 1.0 / C_t, "lateral", {"c": c, "C_t": C_t, "sigma0": sigma0})


def _field_at(psi: BarrierCandidate, grid: Grid, t: float) -> Field:
    def rule(points: np.ndarray, s: float) -> np.ndarray:
        return psi(points, s)

    return Field.from_function(grid, rule, (t,), TailModel.explicit(rule))


def _pucci_plus_on(
    psi: BarrierCandidate,
    grid: Grid,
    t: float,
    mask: np.ndarray,
    sigma: float,
    Lambda: float,
    scheme: Optional[QuadratureScheme],
) -> Tuple[np.ndarray, np.ndarray]:
    stencil = stencil_for(grid, sigma, scheme)
    plan = StencilPlan.for_mask(grid, stencil, mask)
    u = _field_at(psi, grid, t)
    E = plan.extended(u.slice(t), lambda p: psi(p, t))
    data = plan.node_data(E, u.far_levels(plan.points, sigma, t))
    values = operator_values(OperatorSpec.pucci_plus(grid.n, sigma, Lambda), stencil, data)
    return values, plan.points


def verify_lateral_barrier(
    psi: BarrierCandidate,
    sigma0: float,
    grid: Grid,
    sigma: Optional[float] = None,
    Lambda: float = 1.0,
    tol: float = 1e-3,
    times: int = 4,
    scheme: Optional[QuadratureScheme] = None,
) -> BarrierReport:
    """
    (i)   psi = 0 on B1 x {0}
    (ii)  psi_t - M+ psi >= -tol outside B1 (backward difference in time)
    (iii) psi >= 1 outside B2 x [-kappa, 0]
    """
    sigma = sigma0 if sigma is None else sigma
    kappa = psi.kappa
    radii = grid.radii.reshape(-1)
    points = grid.points

    inside = radii <= 1.0 + 1e-12
    cond_i = float(np.max(np.abs(psi(points[inside], 0.0))))

    dt = kappa / 64.0
    sample_times = np.linspace(-2.0 * kappa, 0.0, times)
    mask = grid.radii > 1.0 + 1e-12
    worst_ii = -np.inf
    for t in sample_times:
        pucci, nodes = _pucci_plus_on(psi, grid, t, mask, sigma, Lambda, scheme)
        psi_t = (psi(nodes, t) - psi(nodes, t - dt)) / dt
        worst_ii = max(worst_ii, float(np.max(-(psi_t - pucci))))
    cond_ii = max(0.0, worst_ii)

    outer = radii >= 2.0 - 1e-12
    worst_iii = 0.0
    for t in np.linspace(-kappa, 0.0, times):
        worst_iii = max(worst_iii, float(np.max(1.0 - psi(points[outer], t))))
    for t in -kappa * (1.0 + np.linspace(1.0 / 64.0, 1.0, times)):
        worst_iii = max(worst_iii, float(np.max(1.0 - psi(points, t))))

    conditions = {
        "zero_on_B1": cond_i <= tol,
        "supersolution_outside_B1": cond_ii <= tol,
        "above_one_outside_B2": worst_iii <= tol,
    }
    return BarrierReport(
        provenance=psi.provenance,
        passed=all(conditions.values()),
        conditions=conditions,
        residuals={
            "zero_on_B1": cond_i,
            "supersolution_outside_B1": cond_ii,
            "above_one_outside_B2": worst_iii,
        },
        parameters={**psi.params, "kappa": kappa, "sigma": sigma, "Lambda": Lambda},
    )


def search_lateral_barrier(
    sigma0: float,
    grid: Grid,
    c_values: Optional[Iterable[float]] = None,
    Ct_values: Optional[Iterable[float]] = None,
    Lambda: float = 1.0,
    tol: float = 1e-3,
    scheme: Optional[QuadratureScheme] = None,
) -> Tuple[Optional[BarrierCandidate], BarrierReport, int]:
    """First passing (c, C_t): c ascending, C_t descending over [0.1, 10]."""
    c_grid = np.geomspace(0.1, 10.0, 21) if c_values is None else np.asarray(list(c_values))
    ct_grid = np.geomspace(10.0, 0.1, 21) if Ct_values is None else np.asarray(list(Ct_values))
    tried = 0
    last: Optional[BarrierReport] = None
    for c in c_grid:
        for C_t in ct_grid:
            tried += 1
            psi = lateral_candidate(float(c), float(C_t), sigma0)
            # condition (iii) needs c >= 1 outside B2; skip the operator work otherwise
            if c < 1.0 - 1e-12:
                continue
            report = verify_lateral_barrier(psi, sigma0, grid, Lambda=Lambda, tol=tol, scheme=scheme)
            last = report
            if report.passed:
                logger.info(f"lateral barrier found: c={c:.4g}, C_t={C_t:.4g}, kappa={psi.kappa:.4g}")
                return psi, report, tried
    logger.warning(f"no lateral barrier passed for sigma0={sigma0} after {tried} candidates")
    if last is None:
        last = verify_lateral_barrier(
            lateral_candidate(float(c_grid[-1]), float(ct_grid[-1]), sigma0), sigma0, grid,
            Lambda=Lambda, tol=tol, scheme=scheme,
        )
    return None, last, tried


def smooth_bump(points: np.ndarray) -> np.ndarray:
    """b = 1 - exp(1 - 1/(1 - |y|^2)) in B1 and 1 outside; b(0) = 0."""
    r2 = np.sum(np.asarray(points, dtype=float) ** 2, axis=-1)
    out = np.ones_like(r2)
    inside = r2 < 1.0
    out[inside] = 1.0 - np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


def bump_barrier(
    b: Callable[[np.ndarray], np.ndarray],
    grid: Grid,
    sigma: float,
    Lambda: float = 1.0,
    scheme: Optional[QuadratureScheme] = None,
) -> BarrierCandidate:
    """psi(y, s) = b(y) + ||M+ b||_inf s for s >= 0, the sup taken over grid nodes."""
    values = np.asarray(b(grid.points), dtype=float)
    radii = grid.radii.reshape(-1)
    origin = float(np.asarray(b(np.zeros((1, grid.n))), dtype=float).reshape(-1)[0])
    if values.min() < -1e-12 or values.max() > 1.0 + 1e-12:
        raise PreconditionError(
            "bump must take values in [0, 1]", {"min": float(values.min()), "max": float(values.max())}
        )
    if abs(origin) > 1e-12:
        raise PreconditionError("bump must vanish at the origin", {"b(0)": origin})
    if np.max(np.abs(values[radii >= 1.0 - 1e-12] - 1.0)) > 1e-12:
        raise PreconditionError("1 - b must be supported in B1")
    frozen = BarrierCandidate(lambda p, t: b(p), 1.0, "bump")
    pucci, _ = _pucci_plus_on(frozen, grid, 0.0, np.ones(grid.shape, dtype=bool), sigma, Lambda, scheme)
    slope = float(np.max(np.abs(pucci)))
    logger.info(f"bump barrier slope ||M+ b|| = {slope:.6g} (sigma={sigma}, Lambda={Lambda})")

    def rule(points: np.ndarray, s: float) -> np.ndarray:
        return np.asarray(b(points), dtype=float) + slope * s

    return BarrierCandidate(rule, 1.0, "bump", {"slope": slope, "sigma": sigma, "Lambda": Lambda})


def verify_bump_barrier(
    psi: BarrierCandidate,
    grid: Grid,
    sigma: float,
    Lambda: float = 1.0,
    tol: float = 1e-3,
    times: Iterable[float] = (0.0, 0.5, 1.0),
    scheme: Optional[QuadratureScheme] = None,
) -> BarrierReport:
    """psi_t - M+ psi >= -tol at every grid node and psi >= 0."""
    ds = 1.0 / 64.0
    worst, negative = 0.0, 0.0
    mask = np.ones(grid.shape, dtype=bool)
    for s in times:
        pucci, nodes = _pucci_plus_on(psi, grid, s, mask, sigma, Lambda, scheme)
        psi_t = (psi(nodes, s) - psi(nodes, s - ds)) / ds
        worst = max(worst, float(np.max(pucci - psi_t)))
        negative = max(negative, float(np.max(-psi(nodes, s))))
    conditions = {"supersolution": worst <= tol, "nonnegative": negative <= 1e-12}
    return BarrierReport(
        provenance="bump",
        passed=all(conditions.values()),
        conditions=conditions,
        residuals={"supersolution": max(0.0, worst), "nonnegative": max(0.0, negative)},
        parameters=dict(psi.params),
    )


# ---------------------------------------------------------------------------
# Modulus composition
# ---------------------------------------------------------------------------


def _infimum_over_r(objective: Callable[[np.ndarray], np.ndarray], samples: int) -> float:
    lattice = np.geomspace(R_RANGE[0], R_RANGE[1], samples + 2)
    r = lattice[1:-1]
    values = objective(r)
    best = int(np.argmin(values))
    lo, hi = np.log(lattice[best]), np.log(lattice[best + 2])
    refined = minimize_scalar(
        lambda s: float(objective(np.array([np.exp(s)]))[0]),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(min(values[best], refined.fun))


def _compose(
    objective: Callable[[float, np.ndarray], np.ndarray],
    knots: np.ndarray,
    samples: int,
    label: str,
) -> Modulus:
    rho = np.zeros_like(knots)
    for i, d in enumerate(knots):
        if d > 0.0:
            rho[i] = _infimum_over_r(lambda r: objective(d, r), samples)
    return Modulus(knots, np.maximum.accumulate(rho), label)


def _output_knots(d_max: float, knots: int) -> np.ndarray:
    return np.concatenate([[0.0], np.geomspace(1e-6, d_max, knots)])


def compose_lateral_modulus(
    rho: Modulus,
    rho0: Modulus,
    kappa: float,
    sigma0: float,
    sup_u: float,
    d_max: float = 1.0,
    knots: int = MODULUS_KNOTS,
    samples: int = INFIMUM_SAMPLES,
) -> Modulus:
    """rho_bar(d) = inf_r rho(3r v kappa r^sigma0) + 2 sup|u| rho0(d / r^2)."""
    if sup_u < 0.0:
        raise ParameterError("sup_u must be nonnegative", {"sup_u": sup_u})
    d = _output_knots(d_max, knots)
    if sup_u == 0.0:
        return Modulus(d, np.zeros_like(d), "lateral")

    def objective(dd: float, r: np.ndarray) -> np.ndarray:
        return rho(np.maximum(3.0 * r, kappa * r**sigma0)) + 2.0 * sup_u * rho0(dd / r**2)

    return _compose(objective, d, samples, "lateral")


def compose_initial_modulus(
    rho: Modulus,
    rho0: Modulus,
    sup_u: float,
    d_max: float = 1.0,
    knots: int = MODULUS_KNOTS,
    samples: int = INFIMUM_SAMPLES,
) -> Modulus:
    """rho_bar(d) = inf_r rho(r) + 2 sup|u| (rho0(d / r^2) + d / r)."""
    if sup_u < 0.0:
        raise ParameterError("sup_u must be nonnegative", {"sup_u": sup_u})
    d = _output_knots(d_max, knots)
    if sup_u == 0.0:
        return Modulus(d, np.zeros_like(d), "initial")

    def objective(dd: float, r: np.ndarray) -> np.ndarray:
        return rho(r) + 2.0 * sup_u * (rho0(dd / r**2) + dd / r)

    return _compose(objective, d, samples, "initial")


# ---------------------------------------------------------------------------
# Empirical moduli
# ---------------------------------------------------------------------------


def _window_extrema(values: np.ndarray, n: int, spatial: int, temporal: int) -> Tuple[np.ndarray, np.ndarray]:
    # box in time times a ball in space, applied as two separable passes
    upper = maximum_filter1d(values, 2 * temporal + 1, axis=0, mode="nearest")
    lower = minimum_filter1d(values, 2 * temporal + 1, axis=0, mode="nearest")
    if n == 1:
        upper = maximum_filter1d(upper, 2 * spatial + 1, axis=1, mode="nearest")
        lower = minimum_filter1d(lower, 2 * spatial + 1, axis=1, mode="nearest")
    else:
        axis = np.arange(-spatial, spatial + 1)
        disc = (axis[:, None] ** 2 + axis[None, :] ** 2) <= spatial**2
        upper = maximum_filter(upper, footprint=disc[None], mode="nearest")
        lower = minimum_filter(lower, footprint=disc[None], mode="nearest")
    return upper, lower


def measure_boundary_modulus(
    u: Field,
    radius: float = 1.0,
    scales: Optional[Iterable[float]] = None,
) -> Modulus:
    """
    For dyadic d: max of |u(x,t) - u(y,s)| over x in B_radius, |x - y| <= d
    and |t - s| <= d, sampled on the grid and time lattice.
    """
    grid = u.grid
    if u.times.size < 2:
        raise PreconditionError("a boundary modulus needs a space-time field")
    dt = float(np.min(np.diff(u.times)))
    if scales is None:
        k_max = int(np.floor(np.log2(1.0 / max(grid.h, dt))))
        scales = [2.0**-k for k in range(k_max, -1, -1)]
    scales = sorted(float(s) for s in scales)
    centers = grid.radii <= radius + 1e-12
    rho = [0.0]
    for d in scales:
        spatial = int(np.floor(d / grid.h + 1e-9))
        temporal = int(np.floor(d / dt + 1e-9))
        upper, lower = _window_extrema(u.values, grid.n, spatial, temporal)
        spread = np.maximum(upper - u.values, u.values - lower)
        rho.append(float(spread[:, centers].max()))
    return Modulus(np.array([0.0] + scales), np.maximum.accumulate(np.array(rho)), "empirical")


def fit_modulus_exponent(modulus: Modulus, d_min: float = 0.0, d_max: float = np.inf) -> Dict[str, float]:
    """Least-squares fit rho(d) ~ C d^beta on positive knots in [d_min, d_max]."""
    keep = (modulus.d > 0.0) & (modulus.rho > 0.0) & (modulus.d >= d_min) & (modulus.d <= d_max)
    if keep.sum() < 3:
        raise InsufficientDataError("fewer than 3 usable scales for a modulus fit", {"usable": int(keep.sum())})
    fit = linregress(np.log(modulus.d[keep]), np.log(modulus.rho[keep]))
    return {
        "exponent": float(fit.slope),
        "constant": float(np.exp(fit.intercept)),
        "r_squared": float(fit.rvalue**2),
        "scales": int(keep.sum()),
    }


def interior_modulus_budget(
    rho: Modulus,
    C0: float,
    sigma: float,
    sigma0: float,
    n: int,
    alpha: float,
    radii: Optional[np.ndarray] = None,
) -> Tuple[Modulus, pd.DataFrame]:
    """
    m_r = r^sigma C0 + rho(2r v r^sigma0) + I_r with
    I_r = integral of rho(r(1+|xi|) v r^sigma0) / (1 + |xi|^(n+sigma0)),
    and the modulus d -> sup_{r in [2d, 1]} m_r d^alpha / r^alpha (unit constant).
    rho is held at its last tabulated value beyond its table.
    """
    if radii is None:
        radii = np.geomspace(1e-3, 1.0, 64)
    area = sphere_area(n)

    def tail_integral(r: float) -> float:
        def integrand(s: float) -> float:
            return rho.bounded(max(r * (1.0 + s), r**sigma0)) * s ** (n - 1) / (1.0 + s ** (n + sigma0))

        value, _ = quad(integrand, 0.0, np.inf, limit=200)
        return area * value

    m = np.array(
        [r**sigma * C0 + rho.bounded(max(2.0 * r, r**sigma0)) + tail_integral(r) for r in radii]
    )
    table = pd.DataFrame({"r": radii, "m_r": m})
    d = np.concatenate([[0.0], np.geomspace(radii[0] / 2.0, 0.5, MODULUS_KNOTS)])
    values = [0.0]
    for dd in d[1:]:
        admissible = radii >= 2.0 * dd - 1e-15
        if admissible.any():
            values.append(float(np.max(m[admissible] * dd**alpha / radii[admissible] ** alpha)))
        else:
            values.append(float(m[-1] * dd**alpha))
    return Modulus(d, np.maximum.accumulate(np.array(values)), "interior"), table


def domination_constant(empirical: Modulus, predicted: Modulus) -> float:
    """Smallest C >= 1 with empirical <= C * predicted on the empirical knots."""
    d = empirical.d[1:]
    pred = predicted(d)
    emp = empirical.rho[1:]
    usable = pred > 0.0
    if not usable.any():
        return float("inf") if np.any(emp > 0.0) else 1.0
    ratio = float(np.max(emp[usable] / pred[usable]))
    if np.any(emp[~usable] > 0.0):
        return float("inf")
    return max(1.0, ratio)
