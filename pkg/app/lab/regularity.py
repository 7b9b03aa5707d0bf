"""
Empirical regularity: parabolic Hölder seminorms, oscillation exponents,
improvement-of-flatness sequences, time regularity and the time-jump
counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import linregress

from app.config.logger import Logger
from app.lab.evolution import (
    DirichletProblem,
    Stepper,
    residual_check,
    solve_dirichlet,
)
from app.lab.exceptions import InsufficientDataError, ParameterError, PreconditionError
from app.lab.fields import Field, Grid, QuadratureScheme, TailModel
from app.lab.kernels import OperatorSpec, sphere_area
from app.lab.nonlocal_eval import StencilPlan, operator_values, stencil_for
from app.schemas.reports import (
    CounterexampleReport,
    FlatnessRecord,
    RegularityReport,
    TimeRegularityReport,
)

logger = Logger.get_logger(__name__)

ALPHA_CLAMP = (0.0, 2.0)
MAX_SEMINORM_POINTS = 400


@dataclass(frozen=True)
class Cylinder:
    """B_radius(center) x [t_min, t_max]."""

    center: Tuple[float, ...] = (0.0,)
    radius: float = 1.0
    t_min: float = -1.0
    t_max: float = 0.0


def _cylinder_samples(u: Field, region: Cylinder) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(space indices, time indices) of the samples inside the cylinder."""
    center = np.asarray(region.center, dtype=float).reshape(-1)
    if center.size != u.n:
        raise ParameterError("cylinder center has the wrong dimension", {"center": list(region.center), "n": u.n})
    dist = np.linalg.norm(u.grid.points - center, axis=-1)
    space = np.flatnonzero(dist <= region.radius + 1e-12)
    time = np.flatnonzero((u.times >= region.t_min - 1e-12) & (u.times <= region.t_max + 1e-12))
    return space, time, center


def _strided(indices: np.ndarray, count: int) -> np.ndarray:
    if indices.size <= count:
        return indices
    picks = np.unique(np.linspace(0, indices.size - 1, count).round().astype(int))
    return indices[picks]


def parabolic_holder_seminorm(
    u: Field,
    region: Cylinder,
    alpha: float,
    sigma: float,
    max_points: int = MAX_SEMINORM_POINTS,
) -> float:
    """max |u(x,t) - u(y,s)| / (|x - y| + |t - s|^(1/sigma))^alpha over sampled pairs."""
    space, time, _ = _cylinder_samples(u, region)
    if space.size == 0 or time.size == 0:
        raise PreconditionError("the region contains no samples")
    per_axis = max(2, int(np.sqrt(max_points)))
    space = _strided(space, per_axis if time.size > 1 else max_points)
    time = _strided(time, per_axis)
    flat = u.values.reshape(u.times.size, -1)
    xs = np.repeat(u.grid.points[space][None, :, :], time.size, axis=0).reshape(-1, u.n)
    ts = np.repeat(u.times[time], space.size)
    vals = flat[np.ix_(time, space)].reshape(-1)
    dx = pdist(xs)
    dt = pdist(ts[:, None])
    du = pdist(vals[:, None])
    scale = dx + dt ** (1.0 / sigma)
    keep = scale > 0.0
    if not keep.any():
        return 0.0
    return float(np.max(du[keep] / scale[keep] ** alpha))


def _oscillations(
    u: Field, center: Sequence[float], t_center: float, radii: Sequence[float], sigma: float
) -> np.ndarray:
    out = []
    for r in radii:
        space, time, _ = _cylinder_samples(u, Cylinder(tuple(center), r, t_center - r**sigma, t_center))
        time = time[u.times[time] > t_center - r**sigma + 1e-12]
        if time.size == 0:
            time = np.array([u.time_index(t_center)])
        block = u.values.reshape(u.times.size, -1)[np.ix_(time, space)]
        out.append(float(block.max() - block.min()) if block.size else 0.0)
    return np.array(out)


def default_scales(grid: Grid, radius: float = 1.0) -> List[float]:
    """Dyadic radii 2^-k * radius down to two grid spacings."""
    scales = []
    r = radius
    while r >= 2.0 * grid.h - 1e-12:
        scales.append(r)
        r /= 2.0
    return scales


def fit_holder_exponent(
    u: Field,
    center: Sequence[float],
    sigma: float,
    t_center: Optional[float] = None,
    scales: Optional[Sequence[float]] = None,
) -> RegularityReport:
    """Regress log oscillation over B_r x (t_c - r^sigma, t_c] against log r."""
    t_center = float(u.times[-1]) if t_center is None else t_center
    radii = np.asarray(scales if scales is not None else default_scales(u.grid), dtype=float)
    osc = _oscillations(u, center, t_center, radii, sigma)
    usable = osc > 1e-14 * max(1.0, float(np.abs(u.values).max()))
    if not usable.any() and radii.size >= 3:
        logger.info("oscillation vanishes on every scale; exponent clamped")
        return RegularityReport(
            alpha_hat=ALPHA_CLAMP[1], r_squared=1.0, residual=0.0,
            scales=radii.tolist(), oscillations=osc.tolist(),
        )
    if usable.sum() < 3:
        raise InsufficientDataError(
            "fewer than 3 usable scales for an exponent fit",
            {"usable": int(usable.sum()), "scales": radii.tolist()},
        )
    fit = linregress(np.log(radii[usable]), np.log(osc[usable]))
    predicted = fit.intercept + fit.slope * np.log(radii[usable])
    residual = float(np.sqrt(np.mean((np.log(osc[usable]) - predicted) ** 2)))
    alpha_hat = float(np.clip(fit.slope, *ALPHA_CLAMP))
    return RegularityReport(
        alpha_hat=alpha_hat,
        r_squared=float(fit.rvalue**2),
        residual=residual,
        scales=radii.tolist(),
        oscillations=osc.tolist(),
    )


def default_flatness_alpha(sigma: float) -> float:
    return max(0.0, min(0.9 * (sigma - 1.0), 0.4))


def flatness_sequence(
    u: Field,
    center: Sequence[float],
    sigma: float,
    lam: float = 0.5,
    alpha: Optional[float] = None,
    K_max: int = 8,
    t_center: Optional[float] = None,
) -> RegularityReport:
    """
    Least-squares affine fits l_k(x) = a_k + b_k (x - x_c) on the cylinders
    B_{lam^k} x (t_c - lam^(sigma k), t_c], with sup errors and increments.
    """
    if not 0.0 < lam < 1.0:
        raise ParameterError(f"lambda must lie in (0, 1), got {lam}")
    alpha = default_flatness_alpha(sigma) if alpha is None else alpha
    t_center = float(u.times[-1]) if t_center is None else t_center
    center = np.asarray(center, dtype=float).reshape(-1)
    flat = u.values.reshape(u.times.size, -1)
    records: List[FlatnessRecord] = []
    truncated = False
    for k in range(K_max + 1):
        r = lam**k
        if r < 2.0 * u.grid.h - 1e-12:
            truncated = True
            logger.warning(f"flatness sequence truncated at k={k}: radius {r:.3g} below grid scale")
            break
        space, time, _ = _cylinder_samples(u, Cylinder(tuple(center), r, t_center - r**sigma, t_center))
        time = time[u.times[time] > t_center - r**sigma + 1e-12]
        if time.size == 0:
            time = np.array([u.time_index(t_center)])
        x = np.repeat(u.grid.points[space][None, :, :] - center, time.size, axis=0).reshape(-1, u.n)
        v = flat[np.ix_(time, space)].reshape(-1)
        design = np.hstack([np.ones((x.shape[0], 1)), x])
        coef, *_ = np.linalg.lstsq(design, v, rcond=None)
        err = float(np.max(np.abs(v - design @ coef)))
        record = FlatnessRecord(k=k, radius=r, a_k=float(coef[0]), b_k=coef[1:].tolist(), sup_error=err)
        if records:
            prev = records[-1]
            record.a_increment = abs(record.a_k - prev.a_k)
            record.b_increment = lam ** (k - 1) * float(np.linalg.norm(np.subtract(record.b_k, prev.b_k)))
            record.ratio = err / prev.sup_error if prev.sup_error > 0.0 else None
        records.append(record)
    errors = np.array([rec.sup_error for rec in records])
    ks = np.array([rec.k for rec in records])
    fitted = float(np.max(errors / lam ** (ks * (1.0 + alpha)))) if records else 0.0
    ratios = [rec.ratio for rec in records if rec.ratio is not None and rec.ratio > 0.0]
    decay = float(np.exp(np.mean(np.log(ratios)))) if ratios else None
    return RegularityReport(
        flatness=records,
        lam=lam,
        alpha=alpha,
        fitted_constant=fitted,
        decay_ratio=decay,
        truncated=truncated,
    )


# ---------------------------------------------------------------------------
# Time regularity
# ---------------------------------------------------------------------------


def initial_pucci_bound(
    problem: DirichletProblem, grid: Grid, scheme: Optional[QuadratureScheme] = None
) -> float:
    """C0 = max over interior nodes of |M+ u0| and |M- u0|."""
    op = problem.operator
    stencil = stencil_for(grid, op.sigma, scheme)
    plan = StencilPlan.for_mask(grid, stencil, problem.interior_mask(grid))
    E = plan.extended(problem.initial_values(grid), lambda p: problem.g(p, problem.t0))
    data = plan.node_data(E, problem.levels(grid, plan.points, problem.t0))
    upper = operator_values(OperatorSpec.pucci_plus(op.n, op.sigma, op.Lambda), stencil, data)
    lower = operator_values(OperatorSpec.pucci_minus(op.n, op.sigma, op.Lambda), stencil, data)
    return float(max(np.abs(upper).max(), np.abs(lower).max()))


def _exterior_samples(
    problem: DirichletProblem, grid: Grid, times: np.ndarray, scheme: Optional[QuadratureScheme]
) -> np.ndarray:
    """g on exterior grid nodes, on the extended box and the far means per node: (T, P)."""
    stepper = Stepper(problem, grid, scheme)
    points = np.vstack([stepper.exterior_points, stepper.plan.outside_points])
    rows = []
    for t in times:
        values = np.asarray(problem.g(points, t), dtype=float).reshape(-1)
        rows.append(np.append(values, problem.levels(grid, stepper.plan.points, t)))
    return np.array(rows)


def _lag_extrema(values: np.ndarray, times: np.ndarray, bound) -> Tuple[float, float]:
    """(max ratio |v(t+tau) - v(t)| / bound(tau), max excess over bound) across all lags."""
    worst_ratio, worst_excess = 0.0, 0.0
    for k in range(1, times.size):
        tau = times[k:] - times[:-k]
        diff = np.abs(values[k:] - values[:-k]).reshape(tau.size, -1).max(axis=1)
        b = bound(tau)
        positive = b > 0.0
        if positive.any():
            worst_ratio = max(worst_ratio, float(np.max(diff[positive] / b[positive])))
        worst_excess = max(worst_excess, float(np.max(diff - b * (1.0 + 1e-8))))
    return worst_ratio, worst_excess


def time_regularity_experiment(
    problem: DirichletProblem,
    grid: Grid,
    modulus: str = "lipschitz",
    holder_exponent: Optional[float] = None,
    solution: Optional[Field] = None,
    scheme: Optional[QuadratureScheme] = None,
    atol: float = 1e-12,
) -> TimeRegularityReport:
    """
    Bound |u(x, t + tau) - u(x, t)| by M tau (Lipschitz data, M = max(C0, Lip_t g))
    or by C0 tau + [g]_beta tau^beta (Hölder data), over every lattice lag.
    """
    flags: List[str] = []
    if modulus not in ("lipschitz", "holder"):
        raise ParameterError(f"unknown time modulus '{modulus}'")
    if modulus == "holder" and not (holder_exponent and 0.0 < holder_exponent <= 1.0):
        raise ParameterError("Hölder time data needs an exponent in (0, 1]", {"exponent": holder_exponent})
    if problem.discontinuous_in_time:
        flags.append("discontinuous_in_time")
    u = solution if solution is not None else solve_dirichlet(problem, grid, scheme)
    times = u.times
    C0 = initial_pucci_bound(problem, grid, scheme)
    ext = _exterior_samples(problem, grid, times, scheme)
    lip_g = float(np.max(np.abs(np.diff(ext, axis=0)) / np.diff(times)[:, None]))
    holder_constant = None
    if modulus == "lipschitz":
        M = max(C0, lip_g)

        def bound(tau: np.ndarray) -> np.ndarray:
            return M * tau + atol
    else:
        beta = float(holder_exponent)
        ratios = []
        for k in range(1, times.size):
            tau = times[k:] - times[:-k]
            diff = np.abs(ext[k:] - ext[:-k]).max(axis=1)
            ratios.append(float(np.max(diff / tau**beta)))
        holder_constant = max(ratios)
        M = max(C0, holder_constant)

        def bound(tau: np.ndarray) -> np.ndarray:
            return C0 * tau + holder_constant * tau**beta + atol

    if not np.isfinite(C0) or not np.isfinite(M):
        flags.append("unbounded_hypothesis_constant")
    hypothesis_ok = not flags
    worst_ratio, excess = _lag_extrema(u.values, times, bound)
    bound_holds = excess <= 0.0
    from_start = np.abs(u.values - u.values[0]).reshape(times.size, -1).max(axis=1)
    comparison = float(np.max(from_start - bound(times - times[0]) * (1.0 + 1e-8)))
    comparison_holds = comparison <= 1e-10
    if not bound_holds:
        flags.append("bound_violated")
        logger.warning(f"time-regularity bound violated by {excess:.3e}")

    quotient = np.diff(u.values, axis=0) / np.diff(times).reshape((-1,) + (1,) * grid.n)
    w = Field(grid, quotient, times[1:], TailModel.zero())
    try:
        fit = fit_holder_exponent(w, np.zeros(grid.n), problem.operator.sigma, t_center=float(times[-1]))
        alpha_hat, r2 = fit.alpha_hat, fit.r_squared
    except InsufficientDataError as exc:
        logger.warning(f"difference quotient exponent unavailable: {exc.message}")
        alpha_hat, r2 = None, None
    return TimeRegularityReport(
        C0=C0,
        lipschitz_g=lip_g,
        M=M,
        modulus=modulus,
        holder_exponent=holder_exponent,
        holder_constant=holder_constant,
        bound_holds=bound_holds,
        worst_ratio=worst_ratio,
        comparison_holds=comparison_holds,
        comparison_violation=max(0.0, comparison),
        hypothesis_ok=hypothesis_ok,
        quotient_alpha_hat=alpha_hat,
        quotient_r_squared=r2,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Counterexample: a time derivative that jumps
# ---------------------------------------------------------------------------


def ring_datum(C1: float, ring: bool = True, jump_time: float = -0.5):
    """g(x, t) = C1 (t - jump_time)^+ + 1{2 <= |x| < 3} 1{t >= jump_time}."""

    def g(points: np.ndarray, t: float) -> np.ndarray:
        r = np.linalg.norm(np.asarray(points, dtype=float), axis=-1)
        values = np.full(r.shape, C1 * max(t - jump_time, 0.0))
        if ring and t >= jump_time:
            values = values + ((r >= 2.0) & (r < 3.0))
        return values

    return g


def predicted_ring_slope(n: int, sigma: float) -> float:
    """M+ of the ring indicator at the origin: both increments of delta land in the ring."""
    return 2.0 * (2.0 - sigma) * sphere_area(n) * (2.0 ** -sigma - 3.0 ** -sigma) / sigma


def _subsolution_check(
    operator: OperatorSpec, grid: Grid, C1: float, jump_time: float, scheme: Optional[QuadratureScheme]
) -> bool:
    """C1 (t - jump_time) + ring is a discrete subsolution in B1 after the jump."""
    g = ring_datum(C1, True, jump_time)

    def lower(points: np.ndarray, t: float) -> np.ndarray:
        r = np.linalg.norm(np.asarray(points, dtype=float), axis=-1)
        return C1 * (t - jump_time) + ((r >= 2.0) & (r < 3.0))

    times = jump_time + np.linspace(0.0, 0.25, 3)
    candidate = Field.from_function(
        grid, lower, times, TailModel.explicit(lower, lambda t: C1 * (t - jump_time))
    )
    problem = DirichletProblem(operator, g)
    return residual_check(candidate, problem, "sub", tol=1e-10, scheme=scheme).passed


def counterexample_experiment(
    sigma: float,
    C1: float = 0.5,
    grid: Optional[Grid] = None,
    ring: bool = True,
    scheme: Optional[QuadratureScheme] = None,
    max_halvings: int = 10,
) -> Tuple[CounterexampleReport, Field]:
    """
    Fractional heat equation with zero initial data and the ring datum:
    u vanishes in B1 before the jump time and its time derivative jumps at it.
    """
    grid = grid or Grid(1, 1.0 / 64.0, 4.0)
    operator = OperatorSpec.pucci_plus(grid.n, sigma, 1.0)
    jump_time = -0.5
    halvings = 0
    if ring and C1 > 0.0:
        while not _subsolution_check(operator, grid, C1, jump_time, scheme):
            if halvings >= max_halvings:
                raise PreconditionError(
                    "ring datum is not a subsolution after halving C1", {"C1": C1, "halvings": halvings}
                )
            C1 /= 2.0
            halvings += 1
        if halvings:
            logger.info(f"C1 halved {halvings} times to {C1:.4g} for the subsolution check")
    g = ring_datum(C1, ring, jump_time)
    problem = DirichletProblem(
        operator,
        g,
        far_level=lambda t: C1 * max(t - jump_time, 0.0),
        discontinuous_in_time=ring,
    )
    u = solve_dirichlet(problem, grid, scheme)
    times = u.times
    dt = float(times[1] - times[0])
    mask = problem.interior_mask(grid)
    before = times <= jump_time + 1e-12
    pre_sup = float(np.abs(u.values[before][:, mask]).max())
    k = int(np.argmin(np.abs(times - jump_time)))
    origin = tuple([grid.N] * grid.n)
    pre_slope = float((u.values[k][origin] - u.values[k - 1][origin]) / dt)
    post_slope = float((u.values[k + 1][origin] - u.values[k][origin]) / dt)
    detected = post_slope >= 10.0 * abs(pre_slope) and post_slope >= 1e-4
    report = CounterexampleReport(
        sigma=sigma,
        C1=C1,
        halvings=halvings,
        pre_jump_sup=pre_sup,
        pre_jump_slope=pre_slope,
        post_jump_slope=post_slope,
        predicted_slope=predicted_ring_slope(grid.n, sigma) if ring else 0.0,
        jump_detected=detected,
        ring=ring,
        dt=dt,
    )
    logger.info(f"counterexample sigma={sigma}: pre sup {pre_sup:.2e}, slopes {pre_slope:.4g} -> {post_slope:.4g}")
    return report, u
