"""
Dirichlet problems u_t - Iu = f in B_radius x (t0, t1] with exterior data g,
solved by monotone forward Euler stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from app.config.logger import Logger
from app.lab.exceptions import CFLViolationError, PreconditionError
from app.lab.fields import Field, Grid, QuadratureScheme, TailModel
from app.lab.kernels import OperatorKind, OperatorSpec, SamplePlan, check_L0_membership
from app.lab.nonlocal_eval import StencilPlan, Stencil, operator_values, stencil_for
from app.schemas.reports import ResidualReport

logger = Logger.get_logger(__name__)

PointRule = Callable[[np.ndarray, float], np.ndarray]
LevelRule = Union[float, Callable[[float], float], None]


def zero_rule(points: np.ndarray, t: float) -> np.ndarray:
    return np.zeros(np.asarray(points).shape[0])


def constant_rule(value: float) -> PointRule:
    def rule(points: np.ndarray, t: float) -> np.ndarray:
        return np.full(np.asarray(points).shape[0], float(value))

    return rule


def kernel_weighted_level(
    g: PointRule, n: int, R: float, sigma: float, t: float
) -> float:
    """Mean of g over |y| > R against |y|^-(n+sigma): the far level seen from the origin."""
    return float(TailModel.explicit(g).far_levels(np.zeros((1, n)), R, sigma, t)[0])


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """
    Operator, right-hand side f, exterior/initial data g and the domain.

    g covers the exterior for t in (t0, t1] and all of R^n at t0; `initial`
    overrides g(., t0) inside the domain when given. `far_level` declares one
    far level for every point; None computes the far means of g point by point.
    """

    operator: OperatorSpec
    g: PointRule = zero_rule
    f: PointRule = zero_rule
    initial: Optional[Callable[[np.ndarray], np.ndarray]] = None
    far_level: LevelRule = None
    radius: float = 1.0
    center: Tuple[float, ...] = ()
    t0: float = -1.0
    t1: float = 0.0
    discontinuous_in_time: bool = False

    def __post_init__(self) -> None:
        if self.radius <= 0.0 or self.t1 <= self.t0:
            raise PreconditionError(
                "domain needs a positive radius and t0 < t1",
                {"radius": self.radius, "t0": self.t0, "t1": self.t1},
            )
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.operator.n)

    @property
    def n(self) -> int:
        return self.operator.n

    @property
    def tail(self) -> TailModel:
        return TailModel.explicit(self.g, self.far_level)

    def levels(self, grid: Grid, points: np.ndarray, t: float) -> np.ndarray:
        """Far means of g seen from each point."""
        return self.tail.far_levels(points, grid.R, self.operator.sigma, t)

    def interior_mask(self, grid: Grid) -> np.ndarray:
        offset = grid.points - np.asarray(self.center)
        radii = np.linalg.norm(offset, axis=-1).reshape(grid.shape)
        return radii < self.radius - 1e-9 * grid.h

    def initial_values(self, grid: Grid) -> np.ndarray:
        values = np.asarray(self.g(grid.points, self.t0), dtype=float).reshape(grid.shape).copy()
        if self.initial is not None:
            mask = self.interior_mask(grid)
            inner = np.asarray(self.initial(grid.points), dtype=float).reshape(grid.shape)
            values[mask] = inner[mask]
        return values


@dataclass(frozen=True)
class CFLRecord:
    dt_max: float
    dt: float
    steps: int
    total_mass: float
    Lambda: float
    sigma: float
    h: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dt_max": self.dt_max,
            "dt": self.dt,
            "steps": self.steps,
            "total_mass": self.total_mass,
            "W_tot": self.total_mass * self.h**self.sigma,
            "Lambda": self.Lambda,
            "sigma": self.sigma,
            "h": self.h,
        }


@dataclass(frozen=True, eq=False)
class EvolutionState:
    grid: Grid
    values: np.ndarray
    time: float
    step: int = 0
    cfl: Optional[CFLRecord] = None


def _audit_l0(operator: OperatorSpec) -> None:
    if operator.kind in (OperatorKind.PUCCI_PLUS, OperatorKind.PUCCI_MINUS):
        return
    plan = SamplePlan.lattice(operator.n, count=6)
    for kernel in operator.kernels:
        report = check_L0_membership(kernel, plan)
        if not report.passed:
            raise PreconditionError(
                "explicit stepping needs an operator elliptic with respect to L0",
                {"worst_violation": report.worst_violation, "coefficient": kernel.coefficient.describe()},
            )


def cfl_timestep(grid: Grid, operator: OperatorSpec, scheme: Optional[QuadratureScheme] = None) -> float:
    """Largest dt keeping u + dt * (Iu + f) order preserving: h^sigma / (2 Lambda W_tot)."""
    _audit_l0(operator)
    stencil = stencil_for(grid, operator.sigma, scheme)
    return 1.0 / (2.0 * operator.Lambda * stencil.total_mass)


def time_lattice(
    grid: Grid,
    operator: OperatorSpec,
    scheme: Optional[QuadratureScheme] = None,
    t0: float = -1.0,
    t1: float = 0.0,
) -> CFLRecord:
    """Even number of uniform steps with dt <= dt_max, so the midpoint lies on the lattice."""
    dt_max = cfl_timestep(grid, operator, scheme)
    steps = max(2, math.ceil((t1 - t0) / dt_max - 1e-12))
    steps += steps % 2
    stencil = stencil_for(grid, operator.sigma, scheme)
    return CFLRecord(
        dt_max=dt_max,
        dt=(t1 - t0) / steps,
        steps=steps,
        total_mass=stencil.total_mass,
        Lambda=operator.Lambda,
        sigma=operator.sigma,
        h=grid.h,
    )


class Stepper:
    """Forward Euler for one problem on one grid; the gather plan is built once."""

    def __init__(self, problem: DirichletProblem, grid: Grid, scheme: Optional[QuadratureScheme] = None):
        self.problem = problem
        self.grid = grid
        self.stencil: Stencil = stencil_for(grid, problem.operator.sigma, scheme)
        self.mask = problem.interior_mask(grid)
        if not self.mask.any():
            raise PreconditionError("the domain contains no grid nodes", {"h": grid.h})
        self.plan = StencilPlan.for_mask(grid, self.stencil, self.mask)
        self.exterior_points = grid.points[~self.mask.reshape(-1)]
        self.dt_max = 1.0 / (2.0 * problem.operator.Lambda * self.stencil.total_mass)

    def operator_at(self, values: np.ndarray, t: float) -> np.ndarray:
        """I u on the interior nodes with the exterior read from g at time t."""
        E = self.plan.extended(values, lambda p: self.problem.g(p, t))
        data = self.plan.node_data(E, self.problem.levels(self.grid, self.plan.points, t))
        return operator_values(self.problem.operator, self.stencil, data, t=t)

    def step(self, values: np.ndarray, t: float, dt: float) -> np.ndarray:
        if dt > self.dt_max * (1.0 + 1e-12):
            raise CFLViolationError(
                f"step {dt} exceeds the monotonicity bound {self.dt_max}",
                {"dt": dt, "dt_max": self.dt_max},
            )
        forcing = np.asarray(self.problem.f(self.plan.points, t), dtype=float).reshape(-1)
        new = np.array(values, dtype=float, copy=True)
        new[self.mask] = values[self.mask] + dt * (self.operator_at(values, t) + forcing)
        t_new = t + dt
        new[~self.mask] = np.asarray(self.problem.g(self.exterior_points, t_new), dtype=float).reshape(-1)
        return new


@lru_cache(maxsize=8)
def cached_stepper(
    problem: DirichletProblem, grid: Grid, scheme: Optional[QuadratureScheme] = None
) -> Stepper:
    """One Stepper per (problem, grid, scheme); problems hash by identity."""
    return Stepper(problem, grid, scheme)


def initial_state(
    problem: DirichletProblem,
    grid: Grid,
    scheme: Optional[QuadratureScheme] = None,
    cfl: Optional[CFLRecord] = None,
) -> EvolutionState:
    if cfl is None:
        cfl = time_lattice(grid, problem.operator, scheme, problem.t0, problem.t1)
    return EvolutionState(grid, problem.initial_values(grid), problem.t0, 0, cfl)


def step_explicit(
    problem: DirichletProblem,
    state: EvolutionState,
    dt: float,
    scheme: Optional[QuadratureScheme] = None,
) -> EvolutionState:
    """One forward Euler step; exterior nodes are refreshed from g at the new time."""
    if state.time + dt > problem.t1 + 1e-12:
        raise PreconditionError("step leaves the time interval", {"t": state.time, "dt": dt})
    values = cached_stepper(problem, state.grid, scheme).step(state.values, state.time, dt)
    return replace(state, values=values, time=state.time + dt, step=state.step + 1)


def solve_dirichlet(
    problem: DirichletProblem,
    grid: Grid,
    scheme: Optional[QuadratureScheme] = None,
    cfl: Optional[CFLRecord] = None,
) -> Field:
    """Full trajectory on the time lattice chosen by time_lattice."""
    if cfl is None:
        cfl = time_lattice(grid, problem.operator, scheme, problem.t0, problem.t1)
    stepper = Stepper(problem, grid, scheme)
    times = problem.t0 + cfl.dt * np.arange(cfl.steps + 1)
    times[-1] = problem.t1
    values = np.empty((cfl.steps + 1,) + grid.shape)
    values[0] = problem.initial_values(grid)
    for k in range(cfl.steps):
        values[k + 1] = stepper.step(values[k], times[k], cfl.dt)
        if k % 200 == 0:
            logger.debug(f"step {k}/{cfl.steps}, t={times[k + 1]:.6f}, sup={np.abs(values[k + 1]).max():.6g}")
    logger.info(
        f"solved n={grid.n} h={grid.h} sigma={problem.operator.sigma} "
        f"Lambda={problem.operator.Lambda}: {cfl.steps} steps of {cfl.dt:.3e}"
    )
    return Field(grid, values, times, problem.tail)


def residual_check(
    candidate: Field,
    problem: DirichletProblem,
    sense: str,
    tol: float = 1e-8,
    scheme: Optional[QuadratureScheme] = None,
) -> ResidualReport:
    """r = u_t- - Iu - f on interior nodes, with u_t- the backward difference."""
    if sense not in ("sub", "super"):
        raise PreconditionError(f"sense must be 'sub' or 'super', got '{sense}'")
    if candidate.times.size < 2:
        raise PreconditionError("a residual needs at least two time samples")
    grid = candidate.grid
    stencil = stencil_for(grid, problem.operator.sigma, scheme)
    mask = problem.interior_mask(grid)
    plan = StencilPlan.for_mask(grid, stencil, mask)
    worst_value, worst_at = None, None
    r_max, r_min = -np.inf, np.inf
    for k in range(1, candidate.times.size):
        t = float(candidate.times[k])
        dt = t - float(candidate.times[k - 1])
        E = plan.extended(candidate.values[k], lambda p: candidate.tail.evaluate(p, t))
        data = plan.node_data(E, candidate.far_levels(plan.points, problem.operator.sigma, t))
        Iu = operator_values(problem.operator, stencil, data, t=t)
        forcing = np.asarray(problem.f(plan.points, t), dtype=float).reshape(-1)
        r = (candidate.values[k][mask] - candidate.values[k - 1][mask]) / dt - Iu - forcing
        r_max, r_min = max(r_max, float(r.max())), min(r_min, float(r.min()))
        idx = int(np.argmax(r)) if sense == "sub" else int(np.argmin(r))
        score = r[idx] if sense == "sub" else -r[idx]
        if worst_value is None or score > worst_value:
            worst_value = float(score)
            worst_at = {"x": plan.points[idx].tolist(), "t": t, "node": plan.nodes[idx].tolist()}
    violation = max(0.0, worst_value or 0.0)
    return ResidualReport(
        sense=sense,
        passed=violation <= tol,
        max_violation=violation,
        residual_max=r_max,
        residual_min=r_min,
        location=worst_at,
        tolerance=tol,
    )


def monotonicity_audit(
    problem: DirichletProblem,
    grid: Grid,
    values: np.ndarray,
    t: float,
    dt: float,
    bump: float = 1e-6,
    scheme: Optional[QuadratureScheme] = None,
) -> float:
    """
    Smallest finite-difference derivative of the update map with respect to
    any single grid value; nonnegative iff the step is order preserving there.
    """
    stepper = Stepper(problem, grid, scheme)
    base = stepper.step(values, t, dt)
    worst = np.inf
    for idx in np.ndindex(*grid.shape):
        bumped = np.array(values, copy=True)
        bumped[idx] += bump
        delta = (stepper.step(bumped, t, dt) - base) / bump
        worst = min(worst, float(delta[stepper.mask].min()))
    return worst


@dataclass(frozen=True, eq=False)
class OrderedPair:
    """Two problems on one operator with f, g and u0 of `lower` below those of `upper`."""

    lower: DirichletProblem
    upper: DirichletProblem
    lifts: Dict[str, float]


def _wave(amplitude: float, frequency: np.ndarray, phase: float) -> Callable[[np.ndarray], np.ndarray]:
    def wave(points: np.ndarray) -> np.ndarray:
        return amplitude * np.sin(np.asarray(points, dtype=float) @ frequency + phase)

    return wave


def _lifted(base: Callable[[np.ndarray], np.ndarray], lift: float, ripple: np.ndarray):
    # lift * (1 + sin / 2) >= lift / 2 > 0
    def lifted(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return base(points) + lift * (1.0 + 0.5 * np.sin(points @ ripple))

    return lifted


def random_ordered_pair(
    operator: OperatorSpec, rng: np.random.Generator, t0: float = -1.0, t1: float = -0.75
) -> OrderedPair:
    """Random smooth data and a copy lifted by positive amounts in each of f, g and u0."""
    # g carries a cos(t) factor, positive on the interval
    if not -0.5 * np.pi < t0 < t1 < 0.5 * np.pi:
        raise PreconditionError("ordered pairs need -pi/2 < t0 < t1 < pi/2", {"t0": t0, "t1": t1})
    n = operator.n
    g_space = _wave(rng.uniform(0.2, 1.0), rng.uniform(0.5, 3.0, n), rng.uniform(0.0, 2.0 * np.pi))
    f_space = _wave(rng.uniform(0.0, 1.0), rng.uniform(0.5, 3.0, n), rng.uniform(0.0, 2.0 * np.pi))
    u0_space = _wave(rng.uniform(0.0, 1.0), rng.uniform(0.5, 3.0, n), rng.uniform(0.0, 2.0 * np.pi))
    lifts = {key: float(rng.uniform(0.01, 0.5)) for key in ("g", "f", "u0")}
    ripple = rng.uniform(1.0, 4.0, n)

    def build(g_of, f_of, u0_of) -> DirichletProblem:
        return DirichletProblem(
            operator,
            g=lambda points, t: g_of(points) * np.cos(t),
            f=lambda points, t: f_of(points),
            initial=u0_of,
            t0=t0,
            t1=t1,
        )

    lower = build(g_space, f_space, u0_space)
    upper = build(
        _lifted(g_space, lifts["g"], ripple),
        _lifted(f_space, lifts["f"], ripple),
        _lifted(u0_space, lifts["u0"], ripple),
    )
    return OrderedPair(lower, upper, lifts)


def comparison_violation(
    pair: OrderedPair, grid: Grid, scheme: Optional[QuadratureScheme] = None
) -> float:
    """max over the space-time lattice of u_lower - u_upper; <= 0 when comparison holds."""
    cfl = time_lattice(grid, pair.lower.operator, scheme, pair.lower.t0, pair.lower.t1)
    u = solve_dirichlet(pair.lower, grid, scheme, cfl)
    v = solve_dirichlet(pair.upper, grid, scheme, cfl)
    return float(np.max(u.values - v.values))
