"""
Dirichlet solves: per-slice output, discrete maximum principle, residuals and comparison.
"""

import logging
from typing import List

import numpy as np
import pandas as pd

from app.experiments import ExperimentDefinition, lab_objects
from app.lab.evolution import (
    DirichletProblem,
    Stepper,
    comparison_violation,
    random_ordered_pair,
    residual_check,
    solve_dirichlet,
    time_lattice,
)
from app.lab.exceptions import ConfigError
from app.lab.fields import Field, Grid, QuadratureScheme
from app.schemas.config import ExperimentConfig
from app.schemas.experiments import CheckResult, ExperimentOutcome
from app.services.artifact_writer import ArtifactWriter
from app.services.spec_factory import SpecFactory

logger = logging.getLogger(__name__)


def data_range(problem: DirichletProblem, grid: Grid, u: Field, scheme: QuadratureScheme):
    """min/max of everything the scheme reads: initial values, exterior nodes, the box and far levels."""
    stepper = Stepper(problem, grid, scheme)
    exterior = u.values[:, ~stepper.mask]
    lo = min(float(u.values[0].min()), float(exterior.min()) if exterior.size else np.inf)
    hi = max(float(u.values[0].max()), float(exterior.max()) if exterior.size else -np.inf)
    for t in u.times:
        if stepper.plan.outside_points.size:
            box = np.asarray(problem.g(stepper.plan.outside_points, t), dtype=float)
            lo, hi = min(lo, float(box.min())), max(hi, float(box.max()))
        levels = problem.levels(grid, stepper.plan.points, float(t))
        lo, hi = min(lo, float(levels.min())), max(hi, float(levels.max()))
    return lo, hi


def run_solve(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    problem = SpecFactory.problem(config, operator)
    cfl = time_lattice(grid, operator, scheme, problem.t0, problem.t1)
    u = solve_dirichlet(problem, grid, scheme, cfl)
    writer.write_slices("slice", u)

    checks: List[CheckResult] = []
    forcing = config.params.get("problem", {}).get("f")
    if forcing is None or forcing.get("kind") == "zero":
        lo, hi = data_range(problem, grid, u, scheme)
        tol = config.tolerance("maximum_principle", 1e-10)
        excess = max(0.0, float(u.values.max()) - hi, lo - float(u.values.min()))
        checks.append(CheckResult(name="maximum_principle", passed=excess <= tol, value=excess))

    residual_tol = config.tolerance("residual", 1e-2)
    for sense in ("sub", "super"):
        report = residual_check(u, problem, sense, residual_tol, scheme)
        writer.write_json(f"residual_{sense}.json", report)
        checks.append(
            CheckResult(name=f"residual_{sense}", passed=report.passed, hard=False, value=report.max_violation)
        )

    return ExperimentOutcome(
        experiment="solve",
        checks=checks,
        summary={"sup_abs": float(np.abs(u.values).max()), "steps": cfl.steps, "final_time": float(u.times[-1])},
        cfl=cfl.to_dict(),
        flags=["discontinuous_in_time"] if problem.discontinuous_in_time else [],
    )


def run_comparison(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    pairs = int(config.params.get("pairs", 8))
    if pairs < 1:
        raise ConfigError("params.pairs must be at least 1", {"pairs": pairs})
    t0 = float(config.params.get("t0", -1.0))
    t1 = float(config.params.get("t1", -0.75))
    rng = np.random.default_rng(config.seed)
    rows = []
    for k in range(pairs):
        pair = random_ordered_pair(operator, rng, t0, t1)
        violation = comparison_violation(pair, grid, scheme)
        rows.append({"pair": k, "violation": violation, **{f"lift_{key}": v for key, v in pair.lifts.items()}})
        logger.info(f"pair {k}: max(u_lower - u_upper) = {violation:.3e}")
    frame = pd.DataFrame(rows)
    writer.write_frame("comparison.csv", frame)

    worst = float(frame["violation"].max())
    tol = config.tolerance("comparison", 1e-12)
    return ExperimentOutcome(
        experiment="comparison",
        checks=[CheckResult(name="comparison", passed=worst <= tol, value=max(0.0, worst))],
        summary={"pairs": pairs, "worst_violation": worst, "seed": config.seed},
    )


def get_solve_experiments() -> List[ExperimentDefinition]:
    """Returns the evolution experiments."""
    return [
        ExperimentDefinition(
            "solve", "evolution", "Solve a Dirichlet problem by monotone explicit stepping", run_solve
        ),
        ExperimentDefinition(
            "comparison", "evolution", "Randomized ordered pairs in f, g and u0 stay ordered", run_comparison
        ),
    ]
