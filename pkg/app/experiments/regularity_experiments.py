"""
Regularity suite: Hölder exponent fits, flatness sequences, time regularity
and the time-jump counterexample.
"""

import logging
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from app.experiments import ExperimentDefinition, lab_objects
from app.lab.evolution import solve_dirichlet, time_lattice
from app.lab.exceptions import InsufficientDataError
from app.lab.regularity import (
    Cylinder,
    counterexample_experiment,
    fit_holder_exponent,
    flatness_sequence,
    parabolic_holder_seminorm,
    time_regularity_experiment,
)
from app.schemas.config import ExperimentConfig
from app.schemas.experiments import CheckResult, ExperimentOutcome
from app.services.artifact_writer import ArtifactWriter
from app.services.spec_factory import SpecFactory

logger = logging.getLogger(__name__)

SMOOTH_PROBLEM: Dict[str, Any] = {
    "g": {"kind": "sine", "amplitude": 1.0, "frequency": 1.0, "time_slope": 0.5},
    "t0": -1.0,
    "t1": 0.0,
}

TIME_BENCHMARKS: List[Dict[str, Any]] = [
    {"g": {"kind": "linear_time", "slope": 1.0}},
    {"g": {"kind": "sine", "amplitude": 1.0, "time_slope": 0.5}},
    {"g": {"kind": "gaussian", "amplitude": 1.0, "width": 2.0, "time_slope": 0.5}},
]


def _solve(config: ExperimentConfig, section: Dict[str, Any]):
    grid, scheme, operator = lab_objects(config)
    problem = SpecFactory.problem(config, operator, section)
    cfl = time_lattice(grid, operator, scheme, problem.t0, problem.t1)
    return problem, solve_dirichlet(problem, grid, scheme, cfl), cfl


def _center(config: ExperimentConfig, n: int) -> List[float]:
    center = config.params.get("center")
    return [0.0] * n if center is None else [float(c) for c in center]


def run_holder(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    problem, u, cfl = _solve(config, config.params.get("problem", SMOOTH_PROBLEM))
    center = _center(config, u.n)
    sigma = problem.operator.sigma
    checks: List[CheckResult] = []
    try:
        report = fit_holder_exponent(u, center, sigma)
    except InsufficientDataError as e:
        writer.write_json("holder.json", e.to_dict())
        checks.append(CheckResult(name="holder_exponent", passed=False, detail=e.message))
        return ExperimentOutcome(experiment="holder", checks=checks, cfl=cfl.to_dict())

    alpha = float(config.params.get("alpha", min(report.alpha_hat, 1.0)))
    region = Cylinder(tuple(center), 0.5, problem.t1 - 0.5**sigma, problem.t1)
    seminorm = parabolic_holder_seminorm(u, region, alpha, sigma)
    report.seminorms[f"{alpha:.4g}"] = seminorm
    writer.write_json("holder.json", report)
    writer.write_frame("oscillations.csv", pd.DataFrame({"r": report.scales, "osc": report.oscillations}))

    checks.append(
        CheckResult(
            name="holder_exponent",
            passed=report.alpha_hat >= config.tolerance("alpha_min", 0.05),
            value=report.alpha_hat,
        )
    )
    checks.append(CheckResult(name="finite_seminorm", passed=bool(np.isfinite(seminorm)), value=seminorm))
    return ExperimentOutcome(
        experiment="holder",
        checks=checks,
        summary={"alpha_hat": report.alpha_hat, "r_squared": report.r_squared, "seminorm": seminorm},
        cfl=cfl.to_dict(),
    )


def run_flatness(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    problem, u, cfl = _solve(config, config.params.get("problem", SMOOTH_PROBLEM))
    lam = float(config.params.get("lam", 0.5))
    report = flatness_sequence(
        u,
        _center(config, u.n),
        problem.operator.sigma,
        lam=lam,
        alpha=config.params.get("alpha"),
        K_max=int(config.params.get("K_max", 8)),
    )
    writer.write_json("flatness.json", report)
    writer.write_frame(
        "flatness.csv",
        pd.DataFrame(
            {
                "k": [rec.k for rec in report.flatness],
                "radius": [rec.radius for rec in report.flatness],
                "a_k": [rec.a_k for rec in report.flatness],
                "sup_error": [rec.sup_error for rec in report.flatness],
            }
        ),
    )
    decay = report.decay_ratio
    checks = [
        CheckResult(
            name="flatness_decay",
            passed=decay is not None and decay <= config.tolerance("decay_ratio_max", lam),
            value=decay,
        ),
        CheckResult(name="flatness_complete", passed=not report.truncated, hard=False),
    ]
    return ExperimentOutcome(
        experiment="flatness",
        checks=checks,
        summary={"decay_ratio": decay, "fitted_constant": report.fitted_constant, "alpha": report.alpha},
        cfl=cfl.to_dict(),
    )


def run_time_regularity(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    if "problems" in config.params:
        benchmarks = list(config.params["problems"])
    elif "problem" in config.params:
        benchmarks = [config.params["problem"]]
    else:
        benchmarks = TIME_BENCHMARKS
    modulus = config.params.get("modulus", "lipschitz")
    exponent = config.params.get("holder_exponent")
    alpha_min = config.tolerance("quotient_alpha_min", 0.05)
    checks: List[CheckResult] = []
    flags: List[str] = []
    rows = []
    for i, section in enumerate(benchmarks):
        section = {"t0": -1.0, "t1": 0.0, **section}
        problem = SpecFactory.problem(config, operator, section)
        report = time_regularity_experiment(problem, grid, modulus, exponent, scheme=scheme)
        writer.write_json(f"time_regularity_{i}.json", report)
        checks.append(CheckResult(name=f"bound_{i}", passed=report.bound_holds, value=report.worst_ratio))
        checks.append(
            CheckResult(name=f"comparison_{i}", passed=report.comparison_holds, value=report.comparison_violation)
        )
        checks.append(
            CheckResult(
                name=f"quotient_exponent_{i}",
                passed=report.quotient_alpha_hat is not None and report.quotient_alpha_hat > alpha_min,
                value=report.quotient_alpha_hat,
            )
        )
        flags.extend(flag for flag in report.flags if flag not in flags and flag != "bound_violated")
        rows.append({"benchmark": i, "C0": report.C0, "M": report.M, "worst_ratio": report.worst_ratio})
    writer.write_frame("time_regularity.csv", pd.DataFrame(rows))
    return ExperimentOutcome(
        experiment="time-reg",
        checks=checks,
        summary={"benchmarks": rows, "modulus": modulus},
        cfl=time_lattice(grid, operator, scheme).to_dict(),
        flags=flags,
    )


def run_counterexample(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    ring = bool(config.params.get("ring", True))
    report, u = counterexample_experiment(
        operator.sigma,
        C1=float(config.params.get("C1", 0.5)),
        grid=grid,
        ring=ring,
        scheme=scheme,
    )
    writer.write_field("trajectory.csv", u)
    writer.write_json("jump.json", report)
    checks = [
        CheckResult(
            name="pre_jump_sup",
            passed=report.pre_jump_sup <= config.tolerance("pre_jump_sup", 1e-6),
            value=report.pre_jump_sup,
        )
    ]
    if ring:
        checks.append(CheckResult(name="jump_detected", passed=report.jump_detected, value=report.post_jump_slope))
        checks.append(
            CheckResult(
                name="slope_prediction",
                passed=report.post_jump_slope > 0.5 * report.predicted_slope,
                value=report.post_jump_slope / report.predicted_slope,
            )
        )
    else:
        checks.append(CheckResult(name="no_jump_without_ring", passed=not report.jump_detected))
    return ExperimentOutcome(
        experiment="counterexample",
        checks=checks,
        summary=report.model_dump(mode="json"),
        cfl={"dt": report.dt},
        flags=["discontinuous_in_time"] if ring else [],
    )


def get_regularity_experiments() -> List[ExperimentDefinition]:
    """Returns the regularity suite."""
    return [
        ExperimentDefinition("holder", "regularity_lab", "Fit the interior parabolic Hölder exponent", run_holder),
        ExperimentDefinition("flatness", "regularity_lab", "Improvement-of-flatness sequence at a point", run_flatness),
        ExperimentDefinition(
            "time-reg", "regularity_lab", "Time-regularity bound and difference-quotient exponent", run_time_regularity
        ),
        ExperimentDefinition(
            "counterexample", "regularity_lab", "Time derivative jump driven by a discontinuous ring datum",
            run_counterexample,
        ),
    ]
