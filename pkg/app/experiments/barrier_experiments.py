"""
Barrier search/verification and the boundary-modulus benchmark.
"""

import logging
from typing import List

from app.experiments import ExperimentDefinition, lab_objects
from app.lab.barriers import (
    Modulus,
    bump_barrier,
    compose_initial_modulus,
    compose_lateral_modulus,
    domination_constant,
    fit_modulus_exponent,
    interior_modulus_budget,
    measure_boundary_modulus,
    search_lateral_barrier,
    smooth_bump,
    verify_bump_barrier,
    verify_lateral_barrier,
)
from app.lab.evolution import solve_dirichlet, time_lattice
from app.lab.exceptions import InsufficientDataError
from app.lab.fields import Grid
from app.lab.regularity import initial_pucci_bound
from app.schemas.config import ExperimentConfig
from app.schemas.experiments import CheckResult, ExperimentOutcome
from app.services.artifact_writer import ArtifactWriter
from app.services.spec_factory import SpecFactory

logger = logging.getLogger(__name__)

DEFAULT_BOUNDARY_PROBLEM = {
    "g": {"kind": "holder_boundary", "amplitude": 1.0, "exponent": 0.5},
    "t0": -1.0,
    "t1": 0.0,
}


def run_barrier(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    sigma0 = float(config.params.get("sigma0", 0.5))
    tol = config.tolerance("barrier", 1e-3)
    checks: List[CheckResult] = []

    psi, lateral, tried = search_lateral_barrier(sigma0, grid, Lambda=operator.Lambda, tol=tol, scheme=scheme)
    writer.write_json("lateral.json", {"report": lateral.model_dump(mode="json"), "candidates_tried": tried})
    checks.append(CheckResult(name="lateral_barrier_found", passed=psi is not None, value=float(tried)))
    if psi is not None:
        rescaled = verify_lateral_barrier(psi.scaled(1.5), sigma0, grid, Lambda=operator.Lambda, tol=tol, scheme=scheme)
        checks.append(CheckResult(name="lateral_barrier_scaled", passed=rescaled.passed))

    bump = bump_barrier(smooth_bump, grid, operator.sigma, operator.Lambda, scheme)
    bump_report = verify_bump_barrier(bump, grid, operator.sigma, operator.Lambda, tol, scheme=scheme)
    writer.write_json("bump.json", bump_report)
    checks.append(
        CheckResult(name="bump_barrier", passed=bump_report.passed, value=bump_report.residuals["supersolution"])
    )
    return ExperimentOutcome(
        experiment="barrier",
        checks=checks,
        summary={
            "kappa": psi.kappa if psi is not None else None,
            "lateral_parameters": lateral.parameters,
            "bump_slope": bump.params["slope"],
        },
    )


def _boundary_exponent(config: ExperimentConfig, grid: Grid, writer: ArtifactWriter, suffix: str = ""):
    _, scheme, operator = lab_objects(config)
    problem = SpecFactory.problem(config, operator, config.params.get("problem", DEFAULT_BOUNDARY_PROBLEM))
    cfl = time_lattice(grid, operator, scheme, problem.t0, problem.t1)
    u = solve_dirichlet(problem, grid, scheme, cfl)
    empirical = measure_boundary_modulus(u, problem.radius)
    writer.write_modulus(f"empirical_modulus{suffix}.csv", empirical)
    return problem, u, empirical, fit_modulus_exponent(empirical), cfl


def run_boundary(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    problem, u, empirical, fit, cfl = _boundary_exponent(config, grid, writer)
    checks = [
        CheckResult(
            name="boundary_exponent",
            passed=fit["exponent"] >= config.tolerance("alpha_min", 0.1),
            value=fit["exponent"],
        ),
        CheckResult(
            name="boundary_fit_quality",
            passed=fit["r_squared"] >= config.tolerance("r_squared_min", 0.9),
            value=fit["r_squared"],
        ),
    ]

    g_section = config.params.get("problem", DEFAULT_BOUNDARY_PROBLEM).get("g", {})
    data_exponent = float(g_section.get("exponent", 0.5))
    data_modulus = Modulus.power(float(g_section.get("amplitude", 1.0)), data_exponent)
    sup_u = float(abs(u.values).max())
    kappa = float(config.params.get("kappa", 1.0))
    sigma0 = float(config.params.get("sigma0", operator.sigma))
    initial = compose_initial_modulus(data_modulus, data_modulus, sup_u)
    predicted = compose_lateral_modulus(initial, data_modulus, kappa, sigma0, sup_u)
    writer.write_modulus("predicted_modulus.csv", predicted)
    constant = domination_constant(empirical, predicted)
    logger.info(f"boundary modulus domination constant {constant:.4g}")
    checks.append(CheckResult(name="domination_constant", passed=True, hard=False, value=constant))

    C0 = initial_pucci_bound(problem, grid, scheme)
    alpha = float(config.params.get("interior_alpha", 0.5 * data_exponent))
    _, budget = interior_modulus_budget(predicted, C0, operator.sigma, sigma0, grid.n, alpha)
    writer.write_frame("interior_budget.csv", budget)

    summary = {"fit": fit, "domination_constant": constant, "C0": C0, "sup_u": sup_u}
    if config.params.get("refine", False):
        try:
            _, _, _, fine_fit, _ = _boundary_exponent(config, grid.refined(), writer, suffix="_refined")
            drift = abs(fine_fit["exponent"] - fit["exponent"]) / max(abs(fit["exponent"]), 1e-12)
            summary["refined_fit"] = fine_fit
            checks.append(CheckResult(name="refinement_drift", passed=drift < 0.2, value=drift))
        except InsufficientDataError as e:
            checks.append(CheckResult(name="refinement_drift", passed=False, detail=e.message))
    return ExperimentOutcome(experiment="boundary", checks=checks, summary=summary, cfl=cfl.to_dict())


def get_barrier_experiments() -> List[ExperimentDefinition]:
    """Returns the barrier and boundary-modulus experiments."""
    return [
        ExperimentDefinition(
            "barrier", "barriers_boundary", "Search the lateral barrier family and verify the bump barrier", run_barrier
        ),
        ExperimentDefinition(
            "boundary", "barriers_boundary", "Empirical boundary modulus for Hölder exterior data", run_boundary
        ),
    ]
