"""
Operator metrics suite: bank norms, scale norms, weak convergence and the
Cordes-Nirenberg perturbation runs.
"""

import logging
from typing import List, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.stats import linregress

from app.experiments import ExperimentDefinition, lab_objects
from app.lab.exceptions import ConfigError
from app.lab.kernels import ConstantCoefficient, KernelSpec, OperatorKind, OperatorSpec, sine_x_coefficient
from app.lab.metrics import (
    DifferenceOperator,
    TestBank,
    cordes_nirenberg_experiment,
    generate_test_bank,
    operator_norm,
    perturbed_coefficient,
    scale_norm,
    weak_convergence_test,
)
from app.schemas.config import ExperimentConfig, OperatorConfig
from app.schemas.experiments import CheckResult, ExperimentOutcome
from app.services.artifact_writer import ArtifactWriter
from app.services.spec_factory import SpecFactory

logger = logging.getLogger(__name__)

DEFAULT_BETAS = (1.0, 0.5, 0.25, 0.125)
DEFAULT_WEAK_INDICES = (1, 2, 4, 8, 64)
DEFAULT_NORM_ETAS = (0.01, 0.02, 0.04, 0.08)
DEFAULT_FLATNESS_ETAS = (0.0, 0.05)


def _bank(config: ExperimentConfig, n: int) -> TestBank:
    params = config.params
    return generate_test_bank(
        config.seed,
        int(params.get("bank_size", 32)),
        n=n,
        sigma0=float(params.get("sigma0", 0.5)),
        t=float(params.get("t", 0.0)),
    )


def _trace_frame(trace: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame({"member": np.arange(1, len(trace) + 1), "running_max": list(trace)})


def run_norm(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    bank = _bank(config, grid.n)
    estimate = operator_norm(operator, bank, float(config.params.get("t", 0.0)), scheme)
    writer.write_json("norm.json", estimate)
    writer.write_frame("norm_trace.csv", _trace_frame(estimate.trace))

    trace = np.asarray(estimate.trace)
    half = trace[max(0, trace.size // 2 - 1)]
    drift = abs(estimate.value - half) / estimate.value if estimate.value > 0.0 else 0.0
    checks = [
        CheckResult(name="trace_nondecreasing", passed=bool(np.all(np.diff(trace) >= 0.0))),
        CheckResult(
            name="trace_stabilized",
            passed=drift <= config.tolerance("stabilization", 0.1),
            hard=False,
            value=drift,
        ),
    ]
    return ExperimentOutcome(
        experiment="norm",
        checks=checks,
        summary={"value": estimate.value, "skipped": estimate.skipped, "bank_size": estimate.bank_size},
    )


def run_scale_norm(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    target = operator
    reference = config.params.get("reference")
    if reference is not None:
        try:
            section = OperatorConfig.model_validate({"sigma": operator.sigma, **reference})
        except ValidationError as e:
            raise ConfigError(f"params.reference: {e.errors()[0]['msg']}", {"reference": reference})
        target = DifferenceOperator(operator, SpecFactory.operator(section, grid.n))
    bank = _bank(config, grid.n)
    betas = tuple(float(b) for b in config.params.get("betas", DEFAULT_BETAS))
    estimate = scale_norm(target, bank, betas, float(config.params.get("t", 0.0)), scheme)
    writer.write_json("scale_norm.json", estimate)
    writer.write_frame(
        "scale_norm.csv", pd.DataFrame({"beta": betas, "norm": estimate.details["per_beta"]})
    )
    per_beta = estimate.details["per_beta"]
    checks = [
        CheckResult(name="dominates_every_scale", passed=estimate.value >= max(per_beta), value=estimate.value),
        CheckResult(name="finite", passed=bool(np.isfinite(estimate.value))),
        CheckResult(name="shift_bounds", passed=bool(estimate.details["shift_bounds_hold"]), hard=False),
    ]
    return ExperimentOutcome(
        experiment="scale-norm",
        checks=checks,
        summary={"value": estimate.value, "per_beta": per_beta, "difference": reference is not None},
    )


def run_weak_convergence(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    indices = [int(k) for k in config.params.get("indices", DEFAULT_WEAK_INDICES)]
    sequence = [
        OperatorSpec.linear(KernelSpec(grid.n, operator.sigma, sine_x_coefficient(1.0, 1.0 / k), operator.Lambda))
        for k in indices
    ]
    bank = _bank(config, grid.n)
    report = weak_convergence_test(sequence, bank, float(config.params.get("t", 0.0)), indices, scheme)
    writer.write_json("weak_convergence.json", report)
    writer.write_frame("weak_convergence.csv", pd.DataFrame({"k": indices, "max_deviation": report.max_deviation}))

    expected = float(config.params.get("expected_slope", -1.0))
    window = config.tolerance("slope_window", 0.3)
    slope = report.fitted_slope
    checks = [
        CheckResult(
            name="convergence_slope",
            passed=slope is not None and abs(slope - expected) <= window,
            value=slope,
        )
    ]
    return ExperimentOutcome(
        experiment="weak-conv",
        checks=checks,
        summary={"fitted_slope": slope, "max_deviation": report.max_deviation, "indices": indices},
    )


def run_cordes(config: ExperimentConfig, writer: ArtifactWriter) -> ExperimentOutcome:
    grid, scheme, operator = lab_objects(config)
    if operator.kind is OperatorKind.LINEAR:
        reference = operator.kernels[0].coefficient
    else:
        reference = ConstantCoefficient(1.0)
    Lambda = max(operator.Lambda, 2.0)
    unperturbed = OperatorSpec.linear(KernelSpec(grid.n, operator.sigma, reference, Lambda))
    bank = _bank(config, grid.n)
    betas = tuple(float(b) for b in config.params.get("betas", DEFAULT_BETAS))

    etas = [float(e) for e in config.params.get("norm_etas", DEFAULT_NORM_ETAS)]
    norms = []
    for eta in etas:
        perturbed = OperatorSpec.linear(
            KernelSpec(grid.n, operator.sigma, perturbed_coefficient(reference, eta), Lambda)
        )
        norms.append(scale_norm(DifferenceOperator(perturbed, unperturbed), bank, betas, scheme=scheme).value)
    writer.write_frame("gap_norms.csv", pd.DataFrame({"eta": etas, "scale_norm": norms}))
    checks: List[CheckResult] = []
    positive = np.asarray(norms) > 0.0
    slope = None
    if positive.sum() >= 2:
        slope = float(linregress(np.log(np.asarray(etas)[positive]), np.log(np.asarray(norms)[positive])).slope)
    checks.append(
        CheckResult(
            name="gap_norm_linear_in_eta",
            passed=slope is not None and abs(slope - 1.0) <= config.tolerance("slope_window", 0.15),
            value=slope,
        )
    )

    decays = {}
    flags: List[str] = []
    for eta in config.params.get("flatness_etas", DEFAULT_FLATNESS_ETAS):
        report, _ = cordes_nirenberg_experiment(
            float(eta), operator.sigma, grid, reference, Lambda,
            lam=float(config.params.get("lam", 0.5)), scheme=scheme,
        )
        writer.write_json(f"cordes_eta_{float(eta):g}.json", report)
        decays[float(eta)] = report.decay_ratio
        flags.extend(flag for flag in report.flags if flag not in flags)
    baseline = decays.get(0.0)
    factor = config.tolerance("decay_factor", 2.0)
    for eta, decay in decays.items():
        if eta == 0.0:
            continue
        ratio = decay / baseline if decay is not None and baseline else None
        checks.append(
            CheckResult(
                name=f"decay_within_factor_{eta:g}",
                passed=ratio is not None and 1.0 / factor <= ratio <= factor,
                value=ratio,
            )
        )
    return ExperimentOutcome(
        experiment="cordes",
        checks=checks,
        summary={
            "etas": etas,
            "scale_norms": norms,
            "slope": slope,
            "decay_ratios": {f"{k:g}": v for k, v in decays.items()},
        },
        flags=flags,
    )


def get_metrics_experiments() -> List[ExperimentDefinition]:
    """Returns the operator metrics suite."""
    return [
        ExperimentDefinition("norm", "operator_metrics", "Operator norm over a seeded test-function bank", run_norm),
        ExperimentDefinition(
            "scale-norm", "operator_metrics", "Scale norm over a dyadic rescaling lattice", run_scale_norm
        ),
        ExperimentDefinition(
            "weak-conv", "operator_metrics", "Weak convergence of a_k = 1 + sin(x)/k over the bank",
            run_weak_convergence,
        ),
        ExperimentDefinition(
            "cordes", "operator_metrics", "Cordes-Nirenberg perturbation: gap norms and flatness persistence",
            run_cordes,
        ),
    ]
