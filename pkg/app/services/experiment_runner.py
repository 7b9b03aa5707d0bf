"""
Run service shared by the CLI and the HTTP surface.
"""

import logging
import time
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional, Union

from app.config.settings import settings
from app.lab.exceptions import HypothesisViolation
from app.schemas.config import ExperimentConfig
from app.schemas.experiments import RunManifest
from app.services.artifact_writer import ArtifactWriter
from app.services.experiment_registry import ExperimentRegistry
from app.services.spec_factory import SpecFactory

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def code_version() -> str:
    try:
        return version("nonlocal-lab")
    except PackageNotFoundError:
        return "0.1.0"


def resolve_output_dir(config: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> Path:
    """--out, then the config's output_dir, then settings.output_dir/<experiment>-<hash prefix>."""
    if out is not None:
        return Path(out)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(settings.output_dir) / f"{config.experiment}-{config.config_hash()[:12]}"


def run_experiment(
    config: ExperimentConfig,
    out: Optional[Union[str, Path]] = None,
    strict: Optional[bool] = None,
) -> RunManifest:
    """
    Execute one experiment and write its manifest exactly once.

    In strict mode a hypothesis flag makes the run fail; HypothesisViolation is
    raised after the manifest is on disk.
    """
    strict = config.strict if strict is None else strict
    definition = ExperimentRegistry.get_instance().get(config.experiment)
    writer = ArtifactWriter(resolve_output_dir(config, out))
    started = datetime.now(timezone.utc).isoformat()
    start_time = time.perf_counter()
    logger.info(f"Running experiment '{config.experiment}' into {writer.output_dir}")

    outcome = definition.runner(config, writer)

    wall_time = time.perf_counter() - start_time
    violated = strict and bool(outcome.flags)
    exit_code = 0 if outcome.passed and not violated else 1
    for check in outcome.checks:
        if not check.passed:
            level = logging.WARNING if check.hard else logging.INFO
            logger.log(level, f"check '{check.name}' failed (value={check.value}, hard={check.hard})")
    writer.write_json("summary.json", outcome.summary)
    manifest = RunManifest(
        experiment=config.experiment,
        config_hash=config.config_hash(),
        code_version=code_version(),
        started_at=started,
        wall_time=wall_time,
        cfl=outcome.cfl,
        checks={check.name: check.passed for check in outcome.checks},
        passed=outcome.passed,
        strict=strict,
        flags=outcome.flags,
        artifacts=list(writer.artifacts) + [MANIFEST_NAME],
        output_dir=str(writer.output_dir),
        exit_code=exit_code,
    )
    (writer.output_dir / MANIFEST_NAME).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Experiment '{config.experiment}' finished in {wall_time:.2f}s with exit code {exit_code}")

    if violated:
        raise HypothesisViolation(
            f"hypothesis audit failed for '{config.experiment}'",
            {"flags": outcome.flags, "manifest": str(writer.output_dir / MANIFEST_NAME)},
        )
    return manifest


def run_config_file(
    path: Union[str, Path],
    out: Optional[Union[str, Path]] = None,
    strict: Optional[bool] = None,
) -> RunManifest:
    return run_experiment(SpecFactory.load_config(path), out, strict)
