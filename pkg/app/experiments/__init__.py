"""Experiment functions exposed to the registry."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

from app.schemas.config import ExperimentConfig
from app.schemas.experiments import ExperimentOutcome
from app.services.spec_factory import SpecFactory

if TYPE_CHECKING:
    from app.services.artifact_writer import ArtifactWriter


@dataclass(frozen=True)
class ExperimentDefinition:
    id: str
    group: str
    description: str
    runner: Callable[[ExperimentConfig, ArtifactWriter], ExperimentOutcome]


def lab_objects(config: ExperimentConfig):
    """(grid, scheme, operator) described by a config."""
    grid = SpecFactory.grid(config)
    return grid, SpecFactory.scheme(config), SpecFactory.operator(config.operator, grid.n)
