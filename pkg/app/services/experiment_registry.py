"""
Experiment registry for the nonlocal lab.
"""

import logging
from typing import Dict, List, Optional

from app.experiments import ExperimentDefinition
from app.experiments.barrier_experiments import get_barrier_experiments
from app.experiments.metrics_experiments import get_metrics_experiments
from app.experiments.regularity_experiments import get_regularity_experiments
from app.experiments.solve_experiments import get_solve_experiments
from app.lab.exceptions import ConfigError
from app.schemas.experiments import ExperimentInfo

logger = logging.getLogger(__name__)


class ExperimentRegistry:
    """Collects experiment definitions from every group, once."""

    _instance: Optional["ExperimentRegistry"] = None

    def __init__(self):
        self._experiments: Optional[Dict[str, ExperimentDefinition]] = None

    @classmethod
    def get_instance(cls) -> "ExperimentRegistry":
        if cls._instance is None:
            cls._instance = cls()
        return cls._instance

    def get_experiments(self) -> Dict[str, ExperimentDefinition]:
        if self._experiments is None:
            self._experiments = self._initialize_experiments()
        return self._experiments

    def _initialize_experiments(self) -> Dict[str, ExperimentDefinition]:
        definitions: List[ExperimentDefinition] = []
        definitions.extend(get_solve_experiments())
        definitions.extend(get_barrier_experiments())
        definitions.extend(get_regularity_experiments())
        definitions.extend(get_metrics_experiments())

        registry: Dict[str, ExperimentDefinition] = {}
        for definition in definitions:
            if definition.id in registry:
                raise ValueError(f"duplicate experiment id '{definition.id}'")
            registry[definition.id] = definition
        logger.info(f"Registered {len(registry)} experiments")
        return registry

    def get(self, experiment_id: str) -> ExperimentDefinition:
        experiments = self.get_experiments()
        if experiment_id not in experiments:
            raise ConfigError(
                f"unknown experiment '{experiment_id}'", {"known": sorted(experiments)}
            )
        return experiments[experiment_id]

    def listing(self) -> List[ExperimentInfo]:
        return [
            ExperimentInfo(id=d.id, group=d.group, description=d.description)
            for d in sorted(self.get_experiments().values(), key=lambda d: d.id)
        ]

    def get_experiment_count(self) -> int:
        return len(self.get_experiments())
