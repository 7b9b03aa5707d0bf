"""
Schemas for experiment outcomes, run manifests and the HTTP surface.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class CheckResult(BaseModel):
    """One assertion made by an experiment."""
    name: str = Field(..., description="Check identifier")
    passed: bool
    hard: bool = Field(True, description="Hard checks decide the exit status; soft checks are logged only")
    value: Optional[float] = Field(None, description="Measured quantity behind the check")
    detail: Optional[str] = None


class ExperimentOutcome(BaseModel):
    """What an experiment function hands back to the run service."""
    experiment: str
    checks: List[CheckResult] = Field(default_factory=list)
    summary: Dict[str, Any] = Field(default_factory=dict)
    cfl: Optional[Dict[str, Any]] = None
    flags: List[str] = Field(default_factory=list, description="Hypothesis audit failures")

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks if check.hard)


class RunManifest(BaseModel):
    """Written exactly once per run as manifest.json."""
    experiment: str
    config_hash: str
    code_version: str
    started_at: str
    wall_time: float = Field(..., ge=0.0, description="Seconds")
    cfl: Optional[Dict[str, Any]] = None
    checks: Dict[str, bool] = Field(default_factory=dict)
    passed: bool
    strict: bool = False
    flags: List[str] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    output_dir: str
    exit_code: int


class ExperimentInfo(BaseModel):
    """Registry listing entry."""
    id: str
    group: str
    description: str


class RunRequest(BaseModel):
    """Body of POST /api/v1/experiments/run."""
    config: Dict[str, Any] = Field(..., description="Experiment config tree")
    out: Optional[str] = Field(None, description="Output directory override")
    strict: Optional[bool] = Field(None, description="Override the config's strict flag")
