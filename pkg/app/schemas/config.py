"""
Experiment configuration schemas.

A config file is a YAML or JSON tree validated by ExperimentConfig; unknown
keys are rejected so that a typo never silently falls back to a default.
"""

import hashlib
import json
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.lab.kernels import COEFFICIENT_FAMILIES


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(StrictModel):
    """Uniform grid on [-R, R]^n and the near-field quadrature parameters."""
    n: Literal[1, 2] = Field(1, description="Spatial dimension")
    h: float = Field(1.0 / 64.0, gt=0.0, description="Grid spacing")
    R_grid: float = Field(4.0, ge=4.0, description="Half-width of the computational box")
    kappa_q: float = Field(2.0, ge=2.0, description="Near-field radius in grid spacings")
    compensation_radius: float = Field(1.0, gt=0.0, description="Radius of the near-mass lattice correction")


class CoefficientConfig(StrictModel):
    family: str = Field("constant", description="Coefficient family name")
    params: Dict[str, float] = Field(default_factory=dict, description="Keyword parameters of the family")

    @field_validator("family")
    @classmethod
    def validate_family(cls, v: str) -> str:
        if v not in COEFFICIENT_FAMILIES:
            raise ValueError(f"unknown coefficient family '{v}'; known: {sorted(COEFFICIENT_FAMILIES)}")
        return v


class KernelConfig(StrictModel):
    coefficient: CoefficientConfig = Field(default_factory=CoefficientConfig)


class OperatorConfig(StrictModel):
    """linear: one kernel; infsup: rows of kernels (inf over rows, sup within a row)."""
    kind: Literal["linear", "pucci_plus", "pucci_minus", "infsup"] = "linear"
    sigma: float = Field(1.0, gt=0.0, lt=2.0)
    Lambda: float = Field(1.0, ge=1.0)
    kernels: List[List[KernelConfig]] = Field(default_factory=lambda: [[KernelConfig()]])

    @model_validator(mode="after")
    def check_family(self) -> "OperatorConfig":
        if self.kind == "linear" and (len(self.kernels) != 1 or len(self.kernels[0]) != 1):
            raise ValueError("a linear operator takes exactly one kernel")
        if self.kind == "infsup" and (not self.kernels or any(not row for row in self.kernels)):
            raise ValueError("inf-sup operators need nonempty kernel rows")
        return self


class ExperimentConfig(StrictModel):
    experiment: str = Field(..., description="Registered experiment id")
    grid: GridConfig = Field(default_factory=GridConfig)
    operator: OperatorConfig = Field(default_factory=OperatorConfig)
    params: Dict[str, Any] = Field(default_factory=dict, description="Experiment-specific parameters")
    seed: int = Field(0, ge=0)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    strict: bool = False
    output_dir: Optional[str] = None

    @field_validator("tolerances")
    @classmethod
    def validate_tolerances(cls, v: Dict[str, float]) -> Dict[str, float]:
        bad = {k: t for k, t in v.items() if not t > 0.0}
        if bad:
            raise ValueError(f"tolerances must be positive: {bad}")
        return v

    def tolerance(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON dump; output_dir does not enter the hash."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
