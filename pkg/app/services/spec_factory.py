"""
Builds lab objects (grids, schemes, operators, problems) from validated configs.
"""

import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
import yaml
from pydantic import ValidationError

from app.lab.evolution import DirichletProblem, PointRule, constant_rule, zero_rule
from app.lab.exceptions import ConfigError
from app.lab.fields import Grid, QuadratureScheme
from app.lab.kernels import Coefficient, KernelSpec, OperatorKind, OperatorSpec, build_coefficient
from app.schemas.config import CoefficientConfig, ExperimentConfig, OperatorConfig

logger = logging.getLogger(__name__)


def _radii(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(points, dtype=float), axis=-1)


def _sine(amplitude: float = 1.0, frequency: float = 1.0, phase: float = 0.0,
          offset: float = 0.0, time_slope: float = 0.0, t0: float = -1.0) -> PointRule:
    def rule(points: np.ndarray, t: float) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        return offset + amplitude * np.sin(frequency * x[..., 0] + phase) + time_slope * (t - t0)

    return rule


def _gaussian(amplitude: float = 1.0, width: float = 1.0, time_slope: float = 0.0,
              t0: float = -1.0) -> PointRule:
    def rule(points: np.ndarray, t: float) -> np.ndarray:
        return amplitude * np.exp(-((_radii(points) / width) ** 2)) * (1.0 + time_slope * (t - t0))

    return rule


def _linear_time(slope: float = 1.0, offset: float = 0.0, t0: float = -1.0) -> PointRule:
    def rule(points: np.ndarray, t: float) -> np.ndarray:
        return np.full(np.asarray(points).shape[0], offset + slope * (t - t0))

    return rule


def _holder_boundary(amplitude: float = 1.0, exponent: float = 0.5, radius: float = 1.0,
                     cap: float = 1.0) -> PointRule:
    """amplitude * min(dist(x, B_radius), cap)^exponent."""

    def rule(points: np.ndarray, t: float) -> np.ndarray:
        dist = np.clip(_radii(points) - radius, 0.0, cap)
        return amplitude * dist**exponent

    return rule


DATUM_FAMILIES: Dict[str, Callable[..., PointRule]] = {
    "zero": lambda: zero_rule,
    "constant": lambda value=0.0: constant_rule(value),
    "sine": _sine,
    "gaussian": _gaussian,
    "linear_time": _linear_time,
    "holder_boundary": _holder_boundary,
}


class SpecFactory:
    """Turns config sections into lab objects."""

    @staticmethod
    def load_config(path: Union[str, Path]) -> ExperimentConfig:
        """Parse a YAML or JSON config file; every failure becomes a ConfigError."""
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}", {"path": str(path)})
        try:
            if path.suffix == ".json":
                tree = json.loads(text)
            else:
                tree = yaml.safe_load(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno}: {e.msg}", {"path": str(path), "line": e.lineno})
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigError(f"{path}: line {line}: {e}", {"path": str(path), "line": line})
        return SpecFactory.from_dict(tree, source=str(path))

    @staticmethod
    def from_dict(tree: Any, source: str = "<config>") -> ExperimentConfig:
        if not isinstance(tree, dict):
            raise ConfigError(f"{source}: top level must be a mapping", {"path": source})
        try:
            return ExperimentConfig.model_validate(tree)
        except ValidationError as e:
            problems = [
                {"key": ".".join(str(part) for part in err["loc"]), "error": err["msg"]}
                for err in e.errors()
            ]
            first = problems[0]
            raise ConfigError(f"{source}: key '{first['key']}': {first['error']}", {"path": source, "errors": problems})

    @staticmethod
    def grid(config: ExperimentConfig) -> Grid:
        g = config.grid
        return Grid(g.n, g.h, g.R_grid)

    @staticmethod
    def scheme(config: ExperimentConfig) -> QuadratureScheme:
        g = config.grid
        return QuadratureScheme(kappa_q=g.kappa_q, compensation_radius=g.compensation_radius)

    @staticmethod
    def coefficient(section: CoefficientConfig) -> Coefficient:
        return build_coefficient(section.family, **section.params)

    @classmethod
    def operator(cls, section: OperatorConfig, n: int) -> OperatorSpec:
        kind = OperatorKind(section.kind)
        if kind is OperatorKind.PUCCI_PLUS:
            return OperatorSpec.pucci_plus(n, section.sigma, section.Lambda)
        if kind is OperatorKind.PUCCI_MINUS:
            return OperatorSpec.pucci_minus(n, section.sigma, section.Lambda)
        rows = [
            [KernelSpec(n, section.sigma, cls.coefficient(k.coefficient), section.Lambda) for k in row]
            for row in section.kernels
        ]
        if kind is OperatorKind.LINEAR:
            return OperatorSpec.linear(rows[0][0])
        return OperatorSpec.infsup(rows)

    @staticmethod
    def datum(spec: Optional[Dict[str, Any]], default: str = "zero") -> PointRule:
        spec = dict(spec or {"kind": default})
        kind = spec.pop("kind", default)
        if kind not in DATUM_FAMILIES:
            raise ConfigError(f"unknown datum kind '{kind}'", {"known": sorted(DATUM_FAMILIES)})
        try:
            return DATUM_FAMILIES[kind](**spec)
        except TypeError as e:
            raise ConfigError(f"datum '{kind}': {e}", {"kind": kind, "params": spec})

    @classmethod
    def problem(cls, config: ExperimentConfig, operator: OperatorSpec,
                section: Optional[Dict[str, Any]] = None) -> DirichletProblem:
        """DirichletProblem from params.problem: g, f, initial, far_level, radius, t0, t1."""
        section = dict(section if section is not None else config.params.get("problem", {}))
        g = cls.datum(section.get("g"))
        f = cls.datum(section.get("f"))
        initial = None
        if section.get("initial") is not None:
            t0 = float(section.get("t0", -1.0))
            initial_rule = cls.datum(section["initial"])
            initial = lambda points: initial_rule(points, t0)  # noqa: E731
        logger.debug(f"problem section: {section}")
        return DirichletProblem(
            operator,
            g,
            f,
            initial,
            far_level=section.get("far_level"),
            radius=float(section.get("radius", 1.0)),
            t0=float(section.get("t0", -1.0)),
            t1=float(section.get("t1", 0.0)),
            discontinuous_in_time=bool(section.get("discontinuous_in_time", False)),
        )
