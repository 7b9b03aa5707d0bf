"""
Report schemas returned by the lab's verification and measurement operations.
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class MembershipReport(BaseModel):
    """Sampled L0 / L1 class membership."""
    kind: str = Field(..., description="Class checked: L0 or L1")
    passed: bool = Field(..., description="Whether every sampled inequality holds")
    worst_violation: float = Field(0.0, ge=0.0, description="Largest sampled violation")
    a_min: float = Field(..., description="Minimum sampled coefficient")
    a_max: float = Field(..., description="Maximum sampled coefficient")
    evenness_violation: float = Field(0.0, description="max |a(x,t,y) - a(x,t,-y)|")
    gradient_sup: Optional[float] = Field(None, description="Sampled sup of |DK(y)| |y|^(n+sigma+1)")
    slack: Optional[float] = Field(None, description="Finite-difference slack used by the gradient check")
    lattice: Dict[str, int] = Field(default_factory=dict, description="Lattice sizes in x, t, y")
    normalization: Dict[str, float] = Field(default_factory=dict, description="Kernel normalization constants")


class EllipticityReport(BaseModel):
    """Worst violation of M-(u-v) <= Iu - Iv <= M+(u-v) over sampled nodes."""
    passed: bool
    worst_violation: float = Field(..., ge=0.0)
    nodes: int


class ResidualReport(BaseModel):
    """Sub/supersolution residual r = u_t- - Iu - f on interior nodes."""
    sense: str = Field(..., description="sub or super")
    passed: bool
    max_violation: float = Field(..., ge=0.0, description="Positive part of the violated inequality")
    residual_max: float
    residual_min: float
    location: Optional[Dict[str, Any]] = Field(None, description="Node and time of the worst violation")
    tolerance: float


class BarrierReport(BaseModel):
    """Per-condition outcome of a barrier verification."""
    provenance: str = Field(..., description="lateral or bump")
    passed: bool
    conditions: Dict[str, bool] = Field(default_factory=dict)
    residuals: Dict[str, float] = Field(default_factory=dict, description="Worst residual per condition")
    parameters: Dict[str, float] = Field(default_factory=dict)


class FlatnessRecord(BaseModel):
    """One scale of an improvement-of-flatness sequence."""
    k: int
    radius: float
    a_k: float
    b_k: List[float]
    sup_error: float = Field(..., ge=0.0)
    a_increment: Optional[float] = None
    b_increment: Optional[float] = None
    ratio: Optional[float] = None


class RegularityReport(BaseModel):
    """Seminorms, fitted exponents and flatness records."""
    seminorms: Dict[str, float] = Field(default_factory=dict)
    alpha_hat: Optional[float] = None
    r_squared: Optional[float] = None
    residual: Optional[float] = None
    scales: List[float] = Field(default_factory=list)
    oscillations: List[float] = Field(default_factory=list)
    flatness: List[FlatnessRecord] = Field(default_factory=list)
    lam: Optional[float] = None
    alpha: Optional[float] = None
    fitted_constant: Optional[float] = None
    decay_ratio: Optional[float] = None
    truncated: bool = False
    jump: Optional[Dict[str, Any]] = None


class TimeRegularityReport(BaseModel):
    C0: float
    lipschitz_g: float
    M: float
    modulus: str
    holder_exponent: Optional[float] = None
    holder_constant: Optional[float] = None
    bound_holds: bool
    worst_ratio: float = Field(..., description="max |u(x,t+tau) - u(x,t)| / bound(tau)")
    comparison_holds: bool
    comparison_violation: float
    hypothesis_ok: bool
    quotient_alpha_hat: Optional[float] = None
    quotient_r_squared: Optional[float] = None
    flags: List[str] = Field(default_factory=list)


class CounterexampleReport(BaseModel):
    sigma: float
    C1: float
    halvings: int
    pre_jump_sup: float
    pre_jump_slope: float
    post_jump_slope: float
    predicted_slope: float
    jump_detected: bool
    ring: bool
    dt: float


class NormEstimate(BaseModel):
    """Lower bound for a sup over an infinite class, with its convergence trace."""
    value: float = Field(..., ge=0.0)
    bank_size: int
    seed: int
    trace: List[float] = Field(default_factory=list, description="Running max after each bank member")
    skipped: int = 0
    lower_bound: bool = True
    details: Dict[str, Any] = Field(default_factory=dict)


class WeakConvergenceReport(BaseModel):
    deviations: List[List[float]] = Field(..., description="deviations[k][j] for operator k and member j")
    max_deviation: List[float]
    fitted_slope: Optional[float] = None


class CordesReport(BaseModel):
    eta: float
    l1_reference: MembershipReport
    coefficient_gap: float
    hypothesis_ok: bool
    flatness: RegularityReport
    gradient_alpha_hat: Optional[float] = None
    decay_ratio: Optional[float] = None
    decay_present: bool
    flags: List[str] = Field(default_factory=list)
