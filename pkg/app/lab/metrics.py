"""
Operator metrics: norms over test-function banks, parabolic and general
rescalings, weak convergence and the Cordes-Nirenberg perturbation run.

Norms are maxima over finite banks, so every value is a lower bound for the
supremum over the full class and is returned with its running-max trace.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import linregress

from app.config.logger import Logger
from app.lab.evolution import DirichletProblem, solve_dirichlet
from app.lab.exceptions import DivergenceError, InsufficientDataError, ParameterError
from app.lab.fields import Field, Grid, QuadratureScheme, TailModel
from app.lab.kernels import (
    Coefficient,
    ConstantCoefficient,
    FunctionCoefficient,
    KernelSpec,
    OperatorKind,
    OperatorSpec,
    SamplePlan,
    WeightOmega,
    check_L1_membership,
    omega_l1_norm,
    shift_ratio_bound,
    shifted_norm_bound,
)
from app.lab.nonlocal_eval import apply_operator, pucci_minus, pucci_plus
from app.lab.regularity import fit_holder_exponent, flatness_sequence
from app.schemas.reports import CordesReport, NormEstimate, WeakConvergenceReport

logger = Logger.get_logger(__name__)

TAIL_DECAY_MARGIN = 0.1
CENTER_SPACING = 1.0 / 8.0


# ---------------------------------------------------------------------------
# Test-function bank
# ---------------------------------------------------------------------------


def _smoothstep(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True, eq=False)
class BankMember:
    """
    Quadratic parabolic polynomial p on B_radius(center) x (t - tau, t],
    blended through a C^2 cutoff into an oscillating tail decaying like
    |y|^-(n + sigma0 + 0.1).
    """

    center: np.ndarray
    t: float
    radius: float
    tau: float
    c0: float
    gradient: np.ndarray
    hessian: np.ndarray
    time_slope: float
    tail_amplitude: float
    tail_frequency: float
    tail_phase: float
    tail_decay: float

    def polynomial(self, points: np.ndarray, t: float) -> np.ndarray:
        z = np.asarray(points, dtype=float) - self.center
        quad = 0.5 * np.einsum("...i,ij,...j->...", z, self.hessian, z)
        return self.c0 + z @ self.gradient + quad + self.time_slope * (t - self.t)

    def tail(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        r = np.linalg.norm(points, axis=-1)
        envelope = np.minimum(1.0, np.maximum(r, 1e-300) ** -self.tail_decay)
        return self.tail_amplitude * envelope * np.cos(self.tail_frequency * points[..., 0] + self.tail_phase)

    def __call__(self, points: np.ndarray, t: float) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        dist = np.linalg.norm(points - self.center, axis=-1)
        phi = 1.0 - _smoothstep((dist - self.radius) / self.radius)
        return phi * self.polynomial(points, t) + (1.0 - phi) * self.tail(points)

    def field(self, grid: Grid, times: Optional[Sequence[float]] = None) -> Field:
        times = [self.t] if times is None else list(times)
        return Field.from_function(grid, self, times, TailModel.explicit(self))

    def quadratic_ratio(self, grid: Grid, x) -> float:
        """
        Sampled sup over B1(x) of |v(y) - v(x) - (y - x) . Dv(x)| / |y - x|^2 for x
        in the polynomial ball, where Dv(x) = gradient + hessian (x - center).
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        slope = self.gradient + self.hessian @ (x - self.center)
        z = grid.points - x
        dist = np.linalg.norm(z, axis=-1)
        near = (dist > 0.0) & (dist <= 1.0)
        if not near.any():
            return 0.0
        remainder = self(grid.points[near], self.t) - self(x[None, :], self.t)[0] - z[near] @ slope
        return float(np.max(np.abs(remainder) / dist[near] ** 2))

    def normalization(self, grid: Grid, omega: WeightOmega) -> Tuple[float, float]:
        """(||v(., t)||_{L1(omega)}, sampled quadratic remainder ratio at the center)."""
        norm = omega_l1_norm(self.field(grid), self.t, omega)
        return norm, self.quadratic_ratio(grid, self.center)


@dataclass(frozen=True, eq=False)
class TestBank:
    """
    Seeded bank of test functions with their minimal normalization constants M
    at the centers and their L1(omega) norms.
    """

    __test__ = False

    members: Tuple[BankMember, ...]
    M: Tuple[float, ...]
    seed: int
    grid: Grid
    sigma0: float
    norms: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.members)

    @property
    def omega(self) -> WeightOmega:
        return WeightOmega.for_lower_order(self.grid.n, self.sigma0)

    def reordered(self, order: Sequence[int]) -> "TestBank":
        return TestBank(
            tuple(self.members[i] for i in order), tuple(self.M[i] for i in order),
            self.seed, self.grid, self.sigma0, tuple(self.norms[i] for i in order),
        )


def default_bank_grid(n: int) -> Grid:
    return Grid(n, 1.0 / 32.0 if n == 1 else 1.0 / 8.0, 4.0)


def generate_test_bank(
    seed: int,
    size: int,
    n: int = 1,
    sigma0: float = 0.5,
    t: float = 0.0,
    grid: Optional[Grid] = None,
    coefficient_bound: float = 1.0,
    center_extent: float = 0.5,
) -> TestBank:
    """Deterministic bank from numpy's default generator seeded with `seed`."""
    if size < 1:
        raise ParameterError(f"bank size must be >= 1, got {size}")
    grid = grid or default_bank_grid(n)
    if grid.n != n:
        raise ParameterError("bank grid dimension differs from n", {"grid": grid.n, "n": n})
    rng = np.random.default_rng(seed)
    omega = WeightOmega.for_lower_order(n, sigma0)
    lattice = np.arange(-center_extent, center_extent + 1e-12, CENTER_SPACING)
    members: List[BankMember] = []
    M: List[float] = []
    norms: List[float] = []
    for _ in range(size):
        center = rng.choice(lattice, size=n)
        half = rng.uniform(-coefficient_bound, coefficient_bound, size=(n, n))
        member = BankMember(
            center=center,
            t=t,
            radius=float(rng.uniform(0.25, 0.5)),
            tau=float(rng.uniform(0.1, 0.5)),
            c0=float(rng.uniform(-coefficient_bound, coefficient_bound)),
            gradient=rng.uniform(-coefficient_bound, coefficient_bound, size=n),
            hessian=0.5 * (half + half.T),
            time_slope=float(rng.uniform(-coefficient_bound, coefficient_bound)),
            tail_amplitude=float(rng.uniform(-coefficient_bound, coefficient_bound)),
            tail_frequency=float(rng.uniform(0.0, 4.0)),
            tail_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
            tail_decay=n + sigma0 + TAIL_DECAY_MARGIN,
        )
        members.append(member)
        norm, ratio = member.normalization(grid, omega)
        norms.append(norm)
        M.append(max(norm, ratio))
    logger.info(f"generated bank: seed={seed} size={size} n={n} M in [{min(M):.3g}, {max(M):.3g}]")
    return TestBank(tuple(members), tuple(M), seed, grid, sigma0, tuple(norms))


# ---------------------------------------------------------------------------
# Operators as evaluation objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DifferenceOperator:
    """I_1 - I_2 evaluated node by node."""

    first: OperatorSpec
    second: OperatorSpec

    def __post_init__(self) -> None:
        if self.first.n != self.second.n or self.first.sigma != self.second.sigma:
            raise ParameterError("difference operands must share n and sigma")

    @property
    def n(self) -> int:
        return self.first.n

    @property
    def sigma(self) -> float:
        return self.first.sigma

    def apply(self, u: Field, x, t: float, scheme: Optional[QuadratureScheme] = None):
        return apply_operator(self.first, u, x, t, scheme) - apply_operator(self.second, u, x, t, scheme)


Evaluable = Union[OperatorSpec, DifferenceOperator]


def _evaluate(I: Evaluable, u: Field, x, t: float, scheme: Optional[QuadratureScheme]):
    if isinstance(I, DifferenceOperator):
        return I.apply(u, x, t, scheme)
    return apply_operator(I, u, x, t, scheme)


def rescale_operator(I: Evaluable, beta: float) -> Evaluable:
    """
    Parabolic rescaling I_beta u(x,t) = beta^sigma (I u(beta^-1 ., beta^-sigma .))(beta x, beta^sigma t);
    on kernels K_beta(x,t;y) = beta^(n+sigma) K(beta x, beta^sigma t; beta y).
    """
    if not 0.0 < beta <= 1.0:
        raise ParameterError(f"beta must lie in (0, 1], got {beta}", {"beta": beta})
    if isinstance(I, DifferenceOperator):
        return DifferenceOperator(rescale_operator(I.first, beta), rescale_operator(I.second, beta))
    if beta == 1.0 or I.kind in (OperatorKind.PUCCI_PLUS, OperatorKind.PUCCI_MINUS):
        return I
    return I.map_kernels(lambda k: k.with_coefficient(k.coefficient.rescaled(beta, I.sigma)))


def rescale_general(I: Evaluable, amplitude: float, beta: float, gamma: float) -> Evaluable:
    """
    I_{alpha,beta,gamma} u(x,t) = alpha gamma I(alpha^-1 u(beta^-1 ., gamma^-1 .))(beta x, gamma t),
    i.e. K(x,t;y) -> gamma beta^n K(beta x, gamma t; beta y). Positive homogeneity
    makes the amplitude drop out.
    """
    if amplitude <= 0.0 or beta <= 0.0 or gamma <= 0.0:
        raise ParameterError(
            "rescaling parameters must be positive",
            {"amplitude": amplitude, "beta": beta, "gamma": gamma},
        )
    if isinstance(I, DifferenceOperator):
        return DifferenceOperator(
            rescale_general(I.first, amplitude, beta, gamma),
            rescale_general(I.second, amplitude, beta, gamma),
        )
    factor = gamma * beta ** (-I.sigma)
    if I.kind in (OperatorKind.PUCCI_PLUS, OperatorKind.PUCCI_MINUS):
        if abs(factor - 1.0) > 1e-14:
            raise ParameterError(
                "Pucci operators are invariant only under parabolic rescaling",
                {"beta": beta, "gamma": gamma, "sigma": I.sigma},
            )
        return I
    return I.map_kernels(lambda k: k.with_coefficient(k.coefficient.rescaled(beta, None, gamma, factor)))


def scaled_operator(I: OperatorSpec, c: float) -> OperatorSpec:
    """Every member kernel multiplied by c."""
    if I.kind in (OperatorKind.PUCCI_PLUS, OperatorKind.PUCCI_MINUS):
        raise ParameterError("Pucci operators carry no kernel to scale")
    return I.map_kernels(lambda k: k.scaled(c))


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------


def interior_eval_points(grid: Grid, radius: float = 1.0) -> np.ndarray:
    """Grid nodes with |x| < radius."""
    return grid.points[grid.interior_mask(radius).reshape(-1)]


def member_normalization(member: BankMember, bank: TestBank, norm: float, x) -> float:
    """
    M for `member` seen from x: the larger of its quadratic remainder ratio at x
    and the omega-shift bound on ||v(x + .)||_{L1(omega)}.
    """
    ratio = shift_ratio_bound(bank.omega, x, bank.grid.points)
    return max(ratio * norm, member.quadratic_ratio(bank.grid, x))


def _member_values(
    I: Evaluable,
    bank: TestBank,
    t: float,
    scheme: Optional[QuadratureScheme],
    eval_points: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, int]:
    """
    max over eval points in each member's polynomial ball of |I(v, x, t)| / (1 + M(x));
    NaN for skipped members and for members with no eval point in their ball.
    """
    grid = bank.grid
    if eval_points is None:
        eval_points = interior_eval_points(grid)
    eval_points = np.asarray(eval_points, dtype=float).reshape(-1, grid.n)
    out = np.full(len(bank), np.nan)
    skipped = 0
    for j, (member, norm) in enumerate(zip(bank.members, bank.norms)):
        dist = np.linalg.norm(eval_points - member.center, axis=-1)
        points = eval_points[dist <= member.radius + 1e-12]
        if points.shape[0] == 0:
            continue
        try:
            field = member.field(grid, [t])
            values = np.atleast_1d(_evaluate(I, field, points, t, scheme))
        except (DivergenceError, FloatingPointError) as exc:
            logger.warning(f"bank member {j} skipped: {exc}")
            skipped += 1
            continue
        if not np.all(np.isfinite(values)):
            logger.warning(f"bank member {j} skipped: non-finite evaluation")
            skipped += 1
            continue
        M = np.array([member_normalization(member, bank, norm, x) for x in points])
        out[j] = float(np.max(np.abs(values) / (1.0 + M)))
    return out, skipped


def _running_max(values: np.ndarray) -> List[float]:
    return np.maximum.accumulate(np.nan_to_num(values, nan=0.0)).tolist()


def operator_norm(
    I: Evaluable,
    bank: TestBank,
    t: float = 0.0,
    scheme: Optional[QuadratureScheme] = None,
    eval_points: Optional[np.ndarray] = None,
) -> NormEstimate:
    """
    max over the bank and the eval points of |I(v, x, t)| / (1 + M(x)). Eval points
    default to the grid nodes in B1; each member is read where it is a polynomial.
    """
    values, skipped = _member_values(I, bank, t, scheme, eval_points)
    trace = _running_max(values)
    return NormEstimate(
        value=trace[-1],
        bank_size=len(bank),
        seed=bank.seed,
        trace=trace,
        skipped=skipped,
        details={"M_min": min(bank.M), "M_max": max(bank.M), "t": t},
    )


def scale_norm(
    I: Evaluable,
    bank: TestBank,
    betas: Sequence[float] = (1.0, 0.5, 0.25, 0.125),
    t: float = 0.0,
    scheme: Optional[QuadratureScheme] = None,
    eval_points: Optional[np.ndarray] = None,
) -> NormEstimate:
    """
    max over the beta lattice of operator_norm(rescale_operator(I, beta)); the
    details carry, per member, the measured norm of v(center + .) against the
    shift bound the normalization relies on.
    """
    if not betas:
        raise ParameterError("beta lattice is empty")
    rows = []
    skipped = 0
    for beta in betas:
        values, dropped = _member_values(rescale_operator(I, beta), bank, t, scheme, eval_points)
        rows.append(values)
        skipped += dropped
    table = np.nan_to_num(np.vstack(rows), nan=0.0)
    per_beta = table.max(axis=1)
    trace = _running_max(table.max(axis=0))
    shifts = [
        shifted_norm_bound(member.field(bank.grid, [t]), t, bank.omega, member.center) for member in bank.members
    ]
    logger.info(f"scale norm over {len(betas)} scales: {trace[-1]:.6g}")
    return NormEstimate(
        value=trace[-1],
        bank_size=len(bank),
        seed=bank.seed,
        trace=trace,
        skipped=skipped,
        details={
            "betas": list(betas),
            "per_beta": per_beta.tolist(),
            "shifted_norms": [s["shifted_norm"] for s in shifts],
            "shift_bounds": [s["bound"] for s in shifts],
            "shift_bounds_hold": all(s["shifted_norm"] <= s["bound"] * (1.0 + 1e-6) for s in shifts),
        },
    )


def coefficient_gap_majorant(
    u: Field, x, t: float, sigma: float, eta: float, scheme: Optional[QuadratureScheme] = None
) -> np.ndarray:
    """
    eta * (2 - sigma) * integral of |delta| K_0, the bound on |L_a u - L_b u|
    when |a - b| <= eta; computed as eta * (M+_2 - M-_2) / 1.5.
    """
    upper = np.atleast_1d(pucci_plus(u, x, t, sigma, 2.0, scheme))
    lower = np.atleast_1d(pucci_minus(u, x, t, sigma, 2.0, scheme))
    return eta * (upper - lower) / 1.5


# ---------------------------------------------------------------------------
# Weak convergence
# ---------------------------------------------------------------------------


def half_cylinder(member: BankMember, grid: Grid, t: float, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid nodes in B_{r/2}(center) and the parabolic lattice times t - k h^sigma
    inside (t - tau/2, t], newest first.
    """
    dist = np.linalg.norm(grid.points - member.center, axis=-1)
    points = grid.points[dist <= member.radius / 2.0 + 1e-12]
    dt = grid.h**sigma
    steps = int(np.ceil(0.5 * member.tau / dt - 1e-9))
    times = t - dt * np.arange(steps)
    return points, times


def weak_convergence_test(
    sequence: Sequence[Evaluable],
    bank: TestBank,
    t: float = 0.0,
    indices: Optional[Sequence[float]] = None,
    scheme: Optional[QuadratureScheme] = None,
) -> WeakConvergenceReport:
    """
    deviations[k][j] = max over B_{r/2}(x) x (t - tau/2, t] of |I_k v_j - I_last v_j|,
    read on every grid node and lattice time of the half cylinder; the last
    operator stands in for the limit.
    """
    if not sequence:
        raise ParameterError("operator sequence is empty")
    sigma = sequence[0].sigma
    if any(op.n != bank.grid.n or op.sigma != sigma for op in sequence):
        raise ParameterError("operators in a weak-convergence test must share n and sigma")
    limit = sequence[-1]
    deviations = np.zeros((len(sequence), len(bank)))
    for j, member in enumerate(bank.members):
        points, times = half_cylinder(member, bank.grid, t, sigma)
        field = member.field(bank.grid, np.sort(times))
        for s in times:
            reference = np.atleast_1d(_evaluate(limit, field, points, s, scheme))
            for k, op in enumerate(sequence[:-1]):
                values = np.atleast_1d(_evaluate(op, field, points, s, scheme))
                deviations[k, j] = max(deviations[k, j], float(np.max(np.abs(values - reference))))
    worst = deviations.max(axis=1)
    k_axis = np.arange(1, len(sequence) + 1, dtype=float) if indices is None else np.asarray(indices, dtype=float)
    usable = worst[:-1] > 0.0
    slope = None
    if usable.sum() >= 2:
        slope = float(linregress(np.log(k_axis[:-1][usable]), np.log(worst[:-1][usable])).slope)
    return WeakConvergenceReport(
        deviations=deviations.tolist(), max_deviation=worst.tolist(), fitted_slope=slope
    )


# ---------------------------------------------------------------------------
# Cordes-Nirenberg perturbation
# ---------------------------------------------------------------------------


def perturbed_coefficient(reference: Coefficient, eta: float) -> FunctionCoefficient:
    """a(x, t, y) = a_0(x, t, y) (1 + eta sin(x_1))."""

    def rule(x, t, y):
        return reference(x, t, y) * (1.0 + eta * np.sin(np.asarray(x)[..., 0]))

    return FunctionCoefficient(
        rule,
        "cordes_perturbation",
        translation_invariant_in_space=eta == 0.0 and reference.translation_invariant_in_space,
        translation_invariant_in_time=reference.translation_invariant_in_time,
        params={"eta": eta, "reference": reference.describe()},
    )


def _default_datum(points: np.ndarray, t: float) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    return np.sin(x[..., 0]) + 0.5


def spatial_quotient(u: Field, axis: int = 0) -> Field:
    """Central difference quotients of u along one space axis, one-sided at the box edges."""
    values = np.gradient(u.values, u.grid.h, axis=axis + 1)
    return Field(u.grid, values, u.times, TailModel.zero())


def cordes_nirenberg_experiment(
    eta: float,
    sigma: float = 1.5,
    grid: Optional[Grid] = None,
    reference: Optional[Coefficient] = None,
    Lambda: float = 2.0,
    g: Callable[[np.ndarray, float], np.ndarray] = _default_datum,
    eta_max: float = 0.25,
    lam: float = 0.5,
    scheme: Optional[QuadratureScheme] = None,
) -> Tuple[CordesReport, Field]:
    """
    Solve u_t - L_a u = 0 in B1 x (-1, 0] with a = a_0 (1 + eta sin x_1); the
    difference quotients of u along x_1 get the flatness sequence at the origin
    and the Hölder exponent fit.
    """
    if not 0.0 <= eta < 1.0:
        raise ParameterError(f"eta must lie in [0, 1), got {eta}", {"eta": eta})
    if not 1.0 < sigma < 2.0:
        raise ParameterError(f"C^(1,alpha) behavior needs sigma in (1, 2), got {sigma}")
    grid = grid or Grid(1, 1.0 / 64.0, 4.0)
    reference = reference or ConstantCoefficient(1.0)
    flags: List[str] = []

    l1_report = check_L1_membership(
        KernelSpec(grid.n, sigma, reference, Lambda), SamplePlan.lattice(grid.n, count=8)
    )
    if not l1_report.passed:
        flags.append("reference_not_in_L1")
    coefficient = perturbed_coefficient(reference, eta)
    plan = SamplePlan.lattice(grid.n, count=12)
    X, T, Y = plan.xs[:, None, None, :], plan.ts[None, :, None], plan.ys[None, None, :, :]
    gap = float(np.max(np.abs(coefficient(X, T, Y) - reference(X, T, Y))))
    if gap > eta * (1.0 + 1e-12) + 1e-15:
        flags.append("coefficient_gap_exceeds_eta")
    if eta > eta_max:
        flags.append("eta_above_smallness_threshold")
    hypothesis_ok = not flags
    if not hypothesis_ok:
        logger.warning(f"Cordes-Nirenberg hypotheses violated for eta={eta}: {flags}")

    a_min, a_max = l1_report.a_min * (1.0 - eta), l1_report.a_max * (1.0 + eta)
    Lambda_run = max(Lambda, a_max, 1.0 / a_min)
    operator = OperatorSpec.linear(KernelSpec(grid.n, sigma, coefficient, Lambda_run))
    problem = DirichletProblem(operator, g)
    u = solve_dirichlet(problem, grid, scheme)

    origin = np.zeros(grid.n)
    gradient = spatial_quotient(u)
    flatness = flatness_sequence(gradient, origin, sigma, lam=lam)
    try:
        gradient_alpha = fit_holder_exponent(gradient, origin, sigma).alpha_hat
    except InsufficientDataError as exc:
        logger.warning(f"gradient exponent unavailable: {exc.message}")
        gradient_alpha = None
    decay = flatness.decay_ratio
    decay_present = decay is not None and decay < lam
    logger.info(f"Cordes-Nirenberg eta={eta}: decay ratio {decay}, gradient alpha {gradient_alpha}")
    report = CordesReport(
        eta=eta,
        l1_reference=l1_report,
        coefficient_gap=gap,
        hypothesis_ok=hypothesis_ok,
        flatness=flatness,
        gradient_alpha_hat=gradient_alpha,
        decay_ratio=decay,
        decay_present=decay_present,
        flags=flags,
    )
    return report, u
