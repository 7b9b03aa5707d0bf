"""
Discrete nonlocal operators.

Every operator is evaluated from the same node data: the second differences
at the half-lattice offsets r0 <= |y| <= R_grid, a local second-derivative
estimate for |y| < r0, and one aggregated far node per point carrying the
far mean of u seen from that point.
All off-center weights are nonnegative, so the schemes are monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft
from scipy.special import zeta

from app.config.logger import Logger
from app.lab.exceptions import ParameterError
from app.lab.fields import Field, Grid, QuadratureScheme
from app.lab.kernels import (
    ConstantCoefficient,
    KernelSpec,
    OperatorKind,
    OperatorSpec,
    normalization_metadata,
    sphere_area,
    validate_order,
)
from app.schemas.reports import EllipticityReport

logger = Logger.get_logger(__name__)

# max entries of one (nodes x offsets) block
_BLOCK = 4_000_000


@dataclass(frozen=True, eq=False)
class Stencil:
    """Offsets and weights of the discrete operator for one (n, h, sigma, R_grid)."""

    n: int
    h: float
    sigma: float
    R: float
    offsets: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    near_offsets: np.ndarray
    near_coeffs: np.ndarray
    near_mass: float
    near_point: np.ndarray
    far_mass: float
    far_point: np.ndarray

    @property
    def reach(self) -> int:
        return int(np.max(np.abs(self.offsets)))

    @property
    def diagonal(self) -> float:
        """Weight of u(x) in the bracket before the (2 - sigma) factor."""
        return float(
            2.0 * self.weights.sum()
            + self.near_mass * self.near_coeffs.sum()
            + 2.0 * self.far_mass
        )

    @property
    def total_mass(self) -> float:
        return 0.5 * (2.0 - self.sigma) * self.diagonal


def _near_stencil(n: int, h: float) -> Tuple[np.ndarray, np.ndarray]:
    # q estimates trace(D2u)/n so that q * |y|^2 matches delta on average
    if n == 1:
        return np.array([[1], [-1]]), np.full(2, 1.0 / h**2)
    edges = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])
    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])
    coeffs = np.concatenate([np.full(4, 1.0 / (3.0 * h**2)), np.full(4, 1.0 / (12.0 * h**2))])
    return np.concatenate([edges, corners]), coeffs


@lru_cache(maxsize=64)
def build_stencil(
    n: int, h: float, sigma: float, R: float, kappa_q: float = 2.0, compensation_radius: float = 1.0
) -> Stencil:
    validate_order(sigma, 1.0, n)
    N = int(round(R / h))
    if n == 1:
        j0 = int(np.ceil(kappa_q - 1e-9))
        j = np.arange(j0, N + 1)
        trap = np.full(j.size, h)
        trap[0] = trap[-1] = h / 2.0
        offsets = j[:, None]
        weights = 2.0 * trap * (j * h) ** (-1.0 - sigma)
        # trapezoid of |y|^2 K over [r0, rc] removed from the analytic near mass
        jc = int(min(max(round(compensation_radius / h), j0), N))
        comp_nodes = np.arange(j0, jc + 1)
        comp = np.full(comp_nodes.size, h)
        comp[0] = comp[-1] = h / 2.0
        defect = 2.0 * float(np.sum(comp * (comp_nodes * h) ** (1.0 - sigma))) if jc > j0 else 0.0
        rc = jc * h
        near_point = np.array([j0 * h / 2.0])
    else:
        axis = np.arange(-N, N + 1)
        m = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        r = np.linalg.norm(m, axis=-1)
        half = (m[:, 0] > 0) | ((m[:, 0] == 0) & (m[:, 1] > 0))
        keep = half & (r >= kappa_q - 1e-9) & (r <= N + 1e-9)
        offsets = m[keep]
        radius = r[keep] * h
        weights = 2.0 * h**2 * radius ** (-2.0 - sigma)
        rc = max(compensation_radius, kappa_q * h)
        defect = 2.0 * float(np.sum(h**2 * radius[radius <= rc + 1e-12] ** (-sigma)))
        near_point = np.array([kappa_q * h / 2.0, 0.0])
    near_mass = sphere_area(n) * rc ** (2.0 - sigma) / (2.0 - sigma) - defect
    if near_mass <= 0.0:
        raise ParameterError(
            "near-field weight is not positive for this grid",
            {"n": n, "h": h, "sigma": sigma, "near_mass": near_mass},
        )
    near_offsets, near_coeffs = _near_stencil(n, h)
    far_point = np.zeros(n)
    far_point[0] = R
    logger.debug(f"stencil n={n} h={h} sigma={sigma}: {len(offsets)} offsets, near mass {near_mass:.6g}")
    return Stencil(
        n=n,
        h=h,
        sigma=sigma,
        R=R,
        offsets=offsets,
        y=offsets * h,
        weights=weights,
        near_offsets=near_offsets,
        near_coeffs=near_coeffs,
        near_mass=float(near_mass),
        near_point=near_point,
        far_mass=sphere_area(n) * R ** (-sigma) / sigma,
        far_point=far_point,
    )


def stencil_for(grid: Grid, sigma: float, scheme: Optional[QuadratureScheme] = None) -> Stencil:
    scheme = scheme or QuadratureScheme()
    return build_stencil(grid.n, grid.h, sigma, grid.R, scheme.kappa_q, scheme.compensation_radius)


# ---------------------------------------------------------------------------
# Node data
# ---------------------------------------------------------------------------


@dataclass
class NodeData:
    """Values needed to evaluate any operator at a set of points."""

    points: np.ndarray
    u0: np.ndarray
    q: np.ndarray
    far_delta: np.ndarray
    pair_blocks: Callable[[], Iterator[Tuple[slice, np.ndarray]]]


def _block_size(nodes: int, offsets: int) -> int:
    return max(1, min(offsets, _BLOCK // max(nodes, 1)))


class StencilPlan:
    """
    Gather plan for evaluating at grid nodes.

    The plan lays out an extended array covering the bounding box of the
    evaluation nodes widened by the stencil reach; positions inside the grid
    read the field slice, the rest read the exterior rule.
    """

    def __init__(self, grid: Grid, stencil: Stencil, nodes: np.ndarray):
        self.grid = grid
        self.stencil = stencil
        nodes = np.asarray(nodes, dtype=int).reshape(-1, grid.n)
        self.nodes = nodes
        reach = max(stencil.reach, 1)
        lo = nodes.min(axis=0) - reach
        hi = nodes.max(axis=0) + reach
        self.box_lo = lo
        self.box_shape = tuple(int(v) for v in hi - lo + 1)
        strides = np.cumprod((1,) + self.box_shape[::-1])[:-1][::-1]
        self.strides = strides
        self.centers = (nodes - lo) @ strides
        self.pair_shift = stencil.offsets @ strides
        self.near_shift = stencil.near_offsets @ strides
        box_axes = [np.arange(lo[d], hi[d] + 1) for d in range(grid.n)]
        box_idx = np.stack(np.meshgrid(*box_axes, indexing="ij"), axis=-1).reshape(-1, grid.n)
        inside = np.all((box_idx >= 0) & (box_idx <= 2 * grid.N), axis=-1)
        self.inside = inside
        self.grid_flat = grid.flat_index(box_idx[inside])
        self.outside_points = (box_idx[~inside] - grid.N) * grid.h
        self.points = (nodes - grid.N) * grid.h

    @classmethod
    def for_mask(cls, grid: Grid, stencil: Stencil, mask: np.ndarray) -> "StencilPlan":
        return cls(grid, stencil, np.argwhere(mask))

    def extended(self, data: np.ndarray, exterior: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Fill the extended array from a grid slice and an exterior rule."""
        E = np.empty(int(np.prod(self.box_shape)))
        E[self.inside] = np.asarray(data).reshape(-1)[self.grid_flat]
        if self.outside_points.size:
            E[~self.inside] = exterior(self.outside_points)
        return E

    def node_data(self, E: np.ndarray, far_levels: Any) -> NodeData:
        """Node data from an extended array and the far means seen from each node."""
        c = self.centers
        u0 = E[c]
        q = np.zeros_like(u0)
        for shift, coeff in zip(self.near_shift, self.stencil.near_coeffs):
            q += coeff * (E[c + shift] - u0)
        block = _block_size(c.size, self.pair_shift.size)

        def blocks() -> Iterator[Tuple[slice, np.ndarray]]:
            for start in range(0, self.pair_shift.size, block):
                s = self.pair_shift[start : start + block]
                D = E[c[:, None] + s[None, :]] + E[c[:, None] - s[None, :]] - 2.0 * u0[:, None]
                yield slice(start, start + s.size), D

        return NodeData(self.points, u0, q, 2.0 * (np.asarray(far_levels, dtype=float) - u0), blocks)


def _sampled_node_data(u: Field, stencil: Stencil, points: np.ndarray, t: float) -> NodeData:
    u0 = u.sample(points, t)
    q = np.zeros_like(u0)
    for offset, coeff in zip(stencil.near_offsets, stencil.near_coeffs):
        q += coeff * (u.sample(points + offset * stencil.h, t) - u0)
    block = _block_size(points.shape[0], stencil.y.shape[0])
    n = u.n

    def blocks() -> Iterator[Tuple[slice, np.ndarray]]:
        for start in range(0, stencil.y.shape[0], block):
            y = stencil.y[start : start + block]
            plus = u.sample((points[:, None, :] + y[None, :, :]).reshape(-1, n), t)
            minus = u.sample((points[:, None, :] - y[None, :, :]).reshape(-1, n), t)
            D = (plus + minus).reshape(points.shape[0], -1) - 2.0 * u0[:, None]
            yield slice(start, start + y.shape[0]), D

    levels = u.far_levels(points, stencil.sigma, t)
    return NodeData(points, u0, q, 2.0 * (levels - u0), blocks)


def _as_points(x: Any, n: int) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (n > 1 and arr.ndim == 1)
    return arr.reshape(-1, n), single


def node_data_for(u: Field, stencil: Stencil, points: np.ndarray, t: float) -> NodeData:
    """Grid gather when every point is a grid node, sampling otherwise."""
    coords, on_grid, _ = u.grid.locate(points)
    if np.all(on_grid):
        plan = StencilPlan(u.grid, stencil, np.rint(coords).astype(int))
        data = u.slice(t)
        E = plan.extended(data, lambda p: u.tail.evaluate(p, t))
        return plan.node_data(E, u.far_levels(plan.points, stencil.sigma, t))
    return _sampled_node_data(u, stencil, points, t)


# ---------------------------------------------------------------------------
# Operator rules on node data
# ---------------------------------------------------------------------------


def _split(v: np.ndarray, up: float, down: float) -> np.ndarray:
    return up * np.maximum(v, 0.0) - down * np.maximum(-v, 0.0)


def _coefficient_values(
    kernel: KernelSpec, x: np.ndarray, t: float, y: np.ndarray
) -> np.ndarray | float:
    if isinstance(kernel.coefficient, ConstantCoefficient):
        return kernel.coefficient.value
    return kernel.a(x[:, None, :], t, y[None, :, :])


def _at_point(kernel: KernelSpec, x: np.ndarray, t: float, y: np.ndarray) -> np.ndarray | float:
    values = _coefficient_values(kernel, x, t, y[None, :])
    return values if np.ndim(values) == 0 else np.reshape(values, (-1,))


def linear_values(
    kernels: Sequence[KernelSpec],
    stencil: Stencil,
    data: NodeData,
    coefficient_points: np.ndarray,
    t: float,
) -> np.ndarray:
    """(len(kernels), nodes) values of L_K for every kernel, sharing the node data."""
    xc = coefficient_points
    out = np.zeros((len(kernels), data.u0.size))
    for k, kernel in enumerate(kernels):
        out[k] = stencil.near_mass * _at_point(kernel, xc, t, stencil.near_point) * data.q
        out[k] += stencil.far_mass * _at_point(kernel, xc, t, stencil.far_point) * data.far_delta
    for sl, D in data.pair_blocks():
        w = stencil.weights[sl]
        y = stencil.y[sl]
        for k, kernel in enumerate(kernels):
            A = _coefficient_values(kernel, xc, t, y)
            out[k] += (A * D) @ w if np.ndim(A) else A * (D @ w)
    return (2.0 - stencil.sigma) * out


def pucci_values(stencil: Stencil, data: NodeData, up: float, down: float) -> np.ndarray:
    total = stencil.near_mass * _split(data.q, up, down)
    total = total + stencil.far_mass * _split(data.far_delta, up, down)
    for sl, D in data.pair_blocks():
        total = total + _split(D, up, down) @ stencil.weights[sl]
    return (2.0 - stencil.sigma) * total


def operator_values(
    op: OperatorSpec,
    stencil: Stencil,
    data: NodeData,
    coefficient_points: Optional[np.ndarray] = None,
    t_coefficient: Optional[float] = None,
    t: float = 0.0,
) -> np.ndarray:
    if op.kind is OperatorKind.PUCCI_PLUS:
        return pucci_values(stencil, data, op.Lambda, 1.0 / op.Lambda)
    if op.kind is OperatorKind.PUCCI_MINUS:
        return pucci_values(stencil, data, 1.0 / op.Lambda, op.Lambda)
    xc = data.points if coefficient_points is None else coefficient_points
    tc = t if t_coefficient is None else t_coefficient
    flat = linear_values(op.kernels, stencil, data, xc, tc)
    if op.kind is OperatorKind.LINEAR:
        return flat[0]
    rows = [len(row) for row in op.family]
    if len(set(rows)) == 1:
        return flat.reshape(len(rows), rows[0], -1).max(axis=1).min(axis=0)
    values: List[np.ndarray] = []
    start = 0
    for size in rows:
        values.append(flat[start : start + size].max(axis=0))
        start += size
    return np.min(np.stack(values), axis=0)


def apply_operator(
    op: OperatorSpec,
    u: Field,
    x: Any,
    t: float,
    scheme: Optional[QuadratureScheme] = None,
    coefficient_at: Optional[Tuple[Any, float]] = None,
) -> Any:
    """Evaluate I u at the point(s) x; a scalar comes back for a single point."""
    if u.n != op.n:
        raise ParameterError("field and operator dimensions differ", {"field": u.n, "operator": op.n})
    points, single = _as_points(x, u.n)
    stencil = stencil_for(u.grid, op.sigma, scheme)
    data = node_data_for(u, stencil, points, t)
    xc, tc = None, None
    if coefficient_at is not None:
        xc_raw, tc = coefficient_at
        xc = np.broadcast_to(np.asarray(xc_raw, dtype=float).reshape(-1, u.n), points.shape)
    values = operator_values(op, stencil, data, xc, tc, t)
    return float(values[0]) if single else values


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def second_difference(u: Field, x: Any, t: float, y: Any) -> Any:
    """delta(u, x, t; y) = u(x+y) + u(x-y) - 2u(x)."""
    points, single = _as_points(x, u.n)
    offsets = np.asarray(y, dtype=float).reshape(-1, u.n)
    plus = u.sample(points + offsets, t)
    minus = u.sample(points - offsets, t)
    values = plus + minus - 2.0 * u.sample(points, t)
    return float(values[0]) if single and values.size == 1 else values


def linear_apply(K: KernelSpec, u: Field, x: Any, t: float, q: Optional[QuadratureScheme] = None) -> Any:
    return apply_operator(OperatorSpec.linear(K), u, x, t, q)


def pucci_plus(
    u: Field, x: Any, t: float, sigma: float, Lambda: float, q: Optional[QuadratureScheme] = None
) -> Any:
    return apply_operator(OperatorSpec.pucci_plus(u.n, sigma, Lambda), u, x, t, q)


def pucci_minus(
    u: Field, x: Any, t: float, sigma: float, Lambda: float, q: Optional[QuadratureScheme] = None
) -> Any:
    return apply_operator(OperatorSpec.pucci_minus(u.n, sigma, Lambda), u, x, t, q)


def infsup_apply(I: OperatorSpec, u: Field, x: Any, t: float, q: Optional[QuadratureScheme] = None) -> Any:
    if I.kind in (OperatorKind.LINEAR, OperatorKind.INFSUP) and not I.family:
        raise ParameterError("inf-sup family is empty")
    return apply_operator(I, u, x, t, q)


def frozen_apply(
    I: OperatorSpec,
    u: Field,
    freeze: Tuple[Any, float],
    evaluation: Tuple[Any, float],
    q: Optional[QuadratureScheme] = None,
) -> Any:
    """Operator with coefficients frozen at `freeze`, applied to u around `evaluation`."""
    x, t = evaluation
    return apply_operator(I, u, x, t, q, coefficient_at=freeze)


def ellipticity_audit(
    I: OperatorSpec,
    u: Field,
    v: Field,
    x: Any,
    t: float,
    q: Optional[QuadratureScheme] = None,
    tol: float = 1e-10,
) -> EllipticityReport:
    """Worst violation of M-(u - v) <= Iu - Iv <= M+(u - v) at the points x."""
    diff = np.atleast_1d(apply_operator(I, u, x, t, q)) - np.atleast_1d(apply_operator(I, v, x, t, q))
    w = u - v
    upper = np.atleast_1d(pucci_plus(w, x, t, I.sigma, I.Lambda, q))
    lower = np.atleast_1d(pucci_minus(w, x, t, I.sigma, I.Lambda, q))
    violation = float(max(0.0, np.max(lower - diff), np.max(diff - upper)))
    return EllipticityReport(passed=violation <= tol, worst_violation=violation, nodes=diff.size)


def spectral_reference(
    sigma: float,
    rule: Callable[[np.ndarray], np.ndarray],
    points: Any,
    size: int = 2**16,
    spacing: float = 1.0 / 512.0,
    scale: float = 1.0,
) -> np.ndarray:
    """
    L_K u for n = 1 and a constant coefficient via the Fourier multiplier
    -multiplier * |xi|^sigma on a periodic fine grid, with the periodic
    images of the kernel removed through second order.
    """
    validate_order(sigma)
    L = size * spacing / 2.0
    xs = -L + spacing * np.arange(size)
    values = np.asarray(rule(xs[:, None]), dtype=float).reshape(size)
    xi = 2.0 * np.pi * fft.fftfreq(size, d=spacing)
    multiplier = normalization_metadata(1, sigma)["multiplier"]
    applied = fft.ifft(-multiplier * np.abs(xi) ** sigma * fft.fft(values)).real
    x = np.asarray(points, dtype=float).reshape(-1)
    mass = float(values.sum() * spacing)
    spread = np.array([float(np.sum(values * (xs - p) ** 2) * spacing) for p in x])
    images = 4.0 * mass * (2.0 - sigma) * float(zeta(1.0 + sigma)) / (2.0 * L) ** (1.0 + sigma)
    images += (
        2.0 * (2.0 - sigma) * (1.0 + sigma) * (2.0 + sigma) * float(zeta(3.0 + sigma)) * spread
        / (2.0 * L) ** (3.0 + sigma)
    )
    result = np.interp(x, xs, applied) - images
    return scale * result
