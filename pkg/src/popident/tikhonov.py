"""Variational recovery of the growth rate p from total-mass data.

Two forward operators are available: the full one maps p to the solved
rho, the perturbed one substitutes the measured cumulative mass into the
growth exponent so that each time node becomes an explicit integral. Both
expose their exact discrete Jacobians, adjoints are exact transposes in
the discrete H1/L2 geometries, and `irgn_minimize` runs an iteratively
regularized Gauss-Newton loop with a Morozov discrepancy stop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg as sla

from .model import (
    EXP_LIMIT,
    ExponentOverflowError,
    ForwardSolution,
    ModelInstance,
    ParameterField,
    SpatialGrid,
    TimeGrid,
    cumulative_trapezoid,
    integrate_space,
    solve_forward,
)
from .observations import PopulationMeasurement

FULL = "full"
PERTURBED = "perturbed"


@dataclass(eq=False)
class H1Machinery:
    """Discrete H1 inner product on a spatial grid.

    gram = stiffness + mass: first-differences stiffness (natural Neumann
    closure, annihilates constants) plus trapezoid mass. Symmetric positive
    definite; a banded Cholesky factorization backs `solve`.
    """

    grid: SpatialGrid
    gram: np.ndarray
    _factor: np.ndarray

    @classmethod
    def build(cls, grid: SpatialGrid) -> "H1Machinery":
        n = grid.n_points
        h = grid.h
        gram = np.zeros((n, n))
        inv_h = 1.0 / h
        main = np.full(n, 2.0 * inv_h)
        main[0] = main[-1] = inv_h
        gram[np.arange(n), np.arange(n)] = main + grid.trapezoid_weights
        off = np.full(n - 1, -inv_h)
        gram[np.arange(n - 1), np.arange(1, n)] = off
        gram[np.arange(1, n), np.arange(n - 1)] = off
        # upper banded storage, factored once for repeated solves
        bands = np.zeros((2, n))
        bands[0, 1:] = off
        bands[1] = gram[np.arange(n), np.arange(n)]
        try:
            factor = sla.cholesky_banded(bands)
        except sla.LinAlgError as exc:  # pragma: no cover - configuration bug
            raise RuntimeError("H1 gram matrix is not positive definite") from exc
        return cls(grid=grid, gram=gram, _factor=factor)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return sla.cho_solve_banded((self._factor, False), rhs)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.gram @ v))

    def norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.inner(u, u), 0.0))


@dataclass(eq=False)
class ForwardOperator:
    """Map from a growth-rate field to the total-mass history.

    variant "full" solves the coupled fixed-point problem; "perturbed"
    freezes the cumulative mass R_data (built from measured rho) inside the
    exponent, which removes the inner nonlinearity entirely.
    """

    variant: str
    d: ParameterField
    n0: ParameterField
    tg: TimeGrid
    R_data: Optional[np.ndarray] = None
    fp_tol: float = 1e-12
    max_inner: int = 100

    def __post_init__(self):
        if self.variant not in (FULL, PERTURBED):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d.grid != self.n0.grid:
            raise ValueError("d and n0 must share one grid")
        if self.variant == PERTURBED:
            if self.R_data is None:
                raise ValueError("perturbed variant needs R_data")
            self.R_data = np.asarray(self.R_data, dtype=float)
            if self.R_data.shape != (self.tg.n_steps + 1,):
                raise ValueError("R_data length must match the time grid")
            if self.R_data[0] != 0.0:
                raise ValueError("R_data[0] must be 0")

    @property
    def grid(self) -> SpatialGrid:
        return self.n0.grid

    @classmethod
    def full(cls, d, n0, tg, fp_tol: float = 1e-12, max_inner: int = 100):
        return cls(FULL, d, n0, tg, fp_tol=fp_tol, max_inner=max_inner)

    @classmethod
    def perturbed(cls, d, n0, tg, rho_measured: np.ndarray):
        R = cumulative_trapezoid(np.asarray(rho_measured, dtype=float), tg.dt)
        return cls(PERTURBED, d, n0, tg, R_data=R)

    def _field(self, values: np.ndarray) -> ParameterField:
        return ParameterField(self.grid, values)


def _exp_matrix(op: ForwardOperator, p: np.ndarray, R: np.ndarray) -> np.ndarray:
    """exp(t_k * p_i - d_i * R_k) for all time nodes k and space nodes i."""
    t = op.tg.nodes
    expo = np.outer(t, p) - np.outer(R, op.d.values)
    m = float(np.max(np.abs(expo), initial=0.0))
    if m > EXP_LIMIT:
        raise ExponentOverflowError(
            f"growth exponent reaches {m:.3g} in operator evaluation (limit {EXP_LIMIT:g})"
        )
    return np.exp(expo)


def _solve_at(op: ForwardOperator, p: np.ndarray) -> ForwardSolution:
    model = ModelInstance(p=op._field(p), d=op.d, n0=op.n0)
    return solve_forward(
        model, op.tg, fp_tol=op.fp_tol, max_inner=op.max_inner, store_density=False
    )


def apply_forward(op: ForwardOperator, p: ParameterField) -> np.ndarray:
    """Evaluate the operator at p; returns rho on the time nodes."""
    if p.grid != op.grid:
        raise ValueError("p must live on the operator grid")
    if op.variant == FULL:
        return _solve_at(op, p.values).rho
    emat = _exp_matrix(op, p.values, op.R_data)
    return emat @ (op.grid.trapezoid_weights * op.n0.values)


def _derivative_pieces(op: ForwardOperator, p: np.ndarray):
    """Shared assembly: exp matrix at the linearization point plus, for the
    full variant, the damping coefficients a_k of the sensitivity equation."""
    if op.variant == FULL:
        R = _solve_at(op, p).R
    else:
        R = op.R_data
    emat = _exp_matrix(op, p, R)
    w = op.grid.trapezoid_weights
    if op.variant == FULL:
        a = emat @ (w * op.d.values * op.n0.values)
    else:
        a = None
    return emat, a


def _propagate_sensitivity(b: np.ndarray, a: np.ndarray, dt: float) -> np.ndarray:
    """Solve E' = b - a*E, E(0) = 0 by the trapezoid rule; return D = b - a*E.

    b may be a vector over time nodes or a matrix (time nodes, directions);
    the recurrence is applied column-wise either way.
    """
    E = np.zeros_like(b)
    half = 0.5 * dt
    for k in range(b.shape[0] - 1):
        E[k + 1] = (E[k] + half * (b[k] - a[k] * E[k] + b[k + 1])) / (
            1.0 + half * a[k + 1]
        )
    if b.ndim == 1:
        return b - a * E
    return b - a[:, None] * E


def derivative(
    op: ForwardOperator, p: ParameterField, h: ParameterField
) -> np.ndarray:
    """Directional derivative of the operator at p in direction h.

    Perturbed variant: explicit integral with the frozen exponent. Full
    variant: the perturbation of the cumulative mass obeys a scalar linear
    ODE driven by the explicit term, integrated with the same trapezoid
    rule as the forward solver, so this is the exact derivative of the
    discrete forward map.
    """
    emat, a = _derivative_pieces(op, p.values)
    w = op.grid.trapezoid_weights
    t = op.tg.nodes
    b = t * (emat @ (w * op.n0.values * h.values))
    if op.variant == PERTURBED:
        return b
    return _propagate_sensitivity(b, a, op.tg.dt)


def jacobian(op: ForwardOperator, p: ParameterField) -> np.ndarray:
    """Dense matrix of the derivative in the nodal basis: (time, space)."""
    emat, a = _derivative_pieces(op, p.values)
    w = op.grid.trapezoid_weights
    t = op.tg.nodes
    B = t[:, None] * (emat * (w * op.n0.values))
    if op.variant == PERTURBED:
        return B
    return _propagate_sensitivity(B, a, op.tg.dt)


def adjoint(
    op: ForwardOperator, p: ParameterField, psi: np.ndarray, h1: H1Machinery
) -> ParameterField:
    """Adjoint of the derivative: L2(0,T) -> H1, exact transpose of the
    discrete Jacobian in the quadrature/Gram geometries."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (op.tg.n_steps + 1,):
        raise ValueError("psi must live on the time grid")
    J = jacobian(op, p)
    rhs = J.T @ (op.tg.trapezoid_weights * psi)
    return ParameterField(op.grid, h1.solve(rhs))


def construct_source_p0(
    p_true: ParameterField,
    w: np.ndarray,
    op: ForwardOperator,
    h1: H1Machinery,
) -> ParameterField:
    """Prior p0 = p_true - F'(p_true)* w, i.e. p_true satisfies the
    source condition with representer w."""
    shift = adjoint(op, p_true, w, h1)
    return ParameterField(
        p_true.grid, p_true.values - shift.values, fn=None, dfn=None
    )


def perturbation_bound(
    p: ParameterField,
    n0: ParameterField,
    d: ParameterField,
    T: float,
    data_gap: float,
) -> float:
    """Worst-case distance between the full and perturbed operators:
    ||n0||_L1 * exp(T*||p||_inf) * ||d||_inf * T * data_gap."""
    if data_gap < 0:
        raise ValueError("data_gap must be nonnegative")
    return (
        integrate_space(n0)
        * math.exp(T * p.max_abs())
        * d.max_abs()
        * T
        * data_gap
    )


@dataclass
class IRGNConfig:
    """Gauss-Newton loop controls.

    alpha is the target regularization level (defaults to the data's noise
    level when None); the per-step parameter is alpha_k = max(alpha, 2^-k).
    tau > 1 is the discrepancy factor of the stopping rule.
    """

    alpha: Optional[float] = None
    tau: float = 1.5
    max_iter: int = 50

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive when given")
        if not self.tau > 1:
            raise ValueError("tau must exceed 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")


@dataclass(eq=False)
class IRGNResult:
    p_rec: ParameterField
    iterations: int
    residual_history: np.ndarray
    error_history: Optional[np.ndarray] = None
    converged: bool = False


def irgn_minimize(
    op: ForwardOperator,
    data: PopulationMeasurement,
    p0: ParameterField,
    cfg: IRGNConfig,
    h1: H1Machinery,
    truth: Optional[ParameterField] = None,
) -> IRGNResult:
    """Iteratively regularized Gauss-Newton minimization anchored at p0.

    Updates p_{k+1} = p_k + (F'*F' + alpha_k I)^{-1} (F'*(data - F(p_k))
    + alpha_k (p0 - p_k)) with every adjoint and identity taken in the H1
    Gram geometry; in the nodal basis each step is the SPD solve
    (J^T M_t J + alpha_k G) s = J^T M_t r + alpha_k G (p0 - p_k).
    Stops when the L2(0,T) residual drops to tau*delta or at max_iter.
    """
    if p0.grid != op.grid:
        raise ValueError("p0 must live on the operator grid")
    delta = data.delta
    alpha_target = cfg.alpha if cfg.alpha is not None else delta
    tw = op.tg.trapezoid_weights
    gram = h1.gram

    p_k = p0.values.copy()
    residuals: List[float] = []
    errors: List[float] = []
    converged = False
    iterations = 0

    for k in range(cfg.max_iter + 1):
        rho_k = apply_forward(op, ParameterField(op.grid, p_k))
        r = data.values - rho_k
        residuals.append(op.tg.l2_norm(r))
        if truth is not None:
            errors.append(h1.norm(p_k - truth.values))
        iterations = k
        if residuals[-1] <= cfg.tau * delta:
            converged = True
            break
        if k == cfg.max_iter:
            break
        J = jacobian(op, ParameterField(op.grid, p_k))
        alpha_k = max(alpha_target, 2.0 ** (-k))
        lhs = J.T @ (tw[:, None] * J) + alpha_k * gram
        rhs = J.T @ (tw * r) + alpha_k * (gram @ (p0.values - p_k))
        try:
            step = sla.cho_solve(sla.cho_factor(lhs), rhs)
        except sla.LinAlgError as exc:
            raise RuntimeError(
                f"Gauss-Newton normal matrix lost definiteness at iteration {k}"
            ) from exc
        p_k = p_k + step

    return IRGNResult(
        p_rec=ParameterField(op.grid, p_k),
        iterations=iterations,
        residual_history=np.array(residuals),
        error_history=np.array(errors) if truth is not None else None,
        converged=converged,
    )
