"""Grids, parameter fields, and the forward solver for a nonlocal
logistic-selection population model.

The density n(t, x) of individuals carrying trait x evolves by

    dn/dt = (p(x) - d(x) * rho(t)) * n,      rho(t) = integral of n(t, .) dx,

so every trait grows or dies at a rate coupled to the others only through
the total mass rho. Writing R(t) for the running integral of rho, the
density is n0(x) * exp(t*p(x) - d(x)*R(t)) and the dynamics collapse to a
scalar equation for R, which `solve_forward` integrates with an implicit
trapezoidal step and an inner Picard fixed-point iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

# exp(x) overflows float64 near 709.78; anything this large is a modelling
# error we want reported, not an inf propagating through quadratures.
EXP_LIMIT = 700.0


class ModelError(Exception):
    """Base class for forward-model failures."""


class ExponentOverflowError(ModelError):
    """The growth exponent t*p - d*R left the representable range."""


class FixedPointError(ModelError):
    """The inner Picard iteration did not contract within max_inner steps."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid on the trait interval [x_min, x_max]."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError("n_points must be >= 3")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.h * np.arange(self.n_points)

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @classmethod
    def from_spacing(cls, x_min: float, x_max: float, h: float) -> "SpatialGrid":
        """Build the grid whose spacing is h; (x_max-x_min)/h must be integral."""
        n_cells = (x_max - x_min) / h
        n = round(n_cells)
        if n < 2 or abs(n_cells - n) > 1e-9 * max(1.0, n):
            raise ValueError(f"spacing {h} does not evenly divide [{x_min}, {x_max}]")
        return cls(x_min, x_max, n + 1)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with n_steps steps (n_steps + 1 nodes)."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node equal to t (within tol relative to dt)."""
        k = round(t / self.dt)
        if k < 0 or k > self.n_steps or abs(t - k * self.dt) > tol * max(self.dt, 1.0):
            raise ValueError(f"t={t} is not a node of the time grid")
        return k

    def l2_norm(self, v: np.ndarray) -> float:
        """Discrete L2(0, T) norm (trapezoid-weighted)."""
        v = np.asarray(v, dtype=float)
        return math.sqrt(float(self.trapezoid_weights @ (v * v)))

    @classmethod
    def from_spacing(cls, T: float, dt: float) -> "TimeGrid":
        n = round(T / dt)
        if n < 1 or abs(T / dt - n) > 1e-9 * max(1.0, n):
            raise ValueError(f"step {dt} does not evenly divide [0, {T}]")
        return cls(T, n)


@dataclass(eq=False)
class ParameterField:
    """Scalar function sampled on a spatial grid.

    `fn` and `dfn` optionally carry the analytic function and its
    derivative; the critical-point reconstruction formulas need exact
    off-grid values of n0 and n0', so preset fields keep them around.
    """

    grid: SpatialGrid
    values: np.ndarray
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dfn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_points,):
            raise ValueError("values length must match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def has_analytic(self) -> bool:
        return self.fn is not None and self.dfn is not None

    def value_at(self, x):
        """Evaluate at arbitrary x: analytic if available, else linear interp."""
        if self.fn is not None:
            return self.fn(np.asarray(x, dtype=float))
        return np.interp(x, self.grid.nodes, self.values)

    def derivative_at(self, x):
        """Derivative at arbitrary x; falls back to interpolated centered
        differences of the samples when no analytic derivative is attached."""
        if self.dfn is not None:
            return self.dfn(np.asarray(x, dtype=float))
        slopes = np.gradient(self.values, self.grid.h)
        return np.interp(x, self.grid.nodes, slopes)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _affine(fn, scale, offset):
    return lambda x: scale * fn(x) + offset


PRESETS: dict[str, tuple[Callable, Callable]] = {
    "cos_half": (
        lambda x: np.cos(0.5 * np.pi * x),
        lambda x: -0.5 * np.pi * np.sin(0.5 * np.pi * x),
    ),
    "exp": (np.exp, np.exp),
    "one_plus_sin_sq": (
        lambda x: 1.0 + np.sin(x) ** 2,
        lambda x: np.sin(2.0 * x),
    ),
    "one_minus_x_sq": (
        lambda x: 1.0 - x**2,
        lambda x: -2.0 * x,
    ),
    "sin_pi": (
        lambda x: np.sin(np.pi * x),
        lambda x: np.pi * np.cos(np.pi * x),
    ),
}


def preset_field(
    grid: SpatialGrid, name: str, scale: float = 1.0, offset: float = 0.0
) -> ParameterField:
    """Sample a named analytic preset onto the grid.

    `name` is one of PRESETS or "const:<v>". The field is
    scale * base(x) + offset with the exact analytic derivative attached.
    """
    if name.startswith("const:"):
        return constant_field(grid, float(name.split(":", 1)[1]))
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS) + ["const:<v>"])
        raise ValueError(f"unknown preset {name!r} (known: {known})")
    base, dbase = PRESETS[name]
    fn = _affine(base, scale, offset)
    dfn = _affine(dbase, scale, 0.0)
    return ParameterField(grid, fn(grid.nodes), fn=fn, dfn=dfn)


def constant_field(grid: SpatialGrid, value: float) -> ParameterField:
    v = float(value)
    return ParameterField(
        grid,
        np.full(grid.n_points, v),
        fn=lambda x: np.full_like(np.asarray(x, dtype=float), v),
        dfn=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def field_from_callable(
    grid: SpatialGrid, fn: Callable, dfn: Optional[Callable] = None
) -> ParameterField:
    return ParameterField(grid, np.asarray(fn(grid.nodes), dtype=float), fn=fn, dfn=dfn)


@dataclass(eq=False)
class ModelInstance:
    """Parameter triple (p, d, n0) on a shared grid.

    n0 must be nonnegative and vanish at the boundary nodes (integrals over
    the real line are truncated to the grid, so the support has to sit
    inside it); d must be nonnegative; p only has to be bounded.
    """

    p: ParameterField
    d: ParameterField
    n0: ParameterField

    def __post_init__(self):
        if not (self.p.grid == self.d.grid == self.n0.grid):
            raise ValueError("p, d, n0 must share one grid")
        if np.any(self.d.values < 0):
            raise ValueError("d must be nonnegative")
        if np.any(self.n0.values < 0):
            raise ValueError("n0 must be nonnegative")
        edge_tol = max(1e-12, 1e-12 * float(np.max(self.n0.values, initial=0.0)))
        if abs(self.n0.values[0]) > edge_tol or abs(self.n0.values[-1]) > edge_tol:
            raise ValueError("n0 must vanish at the grid boundary nodes")

    @property
    def grid(self) -> SpatialGrid:
        return self.p.grid


@dataclass(eq=False)
class ForwardSolution:
    """Time history of the density and its mass.

    n has shape (n_steps + 1, n_points) and may be None when the solver was
    asked not to store it. rho[k] is the spatial quadrature of n[k, :] and
    R is the trapezoidal cumulative integral of rho with R[0] = 0.
    """

    grid: SpatialGrid
    tg: TimeGrid
    rho: np.ndarray
    R: np.ndarray
    n: Optional[np.ndarray] = None


def integrate_space(f: ParameterField) -> float:
    """Composite-trapezoid approximation of the integral of f over the grid."""
    return float(f.grid.trapezoid_weights @ f.values)


def growth_exponent(
    model: ModelInstance, t: float, Rt: float, limit: float = EXP_LIMIT
) -> np.ndarray:
    """t*p - d*Rt on the grid nodes, guarded against exp overflow."""
    expo = t * model.p.values - Rt * model.d.values
    m = float(np.max(np.abs(expo), initial=0.0))
    if m > limit:
        raise ExponentOverflowError(
            f"growth exponent reaches {m:.3g} at t={t:.6g}, R={Rt:.6g} "
            f"(limit {limit:g}); the population blows up or dies off too fast "
            "for this parameterization"
        )
    return expo


def density_at(model: ModelInstance, t: float, Rt: float) -> ParameterField:
    """Density profile n(t, .) given the cumulative mass R(t) = Rt."""
    if t < 0 or Rt < 0:
        raise ValueError("t and Rt must be nonnegative")
    values = model.n0.values * np.exp(growth_exponent(model, t, Rt))
    return ParameterField(model.grid, values)


def contraction_constant(model: ModelInstance, T: float) -> float:
    """Weighted-norm constant 2*||n0||_L1 * ||d||_inf * exp(T*||p||_inf).

    Zero when n0 or d vanish; otherwise gauges how stiff the fixed-point
    problem is over [0, T] and therefore how small dt has to be.
    """
    mass = integrate_space(model.n0)
    return 2.0 * mass * model.d.max_abs() * math.exp(T * model.p.max_abs())


def solve_forward(
    model: ModelInstance,
    tg: TimeGrid,
    fp_tol: float = 1e-12,
    max_inner: int = 100,
    relaxation: float = 1.0,
    store_density: bool = True,
) -> ForwardSolution:
    """March the total-mass equation over the time grid.

    Each step solves R_new = R_k + dt/2 * (rho_k + mass(t_{k+1}, R_new)) by
    damped Picard iteration (relaxation in (0, 1], 1 = undamped), stopping
    once successive iterates differ by at most fp_tol. The density row and
    rho are then evaluated at the converged R_new, so rho[k] is exactly the
    quadrature of n[k, :].
    """
    if fp_tol <= 0:
        raise ValueError("fp_tol must be positive")
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation must lie in (0, 1]")

    w = model.grid.trapezoid_weights
    n0 = model.n0.values
    p = model.p.values
    d = model.d.values
    t = tg.nodes
    dt = tg.dt
    nt = tg.n_steps

    def mass(tk: float, Rk: float) -> tuple[float, np.ndarray]:
        expo = tk * p - Rk * d
        m = float(np.max(np.abs(expo), initial=0.0))
        if m > EXP_LIMIT:
            raise ExponentOverflowError(
                f"growth exponent reaches {m:.3g} at t={tk:.6g} (limit {EXP_LIMIT:g})"
            )
        row = n0 * np.exp(expo)
        return float(w @ row), row

    rho = np.empty(nt + 1)
    R = np.empty(nt + 1)
    density = np.empty((nt + 1, model.grid.n_points)) if store_density else None

    R[0] = 0.0
    rho[0], row = mass(0.0, 0.0)
    if density is not None:
        density[0] = row

    half = 0.5 * dt
    for k in range(nt):
        t1 = t[k + 1]
        base = R[k] + half * rho[k]
        # explicit Euler predictor, then damped Picard
        R_old = R[k] + dt * rho[k]
        for _ in range(max_inner):
            m, _ = mass(t1, R_old)
            R_new = base + half * m
            if relaxation != 1.0:
                R_new = (1.0 - relaxation) * R_old + relaxation * R_new
            if abs(R_new - R_old) <= fp_tol:
                R_old = R_new
                break
            R_old = R_new
        else:
            a = contraction_constant(model, tg.T)
            raise FixedPointError(
                f"Picard iteration did not reach {fp_tol:g} in {max_inner} steps "
                f"at t={t1:.6g}; contraction constant a={a:.3g} suggests dt={dt:g} "
                "is too large (or increase relaxation damping)"
            )
        R[k + 1] = R_old
        rho[k + 1], row = mass(t1, R_old)
        if density is not None:
            density[k + 1] = row

    return ForwardSolution(grid=model.grid, tg=tg, rho=rho, R=R, n=density)


def cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral with a leading zero."""
    values = np.asarray(values, dtype=float)
    out = np.empty(values.shape[0])
    out[0] = 0.0
    np.cumsum(0.5 * dt * (values[1:] + values[:-1]), out=out[1:])
    return out
