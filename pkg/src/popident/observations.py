"""Synthetic measurements: noisy total-mass records and critical-point
tracks of the density.

Both noise operations are pure functions of (input, delta, seed) and use
numpy's default PCG64 generator, so every experiment is reproducible from
its config.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .model import ForwardSolution, ModelInstance, TimeGrid

KIND_MAX = "maximum"
KIND_MIN = "minimum"
KIND_FLAT = "flat"

# centered differences smaller than this are treated as an exact plateau
FLAT_TOL = 1e-12


class _AllTimes:
    """Marker: the point is critical at every t >= 0."""

    def __repr__(self):  # pragma: no cover
        return "ALL_TIMES"


ALL_TIMES = _AllTimes()


@dataclass(eq=False)
class PopulationMeasurement:
    """Total-mass samples rho_delta on a time grid with L2(0,T) noise level delta."""

    tg: TimeGrid
    values: np.ndarray
    delta: float
    seed: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.tg.n_steps + 1,):
            raise ValueError("measurement length must match the time grid")
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


@dataclass(frozen=True)
class CriticalPoint:
    t: float
    x_bar: float
    kind: str


@dataclass(eq=False)
class CriticalPointSet:
    """Observed (t, x_bar, kind) extrema, sorted by t then x_bar.

    x_min/x_max record the open trait interval the points live in, which
    multiplicative perturbations must not leave.
    """

    entries: List[CriticalPoint]
    x_min: float
    x_max: float

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: (e.t, e.x_bar))
        for e in self.entries:
            if not (self.x_min < e.x_bar < self.x_max):
                raise ValueError(f"x_bar={e.x_bar} outside ({self.x_min}, {self.x_max})")
            if e.kind not in (KIND_MAX, KIND_MIN, KIND_FLAT):
                raise ValueError(f"unknown kind {e.kind!r}")

    def __len__(self):
        return len(self.entries)

    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.entries])

    def locations(self) -> np.ndarray:
        return np.array([e.x_bar for e in self.entries])


def add_l2_noise(
    rho: np.ndarray, tg: TimeGrid, delta: float, seed: int
) -> PopulationMeasurement:
    """Perturb rho so that ||rho - rho_delta||_L2(0,T) equals delta exactly.

    Draws a standard-normal vector and rescales it to the requested
    discrete norm; delta = 0 returns rho unchanged.
    """
    rho = np.asarray(rho, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0.0:
        return PopulationMeasurement(tg, rho.copy(), 0.0, seed)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal(rho.shape[0])
    norm = tg.l2_norm(xi)
    if norm == 0.0:  # probability zero; retry once then give up
        xi = rng.standard_normal(rho.shape[0])
        norm = tg.l2_norm(xi)
        if norm == 0.0:
            raise RuntimeError("degenerate zero noise draw")
    return PopulationMeasurement(tg, rho + (delta / norm) * xi, delta, seed)


def relative_uniform_noise(
    x: np.ndarray, delta: float, seed: int
) -> np.ndarray:
    """x * (1 + delta*eta) with independent eta ~ U(-1/2, 1/2), seeded."""
    x = np.asarray(x, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0.0:
        return x.copy()
    rng = np.random.default_rng(seed)
    eta = rng.uniform(-0.5, 0.5, size=x.shape[0])
    return x * (1.0 + delta * eta)


def perturb_critical_points(
    cps: CriticalPointSet, delta: float, seed: int
) -> CriticalPointSet:
    """Multiplicative location noise x_bar -> x_bar*(1 + delta*eta).

    Times and kinds are unchanged; perturbed locations are clamped to the
    open trait interval. Deterministic in seed.
    """
    locs = relative_uniform_noise(cps.locations(), delta, seed)
    width = cps.x_max - cps.x_min
    eps = 1e-12 * width
    locs = np.clip(locs, cps.x_min + eps, cps.x_max - eps)
    entries = [
        CriticalPoint(e.t, float(xb), e.kind) for e, xb in zip(cps.entries, locs)
    ]
    return CriticalPointSet(entries, cps.x_min, cps.x_max)


def extract_critical_points(
    sol: ForwardSolution, flat_tol: float = FLAT_TOL
) -> CriticalPointSet:
    """Locate interior extrema of n(t_k, .) for every time node t_k > 0.

    Works on centered differences over interior nodes where the density is
    positive. A sign change +/- marks a maximum, -/+ a minimum, recorded at
    whichever node of the pair has the smaller |difference|. Runs of
    differences below flat_tol collapse to their midpoint as a flat entry.
    Boundary nodes are excluded; no sub-grid interpolation is attempted.
    """
    if sol.n is None:
        raise ValueError("solution was computed without the density matrix")
    x = sol.grid.nodes
    h = sol.grid.h
    t = sol.tg.nodes
    entries: List[CriticalPoint] = []

    for k in range(1, sol.tg.n_steps + 1):
        row = sol.n[k]
        diff = (row[2:] - row[:-2]) / (2.0 * h)  # diff[j] at node j+1
        positive = row > 0.0
        valid = positive[:-2] & positive[1:-1] & positive[2:]

        idx = np.nonzero(valid)[0]
        if idx.size == 0:
            continue
        tiny = np.abs(diff) < flat_tol

        # flat plateaus: maximal runs of tiny differences over valid nodes
        j = 0
        while j < idx.size:
            if not tiny[idx[j]]:
                j += 1
                continue
            j0 = j
            while (
                j + 1 < idx.size
                and idx[j + 1] == idx[j] + 1
                and tiny[idx[j + 1]]
            ):
                j += 1
            mid = 0.5 * (x[idx[j0] + 1] + x[idx[j] + 1])
            entries.append(CriticalPoint(float(t[k]), float(mid), KIND_FLAT))
            j += 1

        # sign changes between adjacent non-tiny valid nodes
        for a, b in zip(idx[:-1], idx[1:]):
            if b != a + 1 or tiny[a] or tiny[b]:
                continue
            if diff[a] > 0.0 > diff[b]:
                kind = KIND_MAX
            elif diff[a] < 0.0 < diff[b]:
                kind = KIND_MIN
            else:
                continue
            node = a if abs(diff[a]) <= abs(diff[b]) else b
            entries.append(CriticalPoint(float(t[k]), float(x[node + 1]), kind))

    return CriticalPointSet(entries, float(x[0]), float(x[-1]))


def predict_critical_time(x: float, model: ModelInstance):
    """When is x a critical point of the density, for constant d?

    Returns the unique positive time -n0'(x)/(n0(x)*p'(x)) when n0' and p'
    have opposite signs at x, 0.0 when p'(x) != 0 but n0'(x) = 0, the
    ALL_TIMES marker when both derivatives vanish, and None when the point
    is never critical. Requires analytic derivatives on n0 and p.
    """
    d = model.d.values
    if np.ptp(d) > 1e-12 * max(1.0, float(np.max(np.abs(d)))):
        raise ValueError("prediction assumes constant d")
    if not (model.n0.has_analytic and model.p.has_analytic):
        raise ValueError("analytic n0 and p (with derivatives) are required")
    n0_x = float(model.n0.value_at(x))
    if n0_x <= 0:
        raise ValueError(f"n0({x}) = {n0_x} is not positive")
    dn0 = float(model.n0.derivative_at(x))
    dp = float(model.p.derivative_at(x))
    prod = dn0 * dp
    if prod > 0:
        return None
    if prod < 0:
        return -dn0 / (n0_x * dp)
    if dp == 0.0 and dn0 == 0.0:
        return ALL_TIMES
    if dp != 0.0:  # dn0 == 0: critical only at the initial instant
        return 0.0
    return None  # dp == 0, dn0 != 0: never critical
