"""Pointwise reconstruction of parameter derivatives from critical-point
observations.

A critical point x_bar of the density at time t satisfies

    (ln n0)'(x_bar) = d'(x_bar) * R(t) - t * p'(x_bar),

with R the cumulative total mass. With d constant this pins down
p'(x_bar); with p constant it pins down d'(x_bar); and a point observed at
two distinct times yields a 2x2 system for both derivatives, which is
singular exactly when R(t1)/t1 = R(t2)/t2 (e.g. any steady state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    ForwardSolution,
    ModelInstance,
    ParameterField,
    TimeGrid,
    solve_forward,
)
from .observations import (
    CriticalPointSet,
    extract_critical_points,
    relative_uniform_noise,
)

P_PRIME = "p_prime"
D_PRIME = "d_prime"
LOG_N0_PRIME = "log_n0_prime"

# entries with n0 below this are too close to the support boundary to divide by
N0_FLOOR = 1e-8


class SingularSystemError(Exception):
    """The two-time 2x2 system is (numerically) singular."""


@dataclass(eq=False)
class PointwiseReconstruction:
    """Reconstructed derivative samples (x_bar, value, t_used), sorted by x_bar.

    n_skipped counts observations dropped because n0 at the (possibly
    perturbed) location fell below the division floor.
    """

    target: str
    entries: List[Tuple[float, float, float]]
    n_skipped: int = 0

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e[0])

    def locations(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries])

    def values(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    def times(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries])


def dedupe_earliest(cps: CriticalPointSet) -> List[Tuple[float, float]]:
    """One (t, x_bar) per location: the earliest positive observation time.

    The smallest t gives the best-conditioned division in the p' formula;
    points flagged at many times (numerical plateaus) collapse to one entry.
    """
    earliest: Dict[float, float] = {}
    for e in cps.entries:
        if e.t <= 0.0:
            continue
        if e.x_bar not in earliest or e.t < earliest[e.x_bar]:
            earliest[e.x_bar] = e.t
    return sorted((t, x) for x, t in earliest.items())


def _require_analytic_n0(n0: ParameterField):
    if not n0.has_analytic:
        raise ValueError(
            "reconstruction needs n0 with an analytic derivative; "
            "use a preset or attach fn/dfn"
        )


def reconstruct_p_prime(
    cps: CriticalPointSet, n0: ParameterField, dedupe: bool = True
) -> PointwiseReconstruction:
    """p'(x_bar) = -n0'(x_bar) / (t * n0(x_bar)) per observation.

    Valid for data generated with constant d (caller's responsibility).
    Entries at t = 0 are dropped; locations where n0 is below the division
    floor are skipped and counted.
    """
    _require_analytic_n0(n0)
    pairs = dedupe_earliest(cps) if dedupe else [
        (e.t, e.x_bar) for e in cps.entries if e.t > 0.0
    ]
    entries = []
    skipped = 0
    for t, xb in pairs:
        n0_x = float(n0.value_at(xb))
        if n0_x <= N0_FLOOR:
            skipped += 1
            continue
        value = -float(n0.derivative_at(xb)) / (t * n0_x)
        entries.append((xb, value, t))
    return PointwiseReconstruction(P_PRIME, entries, skipped)


def reconstruct_d_prime(
    cps: CriticalPointSet,
    n0: ParameterField,
    R: np.ndarray,
    tg: TimeGrid,
    dedupe: bool = True,
) -> PointwiseReconstruction:
    """d'(x_bar) = n0'(x_bar) / (n0(x_bar) * R(t)) per observation.

    Valid for data generated with constant p. R is the solver's cumulative
    mass, indexed at each observation's time node.
    """
    _require_analytic_n0(n0)
    R = np.asarray(R, dtype=float)
    pairs = dedupe_earliest(cps) if dedupe else [
        (e.t, e.x_bar) for e in cps.entries if e.t > 0.0
    ]
    entries = []
    skipped = 0
    for t, xb in pairs:
        R_t = float(R[tg.index_of(t)])
        if R_t <= 1e-12:
            raise ValueError(
                f"cumulative mass R({t}) = {R_t:.3g} is not positive; "
                "the observation carries no signal"
            )
        n0_x = float(n0.value_at(xb))
        if n0_x <= N0_FLOOR:
            skipped += 1
            continue
        value = float(n0.derivative_at(xb)) / (n0_x * R_t)
        entries.append((xb, value, t))
    return PointwiseReconstruction(D_PRIME, entries, skipped)


def reconstruct_log_n0_prime(
    x_bar: float, t: float, p_prime: float, d_prime: float, R_t: float
) -> float:
    """(ln n0)'(x_bar) = d'(x_bar)*R(t) - t*p'(x_bar)."""
    if t < 0 or R_t < 0:
        raise ValueError("t and R_t must be nonnegative")
    return d_prime * R_t - t * p_prime


def solve_two_time_system(
    x_bar: float,
    t1: float,
    t2: float,
    R: np.ndarray,
    tg: TimeGrid,
    log_n0_prime: float,
) -> Tuple[float, float]:
    """Recover (d'(x_bar), p'(x_bar)) from criticality at two distinct times.

    Solves [R(t1), -t1; R(t2), -t2] (d', p')^T = log_n0_prime * (1, 1)^T
    directly. Raises SingularSystemError when the determinant vanishes
    relative to its entries, which happens exactly for R(t1)/t1 = R(t2)/t2
    (constant rho makes every pair of times degenerate).
    """
    if t1 == t2:
        raise ValueError("the two observation times must differ")
    R = np.asarray(R, dtype=float)
    R1 = float(R[tg.index_of(t1)])
    R2 = float(R[tg.index_of(t2)])
    det = -t2 * R1 + t1 * R2
    scale = max(abs(t2 * R1), abs(t1 * R2), 1e-30)
    if abs(det) <= 1e-12 * scale:
        raise SingularSystemError(
            f"two-time system at x={x_bar} is singular "
            f"(R({t1})/{t1} = R({t2})/{t2} up to roundoff)"
        )
    d_prime = log_n0_prime * (t1 - t2) / det
    p_prime = log_n0_prime * (R1 - R2) / det
    return d_prime, p_prime


def cluster_times(times: Sequence[float], gap: float) -> List[float]:
    """Earliest time of each cluster, clusters separated by more than gap.

    A node swept by a moving critical point is typically flagged at a few
    consecutive time steps per crossing; for the two-time system the times
    must come from distinct crossings, not one smeared crossing.
    """
    out: List[float] = []
    prev = None
    for t in sorted(times):
        if prev is None or t - prev > gap:
            out.append(t)
        prev = t
    return out


@dataclass(eq=False)
class RateTable:
    """Noise-robustness summary: sup-error per delta plus a log-log slope
    fitted over the pre-saturation range."""

    target: str
    deltas: np.ndarray
    sup_errors: np.ndarray
    clean_error: float
    slope: float
    fit_count: int


def _infer_target(model: ModelInstance) -> str:
    d_const = np.ptp(model.d.values) <= 1e-12 * max(1.0, model.d.max_abs())
    p_const = np.ptp(model.p.values) <= 1e-12 * max(1.0, model.p.max_abs())
    if d_const and not p_const:
        return P_PRIME
    if p_const and not d_const:
        return D_PRIME
    raise ValueError(
        "cannot infer the reconstruction target: exactly one of p, d must be constant"
    )


def noise_rate_experiment(
    model: ModelInstance,
    tg: TimeGrid,
    deltas: Sequence[float],
    seeds: Sequence[int],
    target: Optional[str] = None,
    fp_tol: float = 1e-12,
    max_inner: int = 100,
    sol: Optional[ForwardSolution] = None,
    cps: Optional[CriticalPointSet] = None,
) -> RateTable:
    """Reconstruction error against the noise level of the locations.

    Simulates the model, extracts and dedupes critical points, then for
    each delta perturbs the locations multiplicatively and measures
    sup_i |truth'(x_i) - value(x_i * (1 + delta*eta_i))| against the
    analytic derivative of the varying parameter. The slope is the
    least-squares fit of log sup-error vs log delta over the points still
    above 3x the clean (delta = 0) error.

    A precomputed solution and critical-point set may be passed to skip
    the simulation (they must come from the same model and grids).
    """
    deltas = [float(d) for d in deltas]
    if len(seeds) != len(deltas):
        raise ValueError("need one seed per delta")
    if any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    target = target or _infer_target(model)
    truth_field = model.p if target == P_PRIME else model.d
    if truth_field.dfn is None:
        raise ValueError("the varying parameter needs an analytic derivative")

    if sol is None:
        sol = solve_forward(model, tg, fp_tol=fp_tol, max_inner=max_inner)
    if cps is None:
        cps = extract_critical_points(sol)
    pairs = dedupe_earliest(cps)
    if not pairs:
        raise ValueError("no critical points observed; nothing to reconstruct")
    t_used = np.array([t for t, _ in pairs])
    x_clean = np.array([x for _, x in pairs])
    truth = np.asarray(truth_field.dfn(x_clean), dtype=float)

    def sup_error(x_pert: np.ndarray) -> float:
        n0_x = np.asarray(model.n0.value_at(x_pert), dtype=float)
        keep = n0_x > N0_FLOOR
        if not np.any(keep):
            return math.nan
        dn0 = np.asarray(model.n0.derivative_at(x_pert), dtype=float)
        if target == P_PRIME:
            values = -dn0[keep] / (t_used[keep] * n0_x[keep])
        else:
            R_t = sol.R[np.round(t_used[keep] / tg.dt).astype(int)]
            values = dn0[keep] / (n0_x[keep] * R_t)
        return float(np.max(np.abs(truth[keep] - values)))

    clean_error = sup_error(x_clean)
    width = model.grid.x_max - model.grid.x_min
    eps = 1e-12 * width
    errors = []
    for delta, seed in zip(deltas, seeds):
        x_pert = relative_uniform_noise(x_clean, delta, seed)
        x_pert = np.clip(x_pert, model.grid.x_min + eps, model.grid.x_max - eps)
        errors.append(sup_error(x_pert))
    errors = np.array(errors)

    above = errors > 3.0 * clean_error
    if int(np.sum(above)) >= 3:
        fit_idx = np.nonzero(above)[0]
    else:  # saturation everywhere: fall back to the largest noise levels
        fit_idx = np.argsort(deltas)[::-1][: min(3, len(deltas))]
    slope = math.nan
    if fit_idx.size >= 2:
        slope = float(
            np.polyfit(np.log(np.array(deltas)[fit_idx]), np.log(errors[fit_idx]), 1)[0]
        )
    return RateTable(
        target=target,
        deltas=np.array(deltas),
        sup_errors=errors,
        clean_error=clean_error,
        slope=slope,
        fit_count=int(fit_idx.size),
    )
