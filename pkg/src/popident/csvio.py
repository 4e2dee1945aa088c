"""CSV serialization for solver outputs and measurement data.

All writers emit comma-separated decimal values with 17 significant
digits and LF line endings, so identical runs produce byte-identical
files and every float survives a write/read round trip exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .model import ForwardSolution, TimeGrid
from .observations import CriticalPoint, CriticalPointSet, PopulationMeasurement
from .critical import PointwiseReconstruction, RateTable


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write(path, lines: Iterable[str]) -> None:
    text = "\n".join(lines) + "\n"
    Path(path).write_bytes(text.encode("ascii"))


def write_solution_csv(path, sol: ForwardSolution) -> None:
    lines = ["t,rho,R"]
    for t, r, R in zip(sol.tg.nodes, sol.rho, sol.R):
        lines.append(f"{fmt(t)},{fmt(r)},{fmt(R)}")
    _write(path, lines)


def write_density_csv(path, sol: ForwardSolution) -> None:
    """Full density matrix: header row of x nodes, then one row per time node."""
    if sol.n is None:
        raise ValueError("solution has no density matrix")
    lines = ["t," + ",".join(fmt(x) for x in sol.grid.nodes)]
    for t, row in zip(sol.tg.nodes, sol.n):
        lines.append(fmt(t) + "," + ",".join(fmt(v) for v in row))
    _write(path, lines)


def write_snapshot_csv(path, sol: ForwardSolution, t: float) -> None:
    """Density profile at time t, which must be a node of the time grid."""
    if sol.n is None:
        raise ValueError("solution has no density matrix")
    k = sol.tg.index_of(t)
    lines = ["x,n"]
    for x, v in zip(sol.grid.nodes, sol.n[k]):
        lines.append(f"{fmt(x)},{fmt(v)}")
    _write(path, lines)


def write_measurement_csv(path, m: PopulationMeasurement) -> None:
    lines = ["t,rho_delta"]
    for t, v in zip(m.tg.nodes, m.values):
        lines.append(f"{fmt(t)},{fmt(v)}")
    _write(path, lines)


def read_measurement_csv(path, tg: TimeGrid, delta: float,
                         seed: Optional[int] = None) -> PopulationMeasurement:
    """Read rho_delta back onto a known time grid.

    The file's t column must match the grid nodes; delta is metadata the
    file does not carry and must be supplied by the caller (config).
    """
    rows = _read_rows(path, expected_header="t,rho_delta")
    if len(rows) != tg.n_steps + 1:
        raise ValueError(
            f"{path}: {len(rows)} samples but the time grid has {tg.n_steps + 1} nodes"
        )
    t = np.array([r[0] for r in rows])
    if not np.allclose(t, tg.nodes, rtol=0.0, atol=1e-9 * max(tg.dt, 1.0)):
        raise ValueError(f"{path}: time column does not match the configured grid")
    values = np.array([r[1] for r in rows])
    return PopulationMeasurement(tg, values, delta, seed)


def write_critical_points_csv(path, cps: CriticalPointSet) -> None:
    lines = ["t,x_bar,kind"]
    for e in cps.entries:
        lines.append(f"{fmt(e.t)},{fmt(e.x_bar)},{e.kind}")
    _write(path, lines)


def read_critical_points_csv(path, x_min: float, x_max: float) -> CriticalPointSet:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "t,x_bar,kind":
        raise ValueError(f"{path}: expected header 't,x_bar,kind'")
    entries = []
    for ln in lines[1:]:
        if not ln:
            continue
        t_s, x_s, kind = ln.split(",")
        entries.append(CriticalPoint(float(t_s), float(x_s), kind))
    return CriticalPointSet(entries, x_min, x_max)


def write_reconstruction_csv(path, rec: PointwiseReconstruction,
                             truth_fn=None) -> None:
    """Pointwise derivative samples; truth and abs_error columns when a
    truth callable is supplied."""
    if truth_fn is None:
        lines = ["x_bar,value,t_used"]
        for x, v, t in rec.entries:
            lines.append(f"{fmt(x)},{fmt(v)},{fmt(t)}")
    else:
        lines = ["x_bar,value,t_used,truth,abs_error"]
        for x, v, t in rec.entries:
            tr = float(truth_fn(x))
            lines.append(
                f"{fmt(x)},{fmt(v)},{fmt(t)},{fmt(tr)},{fmt(abs(tr - v))}"
            )
    _write(path, lines)


def write_rate_table_csv(path, table: RateTable) -> None:
    lines = ["delta,sup_error"]
    for d, e in zip(table.deltas, table.sup_errors):
        lines.append(f"{fmt(d)},{fmt(e)}")
    lines.append(f"# fitted_slope,{fmt(table.slope)}")
    lines.append(f"# clean_error,{fmt(table.clean_error)}")
    _write(path, lines)


def write_irgn_history_csv(path, residuals: Sequence[float],
                           errors: Optional[Sequence[float]] = None) -> None:
    if errors is not None and len(errors):
        lines = ["iteration,residual,error"]
        for k, (r, e) in enumerate(zip(residuals, errors)):
            lines.append(f"{k},{fmt(r)},{fmt(e)}")
    else:
        lines = ["iteration,residual"]
        for k, r in enumerate(residuals):
            lines.append(f"{k},{fmt(r)}")
    _write(path, lines)


def write_irgn_reconstruction_csv(path, x: np.ndarray, p_rec: np.ndarray,
                                  p_true: Optional[np.ndarray] = None) -> None:
    if p_true is None:
        lines = ["x,p_rec"]
        for xi, pi in zip(x, p_rec):
            lines.append(f"{fmt(xi)},{fmt(pi)}")
    else:
        lines = ["x,p_rec,p_true"]
        for xi, pi, ti in zip(x, p_rec, p_true):
            lines.append(f"{fmt(xi)},{fmt(pi)},{fmt(ti)}")
    _write(path, lines)


def write_sweep_report_csv(path, rows: Sequence[Tuple[float, float, float, int]],
                           slope: Optional[float] = None) -> None:
    """Noise-sweep summary with one row per delta, slope as footer metadata."""
    lines = ["delta,h1_error,residual,iterations"]
    for delta, err, resid, iters in rows:
        lines.append(f"{fmt(delta)},{fmt(err)},{fmt(resid)},{iters}")
    if slope is not None:
        lines.append(f"# fitted_slope,{fmt(slope)}")
    _write(path, lines)


def _read_rows(path, expected_header: str) -> List[Tuple[float, ...]]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != expected_header:
        raise ValueError(f"{path}: expected header {expected_header!r}")
    out = []
    for ln in lines[1:]:
        if not ln or ln.startswith("#"):
            continue
        out.append(tuple(float(tok) for tok in ln.split(",")))
    return out
