"""Command-line front end: deterministic experiment runner.

Subcommands:
    forward         solve the model, write (t, rho, R) and density snapshots
    make-data       write noisy measurement and critical-point CSV data
    invert          recover the growth rate from total-mass data (IRGN)
    recon-critical  pointwise derivative reconstruction from critical points
    sweep           dispatch invert / recon-critical over a noise-level list

Exit codes: 0 success, 2 config error, 3 solver error, 4 I/O error.
Every failure prints one machine-parseable line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    FieldSpec,
    PERTURBED_VARIANT,
    load_config,
)
from .critical import (
    D_PRIME,
    P_PRIME,
    SingularSystemError,
    noise_rate_experiment,
    reconstruct_d_prime,
    reconstruct_p_prime,
)
from .model import ModelError, solve_forward
from .observations import (
    add_l2_noise,
    extract_critical_points,
    perturb_critical_points,
)
from .tikhonov import (
    ForwardOperator,
    H1Machinery,
    IRGNConfig,
    construct_source_p0,
    irgn_minimize,
)
from . import csvio


def _say(quiet: bool, msg: str):
    if not quiet:
        print(msg)


def _solve(cfg: ExperimentConfig, store_density: bool):
    return solve_forward(
        cfg.model,
        cfg.tg,
        fp_tol=cfg.fp_tol,
        max_inner=cfg.max_inner,
        relaxation=cfg.relaxation,
        store_density=store_density,
    )


def cmd_forward(cfg: ExperimentConfig, args) -> None:
    sol = _solve(cfg, store_density=bool(cfg.snapshot_times))
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    csvio.write_solution_csv(out / "solution.csv", sol)
    _say(args.quiet, f"wrote {out / 'solution.csv'}")
    for i, t in enumerate(cfg.snapshot_times):
        path = out / f"density_snapshot_{i}.csv"
        csvio.write_snapshot_csv(path, sol, t)
        _say(args.quiet, f"wrote {path} (t={t:g})")


def cmd_make_data(cfg: ExperimentConfig, args) -> None:
    if not cfg.deltas:
        raise ConfigError("noise: make-data needs a delta entry")
    delta = cfg.delta  # rejects sweep lists: one measurement per run
    sol = _solve(cfg, store_density=True)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    csvio.write_solution_csv(out / "solution.csv", sol)
    meas = add_l2_noise(sol.rho, cfg.tg, delta, cfg.seed)
    csvio.write_measurement_csv(out / "measurement.csv", meas)
    cps = extract_critical_points(sol)
    csvio.write_critical_points_csv(out / "critical_points.csv", cps)
    if delta > 0:
        noisy = perturb_critical_points(cps, delta, cfg.seed)
        csvio.write_critical_points_csv(out / "critical_points_noisy.csv", noisy)
    _say(args.quiet, f"wrote measurement (delta={delta:g}) and critical points to {out}")


def _build_prior(cfg: ExperimentConfig, op_clean, h1):
    inv = cfg.inversion
    if inv.prior == "source":
        w = np.exp(-cfg.tg.nodes)
        return construct_source_p0(cfg.model.p, w, op_clean, h1)
    assert isinstance(inv.prior, FieldSpec)
    return inv.prior.build(cfg.grid)


def cmd_invert(cfg: ExperimentConfig, args) -> None:
    if cfg.inversion is None:
        raise ConfigError("inversion: missing [inversion] table")
    if not cfg.deltas:
        raise ConfigError("noise: invert needs a delta (or deltas) entry")
    inv = cfg.inversion
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    sol = _solve(cfg, store_density=False)
    h1 = H1Machinery.build(cfg.grid)
    op_full = ForwardOperator.full(
        cfg.model.d, cfg.model.n0, cfg.tg, fp_tol=cfg.fp_tol, max_inner=cfg.max_inner
    )
    if inv.variant == PERTURBED_VARIANT:
        op_clean = ForwardOperator.perturbed(cfg.model.d, cfg.model.n0, cfg.tg, sol.rho)
    else:
        op_clean = op_full
    p0 = _build_prior(cfg, op_clean, h1)
    truth = cfg.model.p

    data_file = getattr(args, "data", None)
    if data_file is not None and len(cfg.deltas) != 1:
        raise ConfigError("noise: --data requires a single delta in the config")

    deltas = sorted(cfg.deltas, reverse=True)
    rows = []
    for i, delta in enumerate(deltas):
        if data_file is not None:
            meas = csvio.read_measurement_csv(data_file, cfg.tg, delta, cfg.seed)
        else:
            meas = add_l2_noise(sol.rho, cfg.tg, delta, cfg.seed + i)
        if inv.variant == PERTURBED_VARIANT:
            op = ForwardOperator.perturbed(cfg.model.d, cfg.model.n0, cfg.tg, meas.values)
        else:
            op = op_full
        irgn_cfg = IRGNConfig(
            alpha=inv.alpha if inv.alpha is not None else (delta if delta > 0 else None),
            tau=inv.tau,
            max_iter=inv.max_iter,
        )
        res = irgn_minimize(op, meas, p0, irgn_cfg, h1, truth=truth)
        err = h1.norm(res.p_rec.values - truth.values)
        rows.append((delta, err, float(res.residual_history[-1]), res.iterations))
        suffix = "" if len(deltas) == 1 else f"_{i}"
        csvio.write_irgn_reconstruction_csv(
            out / f"reconstruction{suffix}.csv",
            cfg.grid.nodes,
            res.p_rec.values,
            truth.values,
        )
        csvio.write_irgn_history_csv(
            out / f"history{suffix}.csv", res.residual_history, res.error_history
        )
        _say(
            args.quiet,
            f"delta={delta:.3g}: H1 error {err:.3e}, residual {rows[-1][2]:.3e}, "
            f"{res.iterations} iterations",
        )

    slope = None
    if len(rows) >= 2:
        ds = np.array([r[0] for r in rows])
        es = np.array([r[1] for r in rows])
        slope = float(np.polyfit(np.log(ds), np.log(es), 1)[0])
        _say(args.quiet, f"fitted error slope: {slope:.3f}")
    csvio.write_sweep_report_csv(out / "report.csv", rows, slope)
    _say(args.quiet, f"wrote {out / 'report.csv'}")


def cmd_recon_critical(cfg: ExperimentConfig, args) -> None:
    if cfg.critical_target is None:
        raise ConfigError("critical: missing [critical] table")
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    sol = _solve(cfg, store_density=True)
    data_file = getattr(args, "data", None)
    if data_file is not None:
        cps = csvio.read_critical_points_csv(data_file, cfg.grid.x_min, cfg.grid.x_max)
    else:
        cps = extract_critical_points(sol)

    target = cfg.critical_target
    if target == "auto":
        d_const = np.ptp(cfg.model.d.values) == 0.0
        target = P_PRIME if d_const else D_PRIME
    if target == P_PRIME:
        truth_field = cfg.model.p
        rec = reconstruct_p_prime(cps, cfg.model.n0)
    else:
        truth_field = cfg.model.d
        rec = reconstruct_d_prime(cps, cfg.model.n0, sol.R, cfg.tg)
    csvio.write_reconstruction_csv(
        out / "pointwise.csv", rec, truth_fn=truth_field.dfn
    )
    _say(args.quiet, f"wrote {out / 'pointwise.csv'} ({len(rec.entries)} points, target {target})")

    if cfg.deltas and any(d > 0 for d in cfg.deltas):
        deltas = sorted((d for d in cfg.deltas if d > 0), reverse=True)
        seeds = [cfg.seed + i for i in range(len(deltas))]
        table = noise_rate_experiment(
            cfg.model, cfg.tg, deltas, seeds, target=target,
            fp_tol=cfg.fp_tol, max_inner=cfg.max_inner, sol=sol, cps=cps,
        )
        csvio.write_rate_table_csv(out / "rate_table.csv", table)
        _say(
            args.quiet,
            f"wrote {out / 'rate_table.csv'} (slope {table.slope:.3f} "
            f"over {table.fit_count} points)",
        )


def cmd_sweep(cfg: ExperimentConfig, args) -> None:
    has_inv = cfg.inversion is not None
    has_crit = cfg.critical_target is not None
    if has_inv == has_crit:
        raise ConfigError(
            "sweep: configure exactly one of [inversion] or [critical] to pick the mode"
        )
    if has_inv:
        cmd_invert(cfg, args)
    else:
        cmd_recon_critical(cfg, args)


_COMMANDS = {
    "forward": cmd_forward,
    "make-data": cmd_make_data,
    "invert": cmd_invert,
    "recon-critical": cmd_recon_critical,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="popident",
        description="Population-model simulation and parameter identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        sp = sub.add_parser(name, help=fn.__doc__)
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--out", default=None, help="override output directory")
        sp.add_argument("--seed", type=int, default=None, help="override noise seed")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")
        if name in ("invert", "recon-critical", "sweep"):
            sp.add_argument(
                "--data",
                default=None,
                help="measurement / critical-point CSV instead of in-pipeline generation",
            )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = Path(args.out)
        if args.seed is not None:
            cfg.seed = args.seed
        _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"popident: config error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except (ModelError, SingularSystemError, RuntimeError, ValueError) as exc:
        print(f"popident: solver error: {_one_line(exc)}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"popident: io error: {_one_line(exc)}", file=sys.stderr)
        return 4
    return 0


def _one_line(exc: Exception) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    raise SystemExit(main())
