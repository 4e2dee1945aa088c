"""Experiment configuration: one TOML document per run.

Unknown keys are rejected with their dotted path, and every physical
value is pushed through the model constructors at load time so that a
bad parameterization fails here, not mid-experiment. Noise is always
stored as the L2 level delta (never as a percentage), and the RNG behind
every seed is numpy's default PCG64.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib

from .model import (
    ModelInstance,
    ParameterField,
    SpatialGrid,
    TimeGrid,
    preset_field,
)

FULL_VARIANT = "full"
PERTURBED_VARIANT = "perturbed"


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key path."""


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _check_keys(table: dict, allowed: set, path: str):
    for key in table:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, "unknown key")


def _get(table: dict, key: str, path: str, types, required=True, default=None):
    if key not in table:
        if required:
            _fail(f"{path}.{key}", "missing required key")
        return default
    val = table[key]
    if not isinstance(val, types) or isinstance(val, bool):
        wanted = types.__name__ if isinstance(types, type) else "number"
        _fail(f"{path}.{key}", f"expected {wanted}, got {type(val).__name__}")
    return val


@dataclass(eq=False)
class FieldSpec:
    name: str
    scale: float = 1.0
    offset: float = 0.0

    def build(self, grid: SpatialGrid) -> ParameterField:
        return preset_field(grid, self.name, scale=self.scale, offset=self.offset)


def _parse_field_spec(raw, path: str) -> FieldSpec:
    if isinstance(raw, str):
        return FieldSpec(raw)
    if isinstance(raw, dict):
        _check_keys(raw, {"name", "scale", "offset"}, path)
        name = _get(raw, "name", path, str)
        scale = float(_get(raw, "scale", path, (int, float), required=False, default=1.0))
        offset = float(_get(raw, "offset", path, (int, float), required=False, default=0.0))
        return FieldSpec(name, scale, offset)
    _fail(path, "expected a preset string or a {name, scale, offset} table")


@dataclass(eq=False)
class InversionConfig:
    variant: str = FULL_VARIANT
    alpha: Optional[float] = None  # None means "pair alpha with delta"
    tau: float = 1.5
    max_iter: int = 50
    prior: FieldSpec | str = "source"  # "source" builds p0 from the source condition


@dataclass(eq=False)
class ExperimentConfig:
    grid: SpatialGrid
    tg: TimeGrid
    model: ModelInstance
    p_spec: FieldSpec
    d_spec: FieldSpec
    n0_spec: FieldSpec
    fp_tol: float = 1e-12
    max_inner: int = 100
    relaxation: float = 1.0
    snapshot_times: List[float] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)
    seed: int = 0
    inversion: Optional[InversionConfig] = None
    critical_target: Optional[str] = None
    out_dir: Path = Path("out")

    @property
    def delta(self) -> float:
        """Single noise level; errors out when a sweep list was configured."""
        if len(self.deltas) != 1:
            raise ConfigError(
                "noise.delta: this command needs a single noise level "
                f"(got {len(self.deltas)} entries)"
            )
        return self.deltas[0]


_TOP_KEYS = {"model", "grid", "time", "forward", "noise", "inversion", "critical", "output"}


def parse_config(doc: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    _check_keys(doc, _TOP_KEYS, "")

    mt = doc.get("model")
    if not isinstance(mt, dict):
        _fail("model", "missing [model] table")
    _check_keys(mt, {"p", "d", "n0"}, "model")
    for key in ("p", "d", "n0"):
        if key not in mt:
            _fail(f"model.{key}", "missing required key")
    p_spec = _parse_field_spec(mt["p"], "model.p")
    d_spec = _parse_field_spec(mt["d"], "model.d")
    n0_spec = _parse_field_spec(mt["n0"], "model.n0")

    gt = doc.get("grid")
    if not isinstance(gt, dict):
        _fail("grid", "missing [grid] table")
    _check_keys(gt, {"x_min", "x_max", "h"}, "grid")
    x_min = float(_get(gt, "x_min", "grid", (int, float)))
    x_max = float(_get(gt, "x_max", "grid", (int, float)))
    h = float(_get(gt, "h", "grid", (int, float)))
    try:
        grid = SpatialGrid.from_spacing(x_min, x_max, h)
    except ValueError as exc:
        _fail("grid", str(exc))

    tt = doc.get("time")
    if not isinstance(tt, dict):
        _fail("time", "missing [time] table")
    _check_keys(tt, {"T", "dt"}, "time")
    T = float(_get(tt, "T", "time", (int, float)))
    dt = float(_get(tt, "dt", "time", (int, float)))
    try:
        tg = TimeGrid.from_spacing(T, dt)
    except ValueError as exc:
        _fail("time", str(exc))

    try:
        model = ModelInstance(
            p=p_spec.build(grid), d=d_spec.build(grid), n0=n0_spec.build(grid)
        )
    except ValueError as exc:
        _fail("model", str(exc))

    cfg = ExperimentConfig(
        grid=grid, tg=tg, model=model,
        p_spec=p_spec, d_spec=d_spec, n0_spec=n0_spec,
    )

    ft = doc.get("forward", {})
    _check_keys(ft, {"fp_tol", "max_inner", "relaxation", "snapshot_times"}, "forward")
    cfg.fp_tol = float(_get(ft, "fp_tol", "forward", (int, float), required=False, default=1e-12))
    if cfg.fp_tol <= 0:
        _fail("forward.fp_tol", "must be positive")
    cfg.max_inner = int(_get(ft, "max_inner", "forward", int, required=False, default=100))
    if cfg.max_inner < 1:
        _fail("forward.max_inner", "must be >= 1")
    cfg.relaxation = float(_get(ft, "relaxation", "forward", (int, float), required=False, default=1.0))
    if not 0 < cfg.relaxation <= 1:
        _fail("forward.relaxation", "must lie in (0, 1]")
    snaps = _get(ft, "snapshot_times", "forward", list, required=False, default=[])
    for i, s in enumerate(snaps):
        if isinstance(s, bool) or not isinstance(s, (int, float)):
            _fail(f"forward.snapshot_times[{i}]", "expected a number")
        try:
            tg.index_of(float(s))
        except ValueError as exc:
            _fail(f"forward.snapshot_times[{i}]", str(exc))
    cfg.snapshot_times = [float(s) for s in snaps]

    nt = doc.get("noise", {})
    _check_keys(nt, {"delta", "deltas", "seed"}, "noise")
    if "delta" in nt and "deltas" in nt:
        _fail("noise", "give either delta or deltas, not both")
    if "delta" in nt:
        dv = _get(nt, "delta", "noise", (int, float))
        if dv < 0:
            _fail("noise.delta", "must be nonnegative")
        cfg.deltas = [float(dv)]
    elif "deltas" in nt:
        lst = _get(nt, "deltas", "noise", list)
        if not lst:
            _fail("noise.deltas", "must not be empty")
        for i, dv in enumerate(lst):
            if isinstance(dv, bool) or not isinstance(dv, (int, float)) or dv <= 0:
                _fail(f"noise.deltas[{i}]", "expected a positive number")
        cfg.deltas = [float(dv) for dv in lst]
    cfg.seed = int(_get(nt, "seed", "noise", int, required=False, default=0))

    it = doc.get("inversion")
    if it is not None:
        _check_keys(it, {"variant", "alpha", "tau", "max_iter", "prior"}, "inversion")
        inv = InversionConfig()
        inv.variant = _get(it, "variant", "inversion", str, required=False, default=FULL_VARIANT)
        if inv.variant not in (FULL_VARIANT, PERTURBED_VARIANT):
            _fail("inversion.variant", f"must be '{FULL_VARIANT}' or '{PERTURBED_VARIANT}'")
        if "alpha" in it:
            av = it["alpha"]
            if av == "delta":
                inv.alpha = None
            elif isinstance(av, (int, float)) and not isinstance(av, bool) and av > 0:
                inv.alpha = float(av)
            else:
                _fail("inversion.alpha", "expected a positive number or the string 'delta'")
        inv.tau = float(_get(it, "tau", "inversion", (int, float), required=False, default=1.5))
        if not inv.tau > 1:
            _fail("inversion.tau", "must exceed 1")
        inv.max_iter = int(_get(it, "max_iter", "inversion", int, required=False, default=50))
        if inv.max_iter < 0:
            _fail("inversion.max_iter", "must be nonnegative")
        if "prior" in it and it["prior"] != "source":
            inv.prior = _parse_field_spec(it["prior"], "inversion.prior")
        cfg.inversion = inv

    ct = doc.get("critical")
    if ct is not None:
        _check_keys(ct, {"target"}, "critical")
        target = _get(ct, "target", "critical", str, required=False, default="auto")
        if target not in ("auto", "p_prime", "d_prime"):
            _fail("critical.target", "must be 'auto', 'p_prime' or 'd_prime'")
        cfg.critical_target = target

    ot = doc.get("output", {})
    _check_keys(ot, {"dir"}, "output")
    out = _get(ot, "dir", "output", str, required=False, default="out")
    cfg.out_dir = (base_dir / out) if not Path(out).is_absolute() else Path(out)

    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML: {exc}")
    return parse_config(doc, base_dir=path.parent)
