"""Config parsing: schema enforcement, defaults, key-path errors."""

import pytest

from popident.config import ConfigError, load_config, parse_config


def minimal_doc(**extra):
    doc = {
        "model": {"p": "exp", "d": "const:1", "n0": "cos_half"},
        "grid": {"x_min": -1.0, "x_max": 1.0, "h": 0.5},
        "time": {"T": 1.0, "dt": 0.5},
    }
    doc.update(extra)
    return doc


def test_minimal_config_defaults():
    cfg = parse_config(minimal_doc())
    assert cfg.grid.n_points == 5
    assert cfg.tg.n_steps == 2
    assert cfg.fp_tol == 1e-12
    assert cfg.deltas == []
    assert cfg.inversion is None
    assert cfg.critical_target is None


def test_unknown_top_level_key():
    with pytest.raises(ConfigError, match="mode1"):
        parse_config(minimal_doc(mode1={}))


def test_unknown_nested_key_path():
    doc = minimal_doc()
    doc["time"]["warp"] = 2
    with pytest.raises(ConfigError, match="time.warp"):
        parse_config(doc)


def test_field_spec_table_with_scale():
    doc = minimal_doc()
    doc["model"]["p"] = {"name": "exp", "scale": 0.1}
    cfg = parse_config(doc)
    assert cfg.model.p.values[2] == pytest.approx(0.1)  # e^0 scaled


def test_bad_field_spec_type():
    doc = minimal_doc()
    doc["model"]["p"] = 3
    with pytest.raises(ConfigError, match="model.p"):
        parse_config(doc)


def test_model_invariants_checked_at_load():
    doc = minimal_doc()
    doc["model"]["d"] = "const:-1"
    with pytest.raises(ConfigError, match="model"):
        parse_config(doc)


def test_alpha_delta_pairing_keyword():
    doc = minimal_doc(
        noise={"delta": 0.01, "seed": 1},
        inversion={"alpha": "delta"},
    )
    cfg = parse_config(doc)
    assert cfg.inversion.alpha is None  # resolved per delta at run time


def test_alpha_must_be_positive():
    doc = minimal_doc(inversion={"alpha": 0.0})
    with pytest.raises(ConfigError, match="inversion.alpha"):
        parse_config(doc)


def test_snapshot_times_must_be_nodes():
    doc = minimal_doc(forward={"snapshot_times": [0.3]})
    with pytest.raises(ConfigError, match="snapshot_times"):
        parse_config(doc)


def test_deltas_positive():
    doc = minimal_doc(noise={"deltas": [0.1, -0.1]})
    with pytest.raises(ConfigError, match=r"noise.deltas\[1\]"):
        parse_config(doc)


def test_delta_property_requires_single_value():
    cfg = parse_config(minimal_doc(noise={"deltas": [0.1, 0.2]}))
    with pytest.raises(ConfigError, match="single noise level"):
        cfg.delta


def test_critical_target_validated():
    doc = minimal_doc(critical={"target": "n0_prime"})
    with pytest.raises(ConfigError, match="critical.target"):
        parse_config(doc)


def test_load_config_reports_bad_toml(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[model\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(path)


def test_output_dir_relative_to_config(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        """
[model]
p = "exp"
d = "const:1"
n0 = "cos_half"
[grid]
x_min = -1.0
x_max = 1.0
h = 0.5
[time]
T = 1.0
dt = 0.5
[output]
dir = "results"
""",
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.out_dir == tmp_path / "results"
