import json
import math

import pytest

from fluxerasure.config import (ConfigError, bundled_config, grid_values, load_config, parse_config,
                                with_overrides)

from conftest import TWO_PI, paper_rates


@pytest.fixture(scope="module")
def cfg():
    return load_config(bundled_config())


def test_bundled_config_values(cfg):
    c = cfg.circuit()
    assert c.e_c == pytest.approx(TWO_PI * 1.72e9)
    assert c.e_j == pytest.approx(TWO_PI * 7.07e9)
    assert c.e_l == pytest.approx(TWO_PI * 0.32e9)
    assert cfg.rates().as_tuple() == pytest.approx(paper_rates().as_tuple())
    ro = cfg.readout()
    assert ro.kappa == pytest.approx(TWO_PI * 1.02e6)
    assert ro.chi01 == pytest.approx(-TWO_PI * 4.096e6)
    assert ro.chi02 == pytest.approx(-TWO_PI * 0.147e6)
    assert (ro.efficiency, ro.photon_number, ro.t_meas) == (0.298, 2.3, 1.6e-6)
    exp = cfg.experiment()
    assert exp.erasure_confusion.false_negative == pytest.approx(0.049)
    assert exp.eol_confusion.fidelity() == pytest.approx(0.861)
    assert exp.kick_probabilities()[0] == pytest.approx(1e-3)
    assert exp.t_ec == 5e-6 and exp.shots == 100_000


def test_gamma_m_target_solved(cfg):
    from fluxerasure.readout import dephasing_rate

    assert dephasing_rate(cfg.readout()) == pytest.approx(45.0, rel=1e-9)


def test_ramp_gap_from_spectrum(cfg):
    ramp = cfg.ramp()
    assert ramp.frequency_gap == pytest.approx(TWO_PI * 48.18e6, rel=2e-3)
    assert ramp.span_factor == 1.0


def test_bare_name_falls_back_to_bundled(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    assert load_config("paper.cfg").resolved == load_config(None).resolved


def test_resolved_round_trip(cfg):
    again = parse_config(json.loads(json.dumps(cfg.resolved)))
    assert again.resolved == cfg.resolved
    assert again.digest() == cfg.digest()


def test_summary_json_accepted(cfg):
    doc = {"subcommand": "spectrum", "config_hash": cfg.digest(), "config": cfg.resolved, "result": {}}
    assert parse_config(doc).resolved == cfg.resolved


def test_digest_ignores_output_dir_only(cfg):
    moved = with_overrides(cfg, output_dir="/elsewhere")
    assert moved.digest() == cfg.digest()
    assert with_overrides(cfg, master_seed=8).digest() != cfg.digest()
    assert cfg.digest("a") != cfg.digest("b")


def test_overrides(cfg):
    new = with_overrides(cfg, **{"experiment.shots": 5000, "lz.gap": "50e6 two_pi_hz"})
    assert new.experiment().shots == 5000
    assert new.ramp().frequency_gap == pytest.approx(TWO_PI * 50e6)
    assert with_overrides(cfg, **{"experiment.shots": None}).resolved == cfg.resolved


def test_exponent_floats_without_dot(tmp_path):
    text = bundled_config().read_text().replace("t_ec: 5.0e-6", "t_ec: 5e-06")
    p = tmp_path / "c.yaml"
    p.write_text(text)
    assert load_config(p).experiment().t_ec == 5e-6


def test_grid_values():
    assert list(grid_values({"start": 0.0, "stop": 1.0, "num": 3})) == [0.0, 0.5, 1.0]


def mutate(cfg, section, key, value):
    doc = json.loads(json.dumps(cfg.resolved))
    if key is None:
        doc[section] = value
    else:
        doc[section][key] = value
    return doc


@pytest.mark.parametrize("section,key,value,path", [
    ("readout", "kappa", "1.02e6", "readout.kappa"),
    ("readout", "kappa", "1.02e6 ghz", "readout.kappa"),
    ("readout", "colour", 1, "readout.colour"),
    ("experiment", "m", 2.5, "experiment.m"),
    ("experiment", "shots", True, "experiment.shots"),
    ("experiment", "t_ec", "soon", "experiment.t_ec"),
    ("experiment", "false_negative", 1.5, "experiment"),
    ("experiment", "tec_grid", [], "experiment.tec_grid"),
    ("sweep", "flux", {"start": 0, "stop": 1}, "sweep.flux.num"),
    ("sweep", "flux", {"start": 0, "stop": 1, "num": 0}, "sweep.flux.num"),
    ("drive", "amplitudes", {"start": "1 hz", "stop": "2 hz", "num": 3, "step": 1}, "drive.amplitudes.step"),
    ("fit", "parameterization", "cubic", "fit.parameterization"),
    ("circuit", "e_c", "-1e9 hz", "circuit"),
    ("widgets", None, {}, "widgets"),
    ("circuit", None, [1, 2], "circuit"),
])
def test_rejections_name_the_path(cfg, section, key, value, path):
    doc = mutate(cfg, section, key, value)
    with pytest.raises(ConfigError) as info:
        parsed = parse_config(doc)
        # some errors only surface when the typed view is built
        parsed.circuit(), parsed.experiment()
    assert info.value.path.startswith(path)
    assert path in str(info.value)


def test_missing_section_and_key(cfg):
    doc = json.loads(json.dumps(cfg.resolved))
    del doc["rates"]
    with pytest.raises(ConfigError, match="rates"):
        parse_config(doc)
    doc = json.loads(json.dumps(cfg.resolved))
    del doc["rates"]["g21"]
    with pytest.raises(ConfigError, match="rates.g21"):
        parse_config(doc)
    doc = json.loads(json.dumps(cfg.resolved))
    doc["readout"]["gamma_m_target"] = None
    doc["readout"]["omega_bare"] = None
    with pytest.raises(ConfigError, match="readout.omega_bare"):
        parse_config(doc)


def test_unreachable_dephasing_target(cfg):
    bad = with_overrides(cfg, **{"readout.gamma_m_target": "1e12 rad_per_s"})
    with pytest.raises(ConfigError, match="readout.gamma_m_target"):
        bad.readout()


def test_unreadable_and_invalid_files(tmp_path):
    with pytest.raises(ConfigError, match="--config"):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("circuit: [unclosed\n")
    with pytest.raises(ConfigError, match="--config"):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_non_finite_rejected(cfg):
    with pytest.raises(ConfigError, match="experiment.t_ec"):
        parse_config(mutate(cfg, "experiment", "t_ec", math.inf))
