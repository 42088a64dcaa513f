import json
import re

import pytest

from cransim.scenario import ConfigError, apply_overrides, bundled_scenario, from_dict, load_scenario


def test_bundled_is_valid(scenario):
    scenario.validate()
    assert len(scenario.stations) == 3
    assert scenario.soo_emitter.carrier == 178.352e6


def test_baselines_match_city_geometry(scenario):
    import numpy as np

    p = {s.id: np.array(s.position) for s in scenario.stations}
    assert np.linalg.norm(p[1] - p[0]) == pytest.approx(1300, rel=0.01)
    assert np.linalg.norm(p[2] - p[0]) == pytest.approx(2400, rel=0.01)


def test_config_hash_deterministic(scenario):
    again = bundled_scenario()
    assert scenario.config_hash() == again.config_hash()
    changed = from_dict(apply_overrides(scenario.to_dict(), {"seed": 1}))
    assert changed.config_hash() != scenario.config_hash()


def test_two_stations_with_tdoa_rejected(scenario):
    doc = scenario.to_dict()
    doc["stations"] = doc["stations"][:2]
    with pytest.raises(ConfigError, match=r"^stations: TDoA"):
        from_dict(doc)
    doc["tdoa"]["enabled"] = False
    from_dict(doc)


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d["stations"][1].update(id=0), "stations[1].id"),
    (lambda d: d["stations"][0].update(bogus=1), "stations[0].bogus"),
    (lambda d: d["sync"].update(ref_id=9), "sync.ref_id"),
    (lambda d: d["frontend"].update(bits=12), "frontend.bits"),
    (lambda d: d.pop("lpwan_emitter"), "lpwan_emitter"),
    (lambda d: d["soo_emitter"].update(carrier=-1.0), "soo_emitter.carrier"),
])
def test_errors_carry_field_paths(scenario, mutate, path):
    doc = scenario.to_dict()
    mutate(doc)
    with pytest.raises(ValueError) as err:
        from_dict(doc)
    assert str(err.value).startswith(path)


def test_load_from_file_and_bundled_name(tmp_path, scenario):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(scenario.to_dict()))
    assert load_scenario(p).config_hash() == scenario.config_hash()
    assert load_scenario("ilmenau.json").config_hash() == scenario.config_hash()
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_scenario(bad)
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")


def test_overrides_dotted_and_indexed(scenario):
    doc = apply_overrides(scenario.to_dict(), {"sync.duration": 0.1, "stations.1.sco_ppm": 0.5})
    assert doc["sync"]["duration"] == 0.1
    assert doc["stations"][1]["sco_ppm"] == 0.5
    assert scenario.to_dict()["sync"]["duration"] == 0.25


@pytest.mark.parametrize("key,value,msg", [
    ("stations.0.cfo", "abc", "stations[0].cfo: expected a number"),
    ("sync.n_blocks", 16.5, "sync.n_blocks: expected an integer"),
    ("frontend.compress", 1, "frontend.compress: expected true or false"),
    ("seed", True, "seed: expected an integer"),
    ("name", 3, "name: expected a string"),
])
def test_scalar_types_checked(scenario, key, value, msg):
    with pytest.raises(ConfigError, match=re.escape(msg)):
        from_dict(apply_overrides(scenario.to_dict(), {key: value}))


def test_integers_accepted_for_floats(scenario):
    cfg = from_dict(apply_overrides(scenario.to_dict(), {"schedule.interval": 90}))
    assert isinstance(cfg.schedule.interval, float)


def test_unknown_telegram_parameter(scenario):
    with pytest.raises(ConfigError, match="telegram"):
        from_dict(apply_overrides(scenario.to_dict(), {"telegram.chirpiness": 3}))
