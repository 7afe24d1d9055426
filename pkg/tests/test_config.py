import copy

import pytest
import yaml

from entlink.config import PRESETS, ConfigError, config_from_dict, config_hash, load_config


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_round_trip(name):
    cfg = load_config(name)
    doc = cfg.to_dict()
    again = config_from_dict(yaml.safe_load(yaml.safe_dump(doc)))
    assert again == cfg
    assert config_hash(again) == cfg.hash()


def test_overrides_change_hash():
    base = load_config("93km")
    assert load_config("93km", seed=base.seed + 1).hash() != base.hash()
    assert load_config("93km", duration=5.0).duration == 5.0


def test_unknown_keys_rejected():
    doc = load_config("ideal").to_dict()
    bad = copy.deepcopy(doc)
    bad["signal_fiber"]["lenght_km"] = 3
    with pytest.raises(ConfigError, match="lenght_km"):
        config_from_dict(bad)
    bad = copy.deepcopy(doc)
    bad["extra"] = 1
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_invalid_values_name_the_invariant():
    with pytest.raises(ConfigError, match="duration"):
        load_config("ideal", duration=0.0)
    doc = load_config("ideal").to_dict()
    doc["detectors"]["signal"]["efficiency"] = 1.5
    with pytest.raises(ValueError, match="efficiency"):
        config_from_dict(doc)


def test_missing_config(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")


def test_preset_scenarios():
    c93 = load_config("93km")
    assert c93.signal_fiber.length == 93 and c93.signal_fiber.attenuation == 0.38
    assert c93.dcm is not None and c93.dcm_arm == "idler" and c93.dcm.insertion_loss == 4.3
    assert c93.expected_delay == 457_369_970
