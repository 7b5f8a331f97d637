import pytest

from config import (
    ExperimentConfig,
    build_config,
    default_geometry_dict,
    dump_config,
    parse_config,
    preset_config,
    preset_dict,
    snr_db_to_noise_power,
)
from errors import ConfigError


def test_desk_preset_defaults():
    cfg = preset_config("desk")
    assert cfg.num_antennas == 32
    assert cfg.effective_noise_power == pytest.approx(0.1)
    assert cfg.effective_grid_size == 8 * 32
    assert cfg.estimators == ["unquantized", "nondithered", "dithered"]
    assert cfg.allow_ridge and cfg.chunk_size == 2048


def test_large_preset_trial_structure():
    cfg = preset_config("paper")
    assert (cfg.num_geometries, cfg.num_groups, cfg.num_channel_draws) == (10, 20, 100)
    assert cfg.num_antennas == 256 and cfg.num_users == 4


def test_snr_mapping():
    assert snr_db_to_noise_power(10.0) == pytest.approx(0.1)
    assert snr_db_to_noise_power(0.0) == pytest.approx(1.0)
    assert preset_config("desk", snr_db=3.0).effective_noise_power == snr_db_to_noise_power(3.0)


def test_grid_defaults_to_twice_the_array_outside_presets():
    cfg = build_config({"geometry": default_geometry_dict(16), "lambdas": [1.0], "sample_sizes": [10]})
    assert cfg.effective_grid_size == 32
    assert preset_config("paper").effective_grid_size == 8 * 256
    assert preset_config("desk", grid_size=100).effective_grid_size == 100


def test_explicit_noise_power_wins():
    cfg = preset_config("desk", noise_power=0.5)
    assert cfg.effective_noise_power == 0.5


def test_default_geometry_masks():
    geometry = default_geometry_dict(16)
    assert geometry["local_clusters"][0]["antennas"] == [[1, 4]]
    assert geometry["local_clusters"][1]["antennas"] == [[13, 16]]
    with pytest.raises(ConfigError, match="divisible by 4"):
        default_geometry_dict(30)


def test_antenna_ranges_are_one_based():
    cfg = preset_config("desk")
    assert cfg.geometry.local_clusters[1].antenna_indices() == list(range(24, 32))


def test_unknown_key_is_named():
    data = preset_dict("desk")
    data["lamdas"] = [1.0]
    with pytest.raises(ConfigError, match="unknown key 'lamdas'") as excinfo:
        build_config(data)
    assert excinfo.value.field == "lamdas"


def test_nested_unknown_key_has_field_path():
    data = preset_dict("desk")
    data["geometry"]["local_clusters"][0]["colour"] = "red"
    with pytest.raises(ConfigError) as excinfo:
        build_config(data)
    assert excinfo.value.field == "geometry.local_clusters.0.colour"


@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"lambdas": [1.0, -0.5]}, "lambdas"),
        ({"sample_sizes": [0]}, "sample_sizes"),
        ({"num_users": 0}, "num_users"),
        ({"chunk_size": 0}, "chunk_size"),
    ],
)
def test_invalid_values_are_rejected(overrides, field):
    with pytest.raises(ConfigError) as excinfo:
        preset_config("desk", **overrides)
    assert excinfo.value.field == field
    assert f"field '{field}'" in str(excinfo.value)


def test_mask_outside_array_is_rejected():
    with pytest.raises(ConfigError, match="outside 1..32"):
        preset_config("desk", geometry={"local_clusters": [
            {"num_paths": 1, "aoa_range": [0, 10], "power": 0.7, "antennas": [[30, 40]]},
        ]})


def test_noise_must_be_defined():
    with pytest.raises(ConfigError, match="snr_db or noise_power"):
        preset_config("desk", snr_db=None, noise_power=None)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown preset"):
        preset_config("lab")


def test_dump_and_parse_round_trip(tmp_path):
    cfg = preset_config("desk", seed=123, output="out.csv", grid_spacing="sine")
    path = tmp_path / "cfg.yaml"
    dump_config(cfg, str(path))
    assert parse_config(str(path)) == cfg


def test_file_is_merged_over_preset(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 9\nsample_sizes: [10, 20]\ngeometry:\n  num_antennas: 32\n", encoding="utf-8")
    cfg = parse_config(str(path), preset="desk")
    assert cfg.seed == 9 and cfg.sample_sizes == [10, 20]
    assert len(cfg.geometry.local_clusters) == 2


def test_unknown_key_in_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 1\nworkers: 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown key 'workers'"):
        parse_config(str(path), preset="desk")


def test_malformed_yaml_reports_line(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("seed: 1\nlambdas: [1.0, 2.0\nsample_sizes: [5]\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="malformed YAML") as excinfo:
        parse_config(str(path))
    assert excinfo.value.line is not None


def test_top_level_must_be_mapping(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        parse_config(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(str(tmp_path / "absent.yaml"))


def test_config_is_frozen():
    cfg = preset_config("desk")
    with pytest.raises(Exception):
        cfg.seed = 4
    assert isinstance(cfg, ExperimentConfig)
