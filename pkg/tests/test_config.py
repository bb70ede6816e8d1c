import pytest

from oneshot_manip.config import BenchmarkConfig, ConfigInvalid, load_config


def test_defaults_without_file():
    cfg = load_config(None)
    assert cfg.benchmark.levels == (1, 2, 3)
    assert cfg.benchmark.trials == 25
    assert cfg.pipeline.mode == "oracle"
    assert cfg.pipeline.stride == 5
    assert cfg.planner.step_size == 0.05
    assert cfg.vlm.credential_env == "VLM_API_KEY"


def test_load_overrides(tmp_path):
    path = tmp_path / "bench.toml"
    path.write_text("""
[benchmark]
levels = [1, 2]
seeds = [3, 4]
trials = 7
perturbation_pos = 0.01

[pipeline]
mode = "descriptor"
temperature = 0.5

[planner]
step_size = 0.02

[vlm]
model = "other-model"
""")
    cfg = load_config(str(path))
    assert cfg.benchmark.levels == (1, 2)
    assert cfg.benchmark.seeds == (3, 4)
    assert cfg.benchmark.trials == 7
    assert cfg.pipeline.mode == "descriptor"
    assert cfg.pipeline.temperature == 0.5
    assert cfg.planner.step_size == 0.02
    assert cfg.vlm.model == "other-model"
    snapshot = cfg.to_dict()
    assert snapshot["benchmark"]["trials"] == 7


def test_unknown_section_and_key_rejected(tmp_path):
    bad_section = tmp_path / "a.toml"
    bad_section.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(bad_section))
    bad_key = tmp_path / "b.toml"
    bad_key.write_text("[benchmark]\nbogus = 1\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(bad_key))


def test_invalid_values_rejected(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[pipeline]\nmode = \"psychic\"\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(bad))
    bad.write_text("[benchmark]\nlevels = [9]\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(bad))
    bad.write_text("[benchmark]\ntrials = 0\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(bad))


def test_missing_or_invalid_file():
    with pytest.raises(ConfigInvalid):
        load_config("/does/not/exist.toml")


def test_endpoint_config_from_vlm_section():
    endpoint = BenchmarkConfig().vlm.endpoint_config()
    assert endpoint.model == "gpt-4o"
    assert endpoint.credential_env == "VLM_API_KEY"
