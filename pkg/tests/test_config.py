import pytest

from phi4ml.config import (ConfigError, parse_config, resolved_config_text,
                           SCHEMAS)


def test_defaults_applied():
    cfg = parse_config("sample")
    assert cfg["L"] == 4
    assert cfg["n_samples"] == 10000
    assert cfg["seed"] == 0
    assert cfg["a"] == 1.52425


def test_unknown_verb():
    with pytest.raises(ConfigError):
        parse_config("frobnicate")


def test_unknown_key_is_hard_error():
    with pytest.raises(ConfigError):
        parse_config("sample", overrides=["n_sample=10"])


def test_missing_required_key():
    with pytest.raises(ConfigError):
        parse_config("reweight")


def test_bad_value_type():
    with pytest.raises(ConfigError):
        parse_config("sample", overrides=["L=four"])
    with pytest.raises(ConfigError):
        parse_config("sample", overrides=["periodic=maybe"])
    with pytest.raises(ConfigError):
        parse_config("sample", overrides=["L"])


def test_override_precedence_over_file(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("[sample]\nL = 8\nn_samples = 500\n")
    cfg = parse_config("sample", str(f), overrides=["L=6"])
    assert cfg["L"] == 6             # flag beats file
    assert cfg["n_samples"] == 500   # file beats default


def test_file_section_scoping(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("[oracle]\nL = 2\n[sample]\nL = 8\n")
    assert parse_config("sample", str(f))["L"] == 8
    assert parse_config("oracle", str(f))["L"] == 2


def test_missing_config_file():
    with pytest.raises(FileNotFoundError):
        parse_config("sample", "/nonexistent/run.cfg")


def test_list_values():
    cfg = parse_config("reweight", overrides=["ensemble=e.txt",
                                              "gprime=-1.0, -0.9 -0.8"])
    assert cfg["gprime"] == (-1.0, -0.9, -0.8)
    cfg = parse_config("sample", overrides=[])
    assert cfg["L"] == 4


def test_active_terms_list():
    cfg = parse_config("oracle", overrides=["active_terms=1 2 3 4"])
    assert cfg["active_terms"] == (1, 2, 3, 4)


def test_threads_env_fallback(monkeypatch):
    monkeypatch.setenv("PHI4ML_THREADS", "3")
    assert parse_config("sample")["threads"] == 3
    assert parse_config("sample", overrides=["threads=2"])["threads"] == 2


def test_resolved_text_lists_every_key():
    cfg = parse_config("train-variational")
    text = resolved_config_text(cfg)
    assert text.startswith("[train-variational]\n")
    for key in SCHEMAS["train-variational"]:
        assert f"{key} = " in text
    assert "tie = true" in text
