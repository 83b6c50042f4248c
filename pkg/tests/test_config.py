import json

import pytest

from uraner.config import ConfigError, PipelineConfig, apply_env, load_config


def write(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def test_defaults_without_file():
    cfg = load_config(None, environ={})
    assert cfg.language == "en"
    assert cfg.index.bm25_k1 == 1.2 and cfg.index.bm25_b == 0.75
    assert cfg.seeds == [cfg.model.seed]


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys"):
        load_config(write(tmp_path, {"retreival": {}}), environ={})
    with pytest.raises(ConfigError, match="section 'retrieval'"):
        load_config(write(tmp_path, {"retrieval": {"k_txt": 3}}), environ={})
    with pytest.raises(ConfigError, match="section 'model'"):
        load_config(write(tmp_path, {"model": {"mode": "early"}}), environ={})
    with pytest.raises(ConfigError, match="must be an object"):
        load_config(write(tmp_path, {"model": 3}), environ={})


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json", environ={})
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad, environ={})
    with pytest.raises(ConfigError, match="JSON object"):
        PipelineConfig.from_dict([1, 2])


def test_paths_resolve_against_config_dir(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "docs.jsonl").write_text("")
    cfg = load_config(write(sub, {"paths": {"kb_documents": "docs.jsonl", "train": {"a": "docs.jsonl"}}}),
                      environ={})
    assert cfg.paths.kb_documents == str((sub / "docs.jsonl").resolve())
    assert cfg.paths.train_corpora() == {"a": str((sub / "docs.jsonl").resolve())}
    assert cfg.paths.store_dir == str((sub / "work" / "store").resolve())


def test_missing_inputs_listed(tmp_path):
    path = write(tmp_path, {"paths": {"kb_documents": "nope.jsonl", "train": "also_nope.conll"}})
    with pytest.raises(ConfigError, match="nope.jsonl.*also_nope.conll"):
        load_config(path, environ={})
    assert load_config(path, environ={}, validate=False).paths.kb_documents.endswith("nope.jsonl")


def test_env_overrides(tmp_path):
    path = write(tmp_path, {"model": {"seed": 1}, "retrieval": {"k_text": 4}})
    env = {"URANER_MODEL__SEED": "7", "URANER_RETRIEVAL__ENTITY_FIRST": "true",
           "URANER_LANGUAGE": "de", "URANER_ENSEMBLE__SEEDS": "[1, 2]", "UNRELATED": "x"}
    cfg = load_config(path, environ=env)
    assert cfg.model.seed == 7
    assert cfg.retrieval.k_text == 4 and cfg.retrieval.entity_first is True
    assert cfg.language == "de"
    assert cfg.seeds == [1, 2]


def test_env_plain_string_values():
    assert apply_env({}, {"URANER_MODEL__MODE": "raner"}) == {"model": {"mode": "raner"}}


def test_env_errors():
    with pytest.raises(ConfigError, match="unknown config section"):
        apply_env({}, {"URANER_NETWORK__PORT": "1"})
    with pytest.raises(ConfigError, match="expected"):
        apply_env({}, {"URANER_SEED": "1"})
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(None, environ={"URANER_MODEL__SEEED": "1"})


def test_env_does_not_mutate_input():
    data = {"model": {"seed": 1}}
    apply_env(data, {"URANER_MODEL__SEED": "2"})
    assert data == {"model": {"seed": 1}}


def test_dump_roundtrip(tmp_path):
    cfg = load_config(write(tmp_path, {"model": {"epochs": 3}, "ensemble": {"seeds": [4, 5]}}), environ={})
    dumped = tmp_path / "dump.json"
    cfg.dump(dumped)
    again = load_config(dumped, environ={})
    assert again.to_dict() == cfg.to_dict()
    assert dumped.read_text() == json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
