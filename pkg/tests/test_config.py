"""YAML config loading: strict keys, path resolution, and the config hash."""

from __future__ import annotations

import shutil

import pytest
import yaml

from conftest import FIXTURES
from graphrag.config import load_config
from graphrag.errors import ConfigError

MUSEUM = FIXTURES / "museum"


def rewrite(tmp_path, mutate):
    """Copy the museum config, apply a mutation, and return the new path."""
    raw = yaml.safe_load((MUSEUM / "config.yaml").read_text())
    mutate(raw)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def test_museum_values():
    cfg = load_config(MUSEUM / "config.yaml")
    assert cfg.schema_path == MUSEUM / "schema.json"
    assert cfg.corpus_path == MUSEUM / "corpus"
    assert cfg.indexing.chunking.max_chars == 1200
    assert cfg.indexing.chunking.overlap_chars == 200
    assert cfg.indexing.attribute_relations == {"DatedTo": "era", "UnearthedIn": "region"}
    assert cfg.clustering.params.alpha == 0.5
    assert cfg.clustering.params.tau == 0.3
    assert cfg.clustering.attribute_keys == ("era",)
    assert len(cfg.clustering.multihop) == 1
    assert cfg.clustering.multihop[0].root == "Sword of Goujian"
    assert cfg.clustering.multihop[0].hops == 2
    assert cfg.fusion.w1 == 4.0
    assert cfg.fusion.w2 == 1.0
    assert cfg.clients.mode == "stub"
    assert cfg.clients.embed_dim == 64
    assert len(cfg.clients.stub_rules) == 3
    assert cfg.ablate == ()


def test_paths_resolve_relative_to_config_dir(tmp_path):
    nested = tmp_path / "deep" / "nest"
    nested.mkdir(parents=True)
    shutil.copy(MUSEUM / "config.yaml", nested / "config.yaml")
    cfg = load_config(nested / "config.yaml")
    assert cfg.schema_path == nested / "schema.json"
    assert cfg.index_dir == nested / "index"


def test_unknown_top_level_key(tmp_path):
    path = rewrite(tmp_path, lambda raw: raw.update(mystery=1))
    with pytest.raises(ConfigError, match="mystery"):
        load_config(path)


def test_unknown_nested_keys(tmp_path):
    for section, key in [
        ("chunking", "stride"),
        ("indexing", "batchsize"),
        ("clustering", "gamma"),
        ("fusion", "w3"),
        ("clients", "retries"),
    ]:
        def mutate(raw, section=section, key=key):
            raw[section][key] = 1

        path = rewrite(tmp_path, mutate)
        with pytest.raises(ConfigError, match=key):
            load_config(path)


def test_bad_client_mode(tmp_path):
    path = rewrite(tmp_path, lambda raw: raw["clients"].update(mode="psychic"))
    with pytest.raises(ConfigError, match="mode"):
        load_config(path)


def test_bad_ablate_value(tmp_path):
    path = rewrite(tmp_path, lambda raw: raw.update(ablate=["everything"]))
    with pytest.raises(ConfigError, match="ablate"):
        load_config(path)


def test_tau_out_of_range(tmp_path):
    path = rewrite(tmp_path, lambda raw: raw["clustering"].update(tau=1.5))
    with pytest.raises(ConfigError):
        load_config(path)


def test_multihop_requires_root(tmp_path):
    path = rewrite(tmp_path, lambda raw: raw["clustering"].update(multihop=[{"hops": 2}]))
    with pytest.raises(ConfigError, match="root"):
        load_config(path)


def test_not_a_mapping(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("- just\n- a\n- list\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


class TestConfigHash:
    def test_stable_across_locations(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for d in (a, b):
            d.mkdir()
            shutil.copy(MUSEUM / "config.yaml", d / "config.yaml")
        assert load_config(a / "config.yaml").hash() == load_config(b / "config.yaml").hash()

    def test_index_dir_excluded(self, tmp_path):
        base = load_config(MUSEUM / "config.yaml")
        moved = rewrite(tmp_path, lambda raw: raw.update(index_dir="elsewhere"))
        assert load_config(moved).hash() == base.hash()

    def test_parameter_change_changes_hash(self, tmp_path):
        base = load_config(MUSEUM / "config.yaml")
        changed = rewrite(tmp_path, lambda raw: raw["clustering"].update(alpha=0.9))
        assert load_config(changed).hash() != base.hash()
