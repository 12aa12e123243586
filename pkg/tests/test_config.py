import json

import pytest

from cotexit.config import DEFAULTS, KEYS, flatten, load_config, parse_override, resolved_flat
from cotexit.controller import ExitConfig
from cotexit.errors import ConfigurationError
from cotexit.verification import TaskKind


def test_no_file_gives_defaults():
    cfg = load_config()
    assert cfg == ExitConfig()
    assert resolved_flat(cfg) == DEFAULTS


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg.verification.lam == 0.98
    assert resolved_flat(cfg) == DEFAULTS


def test_documented_defaults():
    flat = resolved_flat(load_config())
    expect = {
        "tau_sim": 0.35, "k": 1, "lambda": 0.98, "epsilon": 0.03, "L": 2,
        "loop.min_steps": 50, "loop.gate": 0.8, "loop.m": None,
        "temperature": 0.6, "top_p": 0.95, "max_steps": 512, "max_total_tokens": 32768,
    }
    assert {k: flat[k] for k in expect} == expect


def test_override_tau():
    assert load_config(overrides=["tau_sim=0.50"]).redundancy.tau_sim == 0.50


def test_lambda_out_of_range_named():
    with pytest.raises(ConfigurationError, match=r"'lambda'.*out of range"):
        load_config(overrides=["lambda=1.5"])


def test_unknown_key_named(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("redundancy_threshold: 0.4\n")
    with pytest.raises(ConfigurationError, match="redundancy_threshold") as info:
        load_config(p)
    assert str(p) in str(info.value)


def test_unreadable_and_unparseable_files(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigurationError, match="does not parse"):
        load_config(bad)
    seq = tmp_path / "seq.yaml"
    seq.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_config(seq)


def test_precedence_override_over_file_over_default(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"k": 3, "loop": {"m": 4, "min_steps": 10}, "tau_sim": 0.4}))
    cfg = load_config(p, ["k=5"])
    assert cfg.redundancy.k == 5
    assert cfg.redundancy.tau_sim == 0.4
    assert cfg.loop_breaker.m == 4 and cfg.loop_breaker.min_steps == 10
    assert cfg.verification.lam == 0.98


def test_nested_and_dotted_keys_agree(tmp_path):
    a = tmp_path / "a.yaml"
    a.write_text("loop:\n  m: 4\nsegmenter:\n  l_min: 150\n")
    b = tmp_path / "b.yaml"
    b.write_text("loop.m: 4\nsegmenter.l_min: 150\n")
    assert load_config(a) == load_config(b)


def test_type_errors_named():
    with pytest.raises(ConfigurationError, match=r"'k'.*expects int"):
        load_config(overrides={"k": 1.5})
    with pytest.raises(ConfigurationError, match="slide_windows"):
        load_config(overrides=["slide_windows=maybe"])
    with pytest.raises(ConfigurationError, match="may not be null"):
        load_config(overrides=["lambda=null"])
    with pytest.raises(ConfigurationError, match="not KEY=VALUE"):
        load_config(overrides=["lambda"])


def test_nullable_and_task_keys():
    cfg = load_config(overrides=["loop.m=null", "task=code", "probe_token_cap=12"])
    assert cfg.loop_breaker.m is None and cfg.task is TaskKind.CODE
    assert cfg.verification.cap_for(cfg.task) == 12
    with pytest.raises(ConfigurationError):
        load_config(overrides=["task=poetry"])


def test_segment_bounds_cross_check():
    with pytest.raises(ConfigurationError, match="l_min"):
        load_config(overrides=["segmenter.l_min=1000"])


def test_parse_override_reads_yaml_scalars():
    assert parse_override("k=3") == ("k", 3)
    assert parse_override("tau_sim=.5") == ("tau_sim", 0.5)
    assert parse_override("end_of_thinking=</reasoning>") == ("end_of_thinking", "</reasoning>")
    assert parse_override("slide_windows=true") == ("slide_windows", True)


def test_round_trip_through_resolved_flat():
    cfg = load_config(overrides=["L=3", "epsilon=0.05", "loop.m=2", "embedding.dim=64"])
    assert load_config(overrides=resolved_flat(cfg)) == cfg
    assert set(resolved_flat(cfg)) == set(KEYS)


def test_flatten():
    assert flatten({"a": {"b": 1, "c": {"d": 2}}, "e": 3}) == {"a.b": 1, "a.c.d": 2, "e": 3}
