import pytest

from dualsim.config import (ConfigError, apply_overrides, as_float, as_int, as_vec, load_json,
                            parse_json, require, resolve)


def test_parse_error_has_line_and_column():
    with pytest.raises(ConfigError, match=r"x\.json:2:\d+"):
        parse_json('{"a": 1,\n  oops}', source="x.json")


def test_load_json_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_json(tmp_path / "nope.json")


def test_require_names_field_path():
    with pytest.raises(ConfigError, match=r"scene\.bbox\.min: missing"):
        require({}, "min", "scene.bbox")
    with pytest.raises(ConfigError, match="expected an object"):
        require([1], "min", "scene")


def test_scalar_validators():
    assert as_float(3, "x") == 3.0
    for bad in ["3", True, float("nan")]:
        with pytest.raises(ConfigError):
            as_float(bad, "x")
    with pytest.raises(ConfigError, match="must be > 0"):
        as_float(0.0, "x", positive=True)
    with pytest.raises(ConfigError):
        as_int(2.5, "n")
    with pytest.raises(ConfigError, match=">= 1"):
        as_int(0, "n", minimum=1)
    with pytest.raises(ConfigError, match=r"c\[1\]"):
        as_vec([0, 2, 0], "c", lo=0, hi=1)


def test_resolve_inline_or_path(tmp_path):
    (tmp_path / "sub.json").write_text('{"k": 1}')
    assert resolve("sub.json", tmp_path) == {"k": 1}
    assert resolve({"k": 2}, tmp_path) == {"k": 2}


def test_overrides_dotted_and_typed():
    cfg = {"a": {"b": 1}, "s": "x"}
    out = apply_overrides(cfg, ["a.b=2.5", "a.c.d=[1,2]", "s=hello", "flag=true"])
    assert out == {"a": {"b": 2.5, "c": {"d": [1, 2]}}, "s": "hello", "flag": True}
    assert cfg == {"a": {"b": 1}, "s": "x"}
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["novalue"])
