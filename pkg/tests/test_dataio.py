import json
import os

import numpy as np
import pytest

from modelprints.dataio import (RunConfig, atomic_write_text, format_float,
                                load_config, read_archive, read_checkpoint,
                                read_manifest, write_archive, write_checkpoint,
                                write_csv, write_json_report, write_manifest)
from modelprints.zoo import build_zoo


def test_archive_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(3, 8, 9), (2, 1, 5, 7), (1, 2, 4, 4)]:
        imgs = rng.standard_normal(shape).astype(np.float32)
        p = tmp_path / "x.ffds"
        write_archive(p, imgs)
        back = read_archive(p)
        want = imgs if imgs.ndim == 4 else imgs[:, None]
        assert back.shape == want.shape
        assert np.array_equal(back, want)  # float32 in, float32 out, no rounding


def test_archive_rejects_bad_input(tmp_path):
    p = tmp_path / "x.ffds"
    with pytest.raises(ValueError):
        write_archive(p, np.zeros((4, 4), np.float32))  # missing count axis
    with pytest.raises(ValueError):
        write_archive(p, np.zeros((0, 1, 4, 4), np.float32))
    bad = np.zeros((1, 1, 4, 4), np.float32)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        write_archive(p, bad)


def test_archive_rejects_corruption(tmp_path):
    p = tmp_path / "x.ffds"
    write_archive(p, np.ones((2, 1, 4, 4), np.float32))
    blob = p.read_bytes()
    trunc = tmp_path / "trunc.ffds"
    trunc.write_bytes(blob[:-8])
    with pytest.raises(ValueError, match="truncated"):
        read_archive(trunc)
    wrong = tmp_path / "wrong.ffds"
    wrong.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="magic"):
        read_archive(wrong)


def test_checkpoint_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    params = {
        "conv1_w": rng.standard_normal((8, 1, 3, 3)).astype(np.float32),
        "fc_b": rng.standard_normal(64).astype(np.float32),
    }
    meta = {"embedding_dim": 64, "pooling": "mean"}
    p = tmp_path / "enc.ffgr"
    write_checkpoint(p, params, meta)
    back, meta2 = read_checkpoint(p)
    assert meta2 == meta
    assert sorted(back) == sorted(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_bytes_independent_of_dict_order(tmp_path):
    a = {"b": np.ones(3, np.float32), "a": np.zeros(2, np.float32)}
    b = {"a": np.zeros(2, np.float32), "b": np.ones(3, np.float32)}
    pa, pb = tmp_path / "a.ffgr", tmp_path / "b.ffgr"
    write_checkpoint(pa, a, {})
    write_checkpoint(pb, b, {})
    assert pa.read_bytes() == pb.read_bytes()


def test_checkpoint_rejects_trailing_garbage(tmp_path):
    p = tmp_path / "enc.ffgr"
    write_checkpoint(p, {"w": np.ones(2, np.float32)}, {})
    p.write_bytes(p.read_bytes() + b"\x00\x00")
    with pytest.raises(ValueError, match="trailing"):
        read_checkpoint(p)


def test_manifest_round_trip_exact(tmp_path):
    zoo = build_zoo(2, 3, images_per_model=8, seed=5)
    p = tmp_path / "zoo.json"
    write_manifest(p, zoo)
    back = read_manifest(p)
    assert back.model_ids == zoo.model_ids
    assert back.images_per_model == zoo.images_per_model
    for sa, sb in zip(zoo.all_specs(), back.all_specs()):
        assert sa.model_id == sb.model_id and sa.seed == sb.seed
        # templates are stored base64 float64, so the round trip is exact
        assert np.array_equal(sa.model_template, sb.model_template)
        assert np.array_equal(sa.family_template, sb.family_template)


def test_atomic_write_replaces_not_appends(tmp_path):
    p = tmp_path / "r.json"
    atomic_write_text(p, "small")
    atomic_write_text(p, "x")
    assert p.read_text() == "x"
    assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp_")] == []


def test_atomic_write_failure_leaves_original(tmp_path, monkeypatch):
    p = tmp_path / "r.json"
    atomic_write_text(p, "original")

    def boom(src, dst):
        raise OSError("disk gone")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        atomic_write_text(p, "replacement")
    monkeypatch.undo()
    assert p.read_text() == "original"
    assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp_")] == []


def test_format_float_nine_digits():
    assert format_float(1.0) == "1"
    assert format_float(np.pi) == "3.14159265"
    assert format_float(1.0 / 3.0) == "0.333333333"
    assert format_float(-2.5e-11) == "-2.5e-11"
    with pytest.raises(ValueError):
        format_float(float("nan"))
    with pytest.raises(ValueError):
        format_float(float("inf"))


def test_json_report_normalizes_floats(tmp_path):
    p = tmp_path / "rep.json"
    write_json_report(p, {"a": np.float64(np.pi), "b": [np.float32(1.5), 2],
                          "c": np.arange(3)})
    obj = json.loads(p.read_text())
    assert obj["a"] == float("3.14159265")
    assert obj["b"] == [1.5, 2]
    assert obj["c"] == [0, 1, 2]


def test_write_csv_formats_floats(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["id", "value"], [["m0", np.float64(1 / 3)], ["m1", 2]])
    lines = p.read_text().splitlines()
    assert lines == ["id,value", "m0,0.333333333", "m1,2"]


def test_load_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\n\nepochs = 3\nnoise_sigma=0.5\ninclude_real = no\n")
    cfg = load_config(p)
    assert cfg.epochs == 3 and cfg.noise_sigma == 0.5 and cfg.include_real is False
    cfg2 = load_config(p, overrides={"epochs": 7, "seed": "11"})
    assert cfg2.epochs == 7 and cfg2.seed == 11


def test_load_config_rejects_unknown_and_malformed(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("no_such_knob=1\n")
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(p)
    p.write_text("just words\n")
    with pytest.raises(ValueError, match="key=value"):
        load_config(p)
    p.write_text("epochs=three\n")
    with pytest.raises(ValueError, match="cannot parse"):
        load_config(p)
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(None, overrides={"bogus": 1})


def test_config_validation():
    with pytest.raises(ValueError, match="pooling"):
        RunConfig(pooling="max").validate()
    with pytest.raises(ValueError, match="holdout_fraction"):
        RunConfig(holdout_fraction=1.5).validate()
    with pytest.raises(ValueError, match=">= 2"):
        RunConfig(models_per_batch=1).validate()
    assert RunConfig().validate() is not None
