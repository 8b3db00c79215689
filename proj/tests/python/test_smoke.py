import os

import numpy as np
import pytest

import dcpclip


def small_config(**overrides):
    c = dcpclip.RunConfig()
    c.image_size = 16
    c.classes = 8
    c.dim = 16
    c.dim_c = 8
    for k, v in overrides.items():
        setattr(c, k, v)
    return c


def test_config_round_trip_and_errors():
    c = small_config(theta=0.3)
    c.flags.sa = False
    back = dcpclip.parse_config(c.to_text())
    assert back.to_text() == c.to_text()
    assert back.flags == c.flags
    with pytest.raises(dcpclip.ConfigError):
        c.set("no_such_key", "1")
    c.image_size = 30
    with pytest.raises(dcpclip.ConfigError):
        c.validate()


def test_encoders_give_unit_rows_and_stochastic_attention():
    bench = dcpclip.Workbench(small_config())
    scene = bench.scenes(1, 0)[0]
    assert scene.image.shape == (3, 16, 16)
    assert scene.gt.shape == (16, 16)
    vis = bench.encode(scene)
    np.testing.assert_allclose(np.linalg.norm(vis.f_patch, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(vis.a_clip.sum(axis=1), 1.0, atol=1e-9)
    assert len(vis.f_v) == 2
    assert bench.text.e_t.shape == (8, 16)


def test_segment_outputs_and_macs():
    bench = dcpclip.Workbench(small_config())
    model = dcpclip.Model.init(bench.config)
    scene = bench.scenes(1, 1)[0]
    r = bench.segment(model, scene)
    assert r["labels"].shape == (16, 16)
    selected = r["selection"]["c_final"]
    assert r["soft_masks"].shape == (len(selected), 16, 16)
    assert ((r["soft_masks"] > 0) & (r["soft_masks"] < 1)).all()
    assert r["macs"] == bench.forward_macs(len(selected))
    assert 0.0 <= r["miou"] <= 1.0
    again = bench.segment(dcpclip.Model.init(bench.config), scene)
    assert (again["labels"] == r["labels"]).all()


def test_miou_hand_example():
    miou, per_class = dcpclip.compute_miou([0, 0, 0, 0], [0, 0, 1, 1], 4)
    assert miou == 0.25
    assert per_class == {0: 0.5, 1: 0.0}


def test_sweep_is_non_increasing():
    bench = dcpclip.Workbench(small_config())
    model = dcpclip.Model.init(bench.config)
    recs = bench.sweep_theta(model, [0.0, 0.5, 1.0], bench.scenes(3, 2))
    counts = [r["mean_selected"] for r in recs]
    assert counts == sorted(counts, reverse=True)
    assert counts[0] == 8


def test_training_and_checkpoint(tmp_path):
    c = small_config(steps=5, batch=2, lr=2e-3)
    bench = dcpclip.Workbench(c)
    model = dcpclip.Model.init(c)
    scenes = bench.scenes(2, 3)
    r = bench.train(model, scenes)
    assert len(r["losses"]) == 5
    path = str(tmp_path / "m.ckpt")
    model.save(c, path)
    loaded, loaded_config = dcpclip.Model.load(path)
    assert loaded_config.to_text() == c.to_text()
    a, b = model.parameters(), loaded.parameters()
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k])
    with pytest.raises(dcpclip.ShapeError):
        loaded.set_parameter("head", np.zeros((3, 3)))


def test_gradient_suite_single_seed():
    errors = dcpclip.gradient_suite(1)
    assert {k.split(".")[0] for k in errors} == {"tga", "sed", "head"}
    assert max(errors.values()) <= 1e-5


def test_cli_exit_codes(tmp_path):
    assert dcpclip.cli([]) == 2
    assert dcpclip.cli(["segment", "--nonsense"]) == 2
    out = str(tmp_path / "seg.jsonl")
    assert dcpclip.cli(["segment", "--imgsize", "16", "--num-classes", "8", "--scenes", "1", "--out", out]) == 0
    assert os.path.getsize(out) > 0
