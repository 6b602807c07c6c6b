import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualsim.config import ConfigError
from dualsim.field import (CHECKPOINT_MAGIC, AnalyticField, RadianceSample, VoxelGridField, blend_samples,
                           eval_field, load_checkpoint, load_scene, make_synthetic_scene,
                           normalize_scene_spec, save_checkpoint, serialize_scene, softplus,
                           softplus_inv)
from helpers import box, scene_spec, sphere

Z = (0.0, 0.0, 1.0)


# -------------------------------------------------------------- RadianceSample


def test_radiance_sample_validation():
    RadianceSample((0, 0.5, 1), 0.0)
    for color, sigma in [((1.1, 0, 0), 1.0), ((0, 0, 0), -1.0), ((np.nan, 0, 0), 1.0), ((0, 0, 0), np.inf)]:
        with pytest.raises(ValueError):
            RadianceSample(color, sigma)


# -------------------------------------------------------------- analytic field


def test_sphere_inside_and_outside():
    f = make_synthetic_scene(scene_spec([sphere((0, 0, 0), 1.0, (1, 0, 0), 5.0)]))
    s = eval_field(f, (0, 0, 0), Z)
    assert s.color == (1.0, 0.0, 0.0) and s.sigma == 5.0
    assert eval_field(f, (3, 0, 0), Z).sigma == 0.0


def test_empty_scene_is_empty_everywhere():
    f = make_synthetic_scene(scene_spec([]))
    rgb, sigma = f.query(np.random.default_rng(0).uniform(-10, 10, (100, 3)))
    assert np.all(sigma == 0) and np.all(rgb == 0)


def test_box_spanning_bbox():
    f = make_synthetic_scene(scene_spec([box((-1, -1, -1), (1, 1, 1), (0.2, 0.4, 0.6), 7.0)],
                                        (-1, -1, -1), (1, 1, 1)))
    s = eval_field(f, (0.3, -0.9, 0.99), Z)
    assert s.color == (0.2, 0.4, 0.6) and s.sigma == 7.0


def test_shell_sphere():
    f = make_synthetic_scene(scene_spec([sphere((0, 0, 0), 3.0, density=10.0, inner_radius=2.9)]))
    assert eval_field(f, (0, 0, 0), Z).sigma == 0
    assert eval_field(f, (2.95, 0, 0), Z).sigma == 10.0


def test_overlap_blends_by_density():
    f = make_synthetic_scene(scene_spec([box((-1, -1, -1), (1, 1, 1), (1, 1, 1), 1.0),
                                         box((0, 0, 0), (1, 1, 1), (1, 0, 0), 3.0)]))
    s = eval_field(f, (0.5, 0.5, 0.5), Z)
    assert s.sigma == 4.0
    np.testing.assert_allclose(s.color, (1.0, 0.25, 0.25))


def test_blend_single_contributor_verbatim():
    c = np.array([[0.1, 0.2, 0.3]])
    rgb, sigma = blend_samples([(c, np.array([0.7])), (np.ones((1, 3)), np.array([0.0]))], 1)
    assert np.array_equal(rgb, c) and sigma[0] == 0.7


def test_spec_roundtrip_idempotent():
    spec = scene_spec([box((0, 0, 0), (1, 2, 3), (1, 0, 0), 2), sphere((1, 1, 1), 0.5, (0, 1, 0), 4)])
    f = make_synthetic_scene(spec)
    assert serialize_scene(f) == normalize_scene_spec(spec)
    assert normalize_scene_spec(serialize_scene(f)) == serialize_scene(f)
    # also from JSON text
    assert serialize_scene(make_synthetic_scene(json.dumps(spec))) == serialize_scene(f)


def test_same_spec_same_field():
    spec = scene_spec([sphere((0, 0, 0), 1.0)])
    assert make_synthetic_scene(spec) == make_synthetic_scene(spec)


@pytest.mark.parametrize("spec,match", [
    ({"primitives": []}, r"scene\.bbox: missing"),
    (scene_spec([{"kind": "cone", "color": [0, 0, 0], "density": 1}]), r"primitives\[0\]\.kind"),
    (scene_spec([sphere((0, 0, 0), -1.0)]), r"primitives\[0\]\.radius"),
    (scene_spec([box((0, 0, 0), (1, 1, 1), (2, 0, 0))]), r"primitives\[0\]\.color\[0\]"),
    (scene_spec([box((0, 0, 0), (1, 1, 1), density=-1)]), r"primitives\[0\]\.density"),
    (scene_spec([sphere((9.5, 0, 0), 1.0)]), r"outside the scene bbox"),
])
def test_malformed_specs(spec, match):
    with pytest.raises(ConfigError, match=match):
        make_synthetic_scene(spec)


def test_spec_json_syntax_error_located():
    with pytest.raises(ConfigError, match=r":3:"):
        make_synthetic_scene('{\n "bbox": {},\n "primitives": [,]\n}')


def test_eval_field_rejects_bad_input():
    f = make_synthetic_scene(scene_spec([]))
    with pytest.raises(ValueError):
        eval_field(f, (np.nan, 0, 0), Z)
    with pytest.raises(ValueError):
        eval_field(f, (0, 0, 0), (0, 0, 2))


# -------------------------------------------------------------- voxel grid


def test_softplus_inverse():
    y = np.array([1e-3, 0.01, 1.0, 30.0])
    np.testing.assert_allclose(softplus(softplus_inv(y)), y, rtol=1e-12)


def test_default_init():
    g = VoxelGridField((0, 0, 0), (1, 1, 1), (3, 4, 5))
    assert g.params.shape == (5, 4, 3, 4)
    act = g.activated()
    np.testing.assert_allclose(act[:, 3], 0.01)
    np.testing.assert_allclose(act[:, :3], 0.5)


def test_midpoint_of_two_vertices():
    g = VoxelGridField((0, 0, 0), (1, 1, 1), (2, 2, 2))
    g.params[..., 3] = softplus_inv(1.0)
    g.params[:, :, 1, 3] = softplus_inv(3.0)  # x = 1 face
    s = eval_field(g, (0.5, 0.0, 0.0), Z)
    assert abs(s.sigma - 2.0) < 1e-12


def test_outside_bbox_zero_density():
    g = VoxelGridField((0, 0, 0), (1, 1, 1), (4, 4, 4), np.random.default_rng(0).normal(size=(4, 4, 4, 4)))
    _, sigma = g.query(np.array([[1.01, 0.5, 0.5], [-0.1, 0, 0], [0.5, 0.5, 2.0]]))
    assert np.all(sigma == 0)


def test_vertex_values_reproduced():
    rng = np.random.default_rng(1)
    g = VoxelGridField((-1, -2, 0), (1, 2, 3), (3, 5, 4), rng.normal(size=(4, 5, 3, 4)))
    rgb, sigma = g.query(g.vertex_positions())
    act = g.activated()
    np.testing.assert_allclose(rgb, act[:, :3], atol=1e-12)
    np.testing.assert_allclose(sigma, act[:, 3], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.tuples(*(st.floats(0.0, 1.0) for _ in range(3))))
def test_trilinear_convexity(seed, frac):
    rng = np.random.default_rng(seed)
    g = VoxelGridField((0, 0, 0), (3, 3, 3), (4, 4, 4), rng.normal(scale=3, size=(4, 4, 4, 4)))
    cell = rng.integers(0, 3, 3)
    p = cell + np.array(frac)
    rgb, sigma = g.query(p[None])
    act = g.activated().reshape(4, 4, 4, 4)
    corners = act[cell[2]:cell[2] + 2, cell[1]:cell[1] + 2, cell[0]:cell[0] + 2].reshape(-1, 4)
    vals = np.concatenate([rgb[0], sigma])
    assert np.all(vals >= corners.min(axis=0) - 1e-12)
    assert np.all(vals <= corners.max(axis=0) + 1e-12)


def test_query_is_pure():
    g = VoxelGridField((0, 0, 0), (1, 1, 1), (5, 5, 5), np.random.default_rng(2).normal(size=(5, 5, 5, 4)))
    p = np.random.default_rng(3).uniform(0, 1, (50, 3))
    a = g.query(p)
    b = g.query(p)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_grid_validation():
    with pytest.raises(ValueError):
        VoxelGridField((0, 0, 0), (0, 1, 1), (2, 2, 2))
    with pytest.raises(ValueError):
        VoxelGridField((0, 0, 0), (1, 1, 1), (1, 2, 2))
    with pytest.raises(ValueError):
        VoxelGridField((0, 0, 0), (1, 1, 1), (2, 2, 2), np.zeros((2, 2, 3, 4)))


# -------------------------------------------------------------- checkpoint


def test_checkpoint_layout_and_roundtrip(tmp_path):
    params = np.random.default_rng(4).normal(size=(4, 3, 2, 4)).astype(np.float32).astype(np.float64)
    g = VoxelGridField((-1, -2, -3), (1, 2, 3), (2, 3, 4), params)
    save_checkpoint(g, tmp_path / "g.bin")
    data = (tmp_path / "g.bin").read_bytes()
    assert data[:16] == CHECKPOINT_MAGIC
    hdr = np.frombuffer(data[16:64], "<f8")
    assert list(hdr) == [-1, -2, -3, 1, 2, 3]
    assert list(np.frombuffer(data[64:76], "<u4")) == [2, 3, 4]
    body = np.frombuffer(data[76:], "<f4")
    # vertex (x=1, y=0, z=0) is the second record: x varies fastest
    assert np.array_equal(body[4:8], params[0, 0, 1].astype(np.float32))
    back = load_checkpoint(tmp_path / "g.bin")
    assert np.array_equal(back.params, params) and back.resolution == (2, 3, 4)
    assert isinstance(load_scene(tmp_path / "g.bin"), VoxelGridField)


def test_checkpoint_corruption(tmp_path):
    g = VoxelGridField((0, 0, 0), (1, 1, 1), (2, 2, 2))
    save_checkpoint(g, tmp_path / "g.bin")
    data = (tmp_path / "g.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-4])
    with pytest.raises(ConfigError, match="expected"):
        load_checkpoint(tmp_path / "short.bin")
    (tmp_path / "bad.bin").write_bytes(b"X" * 16 + data[16:])
    with pytest.raises(ConfigError, match="magic"):
        load_checkpoint(tmp_path / "bad.bin")


def test_load_scene_json(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps(scene_spec([sphere((0, 0, 0), 1.0)])))
    assert isinstance(load_scene(tmp_path / "s.json"), AnalyticField)
