import math

import numpy as np
import pytest

from deepsurfels.projection import unproject_map
from deepsurfels.scenegen import (CheckerPaint, SyntheticScene, generate_dataset, look_at, make_scene,
                                  orbit_cameras, paint_color, read_scene, render_gt, write_scene)
from deepsurfels.sdf import default_eps


def test_paint_examples():
    const = make_scene("constant-sphere")
    pts = np.random.default_rng(0).normal(size=(10, 3))
    assert np.all(paint_color(const, pts) == 0.5)
    checker = make_scene("checker-sphere")
    for p in ([0.0, 0.6, 0.0], [0.3, 0.59, 0.01], [0.02, 0.6, 0.01]):
        assert paint_color(checker, p).tolist() == list(checker.paint.rgb_a)
    torus = make_scene("gradient-torus")
    np.testing.assert_allclose(paint_color(torus, [-1.0, 0, 0]), torus.paint.rgb_a)
    np.testing.assert_allclose(paint_color(torus, [0.0, 0, 0]),
                               0.5 * (np.array(torus.paint.rgb_a) + torus.paint.rgb_b))


def test_checker_parity_rule_and_antipodes():
    paint = CheckerPaint(scale=3)
    rng = np.random.default_rng(1)
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    for p in d:
        theta = math.acos(p[1])
        phi = math.atan2(p[2], p[0]) % (2 * math.pi)
        parity = (math.floor(3 * theta / math.pi) + math.floor(3 * phi / math.pi)) % 2
        assert paint(p).tolist() == list(paint.rgb_b if parity else paint.rgb_a)
    # odd scale: theta -> pi - theta and phi -> phi + pi shift the cell sum by an odd amount
    a, b = paint(d), paint(-d)
    cells_a, cells_b = paint.cells(d), paint.cells(-d)
    interior = np.all(np.abs(np.stack(cells_a) - np.round(np.stack(cells_a))) == 0, axis=0)
    differ = np.any(a != b, axis=1)
    assert interior.all() and differ.mean() > 0.95
    assert ((cells_a[0] + cells_a[1] + cells_b[0] + cells_b[1]) % 2 == 1)[differ].all()


def test_scene_json_round_trip(tmp_path):
    for name in ("constant-sphere", "checker-sphere", "checker-box", "gradient-torus"):
        scene = make_scene(name)
        write_scene(tmp_path / "s.json", scene)
        back = read_scene(tmp_path / "s.json")
        assert back == scene
    with pytest.raises(ValueError):
        make_scene("teapot")


def test_orbit_cameras_examples():
    cams = orbit_cameras(4, 2.0, target=(0.5, 0.0, -1.0), elevation_deg=0.0, width=16, height=16)
    want = [(0.5, 0.0, 1.0), (2.5, 0.0, -1.0), (0.5, 0.0, -3.0), (-1.5, 0.0, -1.0)]
    target = np.array([0.5, 0.0, -1.0])
    for cam, pos in zip(cams, want):
        np.testing.assert_allclose(cam.center, pos, atol=1e-12)
        axis = cam.R[2]
        to_target = (target - cam.center) / np.linalg.norm(target - cam.center)
        assert abs(np.dot(axis, to_target) - 1.0) <= 1e-6
        # image-down points against world up
        assert cam.R[1] @ [0, 1, 0] < 0
    for cam in orbit_cameras(7, 3.3, elevation_deg=35.0):
        assert np.linalg.norm(cam.center) == pytest.approx(3.3, abs=1e-12)
    a, b = orbit_cameras(1, 2.0), orbit_cameras(1, 2.0)
    assert a[0].T_wc.tobytes() == b[0].T_wc.tobytes()
    with pytest.raises(ValueError):
        orbit_cameras(0, 1.0)
    with pytest.raises(ValueError):
        orbit_cameras(2, 0.0)


def test_look_at_pole_fallback():
    T = look_at((0.0, 3.0, 0.0), (0.0, 0.0, 0.0))
    R = T[:3, :3]
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    np.testing.assert_allclose(R[2], [0, -1, 0], atol=1e-12)


def test_render_gt_constant_scene():
    scene = SyntheticScene("c", make_scene("constant-sphere").field, make_scene("constant-sphere").paint,
                           (0.0, 0.3, 0.0))
    cam = orbit_cameras(3, 2.0, width=24, height=24)[0]
    for s in (1, 3):
        f = render_gt(scene, cam, s)
        fg = f.depth > 0
        assert fg.any() and (~fg).any()
        assert np.all(f.rgb[fg] == 0.5) and np.all(f.rgb[~fg] == [0.0, 0.3, 0.0])
    with pytest.raises(ValueError):
        render_gt(scene, cam, 0)


def test_render_gt_depth_matches_closed_form():
    scene = make_scene("checker-sphere")
    cam = orbit_cameras(5, 2.0, width=48, height=40, elevation_deg=10.0)[2]
    f = render_gt(scene, cam)
    jj, ii = np.meshgrid(np.arange(48) + 0.5, np.arange(40) + 0.5)
    d_cam = np.stack([(jj - cam.cx) / cam.fx, (ii - cam.cy) / cam.fy, np.ones_like(jj)], axis=-1)
    n_cam = np.linalg.norm(d_cam, axis=-1)
    d = (d_cam @ cam.R) / n_cam[..., None]
    o = cam.center
    b = d @ o
    disc = b * b - (o @ o - 0.36)
    hit = disc >= 0
    t = -b - np.sqrt(np.where(hit, disc, 0))
    want = np.where(hit, t / n_cam, 0.0)
    eps = default_eps(scene.field)
    cos = np.abs(np.einsum("hwc,hwc->hw", (o + t[..., None] * d) / 0.6, d))
    assert np.array_equal(f.depth > 0, hit)
    err = np.abs(f.depth - want)[hit]
    assert np.all(err <= 1.01 * eps / cos[hit])
    steep = cos[hit] >= 0.5
    assert steep.sum() > 0.6 * hit.sum() and np.all(err[steep] <= 2 * eps)


def test_supersampling_changes_only_edges():
    scene = make_scene("checker-sphere")
    cam = orbit_cameras(4, 2.0, width=64, height=64)[1]
    one, four = render_gt(scene, cam, 1), render_gt(scene, cam, 4)
    assert np.array_equal(one.depth, four.depth)
    diff = np.any(one.rgb != four.rgb, axis=-1)
    # an edge pixel differs from some 8-neighbor in the single-sample image
    pad = np.pad(one.rgb, ((1, 1), (1, 1), (0, 0)), mode="edge")
    edge = np.zeros(diff.shape, bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            edge |= np.any(pad[1 + dy:65 + dy, 1 + dx:65 + dx] != one.rgb, axis=-1)
    assert diff.any() and not (diff & ~edge).any()
    assert (~edge & (one.depth > 0)).sum() > 500


def test_rgb_depth_consistency():
    scene = make_scene("checker-box")
    cam = orbit_cameras(3, 2.2, width=48, height=48, elevation_deg=30.0)[0]
    f = render_gt(scene, cam)
    pts, valid, _, _ = unproject_map(cam, f.depth, 1)
    assert np.array_equal(valid, f.depth > 0)
    np.testing.assert_array_equal(paint_color(scene, pts[valid]), f.rgb[valid])


def test_dataset_deterministic(tmp_path):
    scene = make_scene("gradient-torus")
    cams = orbit_cameras(3, 2.0, width=20, height=16)
    a = generate_dataset(scene, cams, tmp_path / "a", supersample=2)
    b = generate_dataset(scene, orbit_cameras(3, 2.0, width=20, height=16), tmp_path / "b", supersample=2)
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) == 1 + 3 * 3
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()
