import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepsurfels import FormatError, TruncatedFileError
from deepsurfels.sdf import (AnalyticField, Box, GridField, Plane, Ray, Sphere, Torus, bake_grid,
                             default_eps, grid_from_bytes, grid_to_bytes, gradient, load_grid, sample,
                             save_grid, sphere_trace, trace_ray)

UNIT = AnalyticField((Sphere((0.0, 0.0, 0.0), 1.0),), ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)))


def closed_form_hit(o, d, r=1.0):
    b = np.dot(o, d)
    disc = b * b - (np.dot(o, o) - r * r)
    return None if disc < 0 else -b - np.sqrt(disc)


# -- sampling ------------------------------------------------------------------

def test_sample_examples():
    assert sample(UNIT, (2.0, 0.0, 0.0)) == 1.0
    const = GridField(np.full((3, 3, 3), 0.5), (0, 0, 0), 1.0)
    assert sample(const, (0.3, 1.7, 1.1)) == 0.5
    line = GridField(np.array([0.0, 1.0]).reshape(2, 1, 1), (0, 0, 0), 1.0)
    assert sample(line, (0.5, 0.0, 0.0)) == 0.5


def test_primitives():
    box = Box((0, 0, 0), (0.5, 0.5, 0.5))
    assert box.distance(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.5)
    assert box.distance(np.array([0.0, 0.0, 0.0])) == pytest.approx(-0.5)
    assert box.distance(np.array([1.0, 1.0, 0.0])) == pytest.approx(np.sqrt(0.5))
    torus = Torus((0, 0, 0), 0.5, 0.1)
    assert torus.distance(np.array([0.5, 0.0, 0.0])) == pytest.approx(-0.1)
    assert torus.distance(np.array([0.0, 0.0, 0.0])) == pytest.approx(0.4)
    assert torus.distance(np.array([0.0, 0.3, 0.5])) == pytest.approx(0.2)
    plane = Plane((0.0, 1.0, 0.0), 0.25)
    assert plane.distance(np.array([3.0, 1.0, 2.0])) == pytest.approx(0.75)
    union = AnalyticField((Sphere((-1, 0, 0), 0.5), Sphere((1, 0, 0), 0.5)))
    assert union((0.0, 0.0, 0.0)) == pytest.approx(0.5)
    assert union((1.0, 0.0, 0.0)) == pytest.approx(-0.5)


def test_analytic_dict_round_trip():
    f = AnalyticField((Sphere((0.1, 0, 0), 0.5), Box((0, 0.2, 0), (0.1, 0.2, 0.3)),
                       Torus((0, 0, 0), 0.4, 0.1), Plane((0, 0, 1), -0.5)), ((-2, -2, -2), (2, 2, 2)))
    g = AnalyticField.from_dict(f.to_dict())
    p = np.random.default_rng(0).uniform(-2, 2, (50, 3))
    np.testing.assert_array_equal(f(p), g(p))
    assert g.scale == pytest.approx(np.sqrt(48))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_trilinear_bounded_by_corners(seed):
    rng = np.random.default_rng(seed)
    grid = GridField(rng.normal(size=(4, 5, 3)), (0.5, -1.0, 0.0), 0.25)
    p = grid.lo + rng.random((20, 3)) * (grid.hi - grid.lo)
    vals = grid(p)
    g = (p - grid.lo) / grid.spacing
    i0 = np.minimum(np.floor(g).astype(int), np.array(grid.dims) - 2)
    for v, c in zip(vals, i0):
        corners = grid.values[c[0]:c[0] + 2, c[1]:c[1] + 2, c[2]:c[2] + 2]
        assert corners.min() - 1e-6 <= v <= corners.max() + 1e-6


def test_grid_clamps_outside_box():
    grid = GridField(np.arange(8, dtype=float).reshape(2, 2, 2), (0, 0, 0), 1.0)
    assert grid((-5.0, 0.0, 0.0)) == grid((0.0, 0.0, 0.0))
    assert grid((9.0, 9.0, 9.0)) == 7.0
    with pytest.raises(ValueError):
        GridField(np.zeros((2, 2)), (0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        GridField(np.full((2, 2, 2), np.nan), (0, 0, 0), 1.0)


# -- gradients -------------------------------------------------------------------

def test_gradient_examples():
    n, deg = gradient(UNIT, (2.0, 0.0, 0.0))
    np.testing.assert_allclose(n, [1, 0, 0], atol=1e-9)
    assert not deg
    n, _ = gradient(UNIT, (0.0, -3.0, 0.0))
    np.testing.assert_allclose(n, [0, -1, 0], atol=1e-9)
    const = GridField(np.full((3, 3, 3), 0.5), (0, 0, 0), 1.0)
    n, deg = gradient(const, (1.0, 1.0, 1.0))
    assert deg and n.tolist() == [0.0, 0.0, 1.0]


def test_gradient_radial_on_sphere():
    rng = np.random.default_rng(2)
    d = rng.normal(size=(500, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    p = d * rng.uniform(0.1 + 1e-3, 2.5, (500, 1))
    n, deg = gradient(UNIT, p)
    assert not deg.any()
    assert np.abs(n - d).max() <= 1e-5


# -- baking ------------------------------------------------------------------------

def test_bake_grid_nodes_exact_and_curvature_error():
    sphere = AnalyticField((Sphere((0, 0, 0), 0.6),))
    spacing = 2.0 / 32
    grid = bake_grid(sphere, (33, 33, 33), (-1, -1, -1), spacing)
    idx = np.stack(np.meshgrid(*[np.arange(33)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    nodes = -1.0 + idx * spacing
    np.testing.assert_array_equal(grid(nodes), sphere(nodes).astype(np.float32))
    rng = np.random.default_rng(0)
    p = rng.uniform(-0.95, 0.95, (2000, 3))
    err = np.abs(grid(p) - sphere(p))
    # trilinear error of |x| is bounded by the curvature term h^2 / (2 r) (plus float32 rounding)
    r = np.maximum(np.linalg.norm(p, axis=1), 0.3)
    assert np.all(err <= 3 * spacing ** 2 / (2 * (r - np.sqrt(3) * spacing).clip(0.1)) + 1e-6)
    with pytest.raises(ValueError):
        bake_grid(sphere, (1, 4, 4), (0, 0, 0), 0.1)


# -- sphere tracing -------------------------------------------------------------------

def test_sphere_trace_examples():
    eps = 1e-4
    hit = trace_ray(UNIT, Ray((3.0, 0.0, 0.0), (-1.0, 0.0, 0.0)), 10.0, eps)
    assert hit is not None
    p, t = hit
    assert abs(t - 2.0) <= eps
    np.testing.assert_allclose(p, [1, 0, 0], atol=eps)
    assert trace_ray(UNIT, Ray((3.0, 0.0, 0.0), (1.0, 0.0, 0.0)), 10.0, eps) is None
    with pytest.raises(ValueError):
        trace_ray(UNIT, Ray((3.0, 0.0, 0.0), (1.0, 1.0, 0.0)), 10.0, eps)


def test_grazing_ray_hits_within_band():
    eps = 1e-4
    o = np.array([-3.0, 1.0 + eps / 2, 0.0])
    hit = trace_ray(UNIT, Ray(o, (1.0, 0.0, 0.0)), 10.0, eps)
    assert hit is not None
    p, t = hit
    assert np.isfinite(t) and abs(UNIT(p)) <= eps
    # the closest approach of the ray is at t = 3
    assert abs(t - 3.0) < 0.05


def test_sphere_trace_against_closed_form():
    rng = np.random.default_rng(7)
    o = rng.normal(size=(400, 3))
    o = 2.5 * o / np.linalg.norm(o, axis=1, keepdims=True)
    target = rng.uniform(-0.9, 0.9, (400, 3))
    d = target - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    eps = default_eps(UNIT)
    hit, t, pts = sphere_trace(UNIT, o, d, 10.0, eps)
    checked = 0
    for i in range(400):
        want = closed_form_hit(o[i], d[i])
        assert hit[i] == (want is not None)
        if hit[i]:
            assert abs(UNIT(pts[i])) <= eps
            # stopping within eps of the surface puts t within eps / cos(incidence)
            q = o[i] + want * d[i]
            cos = abs(np.dot(q, d[i]))
            assert abs(t[i] - want) <= 1.01 * eps / cos
            if cos >= 0.5:
                assert abs(t[i] - want) <= 2 * eps
                checked += 1
    assert checked > 250


def test_sphere_trace_on_grid_starts_inside_box():
    sphere = AnalyticField((Sphere((0, 0, 0), 0.6),))
    grid = bake_grid(sphere, (65, 65, 65), (-1, -1, -1), 2 / 64)
    hit, t, _ = sphere_trace(grid, [[0.0, 0.0, -5.0]], [[0.0, 0.0, 1.0]], 20.0)
    assert hit[0] and abs(t[0] - 4.4) < 0.01
    hit, _, _ = sphere_trace(grid, [[3.0, 3.0, -5.0]], [[0.0, 0.0, 1.0]], 20.0)
    assert not hit[0]


def test_sphere_trace_preconditions():
    with pytest.raises(ValueError):
        sphere_trace(UNIT, [[0, 0, 0]], [[0, 0, 1]], 0.0)
    with pytest.raises(ValueError):
        sphere_trace(UNIT, [[0, 0, 0]], [[0, 0, 1]], 1.0, eps=0.0)


# -- .sdfg files -------------------------------------------------------------------

def test_sdfg_round_trip_and_layout(tmp_path):
    vals = np.arange(24, dtype=np.float32).reshape(2, 3, 4) * 0.5
    grid = GridField(vals, (0.5, -1.0, 2.0), 0.25)
    save_grid(grid, tmp_path / "g.sdfg")
    data = (tmp_path / "g.sdfg").read_bytes()
    assert data[:4] == b"SDFG" and len(data) == 36 + 24 * 4
    # values are stored x fastest: the second float is values[1, 0, 0]
    payload = np.frombuffer(data[36:], "<f4")
    assert payload[1] == vals[1, 0, 0] and payload[2] == vals[0, 1, 0] and payload[6] == vals[0, 0, 1]
    back = load_grid(tmp_path / "g.sdfg")
    assert back.values.tobytes() == grid.values.tobytes()
    assert back.origin.tobytes() == grid.origin.tobytes() and back.spacing == grid.spacing
    assert grid_to_bytes(back) == data


def test_sdfg_errors():
    data = grid_to_bytes(GridField(np.zeros((2, 2, 2)), (0, 0, 0), 1.0))
    with pytest.raises(FormatError):
        grid_from_bytes(b"NOPE" + data[4:])
    with pytest.raises(TruncatedFileError):
        grid_from_bytes(data[:-4])
    with pytest.raises(FormatError):
        grid_from_bytes(data + b"1234")
