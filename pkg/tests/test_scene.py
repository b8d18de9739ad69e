import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsoft.scene import (
    SceneError,
    builtin_scene,
    compute_rest_data,
    dump_scene,
    initial_state,
    load_scene,
    scene_from_dict,
)

MINIMAL = {
    "vertices": [[0, 0], [1, 0], [0, 1]],
    "triangles": [[0, 1, 2]],
    "fibers": [{"i": 0, "j": 1, "stiffness": 1.0}],
    "material": {"mu": 1.0, "lambda": 1.0, "density": 6.0},
}


def doc(**overrides):
    d = json.loads(json.dumps(MINIMAL))
    d.update(overrides)
    return d


def test_minimal_document():
    s = scene_from_dict(doc())
    assert s.n_vertices == 3
    assert len(s.triangles) == 1
    np.testing.assert_array_equal(s.gravity, [0.0, -9.8])
    assert s.dt == 0.01
    assert s.contact.eps == 1e-2
    assert s.policy_io.center_x is True


def test_index_out_of_range():
    with pytest.raises(SceneError, match="out of range"):
        scene_from_dict(doc(triangles=[[0, 1, 5]]))


def test_fiber_rest_length_defaults_to_geometry():
    s = scene_from_dict(doc(vertices=[[0, 0], [2, 0], [0, 1]]))
    assert s.fibers[0].rest_length == 2.0


@pytest.mark.parametrize(
    "overrides, match",
    [
        ({"dt": 0.0}, "dt"),
        ({"material": {"mu": 1.0, "lambda": 1.0, "density": -1.0}}, "density"),
        ({"material": {"mu": 0.0, "lambda": 1.0, "density": 1.0}}, "mu"),
        ({"vertices": [[0, 0], [1, 0], [2, 0]]}, "degenerate"),
        ({"bogus": 1}, "unknown"),
        ({"fibers": [{"i": 0, "j": 0, "stiffness": 1.0}]}, "differ"),
        ({"contact": {"k_collision": -1.0, "k_friction": 0.0, "eps": 0.01}}, "contact"),
    ],
)
def test_invalid_documents(overrides, match):
    with pytest.raises(SceneError, match=match):
        scene_from_dict(doc(**overrides))


def test_parse_error_reports_line():
    with pytest.raises(SceneError, match="line 2"):
        load_scene('{\n  "vertices": [,]\n}')


def test_clockwise_triangle_is_reoriented():
    s = scene_from_dict(doc(triangles=[[0, 2, 1]]))
    rest = compute_rest_data(s)
    assert np.linalg.det(np.linalg.inv(rest.dm_inv[0])) > 0


def test_unit_right_triangle_rest_data():
    rest = compute_rest_data(scene_from_dict(doc()))
    assert rest.areas[0] == 0.5
    np.testing.assert_array_equal(rest.dm_inv[0], np.eye(2))
    np.testing.assert_array_equal(rest.masses, [1.0, 1.0, 1.0])


def test_two_triangle_lumping():
    s = scene_from_dict(doc(
        vertices=[[0, 0], [1, 0], [0, 1], [1, 1]],
        triangles=[[0, 1, 2], [1, 3, 2]],
        material={"mu": 1.0, "lambda": 1.0, "density": 3.0},
    ))
    np.testing.assert_allclose(compute_rest_data(s).masses, [0.5, 1.0, 1.0, 0.5], rtol=1e-15)


def test_initial_state():
    s = builtin_scene("crawler")
    st0 = initial_state(s)
    assert st0.x.shape == st0.v.shape == (s.n_vertices, 2)
    np.testing.assert_array_equal(st0.x, s.vertices)
    assert not np.any(st0.v)


@pytest.mark.parametrize("name", ["crawler", "minimal", "single_fiber", "ballistic"])
def test_builtin_round_trip(name):
    s = builtin_scene(name)
    assert load_scene(dump_scene(s)) == s


@settings(max_examples=30, deadline=None)
@given(
    cols=st.integers(2, 6),
    density=st.floats(0.1, 50),
    jitter=st.floats(0.0, 0.2),
    seed=st.integers(0, 2**16),
)
def test_total_mass_and_round_trip(cols, density, jitter, seed):
    rng = np.random.default_rng(seed)
    verts = [[c + rng.uniform(-jitter, jitter), r + rng.uniform(-jitter, jitter)] for r in range(2) for c in range(cols)]
    tris = []
    for c in range(cols - 1):
        tris += [[c, c + 1, cols + c + 1], [c, cols + c + 1, cols + c]]
    s = scene_from_dict({
        "vertices": verts,
        "triangles": tris,
        "fibers": [{"i": 0, "j": cols, "stiffness": 3.0}],
        "material": {"mu": 1.0, "lambda": 0.0, "density": density},
    })
    rest = compute_rest_data(s)
    total = density * rest.areas.sum()
    assert abs(rest.masses.sum() - total) <= 1e-12 * total
    assert load_scene(dump_scene(s)) == s
