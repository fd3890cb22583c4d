import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmo.domain import (
    Cylinder,
    anisotropic_cone,
    ball,
    bisect_crossing,
    box,
    classify_boundary,
    complement,
    contains,
    empty,
    from_spec,
    halfspace,
    homogeneous_norm,
    intersect,
    near_boundary,
    puncture,
    union,
    whole,
)
from kolmo.errors import ConfigError, StructureError


def test_primitives():
    b = ball([0, 0], 1)
    assert b([0.5, 0.5]) and not b([1.0, 0.0])
    bx = box([-1, -1], [1, 1])
    assert bx([0.99, -0.99]) and not bx([1.0, 0.0])
    h = halfspace([1, 0], 0.0)
    assert h([-1e-9, 5.0]) and not h([0.0, 0.0])
    assert whole(3)([1e9, 0, 0]) and not empty(2)([0, 0])
    out = contains(b, np.array([[0, 0], [2, 0], [0.1, 0.1]]))
    assert out.tolist() == [True, False, True]


def test_bad_primitives():
    with pytest.raises(StructureError):
        ball([0, 0], 0)
    with pytest.raises(StructureError):
        box([0, 0], [1, 0])
    with pytest.raises(StructureError):
        halfspace([0, 0], 1)
    with pytest.raises(StructureError):
        union(ball([0, 0], 1), ball([0, 0, 0], 1))


def test_combinators():
    a, b = ball([0, 0], 1), ball([1, 0], 1)
    pts = np.array([[-0.5, 0], [0.5, 0], [1.5, 0], [3, 0]])
    assert union(a, b)(pts).tolist() == [True, True, True, False]
    assert intersect(a, b)(pts).tolist() == [False, True, False, False]
    assert complement(a)(pts).tolist() == [False, False, True, True]
    p = puncture(a, [0, 0])
    assert not p([0.0, 0.0]) and p([1e-12, 0.0])
    ann = puncture(a, [0, 0], 0.5)
    assert not ann([0.5, 0.0]) and ann([0.51, 0.0])


def test_homogeneous_cone_is_dilation_invariant():
    p = (1, 1)
    cone = anisotropic_cone([0, 0], [0, 1], 0.5, 10.0, p)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(500, 2))
    lam = 0.37
    xl = x * np.array([lam, lam**3])
    np.testing.assert_array_equal(cone(x), cone(xl))
    assert cone([0.0, 0.5]) and not cone([0.0, -0.5])
    np.testing.assert_allclose(homogeneous_norm(xl, p), lam * homogeneous_norm(x, p))


def test_dsl_round_trip():
    spec = {"op": "intersect", "children": [
        {"op": "box", "lo": [-1, -1], "hi": [1, 1]},
        {"op": "complement", "children": [{"op": "cone", "vertex": [0, 0], "axis": [0, 1],
                                           "aperture": 0.5, "height": 2.0, "p": [1, 1]}]},
        {"op": "puncture", "point": [0.5, 0.5], "radius": 0.1, "children": [{"op": "whole", "dim": 2}]},
        {"op": "union", "children": [{"op": "halfspace", "normal": [1, 0], "offset": 0.9},
                                     {"op": "ball", "center": [1, 0], "radius": 0.2}]}]}
    d = from_spec(spec)
    again = from_spec(d.spec)
    pts = np.random.default_rng(1).uniform(-1.2, 1.2, size=(2000, 2))
    np.testing.assert_array_equal(d(pts), again(pts))


@pytest.mark.parametrize("spec", [
    {"op": "ball", "center": [0, 0]},
    {"op": "nope"},
    {"op": "complement", "children": []},
    {"op": "ball", "center": [0, 0], "radius": "x"},
])
def test_dsl_errors(spec):
    with pytest.raises((ConfigError, StructureError)):
        from_spec(spec)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0, 2 * np.pi))
def test_bisection_lands_on_sphere(x, y, phi):
    d = ball([0, 0], 1)
    a = np.array([x, y]) * 0.9
    b = a + 3 * np.array([np.cos(phi), np.sin(phi)])
    theta, pt = bisect_crossing(d, a, b, tol=1e-12)
    assert 0 < theta <= 1
    assert not d(pt)
    assert abs(np.linalg.norm(pt) - 1) < 1e-10


def test_bisection_vectorised():
    d = box([-1, -1], [1, 1])
    a = np.zeros((3, 2))
    b = np.array([[2.0, 0], [0, -4.0], [3.0, 3.0]])
    theta, pts = bisect_crossing(d, a, b)
    np.testing.assert_allclose(theta, [0.5, 0.25, 1 / 3], atol=1e-9)
    assert not np.any(d(pts))


def test_near_boundary():
    d = ball([0, 0], 1)
    assert near_boundary(d, [0.9999, 0], 1e-3)
    assert not near_boundary(d, [0.5, 0], 1e-3)
    assert near_boundary(d, [1.0005, 0], 1e-3)
    np.testing.assert_array_equal(near_boundary(d, np.array([[0.9999, 0], [0, 0]]), 1e-3), [True, False])


def test_classify_boundary_partition():
    c = Cylinder(box([-1, -1], [1, 1]), 0.0, 1.0)
    eps = 1e-6
    cases = {
        ((0.0, 0.0), 0.5): "interior",
        ((1.0, 0.0), 0.5): "lateral",
        ((1.0, 0.0), 1.0): "lateral",
        ((0.0, 0.0), 0.0): "bottom",
        ((1.0, 0.0), 0.0): "bottom",
        ((0.0, 0.0), 1.0): "top",
        ((2.0, 0.0), 0.5): "exterior",
        ((0.0, 0.0), -0.5): "exterior",
        ((0.0, 0.0), 1.5): "exterior",
    }
    for (x, t), expected in cases.items():
        q = classify_boundary(c, (np.array(x), t), eps)
        assert q.classification == expected, (x, t)
        assert q.parabolic == (expected in ("lateral", "bottom"))
    with pytest.raises(StructureError):
        Cylinder(box([0], [1]), 1.0, 1.0)


def test_unbounded_default_eps():
    assert halfspace([1, 0], 0).default_eps() == 1e-6
    assert ball([0, 0], 1).default_eps() == pytest.approx(1e-6 * np.sqrt(8))
