import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hodlr3d.exceptions import DegenerateGeometryError
from hodlr3d.kernels import (
    HELMHOLTZ_RE,
    INVERSE_QUARTIC,
    LAPLACE3D,
    KernelSpec,
    PointSet,
    eval_block,
    eval_entry,
    generate_points,
    get_kernel,
)

KERNELS = [LAPLACE3D, INVERSE_QUARTIC, HELMHOLTZ_RE]


def test_diagonal_is_zero():
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert eval_entry(LAPLACE3D, pts, 0, 0) == 0.0


def test_laplace_at_distance_two():
    pts = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert eval_entry(LAPLACE3D, pts, 0, 1) == 0.5


def test_helmholtz_at_pi():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, np.pi, 0.0]])
    assert eval_entry("helmholtz-re", pts, 0, 1) == pytest.approx(-1.0 / np.pi, rel=1e-15)


def test_inverse_quartic():
    pts = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
    assert eval_entry("r4", pts, 1, 0) == 1.0 / 16.0


def test_coincident_points_raise():
    pts = np.array([[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]])
    with pytest.raises(DegenerateGeometryError):
        eval_entry(LAPLACE3D, pts, 0, 1)
    with pytest.raises(DegenerateGeometryError):
        eval_block(LAPLACE3D, pts, pts, [0, 1], [0, 1])


def test_index_out_of_range():
    with pytest.raises(IndexError):
        eval_entry(LAPLACE3D, np.zeros((2, 3)), 0, 2)


def test_tensor_grid_n2():
    pts = generate_points("tensor-grid", 8, seed=3).points
    expect = {(a, b, c) for a in (-0.5, 0.5) for b in (-0.5, 0.5) for c in (-0.5, 0.5)}
    assert {tuple(p) for p in pts} == expect


def test_tensor_grid_requires_cube():
    with pytest.raises(ValueError):
        generate_points("tensor-grid", 10)


def test_unknown_distribution():
    with pytest.raises(ValueError):
        generate_points("sobol", 10)


def test_uniform_is_deterministic():
    a = generate_points("uniform-random", 1000, 5)
    b = generate_points("uniform-random", 1000, 5)
    assert np.array_equal(a.points, b.points)
    assert a.seed == 5 and a.distribution == "uniform-random"


def test_uniform_mean_and_range():
    pts = generate_points("uniform-random", 100_000, 11).points
    assert np.all(np.abs(pts.mean(axis=0)) <= 0.02)
    assert pts.min() >= -1.0 and pts.max() <= 1.0


def test_pointset_is_immutable():
    ps = generate_points("uniform-random", 10, 0)
    with pytest.raises(ValueError):
        ps.points[0, 0] = 3.0
    with pytest.raises(ValueError):
        PointSet(np.zeros((4, 2)))


def test_get_kernel_resolution():
    assert get_kernel("laplace") is LAPLACE3D
    assert get_kernel(LAPLACE3D) is LAPLACE3D
    custom = get_kernel(lambda r: np.exp(-r))
    assert custom.code == -1 and not custom.is_builtin
    with pytest.raises(ValueError):
        get_kernel("yukawa")
    with pytest.raises(TypeError):
        get_kernel(3)


def test_custom_diagonal():
    k = KernelSpec.custom(lambda r: 1.0 / r, diagonal=4.0)
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert eval_entry(k, pts, 1, 1) == 4.0
    blk = eval_block(k, pts, pts, [0, 1], [0, 1])
    assert np.array_equal(np.diag(blk), [4.0, 4.0])


coords = st.floats(-1, 1, allow_nan=False)
point = st.tuples(coords, coords, coords)


@settings(max_examples=50, deadline=None)
@given(st.lists(point, min_size=2, max_size=6, unique=True), st.sampled_from(KERNELS),
       st.tuples(coords, coords, coords))
def test_symmetry_and_translation(pts, kernel, shift):
    pts = np.array(pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    if np.any(d[~np.eye(len(pts), dtype=bool)] < 1e-6):
        return
    n = len(pts)
    moved = pts + np.array(shift)
    for i in range(n):
        for j in range(n):
            v = eval_entry(kernel, pts, i, j)
            assert v == eval_entry(kernel, pts, j, i)
            assert v == pytest.approx(eval_entry(kernel, moved, i, j), rel=1e-9, abs=1e-12)
