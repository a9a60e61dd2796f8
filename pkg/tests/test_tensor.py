import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpmatmul import io
from cpmatmul.tensor import (
    MatMulDims,
    SingularTransformError,
    TensorSizeError,
    apply_bilinear,
    build_matmul_tensor,
    cyclic_permute,
    mode_product,
    s1_transform,
    s2_transform,
    tensor_from_fixture,
    tensor_to_fixture,
    vec,
)

from conftest import matmul_loop, vec_colmajor

# Frontal slices of T_222 as published (rows i, columns j).
EQ3_SLICES = [
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 0], [0, 0, 0, 0]],
    [[0, 0, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0], [0, 0, 1, 0]],
    [[0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0], [0, 0, 0, 0]],
    [[0, 0, 0, 0], [0, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1]],
]

SMALL_DIMS = [(p, q, s) for p in range(1, 5) for q in range(1, 5) for s in range(1, 5) if p * q * s <= 64]


def test_dims_validation():
    assert MatMulDims(3, 3, 2).shape == (9, 6, 6)
    assert MatMulDims.parse("3,4,3") == MatMulDims(3, 4, 3)
    assert MatMulDims.parse("332") == MatMulDims(3, 3, 2)
    with pytest.raises(ValueError):
        MatMulDims(0, 2, 2)
    with pytest.raises(ValueError):
        MatMulDims.parse("2,2")


def test_scalar_case():
    t = build_matmul_tensor((1, 1, 1))
    assert t.shape == (1, 1, 1) and t[0, 0, 0] == 1


def test_t222_matches_printed_slices():
    t = build_matmul_tensor((2, 2, 2))
    for k, sl in enumerate(EQ3_SLICES):
        np.testing.assert_array_equal(t[:, :, k], np.array(sl, dtype=float))
    assert np.array_equal(t, io.eq3_fixture())


def test_t332_shape_and_ones():
    t = build_matmul_tensor((3, 3, 2))
    assert t.shape == (9, 6, 6)
    assert t.sum() == 18


@pytest.mark.parametrize("dims", SMALL_DIMS)
def test_entries_are_binary_and_count(dims):
    t = build_matmul_tensor(dims)
    assert set(np.unique(t)) <= {0.0, 1.0}
    assert t.sum() == np.prod(dims)


def test_size_cap():
    with pytest.raises(TensorSizeError):
        build_matmul_tensor((10, 10, 10), max_entries=1000)


def test_apply_bilinear_identity():
    t = build_matmul_tensor((2, 2, 2))
    np.testing.assert_array_equal(apply_bilinear(t, np.eye(2, dtype=int), np.eye(2, dtype=int)), [1, 0, 0, 1])


def test_apply_bilinear_row_sums():
    t = build_matmul_tensor((3, 3, 2))
    out = apply_bilinear(t, np.ones((3, 3), int), np.ones((3, 2), int))
    assert list(out) == [3] * 6


@pytest.mark.parametrize("dims", SMALL_DIMS)
def test_apply_bilinear_against_schoolbook(dims, rng):
    p, q, s = dims
    t = build_matmul_tensor(dims)
    for _ in range(100):
        e = rng.integers(-9, 10, (p, q))
        f = rng.integers(-9, 10, (q, s))
        want = vec_colmajor(matmul_loop(e.tolist(), f.tolist()))
        assert apply_bilinear(t, e, f).tolist() == want


def test_apply_bilinear_shape_errors():
    t = build_matmul_tensor((2, 2, 2))
    with pytest.raises(ValueError):
        apply_bilinear(t, np.ones((3, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        apply_bilinear(t, np.ones((2, 3)), np.ones((2, 2)))


@pytest.mark.parametrize("mode", [1, 2, 3])
def test_mode_product_identity(mode, rng):
    t = rng.normal(size=(3, 4, 5))
    np.testing.assert_array_equal(mode_product(t, np.eye(t.shape[mode - 1]), mode), t)


def test_mode_product_shape_error(rng):
    with pytest.raises(ValueError):
        mode_product(rng.normal(size=(3, 4, 5)), np.eye(3), 2)


def test_full_contraction_matches_direct_sum(rng):
    t = rng.normal(size=(3, 4, 2))
    a, b, c = rng.normal(size=3), rng.normal(size=4), rng.normal(size=2)
    got = mode_product(mode_product(mode_product(t, a[None], 1), b[None], 2), c[None], 3)
    direct = 0.0
    for i in range(3):
        for j in range(4):
            for k in range(2):
                direct += t[i, j, k] * a[i] * b[j] * c[k]
    assert got.shape == (1, 1, 1)
    assert abs(got.item() - direct) <= 1e-12 * max(1, abs(direct))


def test_s1_s2_basic():
    d = MatMulDims(2, 2, 2)
    np.testing.assert_array_equal(s1_transform(np.eye(2), d), np.eye(4))
    np.testing.assert_array_equal(s2_transform(np.eye(2), d), np.eye(4))
    swap = np.array([[0, 1], [1, 0]])
    want = np.zeros((4, 4))
    want[:2, :2] = swap
    want[2:, 2:] = swap
    np.testing.assert_array_equal(s1_transform(swap, d), want)
    with pytest.raises(ValueError):
        s1_transform(np.eye(3), d)
    with pytest.raises(SingularTransformError):
        s2_transform(np.array([[1.0, 2.0], [2.0, 4.0]]), d)


def test_s1_acts_on_row_scan(rng):
    d = MatMulDims(3, 2, 4)
    e = rng.normal(size=(3, 2))
    x = rng.normal(size=(2, 2))
    lhs = s1_transform(x, d) @ e.reshape(-1)
    np.testing.assert_allclose(lhs, (e @ x).reshape(-1), atol=1e-12)


def test_s2_acts_on_row_scan(rng):
    d = MatMulDims(3, 2, 4)
    f = rng.normal(size=(2, 4))
    x = rng.normal(size=(2, 2)) + 2 * np.eye(2)
    lhs = s2_transform(x, d) @ f.reshape(-1)
    # vec(F^T X^{-T}) in column-major order is the row scan of X^{-1} F
    np.testing.assert_allclose(lhs, vec((np.linalg.inv(x) @ f).T), atol=1e-12)
    np.testing.assert_allclose(s2_transform(x, d) @ s2_transform(np.linalg.inv(x), d), np.eye(8), atol=1e-12)


def test_cyclic_symmetry_of_cubes():
    for n in (2, 3):
        t = build_matmul_tensor((n, n, n))
        assert np.array_equal(cyclic_permute(t, (2, 3, 1)), t)
        assert np.array_equal(cyclic_permute(t, (3, 1, 2)), t)
        assert np.array_equal(cyclic_permute(t, (1, 2, 3)), t)


def test_cyclic_permute_noncube_differs():
    t = build_matmul_tensor((3, 3, 2))
    out = cyclic_permute(t, (2, 3, 1))
    assert out.shape == (6, 6, 9) != t.shape
    with pytest.raises(ValueError):
        cyclic_permute(t, (1, 1, 2))


INVARIANCE_DIMS = [d for d in SMALL_DIMS if np.prod(d) <= 36]


@pytest.mark.parametrize("dims", INVARIANCE_DIMS)
def test_transform_invariance(dims, rng):
    d = MatMulDims(*dims)
    t = build_matmul_tensor(d)
    done = 0
    while done < 50:
        x = rng.uniform(-1, 1, (d.q, d.q))
        if abs(np.linalg.det(x)) < 1e-3:
            continue
        done += 1
        u = mode_product(mode_product(t, s1_transform(x, d), 1), s2_transform(x, d), 2)
        assert np.linalg.norm(t - u) <= 1e-10 * np.linalg.norm(t) * np.linalg.cond(x)


def test_fixture_roundtrip(tmp_path):
    t = build_matmul_tensor((2, 2, 2))
    doc = tensor_to_fixture(t)
    assert len(doc["ones"]) == 8 and doc["dims"] == [4, 4, 4]
    assert [1, 2, 3] in doc["ones"]  # slice 3, row 1, column 2
    path = tmp_path / "t.json"
    path.write_text(json.dumps(doc))
    assert np.array_equal(tensor_from_fixture(json.loads(path.read_text())), t)


@settings(max_examples=40, deadline=None)
@given(
    p=st.integers(1, 3), q=st.integers(1, 3), s=st.integers(1, 3),
    data=st.data(),
)
def test_bilinear_identity_property(p, q, s, data):
    ints = st.integers(-50, 50)
    e = np.array(data.draw(st.lists(ints, min_size=p * q, max_size=p * q))).reshape(p, q)
    f = np.array(data.draw(st.lists(ints, min_size=q * s, max_size=q * s))).reshape(q, s)
    out = apply_bilinear(build_matmul_tensor((p, q, s)), e, f)
    assert out.tolist() == vec_colmajor(matmul_loop(e.tolist(), f.tolist()))
