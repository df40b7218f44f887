import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import orthonormal
from fmpca.tensor import (
    frobenius_norm,
    inner_product,
    khatri_rao,
    kronecker,
    mode_n_fold,
    mode_n_matricize,
    mode_n_product,
    multi_mode_project,
    phi_kron,
    read_tnsr,
    tnsr_bytes,
    unfold_samples,
    unvectorize,
    vectorize,
    write_tnsr,
)


def example_tensor():
    x = np.zeros((2, 2, 2))
    x[0, 0, 0], x[1, 0, 0], x[0, 1, 0], x[1, 1, 0] = 1, 2, 3, 4
    x[0, 0, 1], x[1, 0, 1], x[0, 1, 1], x[1, 1, 1] = 5, 6, 7, 8
    return x


dims_strategy = st.lists(st.integers(1, 4), min_size=1, max_size=4)


def test_matricize_example_matches_frozen_oracle(frozen):
    x = example_tensor()
    for n in range(3):
        np.testing.assert_array_equal(mode_n_matricize(x, n), frozen["matricize_2x2x2"][str(n)])
    # the ordering consistent with the cyclic Kronecker chain
    np.testing.assert_array_equal(mode_n_matricize(x, 0), [[1, 5, 3, 7], [2, 6, 4, 8]])


def test_matricize_matches_loop_oracle(rng):
    x = rng.standard_normal((3, 4, 2, 2))
    for n in range(4):
        np.testing.assert_array_equal(mode_n_matricize(x, n), oracles.matricize_loops(x, n))


def test_matricize_of_matrix_is_identity(rng):
    a = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(mode_n_matricize(a, 0), a)


def test_fold_example_round_trip():
    x = example_tensor()
    np.testing.assert_array_equal(mode_n_fold(mode_n_matricize(x, 0), 0, x.shape), x)


def test_fold_row_matrix():
    row = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(mode_n_fold(row, 0, (1, 3)), row)


def test_fold_random_3x4x2_all_modes(rng):
    x = rng.standard_normal((3, 4, 2))
    for n in range(3):
        np.testing.assert_array_equal(mode_n_fold(mode_n_matricize(x, n), n, x.shape), x)


@settings(max_examples=60, deadline=None)
@given(dims=dims_strategy, data=st.data())
def test_round_trip_property(dims, data):
    x = np.arange(np.prod(dims), dtype=float).reshape(dims)
    n = data.draw(st.integers(0, len(dims) - 1))
    np.testing.assert_array_equal(mode_n_fold(mode_n_matricize(x, n), n, dims), x)


def test_bad_mode_rejected(rng):
    with pytest.raises(ValueError):
        mode_n_matricize(rng.standard_normal((2, 2)), 2)
    with pytest.raises(ValueError):
        mode_n_fold(np.zeros((2, 3)), 0, (2, 2))


def test_mode_product_identity_and_scalar(rng):
    x = rng.standard_normal((3, 2, 4))
    np.testing.assert_allclose(mode_n_product(x, np.eye(2), 1), x, atol=0)
    np.testing.assert_allclose(mode_n_product(np.full((1, 1, 1), 2.5), np.array([[4.0]]), 0), [[[10.0]]])


def test_mode_product_matches_direct_sum(rng):
    x = rng.standard_normal((4, 3, 2))
    u = rng.standard_normal((5, 4))
    np.testing.assert_allclose(mode_n_product(x, u, 0), oracles.mode_product_loops(x, u, 0), atol=1e-12)
    v = rng.standard_normal((2, 3))
    np.testing.assert_allclose(mode_n_product(x, v, 1), oracles.mode_product_loops(x, v, 1), atol=1e-12)


def test_mode_product_shape_mismatch(rng):
    with pytest.raises(ValueError):
        mode_n_product(rng.standard_normal((3, 2)), np.eye(4), 0)


def test_multi_mode_project_identity_and_norm(rng):
    x = rng.standard_normal((4, 4, 3))
    np.testing.assert_allclose(multi_mode_project(x, [np.eye(4), np.eye(4), np.eye(3)]), x)
    qs = [orthonormal(rng, 4, 4), orthonormal(rng, 4, 4), orthonormal(rng, 3, 3)]
    assert frobenius_norm(multi_mode_project(x, qs)) == pytest.approx(frobenius_norm(x), rel=1e-12)


def test_multi_mode_project_any_order(rng):
    x = rng.standard_normal((4, 4, 3))
    us = [orthonormal(rng, 4, 2), orthonormal(rng, 4, 2), orthonormal(rng, 3, 2)]
    ref = multi_mode_project(x, us)
    for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        y = x
        for k in perm:
            y = mode_n_product(y, us[k].T, k)
        np.testing.assert_allclose(y, ref, atol=1e-12)


def test_kronecker_examples(frozen):
    np.testing.assert_array_equal(kronecker(np.eye(2), np.eye(3)), np.eye(6))
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    expected = [[0, 1, 0, 2], [1, 0, 2, 0], [0, 3, 0, 4], [3, 0, 4, 0]]
    np.testing.assert_array_equal(kronecker(a, b), expected)
    np.testing.assert_array_equal(kronecker(a, b), frozen["kron_example"])


def test_kronecker_of_vectors_is_khatri_rao(rng):
    a, b = rng.standard_normal((3, 1)), rng.standard_normal((4, 1))
    np.testing.assert_array_equal(kronecker(a, b), khatri_rao(a, b))


def test_kronecker_mixed_product(rng):
    for size in (2, 3):
        a, b, c, d = (rng.standard_normal((size, size)) for _ in range(4))
        np.testing.assert_allclose(kronecker(a, b) @ kronecker(c, d), kronecker(a @ c, b @ d), atol=1e-12)


def test_phi_kron_trivial_cases(rng):
    u0, u1 = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
    np.testing.assert_array_equal(phi_kron([u0, u1], 0), u1)
    eye = [np.eye(2), np.eye(3), np.eye(4)]
    np.testing.assert_array_equal(phi_kron(eye, 1), np.eye(8))


def test_ordering_consistency_with_kronecker_chain(rng):
    for dims in [(3, 3, 3), (4, 3, 2), (2, 3, 2, 3)]:
        x = rng.standard_normal(dims)
        us = [rng.standard_normal((i, max(1, i - 1))) for i in dims]
        y = multi_mode_project(x, us)
        for n in range(len(dims)):
            lhs = mode_n_matricize(y, n)
            rhs = us[n].T @ mode_n_matricize(x, n) @ phi_kron(us, n)
            assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_vectorize_examples(rng):
    np.testing.assert_array_equal(vectorize(np.array([[1.0, 3.0], [2.0, 4.0]])), [1, 2, 3, 4])
    v = rng.standard_normal(5)
    np.testing.assert_array_equal(vectorize(v), v)
    x = rng.standard_normal((3, 2, 4))
    np.testing.assert_array_equal(unvectorize(vectorize(x), x.shape), x)


def test_vectorize_is_column_stack_for_matrices(rng):
    # column-stacking of the mode-0 matricization coincides with storage order
    # for order <= 2; for higher orders the cyclic column order differs
    a = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(vectorize(a), mode_n_matricize(a, 0).T.ravel())


def test_norm_and_inner_product(rng):
    assert frobenius_norm(np.zeros((2, 3))) == 0
    assert frobenius_norm(np.array([[3.0, 0.0], [0.0, 4.0]])) == 5
    a, b = rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 2, 2))
    assert inner_product(a, b) == pytest.approx(vectorize(a) @ vectorize(b), rel=1e-14)
    with pytest.raises(ValueError):
        inner_product(a, np.zeros((2, 2)))


def test_energy_invariance_of_matricization(rng):
    x = rng.standard_normal((3, 4, 2))
    for n in range(3):
        s = np.linalg.svd(mode_n_matricize(x, n), compute_uv=False)
        assert np.sum(s**2) == pytest.approx(frobenius_norm(x) ** 2, rel=1e-12)


def test_unfold_samples_concatenates(rng):
    xs = rng.standard_normal((4, 3, 2, 2))
    for n in range(3):
        expected = np.hstack([mode_n_matricize(x, n) for x in xs])
        np.testing.assert_array_equal(unfold_samples(xs, n), expected)


def test_tnsr_round_trip(tmp_path, rng):
    x = rng.standard_normal((3, 2, 4))
    write_tnsr(tmp_path / "x.tnsr", x)
    np.testing.assert_array_equal(read_tnsr(tmp_path / "x.tnsr"), x)
    assert tnsr_bytes(x) == (tmp_path / "x.tnsr").read_bytes()
    (tmp_path / "bad.tnsr").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_tnsr(tmp_path / "bad.tnsr")
