import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fmpca.linalg import (
    SingularState,
    apply_sign_convention,
    incremental_update,
    left_svd,
    svd_full,
    truncate_left,
)


def direct(a):
    u, s, _ = np.linalg.svd(a, full_matrices=True)
    full = np.zeros(a.shape[0])
    full[: s.size] = s
    return u, full


def dominant_projector(u, s, tol=1e-10):
    r = int(np.sum(s > tol * max(s.max(), 1e-300)))
    return u[:, :r] @ u[:, :r].T, r


def test_identity_and_diagonal():
    st_, _ = svd_full(np.eye(3))
    np.testing.assert_allclose(st_.u, np.eye(3))
    np.testing.assert_allclose(st_.s, [1, 1, 1])
    st2, _ = svd_full(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(st2.s, [3, 1])


def test_random_reconstruction(rng):
    a = rng.standard_normal((4, 6))
    state, v = svd_full(a)
    recon = state.u @ np.diag(state.s) @ v.T
    assert np.max(np.abs(recon - a)) <= 1e-10
    np.testing.assert_allclose(state.u.T @ state.u, np.eye(4), atol=1e-12)


def test_full_basis_for_rank_deficient(rng):
    a = rng.standard_normal((6, 2))
    state, v = svd_full(a)
    assert state.u.shape == (6, 6)
    np.testing.assert_allclose(state.u.T @ state.u, np.eye(6), atol=1e-12)
    assert np.all(state.s[2:] == 0)
    np.testing.assert_allclose(state.u @ np.diag(state.s) @ v.T, a, atol=1e-12)


def test_sign_convention():
    u = np.array([[0.6, -0.8], [-0.8, -0.6]])
    signs = apply_sign_convention(u)
    np.testing.assert_array_equal(signs, [-1, -1])
    state = left_svd(np.array([[-2.0, 0.0], [0.0, 1.0]]))
    assert np.all(state.u[np.argmax(np.abs(state.u), axis=0), [0, 1]] > 0)


def test_truncate_left_examples(rng):
    state = left_svd(rng.standard_normal((3, 5)))
    np.testing.assert_array_equal(truncate_left(state, 3), state.u)
    assert truncate_left(state, 1).shape == (3, 1)
    diag = left_svd(np.diag([3.0, 1.0]))
    np.testing.assert_array_equal(truncate_left(diag, 1), [[1.0], [0.0]])
    with pytest.raises(ValueError):
        truncate_left(state, 0)
    with pytest.raises(ValueError):
        truncate_left(state, 4)


def test_update_with_zero_block(rng):
    a = rng.standard_normal((4, 3))
    base = left_svd(a)
    up = incremental_update(base, np.zeros((4, 2)))
    np.testing.assert_allclose(up.s, base.s, atol=1e-12)
    p1, r = dominant_projector(base.u, base.s)
    p2, _ = dominant_projector(up.u, up.s)
    np.testing.assert_allclose(p1, p2, atol=1e-12)
    _, s_direct = direct(np.hstack([a, np.zeros((4, 2))]))
    np.testing.assert_allclose(up.s, s_direct, atol=1e-12)


def test_update_inside_span(rng):
    a = rng.standard_normal((5, 2))
    b = a @ rng.standard_normal((2, 3))
    up = incremental_update(left_svd(a), b)
    _, s_direct = direct(np.hstack([a, b]))
    np.testing.assert_allclose(up.s, s_direct, rtol=1e-9, atol=1e-12)


def test_update_random_3x4_3x2(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 2))
    up = incremental_update(left_svd(a), b)
    u_d, s_d = direct(np.hstack([a, b]))
    np.testing.assert_allclose(up.s, s_d, rtol=1e-9)
    np.testing.assert_allclose(up.u @ up.u.T, np.eye(3), atol=1e-12)
    for p in (1, 2):
        np.testing.assert_allclose(up.u[:, :p] @ up.u[:, :p].T, u_d[:, :p] @ u_d[:, :p].T, atol=1e-9)


def test_update_rejects_bad_shape(rng):
    with pytest.raises(ValueError):
        incremental_update(left_svd(rng.standard_normal((3, 3))), rng.standard_normal((4, 2)))
    with pytest.raises(ValueError):
        incremental_update(left_svd(rng.standard_normal((3, 3))), np.full((3, 1), np.nan))


def test_merge_associativity_100_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = int(rng.integers(1, 9))
        blocks = [rng.standard_normal((m, int(rng.integers(1, 6)))) for _ in range(3)]
        state = left_svd(blocks[0])
        for b in blocks[1:]:
            state = incremental_update(state, b)
        u_d, s_d = direct(np.hstack(blocks))
        np.testing.assert_allclose(state.s, s_d, rtol=1e-8, atol=1e-10)
        gaps = np.where(np.diff(s_d) < -1e-6 * s_d[0])[0]
        for r in gaps[:3] + 1:
            p_inc = state.u[:, :r] @ state.u[:, :r].T
            p_dir = u_d[:, :r] @ u_d[:, :r].T
            assert np.max(np.abs(p_inc - p_dir)) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(
    a=arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 5)),
             elements=st.floats(-10, 10, allow_nan=False)),
    data=st.data(),
)
def test_update_descending_energy_property(a, data):
    m = a.shape[0]
    b = data.draw(arrays(np.float64, (m, data.draw(st.integers(1, 4))),
                         elements=st.floats(-10, 10, allow_nan=False)))
    before = left_svd(a)
    up = incremental_update(before, b)
    assert np.all(up.s >= 0)
    assert np.all(np.diff(up.s) <= 1e-12 * max(1.0, up.s[0]))
    expected = before.energy() + float(np.sum(b**2))
    assert up.energy() == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_deterministic_bits(rng):
    a, b = rng.standard_normal((6, 4)), rng.standard_normal((6, 3))
    r1 = incremental_update(left_svd(a), b)
    r2 = incremental_update(left_svd(a.copy()), b.copy())
    assert r1.u.tobytes() == r2.u.tobytes() and r1.s.tobytes() == r2.s.tobytes()


def test_singular_state_helpers():
    s = SingularState(np.eye(2), np.array([3.0, 4.0]))
    assert s.m == 2 and s.energy() == 25.0
