import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kinefuse import quatkin as qk
from kinefuse.errors import DegenerateVectorError, RotationError

finite = st.floats(-10.0, 10.0, allow_nan=False)
quats = arrays(float, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 1e-3).map(qk.quat_normalize)
vecs = arrays(float, 3, elements=finite)

Z90 = qk.axis_angle_to_quat(([0.0, 0.0, 1.0], np.pi / 2))
X90 = qk.axis_angle_to_quat(([1.0, 0.0, 0.0], np.pi / 2))


def test_identity_is_neutral(rng):
    q = qk.random_quaternions(rng, 50)
    np.testing.assert_allclose(qk.quat_mul(qk.IDENTITY, q), q, atol=1e-15)
    np.testing.assert_allclose(qk.quat_mul(q, qk.IDENTITY), q, atol=1e-15)


def test_inverse_gives_identity(rng):
    q = qk.random_quaternions(rng, 200)
    np.testing.assert_allclose(qk.quat_mul(q, qk.quat_inv(q)), np.tile(qk.IDENTITY, (200, 1)), atol=1e-12)


def test_inverse_of_axis_angle_flips_axis():
    q = qk.axis_angle_to_quat(([0.0, 1.0, 0.0], 0.7))
    want = qk.axis_angle_to_quat(([0.0, -1.0, 0.0], 0.7))
    np.testing.assert_allclose(qk.quat_inv(q), want, atol=1e-15)
    np.testing.assert_array_equal(qk.quat_inv(qk.IDENTITY), qk.IDENTITY)


def test_quarter_turn_about_z():
    np.testing.assert_allclose(qk.quat_rotate_vec(Z90, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_array_equal(qk.quat_rotate_vec(qk.IDENTITY, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_product_matches_matrix_product():
    got = qk.quat_to_matrix(qk.quat_mul(Z90, X90))
    want = qk.quat_to_matrix(Z90) @ qk.quat_to_matrix(X90)
    np.testing.assert_allclose(got, want, atol=1e-15)
    # b applies first: x axis -> (x90) x -> (z90) y
    np.testing.assert_allclose(got @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_rodrigues_examples():
    np.testing.assert_array_equal(qk.rodrigues(qk.AxisAngle([0.0, 0.0, 1.0], 0.0)), np.eye(3))
    R = qk.rodrigues(qk.AxisAngle([0.0, 0.0, 1.0], np.pi / 2))
    np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_rodrigues_fixes_its_axis(rng):
    axes = rng.standard_normal((100, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    R = qk.rodrigues((axes, rng.uniform(0, np.pi, 100)))
    np.testing.assert_allclose(np.einsum("nij,nj->ni", R, axes), axes, atol=1e-14)
    assert np.all(qk.is_rotation_matrix(R, 1e-12))


def test_half_turn_conversions():
    for axis in np.eye(3):
        q = qk.axis_angle_to_quat((axis, np.pi))
        np.testing.assert_allclose(qk.matrix_to_quat(qk.quat_to_matrix(q)), qk.canonicalize(q), atol=1e-12)
    q = qk.axis_angle_to_quat(([1.0, -1.0, 0.5], np.pi))
    np.testing.assert_allclose(qk.matrix_to_quat(qk.quat_to_matrix(q)), qk.canonicalize(q), atol=1e-12)
    np.testing.assert_array_equal(qk.matrix_to_quat(np.eye(3)), qk.IDENTITY)


def test_matrix_to_quat_rejects_non_rotations():
    with pytest.raises(RotationError):
        qk.matrix_to_quat(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(RotationError):
        qk.matrix_to_quat(np.eye(3) * 1.01)


def test_angle_between_examples():
    assert qk.angle_between([1.0, 0, 0], [1.0, 0, 0]) == 0.0
    assert qk.angle_between([1.0, 0, 0], [0, 1.0, 0]) == pytest.approx(np.pi / 2, abs=1e-15)
    assert qk.angle_between([1.0, 0, 0], [-1.0, 0, 0]) == pytest.approx(np.pi, abs=1e-15)


def test_angle_between_tiny_angles_keep_precision():
    # acos would return 0 here
    assert qk.angle_between([1.0, 0, 0], [1.0, 1e-9, 0]) == pytest.approx(1e-9, rel=1e-6)


def test_degenerate_vectors_raise():
    with pytest.raises(DegenerateVectorError):
        qk.angle_between([0.0, 0, 0], [1.0, 0, 0])
    with pytest.raises(DegenerateVectorError):
        qk.AxisAngle([0.0, 0.0, 0.0], 1.0)
    with pytest.raises(DegenerateVectorError):
        qk.quat_normalize([0.0, 0.0, 0.0, 0.0])


def test_canonical_hemisphere_on_w_zero():
    q = qk.canonicalize([0.0, -0.0, -1.0, 0.0])
    assert q[2] == 1.0
    q = qk.canonicalize([-0.0, 0.0, 0.0, -1.0])
    assert q[3] == 1.0


def test_axis_angle_normalizes_angle_range():
    aa = qk.AxisAngle([0.0, 0.0, 2.0], 1.5 * np.pi)
    assert aa.angle == pytest.approx(0.5 * np.pi)
    np.testing.assert_allclose(aa.axis, [0.0, 0.0, -1.0])


def test_rotvec_roundtrip_near_zero():
    r = np.array([[1e-14, 0.0, 0.0], [0.0, 0.0, 0.0], [0.3, -0.2, 0.1]])
    np.testing.assert_allclose(qk.quat_to_rotvec(qk.rotvec_to_quat(r)), r, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(quats, vecs)
def test_rotation_preserves_norm_and_matches_matrix(q, v):
    out = qk.quat_rotate_vec(q, v)
    assert abs(np.linalg.norm(out) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))
    np.testing.assert_allclose(out, qk.quat_to_matrix(q) @ v, atol=1e-12 * max(1.0, np.linalg.norm(v)))


@settings(max_examples=200, deadline=None)
@given(quats, quats, quats)
def test_associativity(a, b, c):
    left = qk.quat_mul(qk.quat_mul(a, b), c)
    right = qk.quat_mul(a, qk.quat_mul(b, c))
    # equal as rotations; the canonical sign may flip when w is near zero
    assert min(np.max(np.abs(left - right)), np.max(np.abs(left + right))) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(quats, vecs)
def test_sign_flip_does_not_change_action(q, v):
    np.testing.assert_allclose(qk.quat_rotate_vec(-q, v), qk.quat_rotate_vec(q, v),
                               atol=1e-12 * max(1.0, np.linalg.norm(v)))


@settings(max_examples=200, deadline=None)
@given(quats)
def test_constructors_are_unit_and_canonical(q):
    assert abs(np.linalg.norm(q) - 1.0) <= 1e-12
    assert q[0] >= 0.0
    back = qk.matrix_to_quat(qk.quat_to_matrix(q))
    assert np.max(np.abs(back - q)) <= 1e-10 or np.max(np.abs(back + q)) <= 1e-10
