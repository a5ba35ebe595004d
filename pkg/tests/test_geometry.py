import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import pixel_overlap_fraction
from corrnet.errors import DegeneratePoint
from corrnet.geometry import (
    Homography,
    Rect,
    apply_homography,
    corner_transfer_error,
    homography_from_points,
    image_corners,
    read_homography_file,
    rect_overlap_fraction,
    warp_image,
    write_homography_file,
)


def mild_projective(rng):
    """Random invertible H with small perspective terms, safe over [0, 100]^2."""
    m = np.eye(3)
    m[:2, :2] += rng.uniform(-0.2, 0.2, size=(2, 2))
    m[:2, 2] = rng.uniform(-10, 10, size=2)
    m[2, :2] = rng.uniform(-1e-4, 1e-4, size=2)
    return Homography(m)


def test_identity_translation_scaling():
    p = np.array([3.0, 4.0])
    assert np.array_equal(apply_homography(Homography.identity(), p), p)
    assert np.array_equal(
        apply_homography(Homography.translation(2.0, -1.0), p), [5.0, 3.0]
    )
    assert np.array_equal(apply_homography(Homography.scaling(2.0, 3.0), p), [6.0, 12.0])


def test_matrix_is_normalized_and_readonly():
    H = Homography(2.0 * np.eye(3))
    assert H.m[2, 2] == 1.0
    assert np.array_equal(H.m, np.eye(3))
    with pytest.raises(ValueError):
        H.m[0, 0] = 5.0


def test_zero_corner_entry_is_kept_unscaled():
    m = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    H = Homography(m)
    assert H.m[2, 2] == 0.0
    assert np.array_equal(H.m, m)


def test_singular_and_malformed_matrices_rejected():
    with pytest.raises(ValueError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Homography(np.eye(4))
    bad = np.eye(3)
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        Homography(bad)


def test_inverse_round_trips_points():
    rng = np.random.default_rng(7)
    for _ in range(20):
        H = mild_projective(rng)
        pts = rng.uniform(0, 100, size=(50, 2))
        back = apply_homography(H.inverse(), apply_homography(H, pts))
        assert np.allclose(back, pts, atol=1e-9)


def test_compose_applies_right_operand_first():
    A = Homography.translation(5.0, 0.0)
    B = Homography.scaling(2.0, 2.0)
    p = np.array([1.0, 1.0])
    expected = apply_homography(A, apply_homography(B, p))
    assert np.allclose(apply_homography(A.compose(B), p), expected)
    assert np.allclose(apply_homography(A @ B, p), expected)
    assert not np.allclose(apply_homography(B @ A, p), expected)


def test_apply_homography_shapes():
    H = Homography.translation(1.0, 2.0)
    single = apply_homography(H, [0.0, 0.0])
    batch = apply_homography(H, np.zeros((5, 2)))
    assert single.shape == (2,)
    assert batch.shape == (5, 2)
    assert np.array_equal(batch, np.tile(single, (5, 1)))


def test_vanishing_homogeneous_coordinate_raises():
    # third row (-1, 0, 1): w = 1 - x, vanishes on the x = 1 line
    H = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 1.0]]))
    assert np.allclose(apply_homography(H, [0.5, 0.0]), [1.0, 0.0])
    with pytest.raises(DegeneratePoint):
        apply_homography(H, [1.0, 0.0])


def test_rect_validation_and_properties():
    r = Rect(2, 3, 4, 5)
    assert (r.x1, r.y1, r.area) == (6, 8, 20)
    with pytest.raises(ValueError):
        Rect(0, 0, 0, 5)
    with pytest.raises(ValueError):
        Rect(0, 0, 5, -1)


def test_rect_overlap_fraction_hand_cases():
    a = Rect(0, 0, 10, 10)
    assert rect_overlap_fraction(a, a) == 1.0
    assert rect_overlap_fraction(a, Rect(10, 0, 10, 10)) == 0.0  # edge-adjacent
    assert rect_overlap_fraction(a, Rect(2, 2, 4, 4)) == 1.0  # nested, min-area norm
    assert rect_overlap_fraction(a, Rect(5, 0, 10, 10)) == 0.5


def test_rect_overlap_fraction_matches_pixel_enumeration():
    rng = np.random.default_rng(42)
    for _ in range(500):
        a = Rect(rng.integers(0, 30), rng.integers(0, 30), rng.integers(1, 20), rng.integers(1, 20))
        b = Rect(rng.integers(0, 30), rng.integers(0, 30), rng.integers(1, 20), rng.integers(1, 20))
        assert rect_overlap_fraction(a, b) == pixel_overlap_fraction(a, b)


@settings(max_examples=200, deadline=None)
@given(
    st.tuples(*[st.integers(0, 40) for _ in range(2)], *[st.integers(1, 25) for _ in range(2)]),
    st.tuples(*[st.integers(0, 40) for _ in range(2)], *[st.integers(1, 25) for _ in range(2)]),
)
def test_rect_overlap_fraction_properties(ta, tb):
    a, b = Rect(*ta), Rect(*tb)
    f = rect_overlap_fraction(a, b)
    assert 0.0 <= f <= 1.0
    assert f == rect_overlap_fraction(b, a)
    assert f == pixel_overlap_fraction(a, b)


def test_image_corners_order_and_convention():
    assert np.array_equal(
        image_corners(320, 240),
        [[0, 0], [319, 0], [0, 239], [319, 239]],
    )


def project_corner(H, x, y):
    """Scalar-arithmetic projection, independent of apply_homography."""
    m = H.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    return (
        (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
        (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
    )


def test_corner_transfer_error_matches_enumeration():
    # exact corner set, summed distances equal up to float associativity
    rng = np.random.default_rng(3)
    for _ in range(50):
        H_gt, H_est = mild_projective(rng), mild_projective(rng)
        total = 0.0
        for x, y in ([0, 0], [319, 0], [0, 239], [319, 239]):
            gx, gy = project_corner(H_gt, float(x), float(y))
            ex, ey = project_corner(H_est, float(x), float(y))
            total += np.sqrt((gx - ex) ** 2 + (gy - ey) ** 2)
        got = corner_transfer_error(H_gt, H_est, 320, 240)
        assert got == pytest.approx(total, rel=1e-13, abs=0.0)
    assert corner_transfer_error(H_gt, H_gt, 320, 240) == 0.0


def test_homography_from_points_exact_recovery():
    rng = np.random.default_rng(11)
    for n in (4, 12, 60):
        for _ in range(10):
            H = mild_projective(rng)
            src = rng.uniform(0, 100, size=(n, 2))
            dst = apply_homography(H, src)
            H_est = homography_from_points(src, dst)
            assert corner_transfer_error(H, H_est, 100, 100) < 1e-7


def test_homography_from_points_validation():
    pts = np.zeros((3, 2))
    with pytest.raises(ValueError):
        homography_from_points(pts, pts)
    with pytest.raises(ValueError):
        homography_from_points(np.zeros((4, 2)), np.zeros((5, 2)))


def test_warp_image_identity():
    rng = np.random.default_rng(0)
    img = rng.uniform(size=(12, 17, 3))
    warped, valid = warp_image(img, Homography.identity(), (12, 17))
    assert np.allclose(warped, img, atol=1e-12)
    assert valid.all()


def test_warp_image_integer_translation():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(20, 30))
    # output(p) = image(H^-1 p): shifting content by (+3, +5)
    warped, valid = warp_image(img, Homography.translation(3.0, 5.0), (20, 30))
    assert np.allclose(warped[5:, 3:], img[:-5, :-3], atol=1e-12)
    assert valid[5:, 3:].all()
    assert not valid[:5, :].any()
    assert not valid[:, :3].any()


def test_homography_file_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(5)
    H = mild_projective(rng)
    path = tmp_path / "H_1_2"
    write_homography_file(path, H)
    assert read_homography_file(path) == H


def test_read_homography_file_malformed(tmp_path):
    path = tmp_path / "H_bad"
    path.write_text("1 0 0 0 1 0 0 0\n")
    with pytest.raises(ValueError):
        read_homography_file(path)
