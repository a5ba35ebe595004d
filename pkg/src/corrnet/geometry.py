"""Projective geometry primitives shared by sampling, detection, and evaluation.

Points are float64 arrays: a single point is shape (2,), a point set is
(N, 2), both in (x, y) pixel coordinates. Image corners follow the
pixel-center convention: (0, 0), (W-1, 0), (0, H-1), (W-1, H-1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegeneratePoint

W_EPS = 1e-12
DET_EPS = 1e-12


class Homography:
    """3x3 projective transform, normalized so m[2,2] == 1 whenever m[2,2] != 0.

    Instances are immutable; the wrapped matrix is read-only.
    """

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography entries must be finite")
        if abs(np.linalg.det(m)) <= DET_EPS:
            raise ValueError("homography is singular")
        if abs(m[2, 2]) > W_EPS:
            m = m / m[2, 2]
        m.flags.writeable = False
        self.m = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    @classmethod
    def scaling(cls, sx: float, sy: float) -> "Homography":
        return cls(np.diag([sx, sy, 1.0]))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """Return the transform that applies `other` first, then `self`."""
        return Homography(self.m @ other.m)

    def __matmul__(self, other: "Homography") -> "Homography":
        return self.compose(other)

    def __repr__(self) -> str:
        return f"Homography({self.m.tolist()})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Homography) and np.array_equal(self.m, other.m)


@dataclass(frozen=True)
class Rect:
    """Integer pixel rectangle covering columns [x0, x0+w) and rows [y0, y0+h)."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"rect extent must be >= 1, got {self.w}x{self.h}")

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h


def apply_homography(H: Homography, p) -> np.ndarray:
    """Transfer point(s) through H: (u, v, w) = H (x, y, 1), return (u/w, v/w).

    Accepts a single (2,) point or an (N, 2) set, returning the same shape.
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    hom = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    proj = hom @ H.m.T
    w = proj[:, 2]
    if np.any(np.abs(w) < W_EPS):
        raise DegeneratePoint("projected homogeneous coordinate vanished")
    out = proj[:, :2] / w[:, None]
    return out[0] if single else out


def rect_overlap_fraction(a: Rect, b: Rect) -> float:
    """Intersection area divided by the smaller rect's area; 0 when disjoint."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / min(a.area, b.area)


def image_corners(width: int, height: int) -> np.ndarray:
    """The four corner points of a width x height image, pixel-center convention."""
    return np.array(
        [[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]],
        dtype=np.float64,
    )


def corner_transfer_error(
    H_gt: Homography, H_est: Homography, width: int, height: int
) -> float:
    """Summed distance between ground-truth and estimated transfers of the 4 corners."""
    corners = image_corners(width, height)
    gt = apply_homography(H_gt, corners)
    est = apply_homography(H_est, corners)
    return float(np.linalg.norm(gt - est, axis=1).sum())


def homography_from_points(src, dst) -> Homography:
    """Least-squares DLT with Hartley normalization mapping src -> dst.

    Needs >= 4 correspondences; with exactly 4 the solution is exact.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[0] < 4:
        raise ValueError("need matching (N>=4, 2) point arrays")
    src_n, t_src = _hartley_normalize(src)
    dst_n, t_dst = _hartley_normalize(dst)
    a = _dlt_rows(src_n, dst_n)
    _, _, vt = np.linalg.svd(a)
    hn = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ hn @ t_src
    return Homography(m)


def _hartley_normalize(pts: np.ndarray):
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    mean_dist = np.mean(np.linalg.norm(centered, axis=1))
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    t = np.array(
        [[scale, 0, -scale * centroid[0]], [0, scale, -scale * centroid[1]], [0, 0, 1]]
    )
    return centered * scale, t


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    n = src.shape[0]
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    return a


def warp_image(image: np.ndarray, H: Homography, out_hw, mode: str = "constant"):
    """Inverse-warp: output pixel p gets image value at H^-1(p), bilinear.

    `image` is (H, W) or (H, W, C). Returns (warped, valid) where valid marks
    output pixels whose source sample lies inside the input frame.
    """
    oh, ow = out_hw
    inv = H.inverse().m
    xs, ys = np.meshgrid(np.arange(ow, dtype=np.float64), np.arange(oh, dtype=np.float64))
    denom = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / denom
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / denom
    ih, iw = image.shape[:2]
    valid = (sx >= 0) & (sx <= iw - 1) & (sy >= 0) & (sy <= ih - 1)
    coords = np.stack([sy.ravel(), sx.ravel()])
    if image.ndim == 2:
        warped = ndimage.map_coordinates(image, coords, order=1, mode=mode).reshape(oh, ow)
    else:
        channels = [
            ndimage.map_coordinates(image[..., c], coords, order=1, mode=mode).reshape(oh, ow)
            for c in range(image.shape[2])
        ]
        warped = np.stack(channels, axis=-1)
    return warped, valid


def read_homography_file(path) -> Homography:
    """Parse the 3-line whitespace-separated text layout (HPatches H_1_n)."""
    with open(path, "r", encoding="ascii") as fh:
        values = [float(tok) for tok in fh.read().split()]
    if len(values) != 9:
        raise ValueError(f"{path}: expected 9 values, got {len(values)}")
    return Homography(np.array(values).reshape(3, 3))


def write_homography_file(path, H: Homography) -> None:
    """Write 3 lines x 3 decimals with full round-trip precision."""
    with open(path, "w", encoding="ascii") as fh:
        for row in H.m:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
