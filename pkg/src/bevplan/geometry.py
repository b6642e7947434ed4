"""Planar homography algebra, DLT estimation and perspective grid warping.

Conventions used throughout the package:

* 2D points are ``(x, y)`` pairs.  For images and grids ``x`` is the column
  index and ``y`` the row index, with integer coordinates at cell centers.
* A :class:`Homography` maps source-plane points to target-plane points.
  For the camera-to-BEV homography the source is the camera image (pixels)
  and the target the bird-eye-view grid (cells).
* World / ego frames are right handed: x forward, y left, z up (meters).
* Camera frames follow the computer-vision convention: x right, y down,
  z along the optical axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GeometryError",
    "DegenerateConfigurationError",
    "PointAtInfinityError",
    "BehindCameraError",
    "Homography",
    "CameraModel",
    "Correspondence",
    "apply_homography",
    "estimate_homography_dlt",
    "rescale_homography",
    "ground_plane_homography",
    "project_point",
    "warp_grid",
    "hartley_normalization",
    "dlt_design_matrix",
]

_W_EPS = 1e-12


class GeometryError(ValueError):
    """Base class for geometric failures."""


class DegenerateConfigurationError(GeometryError):
    """Raised when a problem instance has no well-defined solution."""


class PointAtInfinityError(GeometryError):
    """Raised when a mapped point lies on the line at infinity."""


class BehindCameraError(GeometryError):
    """Raised when a point to be projected lies behind the camera."""


def _canonicalize(m: np.ndarray) -> np.ndarray:
    """Scale a 3x3 matrix to Frobenius norm 1 with a canonical sign.

    The sign is chosen so that h33 >= 0; when |h33| is negligible the
    largest-magnitude entry is made positive instead.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise GeometryError(f"homography must be 3x3, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise GeometryError("homography has non-finite entries")
    norm = np.linalg.norm(m)
    if norm < _W_EPS:
        raise DegenerateConfigurationError("zero homography matrix")
    m = m / norm
    if abs(m[2, 2]) >= _W_EPS:
        sign = np.sign(m[2, 2])
    else:
        flat = m.ravel()
        sign = np.sign(flat[np.argmax(np.abs(flat))])
    return m * sign


@dataclass(frozen=True)
class Homography:
    """An invertible 3x3 projective map, stored in canonical scale."""

    m: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _canonicalize(self.m)
        if abs(np.linalg.det(m)) <= _W_EPS:
            raise DegenerateConfigurationError("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_flat(cls, values) -> "Homography":
        """Build from 9 row-major numbers (the JSON wire format)."""
        vals = np.asarray(values, dtype=float)
        if vals.shape != (9,):
            raise GeometryError("expected 9 row-major homography entries")
        return cls(vals.reshape(3, 3))

    def to_flat(self) -> list[float]:
        return [float(v) for v in self.m.ravel()]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def compose(self, other: "Homography") -> "Homography":
        """Apply ``other`` first, then ``self``."""
        return Homography(self.m @ other.m)

    def apply(self, p) -> np.ndarray:
        return apply_homography(self, p)

    def apply_many(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map an (N, 2) array of points; also return the w denominators."""
        pts = np.asarray(pts, dtype=float)
        ph = np.column_stack([pts, np.ones(len(pts))])
        q = ph @ self.m.T
        w = q[:, 2]
        safe = np.where(np.abs(w) > _W_EPS, w, np.nan)
        return q[:, :2] / safe[:, None], w


def apply_homography(h: Homography, p) -> np.ndarray:
    """Map a single point through ``h``, raising on points at infinity."""
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) <= _W_EPS:
        raise PointAtInfinityError(f"point {p!r} maps to infinity (w={w:.3e})")
    return np.array(
        [
            (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w,
            (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w,
        ]
    )


@dataclass(frozen=True)
class Correspondence:
    """A matched point pair: camera pixels on one side, BEV cells on the other."""

    camera: tuple[float, float]
    bev: tuple[float, float]

    def __post_init__(self):
        vals = (*self.camera, *self.bev)
        if not all(np.isfinite(v) for v in vals):
            raise GeometryError("correspondence has non-finite coordinates")


def hartley_normalization(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity T moving the centroid to the origin and the mean distance
    to sqrt(2).  Returns (T, T applied to pts)."""
    pts = np.asarray(pts, dtype=float)
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    s = np.sqrt(2.0) / d if d > _W_EPS else 1.0
    t = np.array(
        [
            [s, 0.0, -s * centroid[0]],
            [0.0, s, -s * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return t, (pts - centroid) * s


def dlt_design_matrix(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Stack the 2Nx9 linear system whose null vector is the homography."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    a = np.zeros((2 * n, 9))
    u, v = src[:, 0], src[:, 1]
    x, y = dst[:, 0], dst[:, 1]
    a[0::2, 0] = -u
    a[0::2, 1] = -v
    a[0::2, 2] = -1.0
    a[0::2, 6] = x * u
    a[0::2, 7] = x * v
    a[0::2, 8] = x
    a[1::2, 3] = -u
    a[1::2, 4] = -v
    a[1::2, 5] = -1.0
    a[1::2, 6] = y * u
    a[1::2, 7] = y * v
    a[1::2, 8] = y
    return a


def estimate_homography_dlt(pairs: list[Correspondence]) -> Homography:
    """Least-squares homography from point correspondences.

    Both point sets are Hartley-normalized before the 2Nx9 system is solved
    through its smallest singular vector; the result is denormalized and
    canonicalized.  A rank-deficient system (fewer than 4 pairs in general
    position) raises :class:`DegenerateConfigurationError`.
    """
    if len(pairs) < 4:
        raise GeometryError(f"need at least 4 correspondences, got {len(pairs)}")
    src = np.array([p.camera for p in pairs], dtype=float)
    dst = np.array([p.bev for p in pairs], dtype=float)
    t_src, src_n = hartley_normalization(src)
    t_dst, dst_n = hartley_normalization(dst)
    a = dlt_design_matrix(src_n, dst_n)
    _, sig, vt = np.linalg.svd(a, full_matrices=True)
    if sig[7] / sig[0] < 1e-10:
        raise DegenerateConfigurationError(
            "degenerate correspondence configuration (design matrix rank < 8)"
        )
    h_n = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_n @ t_src
    return Homography(h)


def rescale_homography(h: Homography, s: float) -> Homography:
    """Conjugate ``h`` by diag(s, s, 1).

    The result maps scaled source coordinates to scaled target coordinates:
    H_s(s*p) = s*H(p) for every point p.
    """
    if not (s > 0) or not np.isfinite(s):
        raise GeometryError(f"scale factor must be positive, got {s!r}")
    scale = np.diag([s, s, 1.0])
    inv = np.diag([1.0 / s, 1.0 / s, 1.0])
    return Homography(scale @ h.m @ inv)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics plus a camera-from-world rigid pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # camera-from-world, 3x3
    translation: np.ndarray  # camera-from-world, 3-vector
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise GeometryError("pose must be a 3x3 rotation and a 3-vector")
        if np.linalg.norm(r.T @ r - np.eye(3)) >= 1e-9:
            raise GeometryError("rotation is not orthonormal")
        r = r.copy()
        t = t.copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation


def project_point(cam: CameraModel, world) -> np.ndarray:
    """Pinhole projection of a world point; the point must be in front."""
    pc = cam.rotation @ np.asarray(world, dtype=float) + cam.translation
    if pc[2] <= 1e-6:
        raise BehindCameraError(f"point {world!r} is behind the camera (z={pc[2]:.3e})")
    return np.array(
        [cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy]
    )


def project_points(cam: CameraModel, world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns pixel coords and camera-frame depths."""
    pc = cam.world_to_camera(world)
    z = pc[:, 2]
    safe = np.where(z > 1e-6, z, np.nan)
    px = np.column_stack(
        [cam.fx * pc[:, 0] / safe + cam.cx, cam.fy * pc[:, 1] / safe + cam.cy]
    )
    return px, z


def ground_plane_homography(cam: CameraModel, grid_spec) -> Homography:
    """Analytic pixel-to-grid homography for points on the z=0 plane.

    ``grid_spec`` only needs ``resolution``, ``anchor_row`` and ``anchor_col``
    attributes (see :class:`bevplan.ogm.GridSpec`); the camera pose must be
    expressed in the same frame the grid is anchored to (the ego frame for
    ego-centric grids).  Grid coordinates are returned as (col, row).
    """
    k = cam.intrinsics
    r = cam.rotation
    t = cam.translation
    # world ground point (x, y, 1) -> pixel, up to scale
    p = k @ np.column_stack([r[:, 0], r[:, 1], t])
    det = np.linalg.det(p)
    norm = np.linalg.norm(p)
    if abs(det) <= 1e-12 * norm**3:
        raise DegenerateConfigurationError(
            "camera is degenerate with respect to the ground plane"
        )
    res = grid_spec.resolution
    # world (x fwd, y left) -> grid (col, row): forward decreases the row
    g = np.array(
        [
            [0.0, -1.0 / res, grid_spec.anchor_col],
            [-1.0 / res, 0.0, grid_spec.anchor_row],
            [0.0, 0.0, 1.0],
        ]
    )
    return Homography(g @ np.linalg.inv(p))


def warp_grid(
    src: np.ndarray,
    h: Homography,
    dst_shape: tuple[int, int],
    fill: float = 0.0,
    mode: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-mapping perspective warp of a 2D grid.

    ``h`` maps source coordinates (x=col, y=row) to destination coordinates.
    Every destination cell center is pulled back through ``h^-1`` and sampled
    from ``src``; cells whose preimage falls outside the source grid (or maps
    through w ~ 0) receive ``fill`` and are marked invalid.  Returns
    ``(warped, valid)``.
    """
    src = np.asarray(src, dtype=float)
    if src.ndim != 2:
        raise GeometryError("source grid must be 2-dimensional")
    if mode not in ("bilinear", "nearest"):
        raise GeometryError(f"unknown interpolation mode {mode!r}")
    rows, cols = dst_shape
    hinv = np.linalg.inv(h.m)
    yy, xx = np.mgrid[0:rows, 0:cols]
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.ones(rows * cols)])
    q = pts @ hinv.T
    w = q[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = q[:, 0] / w
        sy = q[:, 1] / w
    sh, sw = src.shape
    valid = (
        (np.abs(w) > _W_EPS)
        & np.isfinite(sx)
        & np.isfinite(sy)
        & (sx >= 0.0)
        & (sx <= sw - 1.0)
        & (sy >= 0.0)
        & (sy <= sh - 1.0)
    )
    out = np.full(rows * cols, float(fill))
    if mode == "nearest":
        ix = np.clip(np.rint(sx[valid]).astype(int), 0, sw - 1)
        iy = np.clip(np.rint(sy[valid]).astype(int), 0, sh - 1)
        out[valid] = src[iy, ix]
    else:
        vx, vy = sx[valid], sy[valid]
        x0 = np.clip(np.floor(vx).astype(int), 0, sw - 2) if sw > 1 else np.zeros(len(vx), int)
        y0 = np.clip(np.floor(vy).astype(int), 0, sh - 2) if sh > 1 else np.zeros(len(vy), int)
        fx = vx - x0
        fy = vy - y0
        v00 = src[y0, x0]
        v01 = src[y0, np.minimum(x0 + 1, sw - 1)]
        v10 = src[np.minimum(y0 + 1, sh - 1), x0]
        v11 = src[np.minimum(y0 + 1, sh - 1), np.minimum(x0 + 1, sw - 1)]
        out[valid] = (
            v00 * (1 - fx) * (1 - fy)
            + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy
            + v11 * fx * fy
        )
    return out.reshape(rows, cols), valid.reshape(rows, cols)
