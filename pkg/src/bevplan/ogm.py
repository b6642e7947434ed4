"""Metric occupancy grids: rasterization, regional IoU and instance labeling.

The grid frame is ego-centric and heading aligned: the ego vehicle sits at
the anchor cell and faces towards decreasing row indices.  Default layout is
1000x550 cells of 0.1 m (100 m ahead, 30 m left / 25 m right).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path

from .geometry import BehindCameraError, CameraModel, GeometryError, project_points

__all__ = [
    "OgmError",
    "GridSpec",
    "OccupancyGrid",
    "Box3D",
    "REGIONS",
    "region_mask",
    "rasterize_drivable",
    "rasterize_footprints",
    "footprint_polygon_camera",
    "silhouette_polygon_camera",
    "rasterize_polygon",
    "iou",
    "connected_components",
    "threshold",
]


class OgmError(ValueError):
    """Occupancy-grid contract violation (spec mismatch, invalid values...)."""


@dataclass(frozen=True)
class GridSpec:
    rows: int = 1000
    cols: int = 550
    resolution: float = 0.1  # meters per cell
    anchor_row: int = 999  # ego cell, clamped inside the grid
    anchor_col: int = 300

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.resolution <= 0:
            raise OgmError("grid dimensions and resolution must be positive")
        if not (0 <= self.anchor_row < self.rows and 0 <= self.anchor_col < self.cols):
            raise OgmError("ego anchor cell lies outside the grid")

    def cell_centers_ego(self) -> tuple[np.ndarray, np.ndarray]:
        """Ego-frame (x forward, y left) coordinates of every cell center."""
        rr, cc = np.mgrid[0 : self.rows, 0 : self.cols]
        x = (self.anchor_row - rr) * self.resolution
        y = (self.anchor_col - cc) * self.resolution
        return x, y

    def ego_to_grid(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Ego-frame meters -> fractional (col, row) grid coordinates."""
        col = self.anchor_col - np.asarray(y, dtype=float) / self.resolution
        row = self.anchor_row - np.asarray(x, dtype=float) / self.resolution
        return col, row

    def scaled(self, factor: int) -> "GridSpec":
        """A coarser spec covering the same area (factor-times larger cells)."""
        return GridSpec(
            rows=self.rows // factor,
            cols=self.cols // factor,
            resolution=self.resolution * factor,
            anchor_row=min(self.anchor_row // factor, self.rows // factor - 1),
            anchor_col=min(self.anchor_col // factor, self.cols // factor - 1),
        )


@dataclass(frozen=True)
class OccupancyGrid:
    spec: GridSpec
    cells: np.ndarray = field(repr=False)
    channel: str = "drivable"
    validity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=float)
        if cells.shape != (self.spec.rows, self.spec.cols):
            raise OgmError(
                f"cells shape {cells.shape} does not match spec "
                f"({self.spec.rows}, {self.spec.cols})"
            )
        if cells.size and (cells.min() < 0.0 or cells.max() > 1.0):
            raise OgmError("cell values must lie in [0, 1]")
        if self.channel not in ("drivable", "vehicle"):
            raise OgmError(f"unknown channel tag {self.channel!r}")
        cells = cells.copy()
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        if self.validity is not None:
            v = np.asarray(self.validity, dtype=bool).copy()
            if v.shape != cells.shape:
                raise OgmError("validity mask shape mismatch")
            v.setflags(write=False)
            object.__setattr__(self, "validity", v)

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.cells == 0.0) | (self.cells == 1.0)))


@dataclass(frozen=True)
class Box3D:
    """3D bounding box: center (x, y, z), dimensions and yaw about +z."""

    center: tuple[float, float, float]
    length: float
    width: float
    height: float
    yaw: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0 and self.height >= 0):
            raise OgmError("box dimensions must be positive (height >= 0)")

    def footprint_corners(self) -> np.ndarray:
        """4x3 corners of the ground face, counter-clockwise."""
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        xy = local @ rot.T + np.array(self.center[:2])
        z0 = self.center[2] - self.height / 2.0
        return np.column_stack([xy, np.full(4, z0)])

    def corners(self) -> np.ndarray:
        """All 8 box corners (ground face first, then roof face)."""
        base = self.footprint_corners()
        top = base.copy()
        top[:, 2] += self.height
        return np.vstack([base, top])


_REGION_TAGS = ("full", "close", "far")
REGIONS = _REGION_TAGS


def region_mask(spec: GridSpec, region: str) -> np.ndarray:
    """Boolean cell mask for an evaluation region.

    ``close`` covers 0-50 m ahead of the ego and 10 m to each side; ``far``
    everything beyond 50 m ahead (all columns).  The extents scale with the
    grid spec so coarser grids keep the same metric regions.
    """
    if region not in _REGION_TAGS:
        raise OgmError(f"unknown region {region!r}")
    mask = np.zeros((spec.rows, spec.cols), dtype=bool)
    if region == "full":
        mask[:] = True
        return mask
    ahead_cells = int(round(50.0 / spec.resolution))
    split_row = spec.anchor_row + 1 - ahead_cells
    if region == "far":
        mask[: max(split_row, 0), :] = True
        return mask
    lat_cells = int(round(10.0 / spec.resolution))
    c0 = max(spec.anchor_col - lat_cells, 0)
    c1 = min(spec.anchor_col + lat_cells, spec.cols)
    mask[max(split_row, 0) : spec.anchor_row + 1, c0:c1] = True
    return mask


def _ego_from_world(ego_pose) -> tuple[np.ndarray, np.ndarray]:
    """Rotation/translation taking world points into the ego frame."""
    x, y, heading = ego_pose
    c, s = math.cos(heading), math.sin(heading)
    r = np.array([[c, s], [-s, c]])
    t = -r @ np.array([x, y])
    return r, t


def rasterize_drivable(
    road_polygons: list[np.ndarray],
    ego_pose,
    spec: GridSpec = GridSpec(),
) -> OccupancyGrid:
    """Binary drivable-area grid in the ego-centric heading-aligned frame.

    A cell is occupied iff its center lies inside any of the (world-frame)
    polygons.  An empty polygon list yields an all-zero grid.
    """
    cells = np.zeros((spec.rows, spec.cols))
    if road_polygons:
        ex, ey = spec.cell_centers_ego()
        r, t = _ego_from_world(ego_pose)
        rinv = r.T
        pts_world = np.column_stack([ex.ravel(), ey.ravel()]) @ rinv.T - (rinv @ t)
        inside = np.zeros(len(pts_world), dtype=bool)
        for poly in road_polygons:
            poly = np.asarray(poly, dtype=float)
            path = Path(poly)
            inside |= path.contains_points(pts_world)
        cells = inside.reshape(spec.rows, spec.cols).astype(float)
    return OccupancyGrid(spec, cells, channel="drivable")


def rasterize_footprints(
    boxes: list[Box3D],
    ego_pose,
    spec: GridSpec = GridSpec(),
) -> OccupancyGrid:
    """Union of the ground-face rectangles of world-frame boxes."""
    cells = np.zeros((spec.rows, spec.cols))
    r, t = _ego_from_world(ego_pose)
    _, _, ego_heading = ego_pose
    for box in boxes:
        cx, cy = r @ np.array(box.center[:2]) + t
        yaw = box.yaw - ego_heading
        # bounding window in grid indices (box circumradius + one cell)
        rad = 0.5 * math.hypot(box.length, box.width) + spec.resolution
        col_c, row_c = spec.ego_to_grid(cx, cy)
        rc = int(math.ceil(rad / spec.resolution))
        r0 = max(int(row_c) - rc, 0)
        r1 = min(int(row_c) + rc + 2, spec.rows)
        c0 = max(int(col_c) - rc, 0)
        c1 = min(int(col_c) + rc + 2, spec.cols)
        if r0 >= r1 or c0 >= c1:
            continue
        rr, cc = np.mgrid[r0:r1, c0:c1]
        px = (spec.anchor_row - rr) * spec.resolution - cx
        py = (spec.anchor_col - cc) * spec.resolution - cy
        c_, s_ = math.cos(yaw), math.sin(yaw)
        u = c_ * px + s_ * py
        v = -s_ * px + c_ * py
        hit = (np.abs(u) <= box.length / 2.0) & (np.abs(v) <= box.width / 2.0)
        window = cells[r0:r1, c0:c1]
        window[hit] = 1.0
    return OccupancyGrid(spec, cells, channel="vehicle")


def _clip_halfplane(poly: np.ndarray, inside_fn, intersect_fn) -> np.ndarray:
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        cur_in, nxt_in = inside_fn(cur), inside_fn(nxt)
        if cur_in:
            out.append(cur)
            if not nxt_in:
                out.append(intersect_fn(cur, nxt))
        elif nxt_in:
            out.append(intersect_fn(cur, nxt))
    return np.array(out) if out else np.zeros((0, poly.shape[1]))


def _clip_polygon_rect(poly: np.ndarray, xmin, xmax, ymin, ymax) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon against a rectangle."""

    def against(axis, bound, keep_leq):
        def inside(p):
            return p[axis] <= bound if keep_leq else p[axis] >= bound

        def cross(a, b):
            f = (bound - a[axis]) / (b[axis] - a[axis])
            return a + f * (b - a)

        return inside, cross

    for axis, bound, keep_leq in (
        (0, xmin, False),
        (0, xmax, True),
        (1, ymin, False),
        (1, ymax, True),
    ):
        if len(poly) == 0:
            break
        inside, cross = against(axis, bound, keep_leq)
        poly = _clip_halfplane(poly, inside, cross)
    return poly


def _project_camera_polygon(
    corners: np.ndarray, cam: CameraModel, z_near: float = 1e-3
) -> np.ndarray:
    """Clip world-frame corners against the near plane and project them."""
    pc = cam.world_to_camera(corners)
    if np.all(pc[:, 2] <= z_near):
        raise BehindCameraError("polygon lies fully behind the camera")

    def inside(p):
        return p[2] > z_near

    def cross(a, b):
        f = (z_near - a[2]) / (b[2] - a[2])
        return a + f * (b - a)

    clipped = _clip_halfplane(pc, inside, cross)
    px = np.column_stack(
        [
            cam.fx * clipped[:, 0] / clipped[:, 2] + cam.cx,
            cam.fy * clipped[:, 1] / clipped[:, 2] + cam.cy,
        ]
    )
    return _clip_polygon_rect(px, -0.5, cam.width - 0.5, -0.5, cam.height - 0.5)


def footprint_polygon_camera(box: Box3D, cam: CameraModel) -> np.ndarray:
    """Camera-plane polygon of a box's ground face, frustum clipped.

    This is the footprint mask primitive: only pixels on the (locally flat)
    ground surface are produced, so warping them with the ground-plane
    homography is geometrically exact.
    """
    return _project_camera_polygon(box.footprint_corners(), cam)


def silhouette_polygon_camera(box: Box3D, cam: CameraModel) -> np.ndarray:
    """Convex hull of all 8 projected box corners (the naive 3D silhouette).

    This is what warping a full segmentation mask operates on; pixels above
    the ground plane get stretched away from the camera in BEV, which is the
    deformation the footprint representation avoids.
    """
    px, z = project_points(cam, box.corners())
    keep = z > 1e-3
    if not keep.any():
        raise BehindCameraError("box lies fully behind the camera")
    pts = px[keep]
    hull = _convex_hull(pts)
    return _clip_polygon_rect(hull, -0.5, cam.width - 0.5, -0.5, cam.height - 0.5)


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain, counter-clockwise in (x, y-down) coords."""
    pts = np.unique(np.asarray(pts, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(seq):
        out: list[np.ndarray] = []
        for p in seq:
            while len(out) >= 2:
                a, b = out[-1] - out[-2], p - out[-2]
                if a[0] * b[1] - a[1] * b[0] > 0:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def rasterize_polygon(
    poly: np.ndarray, shape: tuple[int, int], supersample: int = 4
) -> np.ndarray:
    """Anti-aliased coverage raster of a polygon given in (x, y) pixel coords.

    Returns a float array in [0, 1]; each pixel holds the supersampled
    fraction of its area covered by the polygon.  Pixel centers sit at
    integer coordinates.
    """
    rows, cols = shape
    out = np.zeros((rows, cols))
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return out
    x0 = max(int(math.floor(poly[:, 0].min() - 0.5)), 0)
    x1 = min(int(math.ceil(poly[:, 0].max() + 0.5)), cols - 1)
    y0 = max(int(math.floor(poly[:, 1].min() - 0.5)), 0)
    y1 = min(int(math.ceil(poly[:, 1].max() + 0.5)), rows - 1)
    if x0 > x1 or y0 > y1:
        return out
    ss = supersample
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(x0, x1 + 1)[:, None] + offs).ravel()
    ys = (np.arange(y0, y1 + 1)[:, None] + offs).ravel()
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = Path(poly).contains_points(pts, radius=1e-9)
    inside = inside.reshape(len(ys), len(xs))
    cov = inside.reshape(y1 - y0 + 1, ss, x1 - x0 + 1, ss).mean(axis=(1, 3))
    out[y0 : y1 + 1, x0 : x1 + 1] = cov
    return out


def iou(pred: OccupancyGrid, gt: OccupancyGrid, region: str = "full") -> float:
    """Intersection over union of two binary grids over a region.

    Counting is restricted to region cells that are valid in both grids;
    when both masks are empty there the IoU is 1.0 by convention.
    """
    if pred.spec != gt.spec:
        raise OgmError("grids have mismatched specs")
    if not (pred.is_binary and gt.is_binary):
        raise OgmError("iou requires binary grids")
    mask = region_mask(pred.spec, region)
    if pred.validity is not None:
        mask &= pred.validity
    if gt.validity is not None:
        mask &= gt.validity
    p = pred.cells[mask] > 0.5
    g = gt.cells[mask] > 0.5
    tp = np.count_nonzero(p & g)
    fp = np.count_nonzero(p & ~g)
    fn = np.count_nonzero(~p & g)
    denom = tp + fp + fn
    if denom == 0:
        return 1.0
    return tp / denom


def connected_components(grid: OccupancyGrid) -> tuple[np.ndarray, int]:
    """8-connectivity labeling of a binary grid.

    Two-pass union-find; labels are renumbered densely 1..k in row-major
    order of each component's first cell.
    """
    if isinstance(grid, np.ndarray):
        occ = grid > 0.5
    else:
        if not grid.is_binary:
            raise OgmError("connected components require a binary grid")
        occ = grid.cells > 0.5
    rows, cols = occ.shape
    labels = np.zeros((rows, cols), dtype=np.int32)
    parent = [0]  # parent[0] unused

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            if ra > rb:
                ra, rb = rb, ra
            parent[rb] = ra

    next_label = 1
    for r in range(rows):
        row_occ = occ[r]
        if not row_occ.any():
            continue
        for c in np.flatnonzero(row_occ):
            neigh = []
            if c > 0 and labels[r, c - 1]:
                neigh.append(labels[r, c - 1])
            if r > 0:
                for dc in (-1, 0, 1):
                    cc = c + dc
                    if 0 <= cc < cols and labels[r - 1, cc]:
                        neigh.append(labels[r - 1, cc])
            if neigh:
                lab = min(find(n) for n in neigh)
                labels[r, c] = lab
                for n in neigh:
                    union(lab, n)
            else:
                labels[r, c] = next_label
                parent.append(next_label)
                next_label += 1
    # second pass: resolve and renumber in first-encounter order
    remap: dict[int, int] = {}
    out = np.zeros_like(labels)
    for r in range(rows):
        for c in np.flatnonzero(labels[r]):
            root = find(labels[r, c])
            if root not in remap:
                remap[root] = len(remap) + 1
            out[r, c] = remap[root]
    return out, len(remap)


def threshold(grid: OccupancyGrid, tau: float) -> OccupancyGrid:
    """Binarize a real-valued grid at tau (cells >= tau become 1)."""
    if not (0.0 < tau < 1.0):
        raise OgmError(f"threshold must lie in (0, 1), got {tau!r}")
    cells = (grid.cells >= tau).astype(float)
    return OccupancyGrid(grid.spec, cells, channel=grid.channel, validity=grid.validity)
