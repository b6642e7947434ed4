"""Synthetic driving scenes: roads, moving vehicles, a kinematic ego and a
rigidly mounted monocular camera.

The generator stands in for a real driving dataset: it produces everything
downstream stages consume -- road geometry, vehicle boxes, ego trajectories
sampled at 2 Hz, per-frame camera-view semantic masks with their pixel-to-BEV
homographies, and a configurable corruption model emulating an imperfect
segmentation front end.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.spatial import cKDTree

from .geometry import (
    CameraModel,
    Homography,
    ground_plane_homography,
    project_point,
    rescale_homography,
)
from .ogm import Box3D, GridSpec, footprint_polygon_camera, rasterize_polygon

__all__ = [
    "SceneConfigError",
    "SceneConfig",
    "NoiseParams",
    "VehicleTrack",
    "Scene",
    "mounted_camera",
    "generate_scene",
    "render_masks",
    "corrupt_masks",
    "substream",
]

_PATH_STEP = 0.25  # integration step along the centerline, meters
_LEAD_IN = 10.0  # straight road behind the ego start pose, meters


class SceneConfigError(ValueError):
    """Invalid scene generation configuration."""


@dataclass(frozen=True)
class SceneConfig:
    duration: float = 20.0  # seconds, ~paper sequence length
    dt: float = 0.5  # 2 Hz frames
    road_width_range: tuple[float, float] = (8.0, 14.0)
    n_vehicles_range: tuple[int, int] = (1, 6)
    speed_range: tuple[float, float] = (6.0, 13.0)
    accel_range: tuple[float, float] = (-1.2, 1.2)
    turn_onset_range: tuple[float, float] = (5.0, 40.0)  # meters ahead of start
    slight_curvature_range: tuple[float, float] = (0.012, 0.028)
    sharp_curvature_range: tuple[float, float] = (0.04, 0.07)
    scenario_weights: tuple[float, float, float] = (0.34, 0.33, 0.33)
    lat_accel_max: float = 6.0  # cap on v^2 * |curvature|, m/s^2 (aggressive but physical)
    brake_decel: float = 4.0  # late, firm braking into curve entry, m/s^2
    recover_accel: float = 1.5  # comfortable speed recovery after the arc, m/s^2
    lead_prob: float = 0.5  # chance of a slow lead vehicle in the ego lane
    follow_gap: float = 8.0  # bumper-to-bumper distance held behind the lead, m
    camera_height: float = 1.6
    camera_pitch_deg: float = -8.0
    camera_hfov_deg: float = 70.0
    image_width: int = 640
    image_height: int = 360
    mask_scale: int = 4  # decoder-style downscale between image and masks

    def validate(self):
        wlo, whi = self.road_width_range
        if not (6.0 <= wlo <= whi <= 20.0):
            raise SceneConfigError(f"road width range {self.road_width_range} outside [6, 20]")
        nlo, nhi = self.n_vehicles_range
        if not (0 <= nlo <= nhi <= 12):
            raise SceneConfigError(f"vehicle count range {self.n_vehicles_range} outside [0, 12]")
        kmax = max(self.slight_curvature_range[1], self.sharp_curvature_range[1])
        # the lane offset must stay meaningful: bounded curvature keeps the
        # inner road edge radius positive
        if kmax * wlo / 2.0 >= 0.5:
            raise SceneConfigError("curvature too large for the road width")
        if self.duration <= 0 or self.dt <= 0:
            raise SceneConfigError("duration and dt must be positive")
        if self.lat_accel_max <= 0 or self.brake_decel <= 0 or self.recover_accel <= 0:
            raise SceneConfigError("lat_accel_max, brake_decel and recover_accel must be positive")
        if not (0.0 <= self.lead_prob <= 1.0) or self.follow_gap <= 0:
            raise SceneConfigError("lead_prob must lie in [0, 1] and follow_gap be positive")
        if self.image_width % self.mask_scale or self.image_height % self.mask_scale:
            raise SceneConfigError("mask scale must divide the image dimensions")

    @property
    def mask_shape(self) -> tuple[int, int]:
        return (self.image_height // self.mask_scale, self.image_width // self.mask_scale)


@dataclass(frozen=True)
class NoiseParams:
    """Segmentation corruption model: cell dropout, boundary jitter, blur."""

    dropout: float = 0.0  # probability of zeroing a cell
    jitter: float = 0.0  # std of the smooth boundary displacement, in cells
    blur: float = 0.0  # gaussian blur sigma, in cells

    def __post_init__(self):
        if not (0.0 <= self.dropout < 1.0):
            raise SceneConfigError(f"dropout must lie in [0, 1), got {self.dropout!r}")
        if self.jitter < 0 or self.blur < 0:
            raise SceneConfigError("jitter and blur must be non-negative")


@dataclass(frozen=True)
class VehicleTrack:
    """A vehicle following the road at constant speed and lateral offset."""

    s0: float  # initial arc length along the centerline
    lateral: float  # signed offset from the centerline, meters (left > 0)
    speed: float
    length: float
    width: float
    height: float


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, independent RNG stream derived from a single root seed."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    )


def mounted_camera(config: SceneConfig = SceneConfig()) -> CameraModel:
    """The ego-mounted camera, posed in the ego frame (x fwd, y left, z up)."""
    # base: camera x = right (-ego y), y = down (-ego z), z = forward (ego x)
    base = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    down = -math.radians(config.camera_pitch_deg)  # pitch -8 deg looks down
    rx = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(down), -math.sin(down)],
            [0.0, math.sin(down), math.cos(down)],
        ]
    )
    r = rx @ base
    position = np.array([0.0, 0.0, config.camera_height])
    t = -r @ position
    w, h = config.image_width, config.image_height
    fx = (w / 2.0) / math.tan(math.radians(config.camera_hfov_deg) / 2.0)
    return CameraModel(fx, fx, (w - 1) / 2.0, (h - 1) / 2.0, r, t, w, h)


@dataclass(frozen=True)
class Scene:
    seed: int
    config: SceneConfig
    scenario: str  # straight | slight | sharp
    road_width: float
    path_s: np.ndarray = field(repr=False)  # arc length samples
    path_xy: np.ndarray = field(repr=False)  # centerline points, world frame
    path_heading: np.ndarray = field(repr=False)
    ego_s: np.ndarray = field(repr=False)  # ego arc length per frame
    ego_speed0: float = 0.0
    ego_accel: float = 0.0
    vehicles: tuple[VehicleTrack, ...] = ()

    def __post_init__(self):
        for name in ("path_s", "path_xy", "path_heading", "ego_s"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_tree", cKDTree(self.path_xy))

    @property
    def n_steps(self) -> int:
        return len(self.ego_s)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.config.dt

    def pose_at_s(self, s) -> np.ndarray:
        """Interpolated (x, y, heading) at arc length(s) along the centerline."""
        s = np.asarray(s, dtype=float)
        x = np.interp(s, self.path_s, self.path_xy[:, 0])
        y = np.interp(s, self.path_s, self.path_xy[:, 1])
        h = np.interp(s, self.path_s, self.path_heading)
        return np.stack([x, y, h], axis=-1)

    def ego_pose(self, t_index: int) -> tuple[float, float, float]:
        if not (0 <= t_index < self.n_steps):
            raise SceneConfigError(f"timestep {t_index} outside scene horizon")
        p = self.pose_at_s(self.ego_s[t_index])
        return (float(p[0]), float(p[1]), float(p[2]))

    def ego_positions(self) -> np.ndarray:
        return self.pose_at_s(self.ego_s)[:, :2]

    def boxes_at(self, t_index: int) -> list[Box3D]:
        """World-frame vehicle boxes at a frame index."""
        t = t_index * self.config.dt
        boxes = []
        for v in self.vehicles:
            s = v.s0 + v.speed * t
            if s < self.path_s[0] or s > self.path_s[-1]:
                continue
            x, y, heading = self.pose_at_s(s)
            nx, ny = -math.sin(heading), math.cos(heading)  # left normal
            cx = x + v.lateral * nx
            cy = y + v.lateral * ny
            boxes.append(
                Box3D(
                    center=(cx, cy, v.height / 2.0),
                    length=v.length,
                    width=v.width,
                    height=v.height,
                    yaw=heading,
                )
            )
        return boxes

    def drivable_at(self, pts_world: np.ndarray) -> np.ndarray:
        """True for world points within half a road width of the centerline."""
        pts = np.atleast_2d(np.asarray(pts_world, dtype=float))
        _, idx = self._tree.query(pts)
        best = np.full(len(pts), np.inf)
        n = len(self.path_xy)
        for shift in (-1, 0):
            a_idx = np.clip(idx + shift, 0, n - 2)
            a = self.path_xy[a_idx]
            b = self.path_xy[a_idx + 1]
            ab = b - a
            denom = np.einsum("ij,ij->i", ab, ab)
            tt = np.clip(np.einsum("ij,ij->i", pts - a, ab) / denom, 0.0, 1.0)
            proj = a + tt[:, None] * ab
            d = np.linalg.norm(pts - proj, axis=1)
            best = np.minimum(best, d)
        return best <= self.road_width / 2.0

    def road_polygon(self, spacing: float = 1.0) -> np.ndarray:
        """Explicit boundary polygon of the road (left edge out, right back)."""
        step = max(int(round(spacing / _PATH_STEP)), 1)
        xy = self.path_xy[::step]
        heading = self.path_heading[::step]
        normal = np.column_stack([-np.sin(heading), np.cos(heading)])
        half = self.road_width / 2.0
        left = xy + half * normal
        right = xy - half * normal
        return np.vstack([left, right[::-1]])

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "scenario": self.scenario,
            "road_width": round(self.road_width, 6),
            "n_vehicles": len(self.vehicles),
            "n_steps": self.n_steps,
            "ego_speed0": round(self.ego_speed0, 6),
            "ego_accel": round(self.ego_accel, 6),
        }

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config": asdict(self.config),
            "summary": self.summary(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scene":
        cfg_raw = dict(data["config"])
        for key, val in cfg_raw.items():
            if isinstance(val, list):
                cfg_raw[key] = tuple(val)
        scene = generate_scene(data["seed"], SceneConfig(**cfg_raw))
        if scene.summary() != data.get("summary", scene.summary()):
            raise SceneConfigError("scene file does not match its generator output")
        return scene


def _curvature_profile(rng: np.random.Generator, config: SceneConfig, scenario: str):
    """Piecewise-linear curvature plan k(s): lead-in, ramp, arc, ramp-out."""
    if scenario == "straight":
        return lambda s: np.zeros_like(np.asarray(s, dtype=float))
    lo, hi = (
        config.slight_curvature_range
        if scenario == "slight"
        else config.sharp_curvature_range
    )
    k_peak = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
    onset = _LEAD_IN + rng.uniform(*config.turn_onset_range)
    ramp = 6.0
    total_turn_deg = rng.uniform(15, 40) if scenario == "slight" else rng.uniform(50, 100)
    hold = max(math.radians(total_turn_deg) / abs(k_peak) - ramp, 2.0)

    def k(s):
        s = np.asarray(s, dtype=float)
        up = np.clip((s - onset) / ramp, 0.0, 1.0)
        down = np.clip((s - onset - ramp - hold) / ramp, 0.0, 1.0)
        return k_peak * (up - down)

    return k


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> Scene:
    """Deterministically build a scene from a seed and a validated config."""
    config.validate()
    rng = substream(seed, "scene")

    scenario = rng.choice(["straight", "slight", "sharp"], p=np.array(config.scenario_weights) / sum(config.scenario_weights))
    road_width = rng.uniform(*config.road_width_range)
    v0 = rng.uniform(*config.speed_range)
    accel = rng.uniform(*config.accel_range)

    k_fn = _curvature_profile(rng, config, str(scenario))

    # optional slow lead vehicle in the ego lane: the ego closes in and holds
    # a following gap, so part of its future speed profile is caused by an
    # obstacle that only the occupancy grids can reveal
    lead = None
    if rng.uniform() < config.lead_prob:
        lead = VehicleTrack(
            s0=float(_LEAD_IN + rng.uniform(25.0, 60.0)),
            lateral=0.0,
            speed=float(rng.uniform(3.0, 7.0)),
            length=float(rng.uniform(4.0, 5.2)),
            width=float(rng.uniform(1.8, 2.1)),
            height=float(rng.uniform(1.4, 1.8)),
        )

    # ego speed profile: the sampled linear profile, additionally capped so
    # that lateral acceleration v^2 |k| stays comfortable; braking toward
    # curve entry is late and firm, so the upcoming turn is barely visible in
    # the past trajectory and the road layout stays the informative cue
    n_steps = int(round(config.duration / config.dt)) + 1
    times = np.arange(n_steps) * config.dt
    fine_t = np.arange(0.0, config.duration + 1e-9, 0.01)
    want_v = np.clip(v0 + accel * fine_t, 2.0, 16.0)
    # admissible speed over arc length: curvature cap swept backward at the
    # braking rate, so the limit is reached by decelerating ahead of the arc
    grid_s = np.arange(0.0, _LEAD_IN + np.trapezoid(want_v, fine_t) + 5.0, _PATH_STEP)
    v_cap = np.minimum(16.0, np.sqrt(config.lat_accel_max / np.maximum(np.abs(k_fn(grid_s)), 1e-9)))
    for i in range(len(v_cap) - 2, -1, -1):
        v_cap[i] = min(v_cap[i], math.sqrt(v_cap[i + 1] ** 2 + 2.0 * config.brake_decel * _PATH_STEP))
    # forward sweep: speed recovers smoothly after the arc instead of jumping
    # when the curvature cap releases
    for i in range(1, len(v_cap)):
        v_cap[i] = min(v_cap[i], math.sqrt(v_cap[i - 1] ** 2 + 2.0 * config.recover_accel * _PATH_STEP))
    fine_s = np.empty_like(fine_t)
    s_now = _LEAD_IN
    for i, dt_step in enumerate(np.diff(fine_t, prepend=0.0)):
        v_now = min(want_v[i], np.interp(s_now, grid_s, v_cap))
        if lead is not None:
            # safe-approach cap: reach the lead's speed by the time the gap
            # closes to follow_gap, braking at brake_decel
            slack = lead.s0 + lead.speed * fine_t[i] - s_now - config.follow_gap
            v_now = min(
                v_now,
                math.sqrt(lead.speed**2 + 2.0 * config.brake_decel * max(slack, 0.0)),
            )
        s_now += v_now * dt_step
        fine_s[i] = s_now
    ego_s = np.interp(times, fine_t, fine_s)

    # centerline long enough for the BEV grid and vehicles ahead at the end
    s_total = ego_s[-1] + 110.0 + 90.0
    path_s = np.arange(0.0, s_total + _PATH_STEP, _PATH_STEP)
    k = k_fn(path_s)
    heading = np.concatenate([[0.0], np.cumsum((k[1:] + k[:-1]) / 2.0 * np.diff(path_s))])
    cosh, sinh = np.cos(heading), np.sin(heading)
    x = np.concatenate([[0.0], np.cumsum((cosh[1:] + cosh[:-1]) / 2.0 * np.diff(path_s))])
    y = np.concatenate([[0.0], np.cumsum((sinh[1:] + sinh[:-1]) / 2.0 * np.diff(path_s))])
    path_xy = np.column_stack([x, y])

    n_vehicles = int(rng.integers(config.n_vehicles_range[0], config.n_vehicles_range[1] + 1))
    vehicles = [] if lead is None else [lead]
    lane = max(road_width / 4.0, 1.9)
    for _ in range(n_vehicles):
        vehicles.append(
            VehicleTrack(
                s0=float(_LEAD_IN + rng.uniform(10.0, 80.0)),
                lateral=float(rng.choice([-1.0, 1.0]) * rng.uniform(lane * 0.6, min(lane, road_width / 2.0 - 1.2))),
                speed=float(rng.uniform(4.0, 12.0)),
                length=float(rng.uniform(4.0, 5.2)),
                width=float(rng.uniform(1.8, 2.1)),
                height=float(rng.uniform(1.4, 1.8)),
            )
        )

    return Scene(
        seed=int(seed),
        config=config,
        scenario=str(scenario),
        road_width=float(road_width),
        path_s=path_s,
        path_xy=path_xy,
        path_heading=heading,
        ego_s=ego_s,
        ego_speed0=float(v0),
        ego_accel=float(accel),
        vehicles=tuple(vehicles),
    )


def _world_from_ego(pose):
    x, y, heading = pose
    c, s = math.cos(heading), math.sin(heading)
    r = np.array([[c, -s], [s, c]])
    return r, np.array([x, y])


def ego_frame_boxes(scene: Scene, t_index: int) -> list[Box3D]:
    """Vehicle boxes of a frame expressed in that frame's ego coordinates."""
    ex, ey, eh = scene.ego_pose(t_index)
    c, s = math.cos(eh), math.sin(eh)
    out = []
    for b in scene.boxes_at(t_index):
        dx, dy = b.center[0] - ex, b.center[1] - ey
        out.append(
            Box3D(
                center=(c * dx + s * dy, -s * dx + c * dy, b.center[2]),
                length=b.length,
                width=b.width,
                height=b.height,
                yaw=b.yaw - eh,
            )
        )
    return out


def render_masks(
    scene: Scene, t_index: int, grid_spec: GridSpec = GridSpec()
) -> tuple[np.ndarray, np.ndarray, Homography]:
    """Clean camera-view masks plus the mask-resolution homography.

    Returns ``(drivable, footprint, H)`` where both masks have the decoder
    output shape (image / mask_scale) and ``H`` maps mask pixels to
    1/mask_scale-scaled BEV grid coordinates (the rescaled ground-plane
    homography of this frame).
    """
    config = scene.config
    cam = mounted_camera(config)
    h_full = ground_plane_homography(cam, grid_spec)
    s = config.mask_scale
    h_mask = rescale_homography(h_full, 1.0 / s)

    rows, cols = config.mask_shape
    yy, xx = np.mgrid[0:rows, 0:cols]
    # 2x2 subsamples per mask pixel: fractional boundary coverage lets a
    # warp-back threshold localize the road edge below one (coarse) pixel
    sub = np.array([-0.25 * s, 0.25 * s])
    off_x, off_y = np.meshgrid(sub, sub)
    base = np.column_stack([xx.ravel() * s, yy.ravel() * s]).astype(float)
    full_px = (base[None, :, :] + np.stack([off_x.ravel(), off_y.ravel()], axis=1)[:, None, :]).reshape(-1, 2)
    grid_pts, w = h_full.apply_many(full_px)
    # orient the w denominators from a known in-front ground point
    probe_px = project_point(cam, (10.0, 0.0, 0.0))
    w_probe = h_full.m[2] @ np.array([probe_px[0], probe_px[1], 1.0])
    in_front = w * np.sign(w_probe) > 1e-9
    inside = (
        in_front
        & np.isfinite(grid_pts).all(axis=1)
        & (grid_pts[:, 0] >= 0)
        & (grid_pts[:, 0] <= grid_spec.cols - 1)
        & (grid_pts[:, 1] >= 0)
        & (grid_pts[:, 1] <= grid_spec.rows - 1)
    )
    drivable = np.zeros(len(full_px))
    if inside.any():
        ego_pose = scene.ego_pose(t_index)
        gx = (grid_spec.anchor_row - grid_pts[inside, 1]) * grid_spec.resolution
        gy = (grid_spec.anchor_col - grid_pts[inside, 0]) * grid_spec.resolution
        r, t = _world_from_ego(ego_pose)
        pts_world = np.column_stack([gx, gy]) @ r.T + t
        drivable[inside] = scene.drivable_at(pts_world).astype(float)
    drivable = drivable.reshape(4, rows, cols).mean(axis=0)

    footprint = np.zeros((rows, cols))
    for box in ego_frame_boxes(scene, t_index):
        try:
            poly = footprint_polygon_camera(box, cam)
        except Exception:
            continue
        if len(poly) < 3:
            continue
        cov = rasterize_polygon(poly / s, (rows, cols), supersample=4)
        np.maximum(footprint, cov, out=footprint)

    return drivable, footprint, h_mask


def corrupt_masks(mask: np.ndarray, noise: NoiseParams, seed: int) -> np.ndarray:
    """Degrade a mask: smooth boundary jitter, cell dropout, gaussian blur.

    Deterministic given the seed; all-zero noise parameters return the mask
    unchanged.  Output values stay in [0, 1].
    """
    out = np.asarray(mask, dtype=float).copy()
    rng = substream(seed, "corrupt")
    if noise.jitter > 0:
        rows, cols = out.shape
        coarse = rng.standard_normal((2, rows // 8 + 2, cols // 8 + 2))
        zoom_r = rows / coarse.shape[1]
        zoom_c = cols / coarse.shape[2]
        ry, rx = np.mgrid[0:rows, 0:cols].astype(float)
        disp = np.stack(
            [
                map_coordinates(coarse[i], [ry / zoom_r, rx / zoom_c], order=1, mode="nearest")
                for i in range(2)
            ]
        )
        disp *= noise.jitter / max(disp.std(), 1e-9)
        out = map_coordinates(out, [ry + disp[0], rx + disp[1]], order=1, mode="nearest")
    if noise.dropout > 0:
        keep = rng.random(out.shape) >= noise.dropout
        out = out * keep
    if noise.blur > 0:
        out = gaussian_filter(out, sigma=noise.blur)
    return np.clip(out, 0.0, 1.0)
