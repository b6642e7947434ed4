"""Experiment presets: how raw samples become planner inputs.

Each preset pins the whole input pipeline for one table row:

* ``holistic``    -- corrupted camera-view masks, warped to a reduced BEV
                     lattice before pooling (the full pipeline).
* ``mid-to-end``  -- ground-truth BEV occupancy grids rasterized directly in
                     the ego frame (optionally corrupted in BEV).
* ``lstm-ed``     -- past trajectory only: no occupancy features and no
                     destination (the past-only baseline).
* ``holistic-cv`` -- corrupted camera-view masks pooled as-is, never warped,
                     so the features live in image coordinates.
* ``-np`` suffix  -- same features, but the past trajectory is zeroed.

Positions are scaled by 0.1 before entering the planner (grid cells are
0.1 m, so this puts trajectories and destinations at O(1) magnitudes where
exp/tanh heads behave); predictions are unscaled on the way out.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dataset import Sample
from .geometry import warp_grid
from .ogm import GridSpec, rasterize_footprints
from .planner import PlannerConfig, PlannerDataset, featurize, predict_means
from .scene import NoiseParams, corrupt_masks, ego_frame_boxes, generate_scene

__all__ = [
    "PresetError",
    "ExperimentPreset",
    "PRESETS",
    "POSITION_SCALE",
    "BEV_FACTOR",
    "get_preset",
    "planner_config",
    "assemble_dataset",
    "predict_trajectories",
]

POSITION_SCALE = 0.1
BEV_FACTOR = 4  # reduced BEV lattice: full grid / 4 (0.4 m cells)
_POOL = 10


class PresetError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPreset:
    tag: str
    use_grids: bool  # feed occupancy features at all
    warp_to_bev: bool  # camera masks warped to the BEV lattice first
    bev_ground_truth: bool  # rasterize clean grids in BEV, skip the camera
    use_past: bool = True
    use_dest: bool = True  # past-only ablation drops the goal as well


PRESETS = {
    "holistic": ExperimentPreset("holistic", True, True, False),
    "mid-to-end": ExperimentPreset("mid-to-end", True, False, True),
    "lstm-ed": ExperimentPreset("lstm-ed", False, False, False, use_dest=False),
    "holistic-cv": ExperimentPreset("holistic-cv", True, False, False),
    "holistic-np": ExperimentPreset("holistic-np", True, True, False, use_past=False),
    "lstm-ed-np": ExperimentPreset(
        "lstm-ed-np", False, False, False, use_past=False, use_dest=False
    ),
}


def get_preset(tag: str) -> ExperimentPreset:
    try:
        return PRESETS[tag]
    except KeyError:
        raise PresetError(
            f"unknown preset {tag!r}; choose from {sorted(PRESETS)}"
        ) from None


def _reduced_shape(grid_spec: GridSpec) -> tuple[int, int]:
    return (grid_spec.rows // BEV_FACTOR, grid_spec.cols // BEV_FACTOR)


def planner_config(preset: ExperimentPreset, grid_spec: GridSpec = GridSpec(),
                   mask_shape: tuple[int, int] = (90, 160), **overrides) -> PlannerConfig:
    """Planner dimensions implied by a preset's feature pipeline."""
    if not preset.use_grids:
        fdim = 0
    elif preset.warp_to_bev or preset.bev_ground_truth:
        rows, cols = _reduced_shape(grid_spec)
        fdim = 2 * (rows // _POOL) * (cols // _POOL)
    else:
        rows, cols = mask_shape
        fdim = 2 * (rows // _POOL) * (cols // _POOL)
    return PlannerConfig(feature_dim=fdim, pool_factor=_POOL, **overrides)


def _noise_seed(sample: Sample, k: int, channel: str) -> int:
    return zlib.crc32(f"{sample.scene_seed}:{sample.t_index}:{k}:{channel}".encode())


@lru_cache(maxsize=64)
def _scene_cached(seed, config_key):
    # config_key is the frozen SceneConfig itself (hashable dataclass)
    return generate_scene(seed, config_key)


def _gt_bev_grids(sample: Sample, grid_spec: GridSpec, config) -> np.ndarray:
    """Clean ground-truth 2-channel BEV grids on the reduced lattice."""
    scene = _scene_cached(sample.scene_seed, config)
    rows, cols = _reduced_shape(grid_spec)
    reduced = GridSpec(
        rows=rows,
        cols=cols,
        resolution=grid_spec.resolution * BEV_FACTOR,
        anchor_row=grid_spec.anchor_row // BEV_FACTOR,
        anchor_col=grid_spec.anchor_col // BEV_FACTOR,
    )
    gx, gy = reduced.cell_centers_ego()
    out = np.zeros((6, 2, rows, cols))
    for i, k in enumerate(range(sample.t_index - 5, sample.t_index + 1)):
        ex, ey, eh = scene.ego_pose(k)
        c, s = math.cos(eh), math.sin(eh)
        world = np.stack(
            [ex + c * gx.ravel() - s * gy.ravel(), ey + s * gx.ravel() + c * gy.ravel()],
            axis=1,
        )
        out[i, 0] = scene.drivable_at(world).reshape(rows, cols)
        veh = rasterize_footprints(ego_frame_boxes(scene, k), (0.0, 0.0, 0.0), reduced)
        out[i, 1] = veh.cells
    return out


def _camera_stack(sample: Sample, noise: NoiseParams) -> np.ndarray:
    """Corrupted camera-view masks, (6, 2, mask_rows, mask_cols)."""
    out = np.zeros((6,) + (2,) + sample.drivable.shape[1:])
    for k in range(6):
        for c, (name, mask) in enumerate(
            (("drv", sample.drivable[k]), ("veh", sample.footprint[k]))
        ):
            out[k, c] = corrupt_masks(mask, noise, _noise_seed(sample, k, name))
    return out


def _features_for_sample(
    sample: Sample,
    preset: ExperimentPreset,
    noise: NoiseParams,
    grid_spec: GridSpec,
    config,
    planner_cfg: PlannerConfig,
) -> np.ndarray:
    if not preset.use_grids:
        return np.zeros((6, 0))
    if preset.bev_ground_truth:
        grids = _gt_bev_grids(sample, grid_spec, config)
        if noise != NoiseParams():
            for k in range(6):
                for c, name in enumerate(("bev-drv", "bev-veh")):
                    grids[k, c] = corrupt_masks(
                        grids[k, c], noise, _noise_seed(sample, k, name)
                    )
        return featurize(grids, planner_cfg)
    cams = _camera_stack(sample, noise)
    if not preset.warp_to_bev:
        return featurize(cams, planner_cfg)
    shape = _reduced_shape(grid_spec)
    warped = np.zeros((6, 2) + shape)
    for k in range(6):
        for c in range(2):
            warped[k, c], _ = warp_grid(cams[k, c], sample.homographies[k], shape)
    return featurize(warped, planner_cfg)


def assemble_dataset(
    samples: list[Sample],
    preset: ExperimentPreset,
    noise: NoiseParams = NoiseParams(),
    grid_spec: GridSpec = GridSpec(),
    scene_config=None,
) -> PlannerDataset:
    """Turn raw samples into dense planner arrays under a preset's pipeline.

    ``scene_config`` is only consulted by BEV-ground-truth presets (they
    re-derive the scene from its seed); pass the config the samples were
    generated with.
    """
    if not samples:
        raise PresetError("no samples to assemble")
    if preset.bev_ground_truth and scene_config is None:
        from .scene import SceneConfig

        scene_config = SceneConfig()
    cfg = planner_config(preset, grid_spec, samples[0].drivable.shape[1:])
    feats = np.stack(
        [
            _features_for_sample(s, preset, noise, grid_spec, scene_config, cfg)
            for s in samples
        ]
    )
    past = np.stack([s.past for s in samples]) * POSITION_SCALE
    if not preset.use_past:
        past = np.zeros_like(past)
    dest = np.stack([s.dest for s in samples]).copy()
    dest[:, 0] *= POSITION_SCALE  # radial part only; the angle is unitless
    if not preset.use_dest:
        dest = np.zeros_like(dest)
    future = np.stack([s.targets for s in samples]) * POSITION_SCALE
    return PlannerDataset(feats, past, dest, future)


def predict_trajectories(params, pdataset: PlannerDataset, cfg: PlannerConfig) -> np.ndarray:
    """Predicted mean trajectories in meters (position scaling undone)."""
    return predict_means(params, pdataset, cfg) / POSITION_SCALE
