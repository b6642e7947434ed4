"""Packaged training samples and the on-disk dataset layout.

A sample bundles, for one anchor frame of a scene: the 6 input timesteps
(camera-view drivable + footprint masks plus the per-frame mask-resolution
homography), the 6 past ego positions ending at the anchor (which is exactly
(0, 0) there), and the 6 future positions -- the first 5 are the prediction
targets, the 6th is the destination, also provided in polar form (r, alpha).
The destination is a rough goal: the true 3 s endpoint perturbed by
``DEST_NOISE`` meters of deterministic Gaussian noise. All positions are
relative to the ego pose at the anchor frame.

Layout written by :func:`build_dataset`::

    out_dir/
      manifest.json
      train/sample_0000/{sample.json, drivable_0..5.pgm, footprint_0..5.pgm}
      test/...
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Homography
from .gridio import read_pgm, write_pgm
from .ogm import GridSpec
from .scene import Scene, SceneConfig, SceneConfigError, generate_scene, render_masks, substream

__all__ = [
    "DatasetError",
    "Sample",
    "PAST_LEN",
    "FUTURE_LEN",
    "make_sample",
    "valid_t_range",
    "generate_samples",
    "build_dataset",
    "load_sample",
    "load_split",
    "load_manifest",
]

PAST_LEN = 6
FUTURE_LEN = 6  # 5 prediction targets + the destination point
# The destination is a rough goal, not a sixth target: the true 3 s endpoint
# is perturbed by this isotropic sigma (meters), deterministically per sample.
# An exact destination makes the map redundant -- smooth kinematics toward a
# known endpoint predict the future on their own -- while a rough goal leaves
# the road layout as the cue that disambiguates the path toward it.
DEST_NOISE = 1.0


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    scene_seed: int
    t_index: int
    past: np.ndarray  # (6, 2), ego frame at the anchor; last row is (0, 0)
    future: np.ndarray  # (6, 2); rows 0..4 are targets, row 5 the destination
    dest: np.ndarray  # (r, alpha), polar form of future[5]
    drivable: np.ndarray  # (6, mask_rows, mask_cols), oldest first
    footprint: np.ndarray  # (6, mask_rows, mask_cols)
    homographies: tuple[Homography, ...]  # mask px -> scaled BEV, per timestep

    def __post_init__(self):
        if self.past.shape != (PAST_LEN, 2) or self.future.shape != (FUTURE_LEN, 2):
            raise DatasetError("past/future must be (6, 2) arrays")
        if not np.allclose(self.past[-1], 0.0, atol=1e-9):
            raise DatasetError("the past position at t=0 must be exactly (0, 0)")
        r, alpha = self.dest
        if r < 0 or not (-math.pi < alpha <= math.pi):
            raise DatasetError(f"invalid polar destination ({r}, {alpha})")
        cart = np.array([r * math.cos(alpha), r * math.sin(alpha)])
        if not np.allclose(cart, self.future[-1], atol=1e-9):
            raise DatasetError("polar destination inconsistent with future[5]")

    @property
    def targets(self) -> np.ndarray:
        return self.future[:5]


def valid_t_range(scene: Scene) -> range:
    """Anchor indices with full past and future context."""
    return range(PAST_LEN - 1, scene.n_steps - FUTURE_LEN)


def make_sample(
    scene: Scene,
    t_index: int,
    grid_spec: GridSpec = GridSpec(),
    render_cache: dict | None = None,
) -> Sample:
    if t_index not in valid_t_range(scene):
        raise DatasetError(
            f"anchor {t_index} lacks full context (valid: {valid_t_range(scene)})"
        )
    positions = scene.ego_positions()
    ex, ey, eh = scene.ego_pose(t_index)
    c, s = math.cos(eh), math.sin(eh)
    rot = np.array([[c, s], [-s, c]])  # world -> ego at the anchor
    rel = (positions - np.array([ex, ey])) @ rot.T

    past = rel[t_index - PAST_LEN + 1 : t_index + 1].copy()
    past[-1] = 0.0  # exact, not merely within float rounding
    future = rel[t_index + 1 : t_index + FUTURE_LEN + 1].copy()
    goal_rng = np.random.default_rng(
        np.random.SeedSequence([scene.seed & 0xFFFFFFFF, int(t_index), 0x676F616C])
    )
    future[-1] += goal_rng.normal(0.0, DEST_NOISE, size=2)
    dx, dy = future[-1]
    dest = np.array([math.hypot(dx, dy), math.atan2(dy, dx)])

    drivable, footprint, homographies = [], [], []
    for k in range(t_index - PAST_LEN + 1, t_index + 1):
        if render_cache is not None and k in render_cache:
            d, f, h = render_cache[k]
        else:
            d, f, h = render_masks(scene, k, grid_spec)
            if render_cache is not None:
                render_cache[k] = (d, f, h)
        drivable.append(d)
        footprint.append(f)
        homographies.append(h)
    return Sample(
        scene_seed=scene.seed,
        t_index=t_index,
        past=past,
        future=future,
        dest=dest,
        drivable=np.stack(drivable),
        footprint=np.stack(footprint),
        homographies=tuple(homographies),
    )


def generate_samples(
    scene_seed: int,
    per_scene: int,
    rng: np.random.Generator,
    config: SceneConfig = SceneConfig(),
    grid_spec: GridSpec = GridSpec(),
) -> list[Sample]:
    """Deterministically draw anchors from one scene and build its samples."""
    scene = generate_scene(scene_seed, config)
    anchors = list(valid_t_range(scene))
    if per_scene < len(anchors):
        anchors = sorted(rng.choice(anchors, size=per_scene, replace=False))
    cache: dict = {}  # anchors overlap, render each frame once per scene
    return [make_sample(scene, int(t), grid_spec, cache) for t in anchors]


def _sample_dir_name(i: int) -> str:
    return f"sample_{i:04d}"


def _write_sample(sample: Sample, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for k in range(PAST_LEN):
        write_pgm(out / f"drivable_{k}.pgm", sample.drivable[k])
        write_pgm(out / f"footprint_{k}.pgm", sample.footprint[k])
    doc = {
        "scene_seed": sample.scene_seed,
        "t_index": sample.t_index,
        "past": sample.past.tolist(),
        "future": sample.future.tolist(),
        "dest": sample.dest.tolist(),
        "homographies": [[float(v) for v in h.to_flat()] for h in sample.homographies],
    }
    (out / "sample.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_sample(path) -> Sample:
    path = Path(path)
    try:
        doc = json.loads((path / "sample.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: unreadable sample: {exc}") from exc
    drivable = np.stack([read_pgm(path / f"drivable_{k}.pgm") for k in range(PAST_LEN)])
    footprint = np.stack([read_pgm(path / f"footprint_{k}.pgm") for k in range(PAST_LEN)])
    return Sample(
        scene_seed=int(doc["scene_seed"]),
        t_index=int(doc["t_index"]),
        past=np.array(doc["past"], dtype=float),
        future=np.array(doc["future"], dtype=float),
        dest=np.array(doc["dest"], dtype=float),
        drivable=drivable,
        footprint=footprint,
        homographies=tuple(Homography.from_flat(m) for m in doc["homographies"]),
    )


def build_dataset(
    n_scenes: int,
    split_ratio: float,
    seed: int,
    out_dir,
    config: SceneConfig = SceneConfig(),
    per_scene: int = 4,
    grid_spec: GridSpec = GridSpec(),
) -> dict:
    """Generate scenes, split them train/test by scene, write all samples.

    Returns the manifest (also written to ``out_dir/manifest.json``).  No
    scene contributes to both splits; ordering is fixed by scene index.
    """
    if not (0.0 < split_ratio < 1.0):
        raise DatasetError(f"split ratio must lie in (0, 1), got {split_ratio}")
    if n_scenes < 2:
        raise DatasetError("need at least one scene per split")
    config.validate()
    out = Path(out_dir)
    rng = substream(seed, "dataset")
    scene_seeds = [int(v) for v in rng.choice(2**31 - 1, size=n_scenes, replace=False)]
    n_train = int(round(n_scenes * split_ratio))
    n_train = min(max(n_train, 1), n_scenes - 1)
    splits = {"train": scene_seeds[:n_train], "test": scene_seeds[n_train:]}

    manifest = {
        "seed": seed,
        "n_scenes": n_scenes,
        "split_ratio": split_ratio,
        "per_scene": per_scene,
        "config": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in vars(config).items()},
        "train_scenes": splits["train"],
        "test_scenes": splits["test"],
        "train": [],
        "test": [],
    }
    for split, seeds in splits.items():
        i = 0
        for scene_seed in seeds:
            for sample in generate_samples(scene_seed, per_scene, rng, config, grid_spec):
                rel = f"{split}/{_sample_dir_name(i)}"
                _write_sample(sample, out / rel)
                manifest[split].append(rel)
                i += 1
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return manifest


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{path}: unreadable manifest: {exc}") from exc


def load_split(root, split: str) -> list[Sample]:
    manifest = load_manifest(root)
    if split not in ("train", "test"):
        raise DatasetError(f"unknown split {split!r}")
    return [load_sample(Path(root) / rel) for rel in manifest[split]]
