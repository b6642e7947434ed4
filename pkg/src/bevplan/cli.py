"""Command-line front end.

Subcommands: gen, homography, warp, rasterize, train, eval-ogm, eval-traj,
render.  Global flags: --seed, --config <json>, --out <dir>.  Exit codes:
0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    DatasetError,
    build_dataset,
    load_manifest,
    load_sample,
    load_split,
)
from .geometry import (
    Correspondence,
    GeometryError,
    Homography,
    estimate_homography_dlt,
    warp_grid,
)
from .gridio import (
    IoError,
    load_params,
    read_pgm,
    read_homography_json,
    save_params,
    write_csv,
    write_homography_json,
    write_pgm,
)
from .metrics import evaluate_trajectories
from .ogm import GridSpec, OccupancyGrid, OgmError, iou, rasterize_footprints, threshold
from .planner import GaussianParams, TrainConfig, TrainingDivergedError, train
from .presets import (
    PRESETS,
    PresetError,
    assemble_dataset,
    get_preset,
    planner_config,
)
from .scene import (
    NoiseParams,
    SceneConfig,
    SceneConfigError,
    ego_frame_boxes,
    generate_scene,
)

# chi-square 2-dof 95% quantile; ellipse semi-axes scale with its square root
CHI2_95_2DOF = 5.991464547107979


def ellipse_params(g: GaussianParams, quantile: float = CHI2_95_2DOF):
    """(semi_major, semi_minor, angle_rad) of the confidence ellipse."""
    evals, evecs = np.linalg.eigh(g.covariance)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    angle = math.atan2(evecs[1, 0], evecs[0, 0])
    return (
        math.sqrt(quantile * evals[0]),
        math.sqrt(quantile * evals[1]),
        angle,
    )


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DatasetError(f"config file {path}: expected a JSON object")
    return doc


def _scene_config(cfg: dict) -> SceneConfig:
    fields = {k: tuple(v) if isinstance(v, list) else v
              for k, v in cfg.get("scene", {}).items()}
    try:
        config = SceneConfig(**fields)
    except TypeError as exc:
        raise SceneConfigError(f"bad scene config: {exc}") from exc
    config.validate()
    return config


def _noise(cfg: dict) -> NoiseParams:
    return NoiseParams(**cfg.get("noise", {}))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    manifest = build_dataset(
        n_scenes=args.scenes,
        split_ratio=args.ratio,
        seed=args.seed,
        out_dir=out,
        config=_scene_config(cfg),
        per_scene=args.per_scene,
    )
    print(f"wrote {len(manifest['train'])} train / {len(manifest['test'])} test "
          f"samples to {out}")
    return 0


def cmd_homography(args) -> int:
    out = _out_dir(args)
    try:
        doc = json.loads(Path(args.pairs).read_text())
        pairs = [Correspondence(tuple(p["camera"]), tuple(p["bev"])) for p in doc]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"correspondence file {args.pairs}: {exc}") from exc
    if len(pairs) < 4:
        raise DatasetError(f"need at least 4 correspondences, got {len(pairs)}")
    h = estimate_homography_dlt(pairs)
    residuals = []
    for p in pairs:
        q = h.apply(p.camera)
        residuals.append(float(np.hypot(q[0] - p.bev[0], q[1] - p.bev[1])))
    report = {
        "n_pairs": len(pairs),
        "residuals": residuals,
        "max_residual": max(residuals),
        "rms_residual": float(np.sqrt(np.mean(np.square(residuals)))),
    }
    write_homography_json(out / "homography.json", h, {"report": report})
    print(f"estimated homography from {len(pairs)} pairs, "
          f"max residual {report['max_residual']:.3e}")
    return 0


def cmd_warp(args) -> int:
    out = _out_dir(args)
    src = read_pgm(args.input)
    h = read_homography_json(args.homography)
    warped, valid = warp_grid(src, h, (args.rows, args.cols))
    write_pgm(out / "warped.pgm", np.clip(warped, 0.0, 1.0))
    write_pgm(out / "valid.pgm", valid.astype(float))
    print(f"warped {args.input} -> {out}/warped.pgm ({args.rows}x{args.cols})")
    return 0


def cmd_rasterize(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(args)
    scene = generate_scene(args.scene_seed, _scene_config(cfg))
    spec = GridSpec()
    gx, gy = spec.cell_centers_ego()
    ex, ey, eh = scene.ego_pose(args.t)
    c, s = math.cos(eh), math.sin(eh)
    world = np.stack(
        [ex + c * gx.ravel() - s * gy.ravel(), ey + s * gx.ravel() + c * gy.ravel()],
        axis=1,
    )
    drivable = scene.drivable_at(world).reshape(spec.rows, spec.cols).astype(float)
    vehicles = rasterize_footprints(ego_frame_boxes(scene, args.t), (0.0, 0.0, 0.0), spec)
    write_pgm(out / "drivable.pgm", drivable)
    write_pgm(out / "vehicle.pgm", vehicles.cells)
    print(f"rasterized scene {args.scene_seed} frame {args.t} -> {out}")
    return 0


def _train_pipeline(args, split: str):
    cfg = _load_config(args.config)
    preset = get_preset(args.preset)
    samples = load_split(args.dataset, split)
    scene_config = _scene_config({"scene": load_manifest(args.dataset).get("config", {})})
    pdataset = assemble_dataset(samples, preset, _noise(cfg), scene_config=scene_config)
    planner_cfg = planner_config(preset, **cfg.get("planner", {}))
    return cfg, preset, samples, pdataset, planner_cfg


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg, preset, _, pdataset, planner_cfg = _train_pipeline(args, "train")
    hyper = TrainConfig(**cfg.get("train", {}))
    params, curve = train(pdataset, planner_cfg, hyper, seed=args.seed)
    save_params(out / "params.npz", params)
    write_csv(out / "loss_curve.csv", ["epoch", "mean_nll"],
              [[i, v] for i, v in enumerate(curve)])
    print(f"trained preset {preset.tag}: final mean NLL {curve[-1]:.4f} -> {out}")
    return 0


def _infer_spec(shape) -> GridSpec:
    base = GridSpec()
    factor = max(base.rows // shape[0], 1)
    if shape == (base.rows, base.cols):
        return base
    return base.scaled(factor)


def cmd_eval_ogm(args) -> int:
    out = _out_dir(args)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names = sorted(p.name for p in gt_dir.glob("*.pgm"))
    if not names:
        raise DatasetError(f"no PGM masks in {gt_dir}")
    sums: dict = {}
    for name in names:
        pred_path = pred_dir / name
        if not pred_path.exists():
            raise DatasetError(f"missing prediction mask {pred_path}")
        gt_mask = read_pgm(gt_dir / name)
        pred_mask = read_pgm(pred_path)
        if pred_mask.shape != gt_mask.shape:
            raise DatasetError(f"{name}: prediction/gt shapes differ")
        spec = _infer_spec(gt_mask.shape)
        channel = "vehicle" if ("vehicle" in name or "footprint" in name) else "drivable"
        gt_grid = OccupancyGrid(spec, (gt_mask >= 0.5).astype(float), channel)
        pred_grid = threshold(OccupancyGrid(spec, pred_mask, channel), 0.5)
        for region in ("full", "close", "far"):
            sums.setdefault((channel, region), []).append(iou(pred_grid, gt_grid, region))
    rows = [
        [channel, region, round(float(np.mean(vals)), 6)]
        for (channel, region), vals in sorted(sums.items())
    ]
    write_csv(out / "ogm_eval.csv", ["channel", "region", "iou"], rows)
    for r in rows:
        print(f"{r[0]:9s} {r[1]:6s} IoU {r[2]:.4f}")
    return 0


def cmd_eval_traj(args) -> int:
    out = _out_dir(args)
    from .presets import predict_trajectories

    cfg, preset, samples, pdataset, planner_cfg = _train_pipeline(args, args.split)
    params = load_params(args.params)
    pred = predict_trajectories(params, pdataset, planner_cfg)
    gt = np.stack([s.targets for s in samples])
    te = evaluate_trajectories(pred, gt)
    rows = [
        [preset.tag, hz, round(te.ade[hz], 4), round(te.l1_long[hz], 4), round(te.l1_lat[hz], 4)]
        for hz in sorted(te.ade)
    ]
    write_csv(out / "traj_eval.csv", ["preset", "horizon_s", "ade", "l1_long", "l1_lat"], rows)
    for r in rows:
        print(f"{r[0]:12s} @{r[1]}s ADE {r[2]:.3f} | L1 long {r[3]:.3f} lat {r[4]:.3f}")
    return 0


def cmd_render(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Ellipse

    out = _out_dir(args)
    sample = load_sample(Path(args.dataset) / args.sample)
    for k in range(6):
        write_pgm(out / f"drivable_{k}.pgm", sample.drivable[k])
        write_pgm(out / f"footprint_{k}.pgm", sample.footprint[k])

    fig, ax = plt.subplots(figsize=(6, 6))
    past, future = sample.past, sample.future
    ax.plot(past[:, 1], past[:, 0], "o-", color="tab:gray", label="past")
    ax.plot(future[:5, 1], future[:5, 0], "o-", color="tab:green", label="ground truth")
    ax.plot(future[5, 1], future[5, 0], "*", color="tab:red", ms=12, label="destination")

    if args.params and args.preset:
        cfg = _load_config(args.config)
        from .planner import decode, encode
        from .presets import POSITION_SCALE, planner_config as pc, _features_for_sample, get_preset as gp
        preset = gp(args.preset)
        manifest_cfg = {}
        try:
            manifest_cfg = load_manifest(args.dataset).get("config", {})
        except DatasetError:
            pass
        scene_config = _scene_config({"scene": manifest_cfg})
        planner_cfg = pc(preset, **cfg.get("planner", {}))
        feats = _features_for_sample(
            sample, preset, _noise(cfg), GridSpec(), scene_config, planner_cfg
        )
        params = load_params(args.params)
        past_in = sample.past * POSITION_SCALE
        if not preset.use_past:
            past_in = np.zeros_like(past_in)
        dest = sample.dest.copy()
        dest[0] *= POSITION_SCALE
        h0, c0 = encode(feats, past_in, params, planner_cfg)
        preds = decode(h0, c0, dest, params, planner_cfg)
        mus = np.array([[g.mu_x, g.mu_y] for g in preds]) / POSITION_SCALE
        ax.plot(mus[:, 1], mus[:, 0], "s--", color="tab:blue", label="predicted mean")
        for g in preds:
            scaled = GaussianParams(
                g.mu_x / POSITION_SCALE, g.mu_y / POSITION_SCALE,
                g.sigma_x / POSITION_SCALE, g.sigma_y / POSITION_SCALE, g.rho,
            )
            a, b, angle = ellipse_params(scaled)
            # axes swapped: plot x = lateral (ego y), plot y = forward (ego x)
            ax.add_patch(Ellipse(
                (scaled.mu_y, scaled.mu_x), 2 * b, 2 * a,
                angle=math.degrees(angle), fill=False, color="tab:blue", alpha=0.6,
            ))
    ax.set_xlabel("lateral (m, left positive)")
    ax.set_ylabel("forward (m)")
    ax.invert_xaxis()
    ax.set_aspect("equal")
    ax.legend(loc="best")
    fig.savefig(out / "trajectory.svg")
    plt.close(fig)
    print(f"rendered sample {args.sample} -> {out}/trajectory.svg")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevplan",
        description="BEV occupancy-grid trajectory planning toolkit",
    )
    parser.add_argument("--seed", type=int, default=0, help="root random seed")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--per-scene", type=int, default=4)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("homography", help="estimate a homography from correspondences")
    p.add_argument("--pairs", required=True, help="JSON list of {camera, bev} pairs")
    p.set_defaults(func=cmd_homography)

    p = sub.add_parser("warp", help="warp a PGM mask through a homography")
    p.add_argument("--input", required=True)
    p.add_argument("--homography", required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("rasterize", help="rasterize ground-truth BEV grids")
    p.add_argument("--scene-seed", type=int, required=True)
    p.add_argument("--t", type=int, default=0)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("train", help="train a planner preset")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-ogm", help="IoU table for predicted vs gt BEV masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval_ogm)

    p = sub.add_parser("eval-traj", help="trajectory error table for trained params")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--dataset", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.set_defaults(func=cmd_eval_traj)

    p = sub.add_parser("render", help="render masks and trajectory overlays")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sample", required=True, help="e.g. test/sample_0000")
    p.add_argument("--params", default=None)
    p.add_argument("--preset", default=None, choices=sorted(PRESETS))
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, IoError, OgmError, SceneConfigError, PresetError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (GeometryError, TrainingDivergedError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
