"""Trajectory metrics: ADE at multiple horizons plus an L1 decomposition of
the displacement error into ego-frame lateral / longitudinal components."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["MetricsError", "TrajectoryError", "ade", "l1_lat_long", "evaluate_trajectories"]

# step duration of the planner outputs; horizons below are in seconds
DT = 0.5
HORIZONS = (0.5, 1.5, 2.5)


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryError:
    """ADE and per-horizon L1 lateral/longitudinal errors, all in meters."""

    ade: dict[float, float]  # horizon seconds -> ADE
    l1_long: dict[float, float]
    l1_lat: dict[float, float]

    def __post_init__(self):
        for d in (self.ade, self.l1_long, self.l1_lat):
            if any(v < 0 for v in d.values()):
                raise MetricsError("trajectory errors must be nonnegative")


def _as_batch(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[-1] != 2:
        raise MetricsError(f"{name} must be (T, 2) or (N, T, 2), got {a.shape}")
    return a


def ade(preds, gts, horizon_steps: int) -> float:
    """Mean Euclidean displacement over the first ``horizon_steps`` steps,
    averaged over samples."""
    preds = _as_batch(preds, "preds")
    gts = _as_batch(gts, "gts")
    if preds.shape != gts.shape:
        raise MetricsError(f"shape mismatch: {preds.shape} vs {gts.shape}")
    if not 1 <= horizon_steps <= preds.shape[1]:
        raise MetricsError(
            f"horizon_steps={horizon_steps} outside 1..{preds.shape[1]}"
        )
    d = np.linalg.norm(preds[:, :horizon_steps] - gts[:, :horizon_steps], axis=-1)
    return float(d.mean())


def l1_lat_long(preds, gts, heading) -> tuple[np.ndarray, np.ndarray]:
    """Per-step mean |longitudinal| and |lateral| displacement error.

    The displacement error at each step is rotated into the ego frame defined
    by ``heading`` at t = 0 (scalar, or one angle per sample); longitudinal
    is the component along the heading, lateral the perpendicular one.
    Returns (l1_long, l1_lat), each of length T.
    """
    preds = _as_batch(preds, "preds")
    gts = _as_batch(gts, "gts")
    if preds.shape != gts.shape:
        raise MetricsError(f"shape mismatch: {preds.shape} vs {gts.shape}")
    heading = np.broadcast_to(np.asarray(heading, dtype=float), (len(preds),))
    if not np.all(np.isfinite(heading)):
        raise MetricsError("heading must be finite")
    err = preds - gts  # (N, T, 2)
    cos, sin = np.cos(heading), np.sin(heading)
    longitudinal = err[..., 0] * cos[:, None] + err[..., 1] * sin[:, None]
    lateral = -err[..., 0] * sin[:, None] + err[..., 1] * cos[:, None]
    return np.abs(longitudinal).mean(axis=0), np.abs(lateral).mean(axis=0)


def evaluate_trajectories(preds, gts, heading=0.0) -> TrajectoryError:
    """Bundle ADE and L1 errors at the standard 0.5 / 1.5 / 2.5 s horizons."""
    preds = _as_batch(preds, "preds")
    l1_long, l1_lat = l1_lat_long(preds, gts, heading)
    out_ade, out_long, out_lat = {}, {}, {}
    for hz in HORIZONS:
        step = int(round(hz / DT))
        if step > preds.shape[1]:
            continue
        out_ade[hz] = ade(preds, gts, step)
        out_long[hz] = float(l1_long[step - 1])
        out_lat[hz] = float(l1_lat[step - 1])
    return TrajectoryError(ade=out_ade, l1_long=out_long, l1_lat=out_lat)
