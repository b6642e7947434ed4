"""Encoder-decoder LSTM trajectory planner with a bivariate-Gaussian head.

Everything is plain numpy with hand-written, exact backpropagation through
time.  The encoder embeds a sequence of flattened occupancy features together
with the past ego positions; the decoder unrolls future steps, feeding each
predicted mean back as the next step's position input and conditioning every
output on the polar destination.  Each step emits (mu_x, mu_y, sigma_x,
sigma_y, rho); positive scale and bounded correlation are enforced through
exp / tanh links so gradients stay exact.

Parameters live in a plain dict of float arrays:

    W_e, b_e     feature embedding
    W_a, b_a     encoder position embedding
    W_l, b_l     encoder LSTM (gates stacked i, f, g, o over [x; h])
    W_pa, b_pa   decoder position embedding (previous predicted mean)
    W_dl, b_dl   decoder LSTM
    W_s, b_s     output head over [h; r, alpha]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlannerError",
    "InvalidCovarianceError",
    "TrainingDivergedError",
    "PlannerConfig",
    "TrainConfig",
    "PlannerDataset",
    "GaussianParams",
    "init_params",
    "featurize",
    "encode",
    "decode",
    "nll_loss",
    "backward",
    "batch_loss_and_gradients",
    "predict_means",
    "train",
    "sample_position",
]

LOG_2PI = math.log(2.0 * math.pi)


class PlannerError(ValueError):
    pass


class InvalidCovarianceError(PlannerError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"training diverged at epoch {epoch}, batch {batch}: loss={loss!r}"
        )
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class PlannerConfig:
    feature_dim: int = 650
    feature_embed: int = 64
    position_embed: int = 16
    hidden: int = 128
    horizon: int = 5
    input_len: int = 6
    pool_factor: int = 40

    def __post_init__(self):
        dims = (self.feature_embed, self.position_embed, self.hidden,
                self.horizon, self.input_len, self.pool_factor)
        if any(d < 1 for d in dims) or self.feature_dim < 0:
            raise PlannerError("all planner dimensions must be positive")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 10
    epochs: int = 200
    # global gradient-norm clip on the per-sample-mean gradient; the sharp
    # NLL surface around overconfident sigmas blows SGD up without it
    clip_norm: float = 5.0
    # Polyak-Ruppert tail averaging: the returned parameters are the mean of
    # the last `avg_tail` end-of-epoch iterates (0 disables), which removes
    # most of the constant-step-size SGD wander around the final basin
    avg_tail: int = 50
    # std of Gaussian noise added to grid features at every presentation
    # (fresh draw per batch per epoch, 0 disables); static pooled grids are
    # otherwise easy to memorize sample-by-sample at this dataset scale
    feature_noise: float = 0.1


@dataclass(frozen=True)
class PlannerDataset:
    """Dense training arrays: one row per sample."""

    features: np.ndarray  # (N, input_len, feature_dim)
    past: np.ndarray  # (N, input_len, 2)
    dest: np.ndarray  # (N, 2) polar (r, alpha)
    future: np.ndarray  # (N, horizon, 2)

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.past) == len(self.dest) == len(self.future) == n):
            raise PlannerError("dataset arrays have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, idx) -> "PlannerDataset":
        return PlannerDataset(
            self.features[idx], self.past[idx], self.dest[idx], self.future[idx]
        )


@dataclass(frozen=True)
class GaussianParams:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0 and abs(self.rho) < 1):
            raise InvalidCovarianceError(
                f"invalid gaussian parameters: sigma=({self.sigma_x}, "
                f"{self.sigma_y}), rho={self.rho}"
            )

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mu_x, self.mu_y])

    @property
    def covariance(self) -> np.ndarray:
        c = self.rho * self.sigma_x * self.sigma_y
        return np.array([[self.sigma_x**2, c], [c, self.sigma_y**2]])


def init_params(config: PlannerConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Gaussian fan-in-scaled init; forget-gate bias starts at 1."""
    f, e, a, h = config.feature_dim, config.feature_embed, config.position_embed, config.hidden

    def mat(rows, cols):
        return rng.standard_normal((rows, cols)) / math.sqrt(max(cols, 1))

    params = {
        "W_e": mat(e, f),
        "b_e": np.zeros(e),
        "W_a": mat(a, 2),
        "b_a": np.zeros(a),
        "W_l": mat(4 * h, e + a + h),
        "b_l": np.zeros(4 * h),
        "W_pa": mat(a, 2),
        "b_pa": np.zeros(a),
        "W_dl": mat(4 * h, a + h),
        "b_dl": np.zeros(4 * h),
        # output head starts small so early predictions sit near mu=0,
        # sigma=1 instead of wildly overconfident gaussians
        "W_s": mat(5, h + 2) * 0.1,
        "b_s": np.zeros(5),
    }
    params["b_l"][h : 2 * h] = 1.0
    params["b_dl"][h : 2 * h] = 1.0
    # small positive bias keeps the decoder position relu off its kink at the
    # first step, where the fed-back position is exactly (0, 0)
    params["b_pa"][:] = 0.1
    return params


def zero_params(config: PlannerConfig) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(0)
    return {k: np.zeros_like(v) for k, v in init_params(config, rng).items()}


def _check_shapes(params: dict, config: PlannerConfig):
    f, e, a, h = config.feature_dim, config.feature_embed, config.position_embed, config.hidden
    expected = {
        "W_e": (e, f),
        "W_a": (a, 2),
        "W_l": (4 * h, e + a + h),
        "W_pa": (a, 2),
        "W_dl": (4 * h, a + h),
        "W_s": (5, h + 2),
    }
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise PlannerError(
                f"parameter {name} has shape {params[name].shape}, expected {shape}"
            )


def featurize(grids, config: PlannerConfig) -> np.ndarray:
    """Block-mean pooled, channel-concatenated, flattened grid features.

    ``grids`` is either an (T, 2, rows, cols) array or a sequence of
    (drivable, vehicle) OccupancyGrid pairs sharing a spec.  Rows and columns
    are cropped to multiples of the pool factor before averaging.
    """
    if not isinstance(grids, np.ndarray):
        specs = {pair[c].spec for pair in grids for c in range(2)}
        if len(specs) > 1:
            raise PlannerError("grids in a sequence must share a spec")
        grids = np.stack([[pair[0].cells, pair[1].cells] for pair in grids])
    if grids.ndim != 4 or grids.shape[1] != 2:
        raise PlannerError(f"expected (T, 2, rows, cols) grids, got {grids.shape}")
    d = config.pool_factor
    t, _, rows, cols = grids.shape
    br, bc = rows // d, cols // d
    if br == 0 or bc == 0:
        raise PlannerError("pool factor larger than the grid")
    cropped = grids[:, :, : br * d, : bc * d]
    pooled = cropped.reshape(t, 2, br, d, bc, d).mean(axis=(3, 5))
    return pooled.reshape(t, 2 * br * bc)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_forward(z, c_prev, h):
    i = _sigmoid(z[:, :h])
    f = _sigmoid(z[:, h : 2 * h])
    g = np.tanh(z[:, 2 * h : 3 * h])
    o = _sigmoid(z[:, 3 * h :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return i, f, g, o, c, tc, o * tc


def _forward_batch(params, features, past, dest, config: PlannerConfig):
    """Unrolled forward pass over a batch; returns raw outputs and a cache."""
    _check_shapes(params, config)
    b = len(features)
    h_dim = config.hidden
    cache = {"enc": [], "dec": [], "features": features, "past": past, "dest": dest}
    h = np.zeros((b, h_dim))
    c = np.zeros((b, h_dim))
    for t in range(config.input_len):
        e_pre = features[:, t] @ params["W_e"].T + params["b_e"]
        e = np.maximum(e_pre, 0.0)
        a_pre = past[:, t] @ params["W_a"].T + params["b_a"]
        a = np.maximum(a_pre, 0.0)
        x = np.concatenate([e, a], axis=1)
        inp = np.concatenate([x, h], axis=1)
        z = inp @ params["W_l"].T + params["b_l"]
        i, f, g, o, c_new, tc, h_new = _lstm_forward(z, c, h_dim)
        cache["enc"].append((e, a, inp, i, f, g, o, c, c_new, tc))
        h, c = h_new, c_new
    cache["enc_final"] = (h, c)

    outs = []
    s = np.zeros((b, 2))
    for t in range(config.horizon):
        ap_pre = s @ params["W_pa"].T + params["b_pa"]
        ap = np.maximum(ap_pre, 0.0)
        inp = np.concatenate([ap, h], axis=1)
        z = inp @ params["W_dl"].T + params["b_dl"]
        i, f, g, o, c_new, tc, h_new = _lstm_forward(z, c, h_dim)
        head_in = np.concatenate([h_new, dest], axis=1)
        out = head_in @ params["W_s"].T + params["b_s"]
        cache["dec"].append((s, ap, inp, i, f, g, o, c, c_new, tc, head_in))
        s = out[:, :2].copy()
        outs.append(out)
        h, c = h_new, c_new
    raw = np.stack(outs, axis=1)  # (B, horizon, 5)
    return raw, cache


def _gaussian_from_raw(raw):
    mu = raw[..., :2]
    sigma = np.exp(raw[..., 2:4])
    rho = np.tanh(raw[..., 4])
    return mu, sigma, rho


def _nll_terms(raw, future):
    """Per-sample, per-step NLL and its gradient w.r.t. the raw outputs."""
    mu, sigma, rho = _gaussian_from_raw(raw)
    dx = (future[..., 0] - mu[..., 0]) / sigma[..., 0]
    dy = (future[..., 1] - mu[..., 1]) / sigma[..., 1]
    q = 1.0 - rho**2
    zq = dx * dx - 2.0 * rho * dx * dy + dy * dy
    nll = LOG_2PI + raw[..., 2] + raw[..., 3] + 0.5 * np.log(q) + zq / (2.0 * q)

    grad = np.empty_like(raw)
    grad[..., 0] = -(dx - rho * dy) / (q * sigma[..., 0])
    grad[..., 1] = -(dy - rho * dx) / (q * sigma[..., 1])
    grad[..., 2] = 1.0 - (dx * dx - rho * dx * dy) / q
    grad[..., 3] = 1.0 - (dy * dy - rho * dx * dy) / q
    grad[..., 4] = -rho - dx * dy + zq * rho / q
    return nll, grad


def _lstm_backward(dh, dc, step, params_w, h_dim):
    """One LSTM cell backward step; returns (dz, dinp, dc_prev)."""
    i, f, g, o, c_prev, c_new, tc = step
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    di = dct * g
    df = dct * c_prev
    dg = dct * i
    dc_prev = dct * f
    dz = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=1,
    )
    dinp = dz @ params_w
    return dz, dinp, dc_prev


def batch_loss_and_gradients(params, features, past, dest, future, config):
    """Sum-over-batch NLL loss and its exact gradients.

    The reduction over the batch axis happens in array index order, so
    callers that want permutation-invariant gradients must pass samples in a
    canonical order (see :func:`train`).
    """
    raw, cache = _forward_batch(params, features, past, dest, config)
    nll, draw = _nll_terms(raw, future)
    loss = float(nll.sum())
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    h_dim = config.hidden
    a_dim = config.position_embed

    dh = np.zeros((len(features), h_dim))
    dc = np.zeros_like(dh)
    ds_next = np.zeros((len(features), 2))
    for t in reversed(range(config.horizon)):
        s, ap, inp, i, f, g, o, c_prev, c_new, tc, head_in = cache["dec"][t]
        dout = draw[:, t].copy()
        dout[:, :2] += ds_next  # mean feedback into the next step's input
        grads["W_s"] += dout.T @ head_in
        grads["b_s"] += dout.sum(axis=0)
        dh = dh + dout @ params["W_s"][:, :h_dim]
        dz, dinp, dc = _lstm_backward(
            dh, dc, (i, f, g, o, c_prev, c_new, tc), params["W_dl"], h_dim
        )
        grads["W_dl"] += dz.T @ inp
        grads["b_dl"] += dz.sum(axis=0)
        dap = dinp[:, :a_dim] * (ap > 0)
        grads["W_pa"] += dap.T @ s
        grads["b_pa"] += dap.sum(axis=0)
        ds_next = dap @ params["W_pa"]
        dh = dinp[:, a_dim:]

    for t in reversed(range(config.input_len)):
        e, a, inp, i, f, g, o, c_prev, c_new, tc = cache["enc"][t]
        dz, dinp, dc = _lstm_backward(
            dh, dc, (i, f, g, o, c_prev, c_new, tc), params["W_l"], h_dim
        )
        grads["W_l"] += dz.T @ inp
        grads["b_l"] += dz.sum(axis=0)
        e_dim = config.feature_embed
        de = dinp[:, :e_dim] * (e > 0)
        da = dinp[:, e_dim : e_dim + a_dim] * (a > 0)
        grads["W_e"] += de.T @ features[:, t]
        grads["b_e"] += de.sum(axis=0)
        grads["W_a"] += da.T @ past[:, t]
        grads["b_a"] += da.sum(axis=0)
        dh = dinp[:, e_dim + a_dim :]

    return loss, grads


# ---------------------------------------------------------------------------
# single-sample API


def encode(features: np.ndarray, past: np.ndarray, params, config: PlannerConfig):
    """Run the encoder over one input sequence; returns the final (h, c)."""
    features = np.asarray(features, dtype=float)
    past = np.asarray(past, dtype=float)
    if features.shape != (config.input_len, config.feature_dim):
        raise PlannerError(
            f"features shape {features.shape} does not match config "
            f"({config.input_len}, {config.feature_dim})"
        )
    if past.shape != (config.input_len, 2):
        raise PlannerError(f"past positions shape {past.shape} invalid")
    _, cache = _forward_batch(
        params, features[None], past[None], np.zeros((1, 2)), config
    )
    h, c = cache["enc_final"]
    return h[0], c[0]


def decode(h0, c0, dest, params, config: PlannerConfig) -> list[GaussianParams]:
    """Unroll the decoder from an encoder state; emits ``horizon`` Gaussians."""
    b = 1
    h = np.asarray(h0, dtype=float)[None].copy()
    c = np.asarray(c0, dtype=float)[None].copy()
    d = np.asarray(dest, dtype=float)[None]
    s = np.zeros((b, 2))
    out_list = []
    h_dim = config.hidden
    for _ in range(config.horizon):
        ap = np.maximum(s @ params["W_pa"].T + params["b_pa"], 0.0)
        inp = np.concatenate([ap, h], axis=1)
        z = inp @ params["W_dl"].T + params["b_dl"]
        _, _, _, _, c, _, h = _lstm_forward(z, c, h_dim)
        out = np.concatenate([h, d], axis=1) @ params["W_s"].T + params["b_s"]
        mu, sigma, rho = _gaussian_from_raw(out[0])
        out_list.append(
            GaussianParams(float(mu[0]), float(mu[1]), float(sigma[0]), float(sigma[1]), float(rho))
        )
        s = out[:, :2]
    return out_list


def nll_loss(preds: list[GaussianParams], gt: np.ndarray) -> float:
    """Total negative log-likelihood of ground-truth points under the
    per-step bivariate Gaussians."""
    gt = np.asarray(gt, dtype=float)
    if len(preds) != len(gt):
        raise PlannerError(f"{len(preds)} predictions vs {len(gt)} ground-truth points")
    total = 0.0
    for g, (x, y) in zip(preds, gt):
        if not (g.sigma_x > 0 and g.sigma_y > 0 and abs(g.rho) < 1):
            raise InvalidCovarianceError("invalid gaussian in prediction sequence")
        q = 1.0 - g.rho**2
        dx = (x - g.mu_x) / g.sigma_x
        dy = (y - g.mu_y) / g.sigma_y
        zq = dx * dx - 2.0 * g.rho * dx * dy + dy * dy
        total += (
            LOG_2PI
            + math.log(g.sigma_x)
            + math.log(g.sigma_y)
            + 0.5 * math.log(q)
            + zq / (2.0 * q)
        )
    return total


def backward(sample: dict, params, config: PlannerConfig):
    """Loss and exact gradients for one sample.

    ``sample`` holds ``features`` (input_len, feature_dim), ``past``
    (input_len, 2), ``dest`` (r, alpha) and ``future`` (horizon, 2).
    """
    loss, grads = batch_loss_and_gradients(
        params,
        np.asarray(sample["features"], dtype=float)[None],
        np.asarray(sample["past"], dtype=float)[None],
        np.asarray(sample["dest"], dtype=float)[None],
        np.asarray(sample["future"], dtype=float)[None],
        config,
    )
    return loss, grads


def predict_means(params, dataset: PlannerDataset, config: PlannerConfig) -> np.ndarray:
    """Predicted mean trajectories for every dataset row, (N, horizon, 2)."""
    raw, _ = _forward_batch(params, dataset.features, dataset.past, dataset.dest, config)
    return raw[:, :, :2].copy()


def train(
    dataset: PlannerDataset,
    config: PlannerConfig,
    hyper: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> tuple[dict, list[float]]:
    """Minibatch SGD with classical momentum; deterministic given the seed.

    Every batch is sorted into canonical (dataset index) order before the
    gradient reduction, so shuffling only decides batch membership; returns
    the trained parameters and the per-epoch mean sample NLL.
    """
    if len(dataset) == 0:
        raise PlannerError("training dataset is empty")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x7261696E]))
    params = init_params(config, rng)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(dataset)
    curve = []
    tail = min(hyper.avg_tail, hyper.epochs) if hyper.avg_tail else 0
    avg_sum = {k: np.zeros_like(v) for k, v in params.items()} if tail else None
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi in range(0, n, hyper.batch_size):
            idx = np.sort(order[bi : bi + hyper.batch_size])
            feats = dataset.features[idx]
            if hyper.feature_noise and feats.shape[-1]:
                feats = feats + rng.normal(0.0, hyper.feature_noise, feats.shape)
            loss, grads = batch_loss_and_gradients(
                params,
                feats,
                dataset.past[idx],
                dataset.dest[idx],
                dataset.future[idx],
                config,
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, bi // hyper.batch_size, loss)
            total += loss
            scale = hyper.lr / len(idx)
            if hyper.clip_norm:
                gnorm = math.sqrt(
                    sum(float(np.sum(g * g)) for g in grads.values())
                ) / len(idx)
                if gnorm > hyper.clip_norm:
                    scale *= hyper.clip_norm / gnorm
            for k in params:
                velocity[k] = hyper.momentum * velocity[k] - scale * grads[k]
                params[k] = params[k] + velocity[k]
        curve.append(total / n)
        if tail and epoch >= hyper.epochs - tail:
            for k in params:
                avg_sum[k] += params[k]
    if tail:
        params = {k: v / tail for k, v in avg_sum.items()}
    return params, curve


def sample_position(g: GaussianParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one position via the Cholesky factor of the 2x2 covariance."""
    chol = np.linalg.cholesky(g.covariance)
    return g.mean + chol @ rng.standard_normal(2)
