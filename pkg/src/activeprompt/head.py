"""Trainable probabilistic head over frozen backbone features.

A small stack of 3x3 convolutions (zero padding, stride 1) with ReLU and
dropout between hidden layers and a final 1-channel convolution squashed
through a logistic. Training maximizes the pixelwise Bernoulli
log-likelihood (plus an L2 penalty) with Adam; the posterior over the
flattened parameter vector is a diagonal Laplace approximation whose
precision is prior precision plus the per-pixel squared log-likelihood
gradients (empirical Fisher) accumulated over a data subset.

Forward, backward, and the per-pixel gradients are written directly in
numpy so the analytic gradients can be validated against central finite
differences and the whole pipeline stays bit-deterministic for a fixed
seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .backbone import FEATURE_CHANNELS, FeatureMap, PromptableBackbone
from .core import BinaryMask, ContractViolation, ProbabilityMap, iou
from .synth import TrainingExample

HEAD_MAGIC = b"BHD1"
POSTERIOR_MAGIC = b"BLP1"

# Precision entries at or above this are treated as "infinite": the
# corresponding parameter is sampled with (numerically) zero variance.
_PRECISION_CLAMP = 1e30

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8

MAX_LOSS_PIXELS = 256


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True)
class HeadConfig:
    hidden_channels: tuple[int, ...] = (16, 8)
    kernel_size: int = 3
    dropout_rate: float = 0.1
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 8
    patience: int = 15
    min_delta: float = 1e-4
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_channels", tuple(self.hidden_channels))
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ContractViolation("rates must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ContractViolation("dropout rate must lie in [0, 1)")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ContractViolation("batch size, patience, max epochs must be >= 1")

    @property
    def arch(self) -> "HeadArch":
        return HeadArch(
            hidden_channels=self.hidden_channels,
            kernel_size=self.kernel_size,
            dropout_rate=self.dropout_rate,
        )


@dataclass(frozen=True)
class HeadArch:
    """Architecture descriptor: channel plan of the convolution stack."""

    in_channels: int = FEATURE_CHANNELS
    hidden_channels: tuple[int, ...] = (16, 8)
    kernel_size: int = 3
    dropout_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_channels", tuple(self.hidden_channels))
        if self.kernel_size % 2 != 1:
            raise ContractViolation("kernel size must be odd")

    @property
    def channel_plan(self) -> tuple[int, ...]:
        return (self.in_channels, *self.hidden_channels, 1)

    @property
    def num_layers(self) -> int:
        return len(self.hidden_channels) + 1

    def layer_shapes(self) -> list[tuple[tuple[int, int, int, int], tuple[int]]]:
        k = self.kernel_size
        plan = self.channel_plan
        return [
            ((k, k, plan[i], plan[i + 1]), (plan[i + 1],))
            for i in range(len(plan) - 1)
        ]

    @property
    def num_params(self) -> int:
        return sum(
            int(np.prod(w)) + b[0] for (w, b) in self.layer_shapes()
        )


@dataclass(frozen=True)
class HeadParams:
    """Flat parameter vector plus the architecture it parameterizes."""

    theta: np.ndarray
    arch: HeadArch

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 1 or t.size != self.arch.num_params:
            raise ContractViolation(
                f"expected {self.arch.num_params} parameters, got {t.size}"
            )
        if not np.all(np.isfinite(t)):
            raise ContractViolation("parameters must be finite")
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        object.__setattr__(self, "theta", t)


@dataclass(frozen=True)
class LaplacePosterior:
    """MAP estimate plus diagonal precision of the Gaussian posterior."""

    mean: HeadParams
    precision: np.ndarray
    subset_size: int = 0

    def __post_init__(self):
        p = np.asarray(self.precision, dtype=np.float64)
        if p.shape != self.mean.theta.shape:
            raise ContractViolation("precision length must match parameter count")
        if not np.all(p > 0):
            raise ContractViolation("precision entries must be positive")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "precision", p)


@dataclass
class TrainRecord:
    train_loss: list[float] = field(default_factory=list)
    val_iou: list[float] = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = ""


# ------------------------------------------------------------- parameter packing


def unpack_params(params: HeadParams) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    pos = 0
    for w_shape, b_shape in params.arch.layer_shapes():
        n_w = int(np.prod(w_shape))
        w = params.theta[pos : pos + n_w].reshape(w_shape)
        pos += n_w
        b = params.theta[pos : pos + b_shape[0]]
        pos += b_shape[0]
        out.append((w, b))
    return out


def pack_params(arch: HeadArch, layers) -> HeadParams:
    flat = np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])
    return HeadParams(flat, arch)


def init_params(arch: HeadArch, seed: int) -> HeadParams:
    """He-scaled Gaussian weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for w_shape, b_shape in arch.layer_shapes():
        fan_in = w_shape[0] * w_shape[1] * w_shape[2]
        w = rng.standard_normal(w_shape) * np.sqrt(2.0 / fan_in)
        layers.append((w, np.zeros(b_shape)))
    return pack_params(arch, layers)


# --------------------------------------------------------------- forward/backward


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(H, W, C) -> (H*W, k*k*C) patch matrix under zero padding."""
    h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, C, k, k)
    return np.ascontiguousarray(
        win.transpose(0, 1, 3, 4, 2).reshape(h * w, k * k * c)
    )


def _col2im(dcols: np.ndarray, h: int, w: int, c: int, k: int) -> np.ndarray:
    """Adjoint of _im2col: scatter (H*W, k*k*C) gradients back to (H, W, C)."""
    p = k // 2
    dpad = np.zeros((h + 2 * p, w + 2 * p, c), dtype=np.float64)
    d = dcols.reshape(h, w, k, k, c)
    for ky in range(k):
        for kx in range(k):
            dpad[ky : ky + h, kx : kx + w, :] += d[:, :, ky, kx, :]
    return dpad[p : p + h, p : p + w, :]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(features: np.ndarray, params: HeadParams, dropout_rng=None):
    """Run the conv stack; returns (logits HxW, cache for backprop)."""
    arch = params.arch
    k = arch.kernel_size
    layers = unpack_params(params)
    h, w = features.shape[:2]
    x = features
    cache = []
    for li, (wgt, b) in enumerate(layers):
        cols = _im2col(x, k)
        z = cols @ wgt.reshape(-1, wgt.shape[-1]) + b
        last = li == len(layers) - 1
        if last:
            cache.append({"cols": cols, "w": wgt, "in_shape": x.shape})
            return z.reshape(h, w), cache
        a = np.maximum(z, 0.0)
        drop_mask = None
        if dropout_rng is not None and arch.dropout_rate > 0.0:
            keep = 1.0 - arch.dropout_rate
            drop_mask = (
                dropout_rng.random(a.shape) < keep
            ).astype(np.float64) / keep
            a = a * drop_mask
        cache.append(
            {"cols": cols, "w": wgt, "z": z, "drop": drop_mask, "in_shape": x.shape}
        )
        x = a.reshape(h, w, wgt.shape[-1])
    raise AssertionError("unreachable")


def _backward(dlogits: np.ndarray, cache, arch: HeadArch) -> np.ndarray:
    """Backprop dLoss/dlogits (H, W) to the flat parameter gradient."""
    k = arch.kernel_size
    h, w = dlogits.shape
    grads = [None] * len(cache)
    delta = dlogits.reshape(h * w, 1)
    for li in range(len(cache) - 1, -1, -1):
        c = cache[li]
        wgt = c["w"]
        w2d = wgt.reshape(-1, wgt.shape[-1])
        dw = c["cols"].T @ delta
        db = delta.sum(axis=0)
        grads[li] = (dw.reshape(wgt.shape), db)
        if li == 0:
            break
        dx = _col2im(delta @ w2d.T, h, w, c["in_shape"][2], k)
        prev = cache[li - 1]
        da = dx.reshape(h * w, -1)
        if prev["drop"] is not None:
            da = da * prev["drop"]
        delta = da * (prev["z"] > 0.0)
    return np.concatenate([np.concatenate([dw.ravel(), db.ravel()]) for dw, db in grads])


def head_forward(
    features: FeatureMap,
    params: HeadParams,
    train_mode: bool = False,
    seed: int | None = None,
) -> ProbabilityMap:
    """Pixelwise foreground probabilities; dropout only in train mode."""
    if features.values.shape[2] != params.arch.in_channels:
        raise ContractViolation(
            f"feature channels {features.values.shape[2]} do not match head input "
            f"{params.arch.in_channels}"
        )
    rng = None
    if train_mode and params.arch.dropout_rate > 0.0:
        rng = np.random.default_rng(0 if seed is None else seed)
    logits, _ = _forward(features.values, params, dropout_rng=rng)
    return ProbabilityMap(_sigmoid(logits))


def _im2col_batch32(x: np.ndarray, k: int) -> np.ndarray:
    """(N, H, W, C) float32 -> (N, H*W, k*k*C) patch matrices, zero padded."""
    n, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, H, W, C, k, k)
    return np.ascontiguousarray(
        win.transpose(0, 1, 2, 4, 5, 3).reshape(n, h * w, k * k * c)
    )


def _tap_conv_batch32(a: np.ndarray, wstack: np.ndarray, cout: int) -> np.ndarray:
    """Batched same-padded 3x3 convolution without building patch matrices.

    a: (N, H, W, Cin) float32, wstack: (N, 3, 3, Cin, Cout). Multiplies the
    flat activations once per sample and scatter-adds the nine tap
    contributions into a padded accumulator. Pure memory-layout
    optimization; deterministic.
    """
    n, h, w, c = a.shape
    wmat = np.ascontiguousarray(
        wstack.transpose(0, 3, 1, 2, 4).reshape(n, c, 9 * cout)
    )
    taps = np.matmul(a.reshape(n, h * w, c), wmat).reshape(n, h, w, 3, 3, cout)
    out = np.zeros((n, h + 2, w + 2, cout), dtype=np.float32)
    for ky in range(3):
        for kx in range(3):
            out[:, 2 - ky : 2 - ky + h, 2 - kx : 2 - kx + w] += taps[:, :, :, ky, kx, :]
    return out[:, 1 : 1 + h, 1 : 1 + w]


def ensemble_forward(features: np.ndarray, samples: list[HeadParams]) -> np.ndarray:
    """Dropout-off forward passes for many parameter vectors at once.

    Single-precision batched inference: the layer-1 patch matrix is shared
    across samples; deeper layers use the tap-scatter convolution. Used for
    posterior ensembles, where per-map float32 resolution is ample and the
    K-fold forward cost dominates a session step. Returns (K, H, W)
    probabilities. Deterministic for fixed inputs.
    """
    arch = samples[0].arch
    k = arch.kernel_size
    h, w = features.shape[:2]
    n = len(samples)
    if k != 3:  # tap scatter is specialized to 3x3; fall back per sample
        return np.stack(
            [_sigmoid(_forward(features, s, dropout_rng=None)[0]) for s in samples]
        ).astype(np.float32)
    per_layer = [unpack_params(s) for s in samples]

    def wstack(li):
        return np.stack([pl[li][0] for pl in per_layer]).astype(np.float32)

    def bstack(li):
        return np.stack([pl[li][1] for pl in per_layer]).astype(np.float32)

    cols = np.broadcast_to(
        _im2col_batch32(features.astype(np.float32)[None], k),
        (n, h * w, k * k * arch.in_channels),
    )
    w0 = wstack(0)
    z = np.matmul(cols, w0.reshape(n, -1, w0.shape[-1])) + bstack(0)[:, None, :]
    for li in range(1, arch.num_layers):
        a = np.ascontiguousarray(np.maximum(z, 0.0).reshape(n, h, w, -1))
        cout = per_layer[0][li][0].shape[-1]
        z = _tap_conv_batch32(a, wstack(li), cout) + bstack(li)[:, None, None, :]
        z = z.reshape(n, h * w, cout)
    return _sigmoid(z.reshape(n, h, w).astype(np.float32))


# ------------------------------------------------------------------ training loss


def training_loss_and_grad(
    theta: np.ndarray,
    arch: HeadArch,
    feats: list[np.ndarray],
    targets: list[np.ndarray],
    pixel_idx: list[np.ndarray],
    weight_decay: float,
    dropout_rngs=None,
) -> tuple[float, np.ndarray]:
    """Mean per-example Bernoulli NLL over sampled pixels + (wd/2)||theta||^2.

    The NLL is evaluated from logits (numerically exact; no probability
    clamping enters the loss), so analytic gradients match central finite
    differences.
    """
    params = HeadParams(theta, arch)
    n = len(feats)
    total = 0.0
    grad = np.zeros_like(theta)
    for i in range(n):
        rng = dropout_rngs[i] if dropout_rngs is not None else None
        logits, cache = _forward(feats[i], params, dropout_rng=rng)
        flat = logits.ravel()
        idx = pixel_idx[i]
        z = flat[idx]
        y = targets[i].ravel()[idx].astype(np.float64)
        # stable BCE: max(z,0) - z*y + log(1 + exp(-|z|))
        total += float(
            np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z))))
        )
        dflat = np.zeros_like(flat)
        dflat[idx] = (_sigmoid(z) - y) / (idx.size * n)
        grad += _backward(dflat.reshape(logits.shape), cache, arch)
    loss = total / n + 0.5 * weight_decay * float(theta @ theta)
    grad += weight_decay * theta
    return loss, grad


def _val_iou(params, feats, gts):
    scores = []
    for f, g in zip(feats, gts):
        logits, _ = _forward(f, params, dropout_rng=None)
        pred = BinaryMask((logits > 0.0).astype(np.uint8))
        scores.append(iou(pred, BinaryMask(g)))
    return float(np.mean(scores))


def train_map(
    train: list[TrainingExample],
    val: list[TrainingExample],
    backbone: PromptableBackbone,
    config: HeadConfig,
) -> tuple[HeadParams, TrainRecord]:
    """MAP-fit the head with Adam and early stopping on validation IoU.

    Fully seed-deterministic: parameter init, batch order, pixel
    subsampling, and dropout all come from one generator seeded with
    ``config.seed``. Returns the best-validation parameters.
    """
    if not train or not val:
        raise ContractViolation("train and validation splits must be nonempty")
    arch = config.arch
    rng = np.random.default_rng(config.seed)
    params = init_params(arch, config.seed)
    theta = params.theta.copy()

    train_feats = [backbone.compute_features(ex.image, ex.prompts).values for ex in train]
    train_gts = [ex.gt_mask.values for ex in train]
    val_feats = [backbone.compute_features(ex.image, ex.prompts).values for ex in val]
    val_gts = [ex.gt_mask.values for ex in val]

    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    record = TrainRecord()
    best_iou = -np.inf
    best_theta = theta.copy()
    stall = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train))
        epoch_loss = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            feats, gts, pix, drngs = [], [], [], []
            for j in batch:
                n_pix = train_gts[j].size
                take = min(MAX_LOSS_PIXELS, n_pix)
                pix.append(rng.choice(n_pix, size=take, replace=False))
                feats.append(train_feats[j])
                gts.append(train_gts[j])
                drngs.append(
                    np.random.default_rng(rng.integers(2**63))
                    if config.dropout_rate > 0
                    else None
                )
            loss, grad = training_loss_and_grad(
                theta, arch, feats, gts, pix, config.weight_decay, dropout_rngs=drngs
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            epoch_loss.append(loss)
            step += 1
            m = _ADAM_B1 * m + (1 - _ADAM_B1) * grad
            v = _ADAM_B2 * v + (1 - _ADAM_B2) * grad * grad
            mhat = m / (1 - _ADAM_B1**step)
            vhat = v / (1 - _ADAM_B2**step)
            theta = theta - config.learning_rate * mhat / (np.sqrt(vhat) + _ADAM_EPS)

        cur = HeadParams(theta, arch)
        viou = _val_iou(cur, val_feats, val_gts)
        record.train_loss.append(float(np.mean(epoch_loss)))
        record.val_iou.append(viou)
        if viou > best_iou + config.min_delta:
            best_iou = viou
            best_theta = theta.copy()
            stall = 0
        else:
            stall += 1
        if stall >= config.patience:
            record.stop_epoch = epoch
            record.stop_reason = "early-stop"
            break
    else:
        record.stop_epoch = config.max_epochs
        record.stop_reason = "max-epochs"
    return HeadParams(best_theta, arch), record


# -------------------------------------------------------- Laplace fit and sampling


def _valid_conv_batch(x: np.ndarray, wgt: np.ndarray, b: np.ndarray):
    """Valid (unpadded) convolution over a batch: (N,S,S,Cin) -> (cols, output).

    Output shape is (N, S-k+1, S-k+1, Cout); cols is the patch matrix the
    backward pass reuses.
    """
    k = wgt.shape[0]
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (N, m, m, C, k, k)
    n, m = win.shape[0], win.shape[1]
    cols = np.ascontiguousarray(
        win.transpose(0, 1, 2, 4, 5, 3).reshape(n, m * m, -1)
    )
    z = cols @ wgt.reshape(-1, wgt.shape[-1]) + b
    return cols, z.reshape(n, m, m, wgt.shape[-1])


def per_pixel_loglik_sq_grads(
    params: HeadParams, features: np.ndarray, gt: np.ndarray, pixels: np.ndarray
) -> np.ndarray:
    """Sum over the given pixels of squared per-pixel log-likelihood gradients.

    Exploits the head's finite receptive field: each output pixel is
    reproduced exactly by valid convolutions over its local patch, so
    per-pixel gradients come from one batched backward pass over tiny
    patch pyramids instead of a full-image pass per pixel. Grid positions
    falling outside the image are zeroed after every hidden layer, which
    reproduces the full network's per-layer zero padding at the borders.
    """
    arch = params.arch
    k = arch.kernel_size
    pad = k // 2
    radius = arch.num_layers * pad
    layers = unpack_params(params)
    h, w = features.shape[:2]
    rows, cols_idx = pixels // w, pixels % w

    padded = np.pad(features, ((radius, radius), (radius, radius), (0, 0)))
    side = 2 * radius + 1
    win = sliding_window_view(padded, (side, side), axis=(0, 1))
    patches = np.ascontiguousarray(
        win[rows, cols_idx].transpose(0, 2, 3, 1)
    )  # (N, side, side, Cin)

    def level_mask(level: int) -> np.ndarray:
        """In-image indicator for the level-th pyramid grid, per sample."""
        s = side - 2 * pad * level
        offs = np.arange(s) - (radius - pad * level)
        rr = rows[:, None] + offs[None, :]
        cc = cols_idx[:, None] + offs[None, :]
        rv = (rr >= 0) & (rr < h)
        cv = (cc >= 0) & (cc < w)
        return (rv[:, :, None] & cv[:, None, :]).astype(np.float64)

    # forward through valid convolutions, keeping caches
    x = patches
    cache = []
    z = None
    for li, (wgt, b) in enumerate(layers):
        cols, z = _valid_conv_batch(x, wgt, b)
        entry = {"cols": cols, "w": wgt, "in_shape": x.shape}
        cache.append(entry)
        if li < len(layers) - 1:
            gate = level_mask(li + 1)[:, :, :, None] * (z > 0.0)
            entry["gate"] = gate
            x = np.maximum(z, 0.0) * gate
    logits = z[:, 0, 0, 0]
    p = _sigmoid(logits)
    y = gt.ravel()[pixels].astype(np.float64)
    # d(log p(y|z))/dz per pixel
    dz = (y - p).reshape(-1, 1, 1, 1)

    sq = np.zeros(params.theta.size, dtype=np.float64)
    offsets = _param_offsets(arch)
    delta = dz
    for li in range(len(layers) - 1, -1, -1):
        c = cache[li]
        wgt = c["w"]
        n, m = delta.shape[0], delta.shape[1]
        dflat = delta.reshape(n, m * m, wgt.shape[-1])
        dw = np.einsum("nmi,nmo->nio", c["cols"], dflat)
        db = dflat.sum(axis=1)
        w_off, b_off, nxt = offsets[li]
        sq[w_off:b_off] += (dw**2).sum(axis=0).ravel()
        sq[b_off:nxt] += (db**2).sum(axis=0)
        if li == 0:
            break
        dcols = dflat @ wgt.reshape(-1, wgt.shape[-1]).T
        s_in = c["in_shape"][1]
        c_in = c["in_shape"][3]
        dx = np.zeros((n, s_in, s_in, c_in))
        dcr = dcols.reshape(n, m, m, k, k, c_in)
        for ky in range(k):
            for kx in range(k):
                dx[:, ky : ky + m, kx : kx + m, :] += dcr[:, :, :, ky, kx, :]
        delta = dx * cache[li - 1]["gate"]
    return sq


def _param_offsets(arch: HeadArch) -> list[tuple[int, int, int]]:
    """Per layer: (weight offset, bias offset, end offset) into the flat vector."""
    out = []
    pos = 0
    for w_shape, b_shape in arch.layer_shapes():
        n_w = int(np.prod(w_shape))
        out.append((pos, pos + n_w, pos + n_w + b_shape[0]))
        pos += n_w + b_shape[0]
    return out


def fit_laplace(
    map_params: HeadParams,
    subset: list[TrainingExample],
    backbone: PromptableBackbone,
    prior_precision: float = 1.0,
    seed: int = 0,
    max_pixels: int = MAX_LOSS_PIXELS,
) -> LaplacePosterior:
    """Diagonal empirical-Fisher Laplace fit around the MAP parameters.

    precision_i = prior_precision + sum over sampled pixels of g_i^2,
    with g the per-pixel log-likelihood gradient at the MAP (dropout off).
    At most ``max_pixels`` pixels per example, drawn with ``seed``.
    """
    if not subset:
        raise ContractViolation("Laplace subset must be nonempty")
    if prior_precision <= 0:
        raise ContractViolation("prior precision must be positive")
    rng = np.random.default_rng(seed)
    precision = np.full(map_params.theta.size, prior_precision, dtype=np.float64)
    for ex in subset:
        feats = backbone.compute_features(ex.image, ex.prompts).values
        n_pix = feats.shape[0] * feats.shape[1]
        take = min(max_pixels, n_pix)
        pixels = np.sort(rng.choice(n_pix, size=take, replace=False))
        precision += per_pixel_loglik_sq_grads(
            map_params, feats, ex.gt_mask.values, pixels
        )
    return LaplacePosterior(map_params, precision, subset_size=len(subset))


def sample_posterior(
    posterior: LaplacePosterior, k: int, seed: int
) -> list[HeadParams]:
    """Draw k independent parameter vectors from the diagonal Gaussian."""
    if k < 1:
        raise ContractViolation("sample count must be >= 1")
    rng = np.random.default_rng(seed)
    prec = np.minimum(posterior.precision, _PRECISION_CLAMP)
    std = 1.0 / np.sqrt(prec)
    eps = rng.standard_normal((k, posterior.mean.theta.size))
    return [
        HeadParams(posterior.mean.theta + eps[i] * std, posterior.mean.arch)
        for i in range(k)
    ]


# ------------------------------------------------------------ interop resizing


def resize_image(image, size: int = 512):
    """Bilinear resize to size x size, for interop with fixed-size pipelines.

    The toy pipeline runs at native scene resolution and never calls this.
    """
    from scipy import ndimage

    from .core import Image

    h, w = image.shape
    if (h, w) == (size, size):
        return image
    zoom = (size / h, size / w)
    out = ndimage.zoom(image.values, zoom, order=1, mode="nearest", grid_mode=True)
    return Image(np.clip(out, 0.0, 1.0))


def resize_mask(mask, size: int = 512):
    """Nearest-neighbor resize for masks (labels must stay binary)."""
    from scipy import ndimage

    h, w = mask.shape
    if (h, w) == (size, size):
        return mask
    zoom = (size / h, size / w)
    out = ndimage.zoom(mask.values, zoom, order=0, mode="nearest", grid_mode=True)
    return BinaryMask(out.astype(np.uint8))


# --------------------------------------------------------------------- file I/O


def save_head(params: HeadParams, path) -> None:
    """Binary head file: magic, layer count, channel plan, count, f32 params."""
    arch = params.arch
    plan = arch.channel_plan
    buf = bytearray()
    buf += HEAD_MAGIC
    buf += struct.pack("<I", arch.num_layers)
    for c in plan:
        buf += struct.pack("<I", c)
    buf += struct.pack("<Q", params.theta.size)
    buf += params.theta.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def _parse_head(data: bytes) -> tuple[HeadParams, int]:
    if data[:4] != HEAD_MAGIC:
        raise ValueError("bad head file magic")
    pos = 4
    (n_layers,) = struct.unpack_from("<I", data, pos)
    pos += 4
    plan = struct.unpack_from(f"<{n_layers + 1}I", data, pos)
    pos += 4 * (n_layers + 1)
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    theta = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
    pos += 4 * count
    arch = HeadArch(in_channels=plan[0], hidden_channels=tuple(plan[1:-1]))
    return HeadParams(theta, arch), pos


def load_head(path) -> HeadParams:
    params, _ = _parse_head(Path(path).read_bytes())
    return params


def save_posterior(posterior: LaplacePosterior, path) -> None:
    """Head block followed by BLP1 magic and the f32 precision vector."""
    save_head(posterior.mean, path)
    with open(path, "ab") as fh:
        fh.write(POSTERIOR_MAGIC)
        fh.write(posterior.precision.astype("<f4").tobytes())


def load_posterior(path) -> LaplacePosterior:
    data = Path(path).read_bytes()
    mean, pos = _parse_head(data)
    if data[pos : pos + 4] != POSTERIOR_MAGIC:
        raise ValueError("bad posterior file magic")
    pos += 4
    precision = np.frombuffer(
        data, dtype="<f4", count=mean.theta.size, offset=pos
    ).astype(np.float64)
    return LaplacePosterior(mean, precision)
