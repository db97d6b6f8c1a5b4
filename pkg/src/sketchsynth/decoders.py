"""Sketch decoder (autoregressive LSTM with a bivariate-mixture offset head
and categorical pen head) and photo decoder (transposed CNN), plus their
reconstruction losses.

The decoder is teacher-forced during training: step i consumes the previous
target point (a (0,0,1,0,0) start token at i=0) concatenated with the
latent code, and its head predicts a distribution over target point i.
The per-sketch loss averages the masked offset negative log-likelihood and
the pen cross-entropy over the padded length::

    (1 / n_max) * (sum_{i<n_s} offset_nll_i + sum_{i<n_max} pen_ce_i)

Padding rows beyond n_s contribute only through the pen term, which is what
teaches the decoder to emit the end-of-sketch state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, as_tensor
from .model import Model, decoder_kernel_plan, encoder_spatial_trail
from .nn import channel_bias, conv2d_transpose, dense, instance_norm, lstm_cell
from .raster import RasterImage
from .strokes import StrokeSequence

__all__ = [
    "GmmParams", "SketchHeads", "START_TOKEN",
    "decode_sketch_teacher_forced", "decode_sketch_heads",
    "gmm_nll", "pen_ce", "rnn_loss", "rnn_loss_from_heads",
    "decode_photo", "photo_l2_loss",
]

START_TOKEN = np.array([0.0, 0.0, 1.0, 0.0, 0.0])

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmParams:
    """Mixture parameters for one decoding step.

    pi is a simplex over mixtures; sigma_x/sigma_y are positive scales,
    rho the correlation in (-1, 1); pen_logits are the three unnormalized
    pen-state scores.
    """

    pi: Tensor
    mu_x: Tensor
    mu_y: Tensor
    sigma_x: Tensor
    sigma_y: Tensor
    rho: Tensor
    pen_logits: Tensor

    def __post_init__(self):
        for name in ("pi", "mu_x", "mu_y", "sigma_x", "sigma_y", "rho", "pen_logits"):
            setattr(self, name, as_tensor(getattr(self, name)))
        self.validate()

    @property
    def mixtures(self) -> int:
        return self.pi.shape[0]

    def validate(self) -> None:
        m = self.pi.shape
        for name in ("mu_x", "mu_y", "sigma_x", "sigma_y", "rho"):
            if getattr(self, name).shape != m:
                raise ShapeError(f"GmmParams field {name} has shape "
                                 f"{getattr(self, name).shape}, expected {m}")
        if self.pen_logits.shape != (3,):
            raise ShapeError(f"pen_logits must have shape (3,), got {self.pen_logits.shape}")
        pi = self.pi.data
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must form a simplex")
        if np.any(self.sigma_x.data <= 0) or np.any(self.sigma_y.data <= 0):
            raise ValueError("mixture scales must be positive")
        if np.any(np.abs(self.rho.data) >= 1):
            raise ValueError("mixture correlations must lie strictly inside (-1, 1)")


@dataclass
class SketchHeads:
    """Teacher-forced decoder outputs for a whole (T, B) batch, flattened to
    (T*B, .) rows.  raw_sigma_* are the pre-exp log scales, kept so the loss
    can use log(sigma) exactly."""

    pi_logits: Tensor
    mu_x: Tensor
    mu_y: Tensor
    raw_sigma_x: Tensor
    raw_sigma_y: Tensor
    sigma_x: Tensor
    sigma_y: Tensor
    rho: Tensor
    pen_logits: Tensor
    t_len: int
    batch: int


def _latent_to_tensor(z, model: Model) -> Tensor:
    if hasattr(z, "z"):
        z = z.z
    z = as_tensor(z)
    if z.ndim == 1:
        z = ad.reshape(z, (1, z.shape[0]))
    if z.ndim != 2 or z.shape[1] != model.config.latent_dim:
        raise ShapeError(f"latent shape {z.shape} does not match "
                         f"latent_dim={model.config.latent_dim}")
    return z


def decode_sketch_heads(z, inputs: np.ndarray, model: Model) -> SketchHeads:
    """Run the decoder over teacher-forced inputs (T, B, 5).

    The initial LSTM state is tanh(FC(z)) split into (h0, c0); every step
    consumes [input point; z].
    """
    cfg = model.config
    z = _latent_to_tensor(z, model)
    t_len, batch, _ = inputs.shape
    if z.shape[0] != batch:
        raise ShapeError(f"latent batch {z.shape[0]} != input batch {batch}")

    hc = ad.tanh(dense(z, model["sketch_dec/init/w"], model["sketch_dec/init/b"]))
    h, c = ad.split(hc, [cfg.dec_hidden, cfg.dec_hidden], axis=1)
    hs = []
    for t in range(t_len):
        x_t = ad.concat([Tensor(inputs[t]), z], axis=1)
        h, c = lstm_cell(x_t, h, c, model["sketch_dec/cell/w"], model["sketch_dec/cell/b"])
        hs.append(h)
    flat = ad.reshape(ad.stack(hs, axis=0), (t_len * batch, cfg.dec_hidden))
    raw = dense(flat, model["sketch_dec/head/w"], model["sketch_dec/head/b"])
    m = cfg.mixtures
    pi_logits, mu_x, mu_y, rsx, rsy, rrho, pen = ad.split(
        raw, [m, m, m, m, m, m, 3], axis=1)
    return SketchHeads(
        pi_logits=pi_logits, mu_x=mu_x, mu_y=mu_y,
        raw_sigma_x=rsx, raw_sigma_y=rsy,
        sigma_x=ad.exp(rsx), sigma_y=ad.exp(rsy),
        rho=ad.tanh(rrho), pen_logits=pen,
        t_len=t_len, batch=batch)


def teacher_inputs(targets: np.ndarray) -> np.ndarray:
    """Shift targets right by one step and prepend the start token."""
    t_len, batch, _ = targets.shape
    inputs = np.empty_like(targets)
    inputs[0] = START_TOKEN
    inputs[1:] = targets[:-1]
    return inputs


def heads_step_params(heads: SketchHeads, step: int, item: int = 0) -> GmmParams:
    """Extract one (step, batch item) slice as a GmmParams."""
    row = step * heads.batch + item
    m = heads.pi_logits.shape[1]

    def row_of(t: Tensor) -> Tensor:
        return ad.reshape(ad.split(t, [row, 1, t.shape[0] - row - 1], axis=0)[1],
                          (t.shape[1],))

    return GmmParams(
        pi=ad.softmax(row_of(heads.pi_logits)),
        mu_x=row_of(heads.mu_x), mu_y=row_of(heads.mu_y),
        sigma_x=row_of(heads.sigma_x), sigma_y=row_of(heads.sigma_y),
        rho=row_of(heads.rho), pen_logits=row_of(heads.pen_logits))


def decode_sketch_teacher_forced(z, target: StrokeSequence, model: Model) -> list[GmmParams]:
    """Teacher-forced decode of a single padded target; one GmmParams per step."""
    cfg = model.config
    if target.n_max != cfg.max_seq_len:
        raise ShapeError(f"target has {target.n_max} rows; pad to n_max="
                         f"{cfg.max_seq_len} first")
    inputs = teacher_inputs(target.array[:, None, :])
    heads = decode_sketch_heads(z, inputs, model)
    return [heads_step_params(heads, t) for t in range(cfg.max_seq_len)]


def gmm_nll(g: GmmParams, dx: float, dy: float) -> Tensor:
    """Negative log-likelihood of one offset under the bivariate mixture.

    Stabilized by factoring out the largest component log-density, which
    also keeps zero-weight components harmless.
    """
    g.validate()
    log_n = _component_log_density(g.mu_x, g.mu_y, ad.log(g.sigma_x),
                                   ad.log(g.sigma_y), g.rho, float(dx), float(dy))
    shift = float(np.max(log_n.data))
    weighted = ad.sum_(ad.mul(g.pi, ad.exp(ad.sub(log_n, shift))))
    return ad.neg(ad.add(ad.log(weighted), shift))


def _component_log_density(mu_x, mu_y, log_sx, log_sy, rho, dx, dy):
    u = ad.mul(ad.sub(dx, mu_x), ad.exp(ad.neg(log_sx)))
    v = ad.mul(ad.sub(dy, mu_y), ad.exp(ad.neg(log_sy)))
    one_minus_r2 = ad.sub(1.0, ad.mul(rho, rho))
    quad = ad.sub(ad.add(ad.mul(u, u), ad.mul(v, v)),
                  ad.mul(ad.mul(2.0, rho), ad.mul(u, v)))
    return ad.sub(
        ad.neg(ad.add(ad.add(LOG_2PI, ad.add(log_sx, log_sy)),
                      ad.mul(ad.log(one_minus_r2), 0.5))),
        ad.div(quad, ad.mul(one_minus_r2, 2.0)))


def pen_ce(pen_logits, pen_onehot) -> Tensor:
    """Categorical cross-entropy of the 3-way pen state."""
    pen_logits = as_tensor(pen_logits)
    p = np.asarray(pen_onehot, dtype=np.float64)
    if pen_logits.shape != (3,) or p.shape != (3,):
        raise ShapeError(f"pen_ce expects 3 logits and a 3-way one-hot, got "
                         f"{pen_logits.shape} and {p.shape}")
    if sorted(p.tolist()) != [0.0, 0.0, 1.0]:
        raise ValueError(f"pen state {p.tolist()} is not one-hot")
    return ad.sub(ad.logsumexp(pen_logits, axis=-1),
                  ad.sum_(ad.mul(pen_logits, Tensor(p))))


def rnn_loss(gs: list[GmmParams], target: StrokeSequence) -> Tensor:
    """Per-sketch reconstruction loss from per-step mixture parameters.

    Offset terms are masked beyond the real length; pen terms run over the
    full padded length; the sum is divided by n_max.
    """
    if len(gs) != target.n_max:
        raise ShapeError(f"got {len(gs)} step parameters for n_max={target.n_max}")
    total = Tensor(0.0)
    for i, g in enumerate(gs):
        row = target.array[i]
        if i < target.n_s:
            total = ad.add(total, gmm_nll(g, row[0], row[1]))
        total = ad.add(total, pen_ce(g.pen_logits, row[2:]))
    return ad.mul(total, 1.0 / target.n_max)


def _per_row_loss_terms(heads: SketchHeads, targets: np.ndarray,
                        lengths: np.ndarray) -> tuple[Tensor, Tensor, np.ndarray]:
    """Per-row mixture log-likelihoods, pen cross-entropies and offset mask
    for a flattened (T*B,) batch."""
    t_len, batch = heads.t_len, heads.batch
    if targets.shape != (t_len, batch, 5):
        raise ShapeError(f"targets shape {targets.shape} != ({t_len}, {batch}, 5)")
    rows = t_len * batch
    m = heads.pi_logits.shape[1]
    flat = targets.reshape(rows, 5)
    dx = np.broadcast_to(flat[:, 0:1], (rows, m)).copy()
    dy = np.broadcast_to(flat[:, 1:2], (rows, m)).copy()

    log_n = _component_log_density(
        heads.mu_x, heads.mu_y, heads.raw_sigma_x, heads.raw_sigma_y, heads.rho,
        Tensor(dx), Tensor(dy))
    mix_ll = ad.sub(ad.logsumexp(ad.add(heads.pi_logits, log_n), axis=-1),
                    ad.logsumexp(heads.pi_logits, axis=-1))
    step_idx = np.repeat(np.arange(t_len), batch)
    batch_idx = np.tile(np.arange(batch), t_len)
    mask = (step_idx < np.asarray(lengths)[batch_idx]).astype(np.float64)

    pen_term = ad.sub(ad.logsumexp(heads.pen_logits, axis=-1),
                      ad.sum_(ad.mul(heads.pen_logits, Tensor(flat[:, 2:])), axis=1))
    return mix_ll, pen_term, mask


def rnn_loss_from_heads(heads: SketchHeads, targets: np.ndarray,
                        lengths: np.ndarray) -> Tensor:
    """Vectorized batch mean of the per-sketch reconstruction loss.

    Must agree with looping rnn_loss over the batch; the tests hold the two
    paths together.
    """
    mix_ll, pen_term, mask = _per_row_loss_terms(heads, targets, lengths)
    offset_term = ad.neg(ad.sum_(ad.mul(mix_ll, Tensor(mask))))
    return ad.mul(ad.add(offset_term, ad.sum_(pen_term)),
                  1.0 / (heads.t_len * heads.batch))


def rnn_loss_from_heads_grouped(heads: SketchHeads, targets: np.ndarray,
                                lengths: np.ndarray,
                                group_sizes: list[int]) -> list[Tensor]:
    """Per-group batch means when independent sub-batches were decoded
    together; groups partition the batch axis in order."""
    if sum(group_sizes) != heads.batch:
        raise ShapeError(f"groups {group_sizes} do not cover batch {heads.batch}")
    mix_ll, pen_term, mask = _per_row_loss_terms(heads, targets, lengths)
    batch_idx = np.tile(np.arange(heads.batch), heads.t_len)
    losses = []
    offsets = np.cumsum([0] + list(group_sizes))
    for g, size in enumerate(group_sizes):
        member = (batch_idx >= offsets[g]) & (batch_idx < offsets[g + 1])
        offset_term = ad.neg(ad.sum_(ad.mul(mix_ll, Tensor(mask * member))))
        pen_sum = ad.sum_(ad.mul(pen_term, Tensor(member.astype(np.float64))))
        losses.append(ad.mul(ad.add(offset_term, pen_sum),
                             1.0 / (heads.t_len * size)))
    return losses


def decode_photo(z, model: Model) -> Tensor:
    """Decode latents into (B, C, H, W) images with values in (0, 1)."""
    cfg = model.config
    z = _latent_to_tensor(z, model)
    trail = encoder_spatial_trail(cfg)
    plan = decoder_kernel_plan(cfg)
    h = dense(z, model["photo_dec/fc/w"], model["photo_dec/fc/b"])
    h = ad.reshape(h, (z.shape[0], cfg.conv_channels[-1], trail[-1], trail[-1]))
    for i, (k, _, _) in enumerate(plan, start=1):
        h = conv2d_transpose(h, model[f"photo_dec/deconv{i}/w"], stride=2, pad=1)
        if i == len(plan):
            h = ad.sigmoid(channel_bias(h, model[f"photo_dec/deconv{i}/b"]))
        else:
            h = ad.relu(instance_norm(h, model[f"photo_dec/in{i}/gamma"],
                                      model[f"photo_dec/in{i}/beta"]))
    return h


def photo_l2_loss(pred, target) -> Tensor:
    """Mean squared error over all pixels."""
    if isinstance(pred, RasterImage):
        pred = Tensor(pred.to_chw()[None])
    if isinstance(target, RasterImage):
        target = Tensor(target.to_chw()[None])
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"photo_l2_loss: shapes {pred.shape} and {target.shape} differ")
    diff = ad.sub(pred, target)
    return ad.mean(ad.mul(diff, diff))
