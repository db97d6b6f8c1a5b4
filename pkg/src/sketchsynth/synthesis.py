"""Autoregressive sketch generation from a photo.

Temperature tau in [0, 1] controls randomness everywhere at once: mixture
and pen logits are divided by tau before the categorical draw and the
offset variances are multiplied by tau.  tau = 0 degenerates to argmax
mixture/pen and the component mean, making the whole photo->sketch path a
pure function of the inputs.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .decoders import GmmParams, START_TOKEN
from .encoders import encode_photo
from .model import Model
from .nn import dense, lstm_cell
from .strokes import Point5, StrokeSequence

__all__ = ["sample_gmm", "sample_sketch", "sample_variations"]

SIGMA_FLOOR = 1e-4


def _categorical(probs: np.ndarray, rng) -> int:
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def sample_gmm(g: GmmParams, temperature: float, rng=None) -> Point5:
    """Draw one stroke-5 point from a decoder step distribution."""
    g.validate()
    if not 0.0 <= temperature <= 1.0:
        raise ValueError(f"temperature must lie in [0, 1], got {temperature}")
    pi = g.pi.data
    pen_logits = g.pen_logits.data

    if temperature == 0.0:
        j = int(np.argmax(pi))
        pen = int(np.argmax(pen_logits))
        dx, dy = float(g.mu_x.data[j]), float(g.mu_y.data[j])
    else:
        if rng is None:
            raise ValueError("sampling with temperature > 0 requires an rng")
        with np.errstate(divide="ignore"):
            scaled = np.log(pi) / temperature
        scaled -= scaled.max()
        pi_t = np.exp(scaled)
        pi_t /= pi_t.sum()
        j = _categorical(pi_t, rng)
        sx = max(float(g.sigma_x.data[j]), SIGMA_FLOOR) * np.sqrt(temperature)
        sy = max(float(g.sigma_y.data[j]), SIGMA_FLOOR) * np.sqrt(temperature)
        rho = float(g.rho.data[j])
        e1, e2 = rng.standard_normal(2)
        dx = float(g.mu_x.data[j]) + sx * e1
        dy = float(g.mu_y.data[j]) + sy * (rho * e1 + np.sqrt(1.0 - rho * rho) * e2)
        pen_scaled = pen_logits / temperature
        pen_scaled -= pen_scaled.max()
        pen_probs = np.exp(pen_scaled)
        pen_probs /= pen_probs.sum()
        pen = _categorical(pen_probs, rng)

    state = [0, 0, 0]
    state[pen] = 1
    return Point5(dx, dy, *state)


def _step_params(model: Model, h: Tensor) -> GmmParams:
    cfg = model.config
    raw = dense(h, model["sketch_dec/head/w"], model["sketch_dec/head/b"]).data[0]
    m = cfg.mixtures
    chunks = np.split(raw, [m, 2 * m, 3 * m, 4 * m, 5 * m, 6 * m])
    pi_logits, mu_x, mu_y, rsx, rsy, rrho = chunks[:6]
    pi = np.exp(pi_logits - pi_logits.max())
    pi /= pi.sum()
    return GmmParams(pi=pi, mu_x=mu_x, mu_y=mu_y,
                     sigma_x=np.exp(rsx), sigma_y=np.exp(rsy),
                     rho=np.tanh(rrho), pen_logits=chunks[6])


def sample_sketch(photo, model: Model, temperature: float = 0.4, rng=None,
                  resample_latent: bool = False) -> StrokeSequence:
    """Generate one sketch for a photo, feeding each sampled point back in.

    The latent code is the encoder mean unless resample_latent draws fresh
    bottleneck noise.  Decoding stops at the first end-of-sketch state or
    after n_max points.
    """
    cfg = model.config
    if resample_latent and rng is None:
        raise ValueError("resample_latent requires an rng")
    with no_grad():
        eps = rng.standard_normal(cfg.latent_dim) if resample_latent else None
        code = encode_photo(photo, model, eps=eps)
        z = code.z
        hc = ad.tanh(dense(z, model["sketch_dec/init/w"], model["sketch_dec/init/b"]))
        h, c = ad.split(hc, [cfg.dec_hidden, cfg.dec_hidden], axis=1)

        prev = START_TOKEN
        rows = []
        for _ in range(cfg.max_seq_len):
            x_t = ad.concat([Tensor(prev[None, :]), z], axis=1)
            h, c = lstm_cell(x_t, h, c, model["sketch_dec/cell/w"],
                             model["sketch_dec/cell/b"])
            point = sample_gmm(_step_params(model, h), temperature, rng)
            rows.append((point.dx, point.dy, point.p1, point.p2, point.p3))
            prev = np.asarray(rows[-1], dtype=np.float64)
            if point.p3 == 1:
                break
    return StrokeSequence(np.asarray(rows, dtype=np.float64), len(rows))


def sample_variations(photo, model: Model, k: int, temperature: float = 0.4,
                      rng=None) -> list[StrokeSequence]:
    """k sketches for one photo with independently resampled latent codes."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if rng is None:
        raise ValueError("sample_variations requires an rng")
    return [sample_sketch(photo, model, temperature, rng, resample_latent=True)
            for _ in range(k)]
