"""Photo and sketch encoders with a shared variational bottleneck.

Both encoders project onto (mu, sigma_hat); sigma_hat is a log-variance so
the code z = mu + exp(sigma_hat / 2) * eps always has positive scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, as_tensor
from .model import Model
from .nn import bilstm, channel_bias, conv2d, dense, instance_norm
from .raster import RasterImage
from .strokes import StrokeSequence

__all__ = ["LatentCode", "reparameterize", "encode_photo", "encode_sketch",
           "kl_loss", "photo_mu_sigma", "sketch_mu_sigma"]


@dataclass
class LatentCode:
    """Variational bottleneck sample: mu, log-variance, and the drawn code."""

    mu: Tensor
    sigma_hat: Tensor
    z: Tensor
    eps: np.ndarray


def reparameterize(mu, sigma_hat, eps) -> Tensor:
    """z = mu + exp(sigma_hat / 2) * eps."""
    mu, sigma_hat = as_tensor(mu), as_tensor(sigma_hat)
    eps = np.asarray(eps, dtype=np.float64)
    if mu.shape != sigma_hat.shape or eps.shape != mu.shape:
        raise ShapeError(
            f"reparameterize: shapes mu={mu.shape} sigma_hat={sigma_hat.shape} "
            f"eps={eps.shape} must match")
    return ad.add(mu, ad.mul(ad.exp(ad.mul(sigma_hat, 0.5)), Tensor(eps)))


def _normalize_eps(eps, batch: int, dim: int) -> np.ndarray:
    if eps is None:
        return np.zeros((batch, dim))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 0:
        return np.full((batch, dim), float(eps))
    if eps.shape == (dim,):
        return np.tile(eps, (batch, 1))
    if eps.shape == (batch, dim):
        return eps
    raise ShapeError(f"eps shape {eps.shape} does not match ({batch}, {dim})")


def photo_mu_sigma(x: Tensor, model: Model) -> tuple[Tensor, Tensor]:
    """Run the CNN trunk on an (B, C, H, W) tensor up to (mu, sigma_hat)."""
    cfg = model.config
    if x.ndim != 4 or x.shape[1:] != (cfg.image_channels, cfg.image_side, cfg.image_side):
        raise ShapeError(
            f"photo input {x.shape} does not match configured "
            f"({cfg.image_channels}, {cfg.image_side}, {cfg.image_side})")
    h = x
    for i in range(1, 6):
        h = conv2d(h, model[f"photo_enc/conv{i}/w"], stride=2, pad=1)
        if i == 1:
            h = channel_bias(h, model["photo_enc/conv1/b"])
        else:
            h = instance_norm(h, model[f"photo_enc/in{i}/gamma"],
                              model[f"photo_enc/in{i}/beta"])
        h = ad.relu(h)
    flat = ad.reshape(h, (x.shape[0], -1))
    h = ad.relu(dense(flat, model["photo_enc/fc1/w"], model["photo_enc/fc1/b"]))
    out = dense(h, model["photo_enc/fc2/w"], model["photo_enc/fc2/b"])
    mu, sigma_hat = ad.split(out, [cfg.latent_dim, cfg.latent_dim], axis=1)
    return mu, sigma_hat


def sketch_mu_sigma(y: Tensor, model: Model) -> tuple[Tensor, Tensor]:
    """Run the bidirectional LSTM trunk on a (T, B, 5) tensor."""
    cfg = model.config
    if y.ndim != 3 or y.shape[0] != cfg.max_seq_len or y.shape[2] != 5:
        raise ShapeError(
            f"sketch input {y.shape} is not padded to ({cfg.max_seq_len}, B, 5)")
    h = bilstm(y, model["sketch_enc/fwd/w"], model["sketch_enc/fwd/b"],
               model["sketch_enc/bwd/w"], model["sketch_enc/bwd/b"])
    out = dense(h, model["sketch_enc/fc/w"], model["sketch_enc/fc/b"])
    mu, sigma_hat = ad.split(out, [cfg.latent_dim, cfg.latent_dim], axis=1)
    return mu, sigma_hat


def _photo_to_tensor(photo, model: Model) -> Tensor:
    if isinstance(photo, RasterImage):
        return Tensor(photo.to_chw()[None])
    if isinstance(photo, Tensor):
        return photo
    return Tensor(np.asarray(photo, dtype=np.float64))


def _sketch_to_tensor(sketch, model: Model) -> Tensor:
    if isinstance(sketch, StrokeSequence):
        if sketch.n_max != model.config.max_seq_len:
            raise ShapeError(
                f"sketch has {sketch.n_max} rows; pad to n_max="
                f"{model.config.max_seq_len} first")
        return Tensor(sketch.array[:, None, :])
    if isinstance(sketch, Tensor):
        return sketch
    return Tensor(np.asarray(sketch, dtype=np.float64))


def encode_photo(photo, model: Model, eps=None) -> LatentCode:
    """Encode a photo (RasterImage or (B,C,H,W) array) into a latent code.

    eps=None uses zero noise, so z equals mu (deterministic inference).
    """
    x = _photo_to_tensor(photo, model)
    mu, sigma_hat = photo_mu_sigma(x, model)
    eps = _normalize_eps(eps, x.shape[0], model.config.latent_dim)
    return LatentCode(mu, sigma_hat, reparameterize(mu, sigma_hat, eps), eps)


def encode_sketch(sketch, model: Model, eps=None) -> LatentCode:
    """Encode a padded sketch (StrokeSequence or (n_max,B,5) array)."""
    y = _sketch_to_tensor(sketch, model)
    mu, sigma_hat = sketch_mu_sigma(y, model)
    eps = _normalize_eps(eps, y.shape[1], model.config.latent_dim)
    return LatentCode(mu, sigma_hat, reparameterize(mu, sigma_hat, eps), eps)


def kl_loss(codes: list[LatentCode], form: str = "standard") -> Tensor:
    """Mean divergence of the bottleneck posteriors from the unit Gaussian.

    "standard" computes the mean over codes and dimensions of
    -1/2 (1 + sigma_hat - mu^2 - exp(sigma_hat)), the closed-form KL to
    N(0, I) for a log-variance parameterization.  "printed" evaluates
    -1/2 (1 + sigma_hat^2 - exp(sigma_hat)) instead; it is kept only for
    comparison and is never used in training (it is not a divergence).
    """
    if not codes:
        raise ValueError("kl_loss requires at least one latent code")
    if form not in ("standard", "printed"):
        raise ValueError(f"unknown kl form: {form!r}")
    terms = []
    for code in codes:
        sh = code.sigma_hat
        if form == "standard":
            inner = ad.sub(ad.add(1.0, sh), ad.add(ad.mul(code.mu, code.mu), ad.exp(sh)))
        else:
            inner = ad.sub(ad.add(1.0, ad.mul(sh, sh)), ad.exp(sh))
        terms.append(ad.mul(ad.mean(inner), -0.5))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.mul(total, 1.0 / len(terms))
