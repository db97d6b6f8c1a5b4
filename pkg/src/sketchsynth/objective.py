"""Composed training objective over the four subnets and the optimizer loop.

One batch drives four bottleneck codes: photo->sketch and sketch->photo
(the paired translation losses) plus photo->photo and sketch->sketch (the
within-domain reconstruction shortcut).  The total objective is

    supervised + lambda_shortcut * shortcut + lambda_kl * kl

optimized jointly over every parameter with Adam.  All randomness (batch
selection and bottleneck noise) flows from one generator, so a fixed seed
reproduces a run bit-exactly, and checkpoints carry the generator state so
resumed runs stay on the same trajectory.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .datasets import DatasetError, PhotoSketchPair, make_batch
from .decoders import decode_photo, decode_sketch_heads, photo_l2_loss, \
    rnn_loss_from_heads, rnn_loss_from_heads_grouped, teacher_inputs
from .encoders import LatentCode, kl_loss, photo_mu_sigma, reparameterize, \
    sketch_mu_sigma
from .model import Model, ModelConfig, build_model
from .optim import AdamState, adam_step
from .params import load_arrays, save_arrays

__all__ = [
    "LossWeights", "TrainConfig", "full_scale_profile",
    "shortcut_loss", "supervised_loss", "full_loss", "train_step",
    "train_loop", "pretrain_then_finetune",
    "save_checkpoint", "load_checkpoint",
    "config_to_text", "config_from_text",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_shortcut: float = 1.0
    lambda_kl: float = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.lambda_shortcut) and self.lambda_shortcut >= 0):
            raise ValueError(f"lambda_shortcut must be finite and >= 0, got "
                             f"{self.lambda_shortcut}")
        if not (np.isfinite(self.lambda_kl) and self.lambda_kl >= 0):
            raise ValueError(f"lambda_kl must be finite and >= 0, got {self.lambda_kl}")


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; see full_scale_profile for the published setup."""

    batch_size: int = 16
    iterations: int = 2000
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    seed: int = 0
    n_max: int = 96
    image_side: int = 48
    checkpoint_every: int = 500
    lambda_shortcut: float = 1.0
    lambda_kl: float = 0.01

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0 or self.n_max < 1 \
                or self.image_side < 1 or self.checkpoint_every < 1:
            raise ValueError("TrainConfig sizes must be positive")

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_shortcut, self.lambda_kl)

    def model_config(self, **overrides) -> ModelConfig:
        return ModelConfig(image_side=self.image_side, max_seq_len=self.n_max,
                           **overrides)


def full_scale_profile() -> TrainConfig:
    """The published training regime: 224x224 photos, batch 100, 200k
    iterations per stage, fixed learning rate 1e-4, Adam(0.5, 0.9, 1e-8)."""
    return TrainConfig(batch_size=100, iterations=200_000, image_side=224,
                       n_max=96, checkpoint_every=10_000)


def _draw_eps(rng, batch: int, dim: int) -> np.ndarray:
    if rng is None:
        return np.zeros((batch, dim))
    return rng.standard_normal((batch, dim))


def _code(mu, sigma_hat, eps) -> LatentCode:
    return LatentCode(mu, sigma_hat, reparameterize(mu, sigma_hat, eps), eps)


def shortcut_loss(pairs: list[PhotoSketchPair], model: Model,
                  rng=None) -> tuple[Tensor, dict]:
    """Within-domain reconstruction: sketch->sketch plus photo->photo."""
    if not pairs:
        raise DatasetError("empty batch")
    cfg = model.config
    photos, sketches, lengths = make_batch(pairs, cfg.max_seq_len)
    x, y = Tensor(photos), Tensor(sketches)
    batch = len(pairs)

    mu_s, sh_s = sketch_mu_sigma(y, model)
    z_ss = reparameterize(mu_s, sh_s, _draw_eps(rng, batch, cfg.latent_dim))
    heads = decode_sketch_heads(z_ss, teacher_inputs(sketches), model)
    sketch_term = rnn_loss_from_heads(heads, sketches, lengths)

    mu_p, sh_p = photo_mu_sigma(x, model)
    z_pp = reparameterize(mu_p, sh_p, _draw_eps(rng, batch, cfg.latent_dim))
    photo_term = photo_l2_loss(decode_photo(z_pp, model), x)

    total = ad.add(sketch_term, photo_term)
    return total, {"sketch": sketch_term.item(), "photo": photo_term.item(),
                   "total": total.item()}


def supervised_loss(pairs: list[PhotoSketchPair], model: Model,
                    rng=None) -> tuple[Tensor, dict]:
    """Paired translation: photo->sketch plus sketch->photo."""
    if not pairs:
        raise DatasetError("empty batch")
    cfg = model.config
    photos, sketches, lengths = make_batch(pairs, cfg.max_seq_len)
    x, y = Tensor(photos), Tensor(sketches)
    batch = len(pairs)

    mu_p, sh_p = photo_mu_sigma(x, model)
    z_ps = reparameterize(mu_p, sh_p, _draw_eps(rng, batch, cfg.latent_dim))
    heads = decode_sketch_heads(z_ps, teacher_inputs(sketches), model)
    sketch_term = rnn_loss_from_heads(heads, sketches, lengths)

    mu_s, sh_s = sketch_mu_sigma(y, model)
    z_sp = reparameterize(mu_s, sh_s, _draw_eps(rng, batch, cfg.latent_dim))
    photo_term = photo_l2_loss(decode_photo(z_sp, model), x)

    total = ad.add(sketch_term, photo_term)
    return total, {"sketch": sketch_term.item(), "photo": photo_term.item(),
                   "total": total.item()}


def full_loss(pairs: list[PhotoSketchPair], model: Model,
              weights: LossWeights, rng=None) -> tuple[Tensor, dict]:
    """Total objective; encoder trunks run once and feed all four codes.

    The divergence term covers exactly the four bottleneck codes: one per
    sub-model (photo->sketch, sketch->photo, photo->photo, sketch->sketch).
    """
    if not pairs:
        raise DatasetError("empty batch")
    cfg = model.config
    photos, sketches, lengths = make_batch(pairs, cfg.max_seq_len)
    x, y = Tensor(photos), Tensor(sketches)
    batch = len(pairs)

    mu_p, sh_p = photo_mu_sigma(x, model)
    mu_s, sh_s = sketch_mu_sigma(y, model)
    code_ps = _code(mu_p, sh_p, _draw_eps(rng, batch, cfg.latent_dim))
    code_sp = _code(mu_s, sh_s, _draw_eps(rng, batch, cfg.latent_dim))
    code_pp = _code(mu_p, sh_p, _draw_eps(rng, batch, cfg.latent_dim))
    code_ss = _code(mu_s, sh_s, _draw_eps(rng, batch, cfg.latent_dim))

    # the two sketch decodes (and the two photo decodes) share the decoder
    # weights and targets, so run each decoder once on the doubled batch
    z_both = ad.concat([code_ps.z, code_ss.z], axis=0)
    targets2 = np.concatenate([sketches, sketches], axis=1)
    lengths2 = np.concatenate([lengths, lengths])
    heads = decode_sketch_heads(z_both, teacher_inputs(targets2), model)
    sup_sketch, short_sketch = rnn_loss_from_heads_grouped(
        heads, targets2, lengths2, [batch, batch])

    z_photo = ad.concat([code_sp.z, code_pp.z], axis=0)
    decoded = decode_photo(z_photo, model)
    pred_sp, pred_pp = ad.split(decoded, [batch, batch], axis=0)
    sup_photo = photo_l2_loss(pred_sp, x)
    short_photo = photo_l2_loss(pred_pp, x)

    supervised = ad.add(sup_sketch, sup_photo)
    shortcut = ad.add(short_sketch, short_photo)
    kl = kl_loss([code_ps, code_sp, code_pp, code_ss])

    total = ad.add(supervised,
                   ad.add(ad.mul(shortcut, weights.lambda_shortcut),
                          ad.mul(kl, weights.lambda_kl)))
    breakdown = {
        "l_supervised": supervised.item(),
        "supervised_sketch": sup_sketch.item(),
        "supervised_photo": sup_photo.item(),
        "l_shortcut": shortcut.item(),
        "shortcut_sketch": short_sketch.item(),
        "shortcut_photo": short_photo.item(),
        "l_kl": kl.item(),
        "l_full": total.item(),
    }
    return total, breakdown


def train_step(pairs: list[PhotoSketchPair], model: Model, opt: AdamState,
               weights: LossWeights, rng=None) -> dict:
    """One joint forward/backward/Adam update of all four subnets.

    Non-finite values abort immediately with an error naming the first op
    that produced them.
    """
    model.zero_grad()
    loss, breakdown = full_loss(pairs, model, weights, rng)
    backward(loss)
    adam_step(model.params, None, opt)
    return breakdown


def train_loop(pairs: list[PhotoSketchPair], model: Model, opt: AdamState,
               cfg: TrainConfig, rng, steps: int, stage: str = "train",
               out_dir=None, log_fh=None, start_step: int = 0) -> list[dict]:
    """Run ``steps`` optimization steps with seed-determined batch order."""
    if not pairs:
        raise DatasetError(f"{stage}: empty dataset")
    weights = cfg.weights()
    records = []
    start_time = time.monotonic()
    header = {"type": "header", "stage": stage, "config": asdict(cfg)}
    if log_fh:
        log_fh.write(json.dumps(header) + "\n")
    for step in range(start_step + 1, start_step + steps + 1):
        idx = rng.integers(0, len(pairs), size=cfg.batch_size)
        batch = [pairs[i] for i in idx]
        metrics = train_step(batch, model, opt, weights, rng)
        record = {"type": "step", "stage": stage, "step": step,
                  "l_supervised": metrics["l_supervised"],
                  "l_shortcut": metrics["l_shortcut"],
                  "l_kl": metrics["l_kl"],
                  "l_full": metrics["l_full"],
                  "wall_time": time.monotonic() - start_time}
        records.append(record)
        if log_fh:
            log_fh.write(json.dumps(record) + "\n")
        if out_dir is not None and step % cfg.checkpoint_every == 0:
            save_checkpoint(Path(out_dir) / f"{stage}-{step:06d}.ckpt",
                            model, opt, rng)
    return records


def pretrain_then_finetune(pretrain_pairs: list[PhotoSketchPair],
                           finetune_pairs: list[PhotoSketchPair],
                           cfg: TrainConfig,
                           model_config: ModelConfig | None = None,
                           out_dir=None, log_path=None) -> tuple[Model, list[dict]]:
    """Train on vector-raster pairs first, then on paired data.

    Both stages run cfg.iterations steps with the same loss weights and a
    shared optimizer/rng stream; checkpoints land in out_dir at the
    configured cadence plus one final checkpoint per stage.
    """
    if not pretrain_pairs or not finetune_pairs:
        raise DatasetError("pretrain and finetune datasets must be non-empty")
    if model_config is None:
        model_config = cfg.model_config()
    rng = np.random.default_rng(cfg.seed)
    model = build_model(model_config, rng)
    opt = AdamState.for_params(model.params, lr=cfg.lr, beta1=cfg.beta1,
                               beta2=cfg.beta2, eps=cfg.adam_eps)
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        history = train_loop(pretrain_pairs, model, opt, cfg, rng,
                             cfg.iterations, stage="pretrain",
                             out_dir=out_dir, log_fh=log_fh)
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / "pretrain-final.ckpt", model, opt, rng)
        history += train_loop(finetune_pairs, model, opt, cfg, rng,
                              cfg.iterations, stage="finetune",
                              out_dir=out_dir, log_fh=log_fh)
        if out_dir is not None:
            save_checkpoint(Path(out_dir) / "finetune-final.ckpt", model, opt, rng)
    finally:
        if log_fh:
            log_fh.close()
    return model, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _pack_u128(value: int) -> list[float]:
    return [float((value >> (32 * i)) & 0xFFFFFFFF) for i in range(4)]


def _unpack_u128(limbs) -> int:
    return sum(int(round(v)) << (32 * i) for i, v in enumerate(limbs))


def _rng_to_array(rng) -> np.ndarray:
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise ValueError(f"only PCG64 generators are supported, got "
                         f"{st['bit_generator']}")
    vals = _pack_u128(st["state"]["state"]) + _pack_u128(st["state"]["inc"])
    vals += [float(st["has_uint32"]), float(st["uinteger"])]
    return np.asarray(vals)


def _rng_from_array(arr) -> np.random.Generator:
    arr = np.asarray(arr)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": _unpack_u128(arr[:4]), "inc": _unpack_u128(arr[4:8])},
        "has_uint32": int(round(arr[8])),
        "uinteger": int(round(arr[9])),
    }
    return rng


def save_checkpoint(path, model: Model, opt: AdamState | None = None,
                    rng=None) -> None:
    """Single-file checkpoint: parameters, architecture, optimizer moments
    and the generator state, all in the binary array container."""
    arrays: dict = {}
    arrays.update(model.config.to_arrays())
    for name, p in model.params.items():
        arrays[f"param/{name}"] = p.data
    if opt is not None:
        arrays["adam/t"] = np.asarray(float(opt.t))
        arrays["adam/hyper"] = np.asarray([opt.lr, opt.beta1, opt.beta2, opt.eps])
        for name in model.params:
            arrays[f"adam/m/{name}"] = opt.m[name]
            arrays[f"adam/v/{name}"] = opt.v[name]
    if rng is not None:
        arrays["rng/state"] = _rng_to_array(rng)
    save_arrays(path, arrays)


def load_checkpoint(path) -> tuple[Model, AdamState | None, np.random.Generator | None]:
    arrays = load_arrays(path)
    config = ModelConfig.from_arrays(arrays)
    params = {name[len("param/"):]: Tensor(arr, requires_grad=True)
              for name, arr in arrays.items() if name.startswith("param/")}
    model = Model(config, params)
    opt = None
    if "adam/t" in arrays:
        lr, b1, b2, eps = arrays["adam/hyper"]
        opt = AdamState(lr=float(lr), beta1=float(b1), beta2=float(b2),
                        eps=float(eps), t=int(round(float(arrays["adam/t"]))))
        for name in params:
            opt.m[name] = arrays[f"adam/m/{name}"].copy()
            opt.v[name] = arrays[f"adam/v/{name}"].copy()
    rng = _rng_from_array(arrays["rng/state"]) if "rng/state" in arrays else None
    return model, opt, rng


# ---------------------------------------------------------------------------
# key=value config files
# ---------------------------------------------------------------------------

def config_from_text(text: str) -> TrainConfig:
    """Parse key=value lines (# comments allowed) into a TrainConfig."""
    values: dict = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    casts = {"int": int, "float": float}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_no}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {line_no}: unknown key {key!r}")
        values[key] = casts[types[key]](value)
    return TrainConfig(**values)


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in asdict(cfg).items())
