"""Model configuration and parameter construction for the four subnets:
photo encoder (CNN), sketch encoder (bidirectional LSTM), sketch decoder
(autoregressive LSTM with a mixture head), photo decoder (transposed CNN).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autodiff import Tensor
from .nn import conv_output_size, fan_in_uniform, lstm_init

__all__ = ["ModelConfig", "Model", "build_model", "encoder_spatial_trail",
           "decoder_kernel_plan"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture shape shared by all four subnets.

    The defaults train in minutes on a CPU.  The published experiments used
    224x224 photos; pass image_side=224 to reproduce that geometry.
    """

    image_side: int = 48
    image_channels: int = 1
    latent_dim: int = 64
    conv_channels: tuple = (16, 32, 64, 96, 128)
    fc_hidden: int = 256
    enc_hidden: int = 128
    dec_hidden: int = 256
    mixtures: int = 20
    max_seq_len: int = 96

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "conv_channels":
                object.__setattr__(self, f.name, tuple(int(c) for c in v))
            else:
                object.__setattr__(self, f.name, int(v))
        if len(self.conv_channels) != 5:
            raise ValueError("exactly five conv blocks are expected")
        encoder_spatial_trail(self)

    @property
    def head_width(self) -> int:
        return 6 * self.mixtures + 3

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f"config/{f.name}"] = np.asarray(v, dtype=np.float64)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            arr = arrays[f"config/{f.name}"]
            if f.name == "conv_channels":
                kwargs[f.name] = tuple(int(round(x)) for x in np.atleast_1d(arr))
            else:
                kwargs[f.name] = int(round(float(arr)))
        return cls(**kwargs)


def encoder_spatial_trail(config: ModelConfig) -> list[int]:
    """Spatial sizes through the five stride-2 convolutions (k=3, pad=1)."""
    sizes = [config.image_side]
    for _ in range(5):
        nxt = conv_output_size(sizes[-1], 3, 2, 1)
        if nxt < 1:
            raise ValueError(f"image side {config.image_side} collapses below 1x1")
        sizes.append(nxt)
    return sizes


def decoder_kernel_plan(config: ModelConfig) -> list[tuple[int, int, int]]:
    """(kernel, in_size, out_size) for each stride-2 upsampling block so the
    decoder walks the encoder's spatial trail in reverse (pad fixed at 1)."""
    trail = encoder_spatial_trail(config)
    plan = []
    for small, big in zip(trail[::-1], trail[::-1][1:]):
        k = big - 2 * small + 4
        if k < 1:
            raise ValueError(f"no stride-2 kernel maps {small} -> {big}")
        plan.append((k, small, big))
    return plan


class Model:
    """Named parameter tensors plus the configuration they were built for."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "Model":
        clone = {k: Tensor(v.data.copy(), requires_grad=True)
                 for k, v in self.params.items()}
        return Model(self.config, clone)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


def build_model(config: ModelConfig, rng: np.random.Generator) -> Model:
    """Initialize all four subnets.

    Conv/FC weights are fan-in uniform, recurrent blocks orthogonal, biases
    zero except the LSTM forget gates (set to 1).
    """
    cc = config.conv_channels
    trail = encoder_spatial_trail(config)
    flat = cc[-1] * trail[-1] * trail[-1]
    p: dict[str, np.ndarray] = {}

    # photo encoder: five stride-2 convs (instance norm after all but the
    # first), then two fully connected layers onto (mu, sigma_hat)
    in_ch = config.image_channels
    for i, out_ch in enumerate(cc, start=1):
        p[f"photo_enc/conv{i}/w"] = fan_in_uniform((out_ch, in_ch, 3, 3), rng)
        if i == 1:
            p["photo_enc/conv1/b"] = np.zeros(out_ch)
        else:
            p[f"photo_enc/in{i}/gamma"] = np.ones(out_ch)
            p[f"photo_enc/in{i}/beta"] = np.zeros(out_ch)
        in_ch = out_ch
    p["photo_enc/fc1/w"] = fan_in_uniform((flat, config.fc_hidden), rng, fan_in=flat)
    p["photo_enc/fc1/b"] = np.zeros(config.fc_hidden)
    p["photo_enc/fc2/w"] = fan_in_uniform((config.fc_hidden, 2 * config.latent_dim),
                                          rng, fan_in=config.fc_hidden)
    p["photo_enc/fc2/b"] = np.zeros(2 * config.latent_dim)

    # sketch encoder: bidirectional LSTM over stroke-5 rows, FC bottleneck
    p["sketch_enc/fwd/w"], p["sketch_enc/fwd/b"] = lstm_init(5, config.enc_hidden, rng)
    p["sketch_enc/bwd/w"], p["sketch_enc/bwd/b"] = lstm_init(5, config.enc_hidden, rng)
    p["sketch_enc/fc/w"] = fan_in_uniform(
        (2 * config.enc_hidden, 2 * config.latent_dim), rng, fan_in=2 * config.enc_hidden)
    p["sketch_enc/fc/b"] = np.zeros(2 * config.latent_dim)

    # sketch decoder: latent-initialized LSTM fed [previous point; latent]
    p["sketch_dec/init/w"] = fan_in_uniform(
        (config.latent_dim, 2 * config.dec_hidden), rng, fan_in=config.latent_dim)
    p["sketch_dec/init/b"] = np.zeros(2 * config.dec_hidden)
    p["sketch_dec/cell/w"], p["sketch_dec/cell/b"] = lstm_init(
        5 + config.latent_dim, config.dec_hidden, rng)
    p["sketch_dec/head/w"] = fan_in_uniform(
        (config.dec_hidden, config.head_width), rng, fan_in=config.dec_hidden)
    p["sketch_dec/head/b"] = np.zeros(config.head_width)

    # photo decoder: FC to the smallest feature map, then five stride-2
    # transposed convolutions back up the spatial trail
    p["photo_dec/fc/w"] = fan_in_uniform((config.latent_dim, flat), rng,
                                         fan_in=config.latent_dim)
    p["photo_dec/fc/b"] = np.zeros(flat)
    rev = (cc[-1],) + tuple(reversed(cc[:-1])) + (config.image_channels,)
    plan = decoder_kernel_plan(config)
    for i, ((k, _, _), in_c, out_c) in enumerate(zip(plan, rev, rev[1:]), start=1):
        p[f"photo_dec/deconv{i}/w"] = fan_in_uniform(
            (in_c, out_c, k, k), rng, fan_in=in_c * k * k)
        if i == len(plan):
            p[f"photo_dec/deconv{i}/b"] = np.zeros(out_c)
        else:
            p[f"photo_dec/in{i}/gamma"] = np.ones(out_c)
            p[f"photo_dec/in{i}/beta"] = np.zeros(out_c)

    tensors = {name: Tensor(arr, requires_grad=True) for name, arr in p.items()}
    return Model(config, tensors)
