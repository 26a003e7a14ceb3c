"""Encoders, decoders, latent composition operators and checkpoints.

Layer stacks follow the architecture table the experiments use:

* ``dsprites``: Conv(32,4,2) Conv(32,4,2) Conv(64,4,2) Conv(64,4,2) Conv(128,4,2)
  Linear(256) Linear(20), decoder the transpose of the encoder.
* ``mpi3d``: Conv(64,4,2) Conv(64,4,2) Conv(128,4,2) Conv(128,4,2) Conv(256,4,2)
  Linear(256) Linear(20), transposed decoder.
* ``sbd``: Conv(64,4,2) x4 Linear(256) Linear(20), spatial broadcast decoder
  with four Conv(64,5,1) layers.

``reduced_profile`` halves every channel count and the canvas (64 -> 32).
Every layer but the last of each stack is followed by a ReLU. Convolutions
use "same" padding, ``(kernel - stride) / 2``, so stride-2 layers halve the
spatial size exactly and their transposes double it.

Parameters are initialized from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` for
both weights and biases, with ``fan_in = weight.shape[1] * kernel area``,
drawn from a ``torch.Generator`` seeded with the model seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError

LATENT_DIM = 10
OPERATORS = ("mlp", "linear", "interp_learned", "interp_fixed")
# Composition operators reported to give poor disentanglement; kept for comparison only.
LOW_DISENTANGLEMENT = ("mlp", "linear")
DECODERS = ("deconv", "sbd")


@dataclass(frozen=True)
class ModelConfig:
    canvas: int = 64
    channels: int = 1
    conv: tuple = ((32, 4, 2), (32, 4, 2), (64, 4, 2), (64, 4, 2), (128, 4, 2))
    hidden: tuple = (256,)
    latent_dim: int = LATENT_DIM
    decoder: str = "deconv"
    sbd_conv: tuple = ((64, 5, 1),) * 4
    operator: str = "interp_fixed"
    n_factors: int = 3
    mlp_hidden: int = 64
    output: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in c) for c in self.conv))
        object.__setattr__(self, "sbd_conv", tuple(tuple(int(v) for v in c) for c in self.sbd_conv))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.decoder not in DECODERS:
            raise ConfigurationError(f"decoder must be one of {DECODERS}")
        if self.operator not in OPERATORS:
            raise ConfigurationError(f"operator must be one of {OPERATORS}")
        if self.output not in ("sigmoid", "linear"):
            raise ConfigurationError("output must be 'sigmoid' or 'linear'")
        if not 1 <= self.n_factors <= self.latent_dim:
            raise ConfigurationError(f"n_factors {self.n_factors} must be in [1, latent_dim]")
        size = self.canvas
        for ch, k, s in self.conv:
            if (k - s) % 2 or size % s:
                raise ConfigurationError(f"Conv({ch},{k},{s}) cannot keep 'same' geometry at size {size}")
            size //= s
        if size < 1:
            raise ConfigurationError("encoder reduces the canvas below one pixel")
        for ch, k, s in self.sbd_conv:
            if s != 1 or k % 2 == 0:
                raise ConfigurationError("broadcast decoder layers need stride 1 and odd kernels")

    @property
    def feature_size(self) -> int:
        return self.canvas // math.prod(s for _, _, s in self.conv)

    @property
    def flat_features(self) -> int:
        return self.conv[-1][0] * self.feature_size ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(c) for c in self.conv]
        d["sbd_conv"] = [list(c) for c in self.sbd_conv]
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


PROFILES = {
    "dsprites": dict(conv=((32, 4, 2), (32, 4, 2), (64, 4, 2), (64, 4, 2), (128, 4, 2)),
                     hidden=(256,), decoder="deconv"),
    "mpi3d": dict(conv=((64, 4, 2), (64, 4, 2), (128, 4, 2), (128, 4, 2), (256, 4, 2)),
                  hidden=(256,), decoder="deconv"),
    "sbd": dict(conv=((64, 4, 2),) * 4, hidden=(256,), decoder="sbd", sbd_conv=((64, 5, 1),) * 4),
}


def paper_profile(name: str, **overrides) -> ModelConfig:
    if name not in PROFILES:
        raise ConfigurationError(f"unknown architecture {name!r}; choose from {sorted(PROFILES)}")
    return ModelConfig(canvas=64, **{**PROFILES[name], **overrides})


def reduced_profile(name: str, **overrides) -> ModelConfig:
    """32x32 canvas with every channel and hidden width halved."""
    if name not in PROFILES:
        raise ConfigurationError(f"unknown architecture {name!r}; choose from {sorted(PROFILES)}")
    base = PROFILES[name]

    def half(stack):
        return tuple((max(1, c // 2), k, s) for c, k, s in stack)

    kw = dict(conv=half(base["conv"]), hidden=tuple(h // 2 for h in base["hidden"]),
              decoder=base["decoder"], sbd_conv=half(base.get("sbd_conv", ((64, 5, 1),) * 4)))
    return ModelConfig(**{"canvas": 32, **kw, **overrides})


def tiny_profile(decoder: str = "deconv", **overrides) -> ModelConfig:
    """16x16 canvas with a few channels; used for finite-difference checks."""
    kw = dict(canvas=16, conv=((4, 4, 2), (4, 4, 2)), hidden=(16,), decoder=decoder,
              sbd_conv=((4, 3, 1),), mlp_hidden=8)
    return ModelConfig(**{**kw, **overrides})


def _init_uniform(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = m.weight
            fan_in = w.shape[1] * (math.prod(w.shape[2:]) if w.dim() > 2 else 1)
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                w.copy_(torch.rand(w.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))
                if m.bias is not None:
                    b = m.bias
                    b.copy_(torch.rand(b.shape, generator=gen, dtype=torch.float64).mul(2 * bound).sub(bound))


def _pad(k: int, s: int) -> int:
    return (k - s) // 2


class Encoder(nn.Module):
    """Conv trunk plus MLP; the last linear layer has ``out_features`` units."""

    def __init__(self, cfg: ModelConfig, out_features: int):
        super().__init__()
        layers: list[nn.Module] = []
        ch = cfg.channels
        for c, k, s in cfg.conv:
            layers += [nn.Conv2d(ch, c, k, s, _pad(k, s)), nn.ReLU()]
            ch = c
        layers.append(nn.Flatten())
        width = cfg.flat_features
        for h in cfg.hidden:
            layers += [nn.Linear(width, h), nn.ReLU()]
            width = h
        layers.append(nn.Linear(width, out_features))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class DeconvDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        layers: list[nn.Module] = []
        width = cfg.latent_dim
        for h in reversed(cfg.hidden):
            layers += [nn.Linear(width, h), nn.ReLU()]
            width = h
        layers += [nn.Linear(width, cfg.flat_features), nn.ReLU(),
                   nn.Unflatten(1, (cfg.conv[-1][0], cfg.feature_size, cfg.feature_size))]
        chans = [cfg.channels] + [c for c, _, _ in cfg.conv]
        for i in range(len(cfg.conv) - 1, -1, -1):
            _, k, s = cfg.conv[i]
            layers.append(nn.ConvTranspose2d(chans[i + 1], chans[i], k, s, _pad(k, s)))
            if i:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


def coordinate_grid(size: int, dtype=torch.float32) -> torch.Tensor:
    """``(2, size, size)`` x and y channels spanning [-1, 1]."""
    g = torch.linspace(-1.0, 1.0, size, dtype=dtype)
    yy, xx = torch.meshgrid(g, g, indexing="ij")
    return torch.stack([xx, yy])


class BroadcastDecoder(nn.Module):
    """Tiles the latent over the canvas, appends coordinate channels, then stride-1 convs."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.size = cfg.canvas
        layers: list[nn.Module] = []
        ch = cfg.latent_dim + 2
        for c, k, s in cfg.sbd_conv:
            layers += [nn.Conv2d(ch, c, k, 1, k // 2), nn.ReLU()]
            ch = c
        k_out = cfg.sbd_conv[-1][1]
        layers.append(nn.Conv2d(ch, cfg.channels, k_out, 1, k_out // 2))
        self.net = nn.Sequential(*layers)
        self.register_buffer("coords", coordinate_grid(cfg.canvas), persistent=False)

    def broadcast(self, z):
        n = z.shape[0]
        tiled = z[:, :, None, None].expand(-1, -1, self.size, self.size)
        coords = self.coords.to(z.dtype).expand(n, -1, -1, -1)
        return torch.cat([tiled, coords], dim=1)

    def forward(self, z):
        return self.net(self.broadcast(z))


@dataclass
class LatentCode:
    mean: torch.Tensor
    log_variance: torch.Tensor
    sample: torch.Tensor
    eps: torch.Tensor


class CompositionOperator(nn.Module):
    """``z_out = f(z_og, z_trans, q)`` in one of four variants.

    ``mlp``: ``W_out relu(W [z_og; z_trans; q] + b)``; ``linear``:
    ``W_out [z_og; z_trans; q]``; ``interp_*``: ``z_og * (1 - c) + z_trans * c``
    with ``c = sigmoid(W [z_og; z_trans; q] + b)`` (learned) or ``c = q``
    zero-padded to the latent size (fixed).
    """

    def __init__(self, variant: str, latent_dim: int, n_factors: int, mlp_hidden: int = 64):
        super().__init__()
        if variant not in OPERATORS:
            raise ConfigurationError(f"unknown operator {variant!r}")
        self.variant = variant
        self.latent_dim = latent_dim
        self.n_factors = n_factors
        width = 2 * latent_dim + n_factors
        if variant == "mlp":
            self.inner = nn.Linear(width, mlp_hidden)
            self.out = nn.Linear(mlp_hidden, latent_dim, bias=False)
        elif variant == "linear":
            self.out = nn.Linear(width, latent_dim, bias=False)
        elif variant == "interp_learned":
            self.gate = nn.Linear(width, latent_dim)

    def check_query(self, q: torch.Tensor) -> None:
        if q.shape[-1] != self.n_factors:
            raise ConfigurationError(f"query has length {q.shape[-1]}, expected {self.n_factors}")
        ones = (q == 1).sum(dim=-1)
        zeros = (q == 0).sum(dim=-1)
        if not (bool((ones == 1).all()) and bool((ones + zeros == q.shape[-1]).all())):
            raise ConfigurationError("query vectors must be one-hot")

    def coefficients(self, z_og, z_trans, q) -> torch.Tensor:
        if self.variant == "interp_fixed":
            return nn.functional.pad(q.to(z_og.dtype), (0, self.latent_dim - self.n_factors))
        if self.variant == "interp_learned":
            return torch.sigmoid(self.gate(torch.cat([z_og, z_trans, q.to(z_og.dtype)], dim=-1)))
        raise ConfigurationError(f"{self.variant} has no interpolation coefficients")

    @staticmethod
    def interpolate(z_og, z_trans, c):
        return z_og * (1 - c) + z_trans * c

    def forward(self, z_og, z_trans, q):
        self.check_query(q)
        if self.variant in ("interp_fixed", "interp_learned"):
            return self.interpolate(z_og, z_trans, self.coefficients(z_og, z_trans, q))
        h = torch.cat([z_og, z_trans, q.to(z_og.dtype)], dim=-1)
        if self.variant == "mlp":
            h = torch.relu(self.inner(h))
        return self.out(h)


class CompositionModel(nn.Module):
    """Shared Gaussian encoder, composition operator and image decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg, 2 * cfg.latent_dim)
        self.decoder = BroadcastDecoder(cfg) if cfg.decoder == "sbd" else DeconvDecoder(cfg)
        self.operator = CompositionOperator(cfg.operator, cfg.latent_dim, cfg.n_factors, cfg.mlp_hidden)
        _init_uniform(self, torch.Generator().manual_seed(cfg.seed))

    def _check_images(self, x):
        want = (self.cfg.channels, self.cfg.canvas, self.cfg.canvas)
        if x.dim() != 4 or tuple(x.shape[1:]) != want:
            raise ConfigurationError(f"expected images of shape (n, {want}), got {tuple(x.shape)}")

    def encode(self, x, eps=None, generator: torch.Generator | None = None) -> LatentCode:
        self._check_images(x)
        h = self.encoder(x)
        mean, log_variance = h[:, :self.cfg.latent_dim], h[:, self.cfg.latent_dim:]
        if eps is None:
            eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
        sample = mean + torch.exp(0.5 * log_variance) * eps
        return LatentCode(mean, log_variance, sample, eps)

    def encode_mean(self, x) -> torch.Tensor:
        self._check_images(x)
        return self.encoder(x)[:, :self.cfg.latent_dim]

    def decode(self, z):
        if z.shape[-1] != self.cfg.latent_dim:
            raise ConfigurationError(f"latent has length {z.shape[-1]}, expected {self.cfg.latent_dim}")
        out = self.decoder(z)
        return torch.sigmoid(out) if self.cfg.output == "sigmoid" else out

    def compose(self, z_og, z_trans, q):
        return self.operator(z_og, z_trans, q)

    def forward_composition(self, x_og, x_trans, q, eps=None, generator=None, use_mean=False):
        """Returns ``(x_out_hat, x_og_hat, x_trans_hat, code_og, code_trans)``.

        ``eps`` may be an ``(2, n, L)`` tensor of noise for the two encodings.
        """
        n = x_og.shape[0]
        code = self.encode(torch.cat([x_og, x_trans]), None if eps is None else eps.reshape(2 * n, -1),
                           generator)
        z = code.mean if use_mean else code.sample
        z_og, z_trans = z[:n], z[n:]
        z_out = self.compose(z_og, z_trans, q)
        decoded = self.decode(torch.cat([z_out, z_og, z_trans]))
        code_og = LatentCode(code.mean[:n], code.log_variance[:n], code.sample[:n], code.eps[:n])
        code_trans = LatentCode(code.mean[n:], code.log_variance[n:], code.sample[n:], code.eps[n:])
        return decoded[:n], decoded[n:2 * n], decoded[2 * n:], code_og, code_trans

    def reconstruct(self, x, clamp: bool = True):
        """Deterministic autoencoding through the encoder mean."""
        out = self.decode(self.encode_mean(x))
        return out.clamp(0.0, 1.0) if clamp else out


class SupervisedModel(nn.Module):
    """Encoder-shaped regressor whose last linear layer outputs the factor values."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg, cfg.n_factors)
        _init_uniform(self, torch.Generator().manual_seed(cfg.seed))

    def forward(self, x):
        want = (self.cfg.channels, self.cfg.canvas, self.cfg.canvas)
        if x.dim() != 4 or tuple(x.shape[1:]) != want:
            raise ConfigurationError(f"expected images of shape (n, {want}), got {tuple(x.shape)}")
        return self.encoder(x)

    def encode_mean(self, x):
        return self.forward(x)


def supervised_forward(model: SupervisedModel, x):
    return model(x)


def build_model(cfg: ModelConfig, task: str = "composition") -> nn.Module:
    if task == "composition":
        return CompositionModel(cfg)
    if task == "supervised":
        return SupervisedModel(cfg)
    raise ConfigurationError(f"unknown task {task!r}")


# --- checkpoints --------------------------------------------------------------

def save_checkpoint(model: nn.Module, path, task: str, seed: int, epoch: int, extra: dict | None = None) -> None:
    """``<path>.json`` manifest plus ``<path>.bin`` little-endian float64 parameters in manifest order."""
    path = Path(path)
    state = model.state_dict()
    layout = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    manifest = {"format": "comgen-checkpoint-1", "task": task, "architecture": model.cfg.to_dict(),
                "operator": model.cfg.operator, "seed": seed, "epoch": epoch, "layout": layout,
                **(extra or {})}
    blob = b"".join(v.detach().to(torch.float64).contiguous().numpy().astype("<f8").tobytes()
                    for v in state.values())
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
    path.with_suffix(".bin").write_bytes(blob)


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    cfg = ModelConfig.from_dict(manifest["architecture"])
    model = build_model(cfg, manifest["task"])
    blob = path.with_suffix(".bin").read_bytes()
    flat = np.frombuffer(blob, dtype="<f8")
    state, offset = {}, 0
    ref = model.state_dict()
    for item in manifest["layout"]:
        n = math.prod(item["shape"]) if item["shape"] else 1
        arr = flat[offset:offset + n].reshape(item["shape"])
        offset += n
        state[item["name"]] = torch.from_numpy(arr.copy()).to(ref[item["name"]].dtype)
    if offset != flat.size:
        raise ConfigurationError(f"checkpoint {path} holds {flat.size} values, layout needs {offset}")
    model.load_state_dict(state)
    return model, manifest
