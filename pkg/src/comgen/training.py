"""Objectives, optimizer loop, history and finite-difference gradient checks."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .comptask import CompositionSampler, stream
from .errors import ConfigurationError, DivergenceError
from .nnmodels import CompositionModel, SupervisedModel, save_checkpoint

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class ObjectiveConfig:
    family: str = "wae"
    reconstruction: str | None = None
    kl_weight: float = 1.0
    mmd_weight: float = 10.0
    mmd_kernel_scale: float | None = None

    def __post_init__(self):
        pairs = {"vae": "bernoulli_bce", "wae": "mse", "supervised": "mse"}
        if self.family not in pairs:
            raise ConfigurationError(f"objective family must be one of {sorted(pairs)}")
        if self.reconstruction is None:
            object.__setattr__(self, "reconstruction", pairs[self.family])
        if self.reconstruction != pairs[self.family]:
            raise ConfigurationError(f"{self.family} pairs with {pairs[self.family]}, "
                                     f"not {self.reconstruction}")

    @property
    def output(self) -> str:
        return "sigmoid" if self.reconstruction == "bernoulli_bce" else "linear"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 64
    lr: float = 1e-4
    max_epochs: int = 100
    seed: int = 0
    steps_per_epoch: int | None = None
    early_stop_window: int = 5
    early_stop_rel: float = 1e-3
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch <= 0 or self.lr <= 0 or self.max_epochs <= 0:
            raise ConfigurationError("batch, lr and max_epochs must be positive")

    @classmethod
    def for_dataset(cls, dataset: str, **kw) -> "TrainConfig":
        if dataset in ("circles", "simple"):
            kw = {"batch": 16, "lr": 3e-4, **kw}
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


# --- loss terms ----------------------------------------------------------------

def kl_divergence(mean: torch.Tensor, log_variance: torch.Tensor, reduce: bool = True) -> torch.Tensor:
    """KL(q || N(0, I)) summed over latent dims, averaged over the batch.

    With ``reduce=False`` the per-element terms (already divided by the batch
    size) are returned; they sum to the reduced value.
    """
    if not (torch.isfinite(mean).all() and torch.isfinite(log_variance).all()):
        raise DivergenceError("non-finite latent statistics")
    kl = 0.5 * (mean.pow(2) + log_variance.exp() - log_variance - 1.0)
    if not reduce:
        return kl / kl.shape[0]
    return kl.sum(dim=-1).mean()


def reconstruction_loss(x_hat: torch.Tensor, x: torch.Tensor, kind: str, reduce: bool = True) -> torch.Tensor:
    """Summed over pixels, averaged over the batch (per-pixel terms if ``reduce=False``)."""
    if x_hat.shape != x.shape:
        raise ConfigurationError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    if kind == "mse":
        per = (x_hat - x).pow(2)
    elif kind == "bernoulli_bce":
        p = x_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
        per = -(x * torch.log(p) + (1.0 - x) * torch.log1p(-p))
    else:
        raise ConfigurationError(f"unknown reconstruction loss {kind!r}")
    if not reduce:
        return per / per.shape[0]
    return per.reshape(per.shape[0], -1).sum(dim=1).mean()


def imq_kernel(a: torch.Tensor, b: torch.Tensor, scale: float) -> torch.Tensor:
    d2 = (a[:, None, :] - b[None, :, :]).pow(2).sum(-1)
    return scale / (scale + d2)


def mmd_estimate(z: torch.Tensor, prior: torch.Tensor, scale: float | None = None,
                 reduce: bool = True) -> torch.Tensor:
    """Unbiased MMD^2 U-statistic with the inverse multiquadratic kernel ``C / (C + |x - y|^2)``.

    ``C`` defaults to ``2 * latent_dim``.
    """
    n = z.shape[0]
    if n < 2 or prior.shape[0] != n:
        raise ConfigurationError("MMD needs two equal batches of at least two points")
    C = float(2 * z.shape[1]) if scale is None else float(scale)
    off = 1.0 - torch.eye(n, dtype=z.dtype)
    kzz = imq_kernel(z, z, C) * off / (n * (n - 1))
    kpp = imq_kernel(prior, prior, C) * off / (n * (n - 1))
    kzp = imq_kernel(z, prior, C) * (-2.0 / (n * n))
    if not reduce:
        return torch.stack([kzz, kpp, kzp])
    return kzz.sum() + kpp.sum() + kzp.sum()


# --- composition / supervised losses -------------------------------------------

@dataclass
class LossParts:
    recon_out: torch.Tensor
    recon_og: torch.Tensor
    recon_trans: torch.Tensor
    reg: torch.Tensor

    @property
    def recon(self) -> torch.Tensor:
        return self.recon_out + self.recon_og + self.recon_trans

    @property
    def total(self) -> torch.Tensor:
        return self.recon + self.reg


def composition_loss(model: CompositionModel, objective: ObjectiveConfig, x_og, x_trans, x_out, q,
                     eps=None, prior=None, generator=None, reduce: bool = True) -> LossParts:
    """Three reconstruction terms plus the regularizer.

    With ``reduce=False`` every field holds the unreduced per-element terms
    instead of a scalar; :func:`loss_terms` flattens them.
    """
    out_hat, og_hat, trans_hat, c_og, c_trans = model.forward_composition(x_og, x_trans, q, eps, generator)
    kind = objective.reconstruction
    parts = [reconstruction_loss(out_hat, x_out, kind, reduce), reconstruction_loss(og_hat, x_og, kind, reduce),
             reconstruction_loss(trans_hat, x_trans, kind, reduce)]
    if objective.family == "vae":
        kl = [kl_divergence(c.mean, c.log_variance, reduce) for c in (c_og, c_trans)]
        reg = objective.kl_weight * (torch.stack(kl) if not reduce else kl[0] + kl[1])
    else:
        z = torch.cat([c_og.sample, c_trans.sample])
        if prior is None:
            prior = torch.randn(z.shape, generator=generator, dtype=z.dtype)
        reg = objective.mmd_weight * mmd_estimate(z, prior, objective.mmd_kernel_scale, reduce)
    return LossParts(*parts, reg)


def loss_terms(parts: LossParts) -> torch.Tensor:
    """Flat vector of the unreduced terms of ``parts``; its sum is the total loss."""
    return torch.cat([t.reshape(-1) for t in (parts.recon_out, parts.recon_og, parts.recon_trans, parts.reg)])


def supervised_loss(model: SupervisedModel, x, targets, reduce: bool = True) -> torch.Tensor:
    """Squared error summed over factors, averaged over the batch."""
    per = (model(x) - targets).pow(2)
    if not reduce:
        return per / per.shape[0]
    return per.sum(dim=1).mean()


# --- training loop ----------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_recon", "train_reg", "total", "wallclock_s")


@dataclass
class History:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({k: row[k] for k in HISTORY_COLUMNS})

    @property
    def total(self) -> list[float]:
        return [r["total"] for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def read_csv(cls, path) -> "History":
        with open(path, newline="") as fh:
            rows = [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()}
                    for r in csv.DictReader(fh)]
        return cls(rows)


def _should_stop(totals: list[float], window: int, rel: float) -> bool:
    if window <= 0 or len(totals) <= window:
        return False
    before, now = totals[-window - 1], totals[-1]
    return (before - now) < rel * abs(before)


def _torch_generator(seed: int, epoch: int) -> torch.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(epoch, 1 << 20))
    return torch.Generator().manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))


def fit(model, images: np.ndarray, space, split, objective: ObjectiveConfig, train: TrainConfig,
        factor_values: np.ndarray | None = None, restrict_target_to_train: bool = True,
        checkpoint_dir=None, log: Callable[[str], None] | None = None):
    """Train ``model`` in place on the training split; returns ``(model, History)``.

    Composition models are fed online triplets from :class:`CompositionSampler`;
    supervised models regress ``factor_values`` of single training images.
    Stops at ``max_epochs`` or when the epoch loss improves by less than
    ``early_stop_rel`` (relative) over ``early_stop_window`` epochs.
    """
    supervised = isinstance(model, SupervisedModel)
    if supervised != (objective.family == "supervised"):
        raise ConfigurationError(f"objective {objective.family} does not fit {type(model).__name__}")
    if not supervised and model.cfg.output != objective.output:
        raise ConfigurationError(f"{objective.family} needs a {objective.output} decoder output")
    if supervised and factor_values is None:
        raise ConfigurationError("supervised training needs factor values")

    X = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    dtype = next(model.parameters()).dtype
    X = X.to(dtype)
    train_idx = np.asarray(split.train)
    sampler = None if supervised else CompositionSampler(space, train_idx, restrict_target_to_train)
    V = None if factor_values is None else torch.as_tensor(factor_values, dtype=dtype)
    steps = train.steps_per_epoch or max(1, math.ceil(len(train_idx) / train.batch))
    opt = torch.optim.Adam(model.parameters(), lr=train.lr, betas=(0.9, 0.999), eps=1e-8)
    history = History()
    start = time.perf_counter()
    model.train()
    for epoch in range(1, train.max_epochs + 1):
        rng = stream(train.seed, epoch)
        gen = _torch_generator(train.seed, epoch)
        sums = np.zeros(3)
        for _ in range(steps):
            if supervised:
                pick = torch.from_numpy(train_idx[rng.integers(len(train_idx), size=train.batch)])
                loss = supervised_loss(model, X[pick], V[pick])
                recon, reg = loss, torch.zeros(())
            else:
                rows = torch.from_numpy(sampler.draw_batch(rng, train.batch))
                q = torch.nn.functional.one_hot(rows[:, 3], sampler.n_factors).to(dtype)
                parts = composition_loss(model, objective, X[rows[:, 0]], X[rows[:, 1]], X[rows[:, 2]], q,
                                         generator=gen)
                loss, recon, reg = parts.total, parts.recon, parts.reg
            if not torch.isfinite(loss):
                raise DivergenceError(f"loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sums += (recon.item(), reg.item(), loss.item())
        recon_m, reg_m, total_m = (sums / steps).tolist()
        history.append(epoch=epoch, train_recon=recon_m, train_reg=reg_m, total=total_m,
                       wallclock_s=time.perf_counter() - start)
        if log:
            log(f"epoch {epoch:3d} recon {recon_m:.4f} reg {reg_m:.4f} total {total_m:.4f}")
        if checkpoint_dir and train.checkpoint_every and epoch % train.checkpoint_every == 0:
            save_checkpoint(model, Path(checkpoint_dir) / f"epoch{epoch:03d}",
                            "supervised" if supervised else "composition", train.seed, epoch)
        if _should_stop(history.total, train.early_stop_window, train.early_stop_rel):
            break
    model.eval()
    return model, history


# --- finite-difference checks -------------------------------------------------------

def gradient_check(loss_fn: Callable[[], torch.Tensor], params, n_coords: int = 200,
                   steps: Sequence[float] = (1e-5, 1e-6), seed: int = 0, floor: float = 1e-6) -> float:
    """Largest relative error between autograd and central differences.

    ``loss_fn`` must be deterministic in the parameters. It may return the
    scalar loss or a tensor of terms whose sum is the loss; with terms, the
    difference ``loss(p + h) - loss(p - h)`` is taken term by term and summed
    with ``math.fsum``, which keeps the rounding of a large total out of the
    estimate. Each coordinate is differenced at every step in ``steps`` and
    scored by its best agreement: a large step can straddle a ReLU kink, a
    small one loses tiny gradients to rounding, while a wrong gradient
    disagrees at all of them. Coordinates are drawn uniformly without
    replacement from the trainable (``requires_grad``) parameters. Relative
    error is ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ConfigurationError("no trainable parameters to check")
    if any(p.dtype != torch.float64 for p in params):
        raise ConfigurationError("gradient checks need float64 parameters")
    steps = [float(h) for h in np.atleast_1d(steps)]
    for p in params:
        p.grad = None
    loss_fn().sum().backward()
    grads = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(n_coords, offsets[-1]), replace=False)
    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            p, i = params[k].view(-1), int(flat - offsets[k])
            orig = p[i].item()
            g = grads[k].view(-1)[i].item()
            best = math.inf
            for h in steps:
                p[i] = orig + h
                up = loss_fn().reshape(-1).numpy()
                p[i] = orig - h
                down = loss_fn().reshape(-1).numpy()
                p[i] = orig
                fd = math.fsum((up - down).tolist()) / (2 * h)
                best = min(best, abs(g - fd) / max(abs(g), abs(fd), floor))
            worst = max(worst, best)
    return worst
