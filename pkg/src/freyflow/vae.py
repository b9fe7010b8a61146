"""Convolutional variational autoencoders for parameter and state fields.

Two variants share one implementation: the parameter-field VAE (single
channel, average pooling, latent 150) and the state-field VAE (24 time
channels, max pooling, latent 90, trained with an added focal frequency
loss). Statistical sampling of the latent happens only during training;
inference uses the latent mean directly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import TrainingDivergedError

FFL_WEIGHT_MAX = 1e3


@dataclass(frozen=True)
class VAEConfig:
    variant: str  # "y" or "h"
    grid: tuple[int, int] = (40, 20)
    in_channels: int = 1
    channels: tuple[int, int, int] = (8, 16, 32)
    latent_dim: int = 150
    pooling: str = "avg"
    beta: float = 1e-3
    ffl_enabled: bool = False
    ffl_alpha: float = 1.0

    def __post_init__(self):
        if self.variant not in ("y", "h"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.grid[0] % 4 or self.grid[1] % 4:
            raise ValueError("grid dims must be divisible by 4 (two poolings)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VAEConfig":
        d = dict(d)
        d["grid"] = tuple(d["grid"])
        d["channels"] = tuple(d["channels"])
        return cls(**d)


def y_vae_config(**overrides) -> VAEConfig:
    base = dict(variant="y", in_channels=1, channels=(8, 16, 32),
                latent_dim=150, pooling="avg", beta=1e-3, ffl_enabled=False)
    base.update(overrides)
    return VAEConfig(**base)


def h_vae_config(**overrides) -> VAEConfig:
    base = dict(variant="h", in_channels=24, channels=(24, 48, 96),
                latent_dim=90, pooling="max", beta=1e-3, ffl_enabled=True,
                ffl_alpha=1.0)
    base.update(overrides)
    return VAEConfig(**base)


@dataclass
class GaussianLatent:
    mu: torch.Tensor
    log_var: torch.Tensor


def reparameterize(latent: GaussianLatent, eps: torch.Tensor) -> torch.Tensor:
    """z = mu + exp(log_var / 2) elementwise-times eps."""
    return latent.mu + torch.exp(0.5 * latent.log_var) * eps


class ConvVAE(nn.Module):
    """Three-conv encoder with two dense heads; variant-specific decoder."""

    def __init__(self, config: VAEConfig):
        super().__init__()
        self.config = config
        c1, c2, c3 = config.channels
        in_ch = config.in_channels
        n1, n2 = config.grid
        pool_cls = nn.AvgPool2d if config.pooling == "avg" else nn.MaxPool2d

        self.enc_conv1 = nn.Conv2d(in_ch, c1, 3, padding=1)
        self.pool1 = pool_cls(2)
        self.enc_conv2 = nn.Conv2d(c1, c2, 3, padding=1)
        self.pool2 = pool_cls(2)
        self.enc_conv3 = nn.Conv2d(c2, c3, 3, padding=1)
        self.flat_dim = c3 * (n1 // 4) * (n2 // 4)
        self.fc_mu = nn.Linear(self.flat_dim, config.latent_dim)
        self.fc_log_var = nn.Linear(self.flat_dim, config.latent_dim)

        self.fc_dec = nn.Linear(config.latent_dim, self.flat_dim)
        if config.variant == "y":
            self.dec1 = nn.ConvTranspose2d(c3, c2, 3, padding=1)
            self.dec2 = nn.ConvTranspose2d(c2, c1, 3, stride=2, padding=1,
                                           output_padding=1)
            self.dec3 = nn.ConvTranspose2d(c1, in_ch, 3, stride=2, padding=1,
                                           output_padding=1)
        else:
            self.dec1 = nn.ConvTranspose2d(c3, c2, 4, stride=2, padding=1)
            self.dec2 = nn.ConvTranspose2d(c2, c1, 4, stride=2, padding=1)
            self.dec3 = nn.Conv2d(c1, in_ch, 3, padding=1)

    def encode(self, x: torch.Tensor) -> GaussianLatent:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        t = torch.tanh(self.enc_conv1(x))
        t = self.pool1(t)
        t = torch.tanh(self.enc_conv2(t))
        t = self.pool2(t)
        t = torch.tanh(self.enc_conv3(t))
        t = t.flatten(1)
        return GaussianLatent(self.fc_mu(t), self.fc_log_var(t))

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() == 1:
            z = z.unsqueeze(0)
        c3 = self.config.channels[2]
        n1, n2 = self.config.grid
        t = self.fc_dec(z).view(-1, c3, n1 // 4, n2 // 4)
        t = torch.tanh(self.dec1(t))
        t = torch.tanh(self.dec2(t))
        return self.dec3(t)

    def forward(self, x, eps=None, generator=None):
        latent = self.encode(x)
        if eps is None:
            eps = torch.randn(latent.mu.shape, generator=generator,
                              dtype=latent.mu.dtype)
        z = reparameterize(latent, eps)
        return self.decode(z), latent


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def kl_term(latent: GaussianLatent) -> torch.Tensor:
    """Per-sample ||mu||^2 - log det Sigma + Tr Sigma with diagonal Sigma."""
    return ((latent.mu ** 2).sum(dim=1) - latent.log_var.sum(dim=1)
            + torch.exp(latent.log_var).sum(dim=1))


def elbo_loss(model: ConvVAE, batch: torch.Tensor, mask: torch.Tensor,
              beta: float | None = None, eps: torch.Tensor | None = None,
              generator=None) -> torch.Tensor:
    """Masked reconstruction error plus beta-weighted KL regularizer.

    ``batch`` is a normalized (B, C, H, W) tensor; the mask zeroes
    inactive-cell contributions on both the input and the mismatch.
    """
    if beta is None:
        beta = model.config.beta
    mask = mask.to(batch.dtype)
    x = batch * mask
    latent = model.encode(x)
    if eps is None:
        eps = torch.randn(latent.mu.shape, generator=generator,
                          dtype=latent.mu.dtype)
    recon = model.decode(reparameterize(latent, eps))
    sq_err = (((recon - x) * mask) ** 2).flatten(1).sum(dim=1)
    return (sq_err + beta * kl_term(latent)).mean()


def ffl(recon: torch.Tensor, target: torch.Tensor, alpha: float = 1.0,
        mask: torch.Tensor | None = None,
        w_max: float = FFL_WEIGHT_MAX) -> torch.Tensor:
    """Focal frequency loss between masked fields.

    The per-bin weight is the current frequency-error amplitude raised to
    ``alpha``, recomputed without gradient flow and clipped for stability.
    Applied per channel and averaged over batch, channels, and bins.
    """
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch {recon.shape} vs {target.shape}")
    if recon.dim() == 3:
        recon, target = recon.unsqueeze(0), target.unsqueeze(0)
    if mask is not None:
        m = mask.to(recon.dtype)
        recon = recon * m
        target = target * m
    diff = torch.fft.fft2(target) - torch.fft.fft2(recon)
    err_sq = diff.real ** 2 + diff.imag ** 2
    weight = torch.clamp(torch.sqrt(err_sq) ** alpha, max=w_max).detach()
    return (weight * err_sq).mean()


@dataclass
class TrainConfig:
    epochs: int = 400
    batch_size: int = 32
    learning_rate: float = 1e-4


def combined_loss(model: ConvVAE, batch, mask, generator=None):
    """ELBO for the y variant; ELBO plus FFL for the h variant."""
    cfg = model.config
    mask_f = mask.to(batch.dtype)
    x = batch * mask_f
    latent = model.encode(x)
    eps = torch.randn(latent.mu.shape, generator=generator,
                      dtype=latent.mu.dtype)
    recon = model.decode(reparameterize(latent, eps))
    sq_err = (((recon - x) * mask_f) ** 2).flatten(1).sum(dim=1)
    loss = (sq_err + cfg.beta * kl_term(latent)).mean()
    if cfg.ffl_enabled:
        loss = loss + ffl(recon, x, alpha=cfg.ffl_alpha)
    return loss


def train_vae(fields: np.ndarray, mask: np.ndarray, config: VAEConfig,
              train_cfg: TrainConfig, seed: int):
    """Minimize the variant loss over a normalized (N, C, H, W) array.

    Returns the trained model and the per-epoch loss history.
    """
    torch.manual_seed(seed)
    model = ConvVAE(config)
    data = torch.as_tensor(np.asarray(fields, dtype=np.float32))
    if data.dim() == 3:
        data = data.unsqueeze(1)
    mask_t = torch.as_tensor(np.asarray(mask, dtype=np.float32))
    gen = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    n = data.shape[0]
    history = []
    for epoch in range(train_cfg.epochs):
        order = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, train_cfg.batch_size):
            batch = data[order[start:start + train_cfg.batch_size]]
            loss = combined_loss(model, batch, mask_t, generator=gen)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}", history=history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss)
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return model, history


def encode_means(model: ConvVAE, fields: np.ndarray, mask: np.ndarray,
                 batch_size: int = 64) -> np.ndarray:
    """Deterministic latent means for an (N, C, H, W) normalized array."""
    model.eval()
    data = torch.as_tensor(np.asarray(fields, dtype=np.float32))
    if data.dim() == 3:
        data = data.unsqueeze(1)
    mask_t = torch.as_tensor(np.asarray(mask, dtype=np.float32))
    out = []
    with torch.no_grad():
        for start in range(0, data.shape[0], batch_size):
            latent = model.encode(data[start:start + batch_size] * mask_t)
            out.append(latent.mu.numpy())
    return np.concatenate(out)
