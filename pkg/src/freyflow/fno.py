"""Fourier neural operator baseline: channel-in-time formulation.

The input y grid is augmented with two coordinate channels, lifted
pointwise to a 128-wide feature grid, passed through four Fourier layers
(spectral mixing of the retained low modes plus a pointwise linear path),
and projected to the 24 monthly head channels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import data as ds
from .exceptions import TrainingDivergedError
from .vae import TrainConfig


@dataclass(frozen=True)
class FNOConfig:
    n_layers: int = 4
    width: int = 128
    modes: int = 8  # retained modes per axis
    in_channels: int = 3  # y value + two coordinate channels
    out_channels: int = 24
    grid: tuple[int, int] = (40, 20)
    local_bias: bool = True

    def __post_init__(self):
        if self.modes > min(self.grid) // 2:
            raise ValueError(
                f"modes {self.modes} exceed half the grid {self.grid}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["grid"] = tuple(d["grid"])
        return cls(**d)


class SpectralConv2d(nn.Module):
    """Linear transform on the retained low modes of the half-spectrum."""

    def __init__(self, width: int, modes: int):
        super().__init__()
        self.modes = modes
        scale = 1.0 / (width * width)
        self.weight = nn.Parameter(
            scale * torch.randn(width, width, modes, modes,
                                dtype=torch.cfloat))

    def forward(self, x):
        b, c, n1, n2 = x.shape
        x_ft = torch.fft.rfft2(x)
        out_ft = torch.zeros(b, c, n1, n2 // 2 + 1, dtype=x_ft.dtype)
        m = self.modes
        out_ft[:, :, :m, :m] = torch.einsum(
            "bixy,ioxy->boxy", x_ft[:, :, :m, :m], self.weight)
        return torch.fft.irfft2(out_ft, s=(n1, n2))


class FourierLayer(nn.Module):
    def __init__(self, width: int, modes: int, local_bias: bool = True):
        super().__init__()
        self.spectral = SpectralConv2d(width, modes)
        self.local = nn.Conv2d(width, width, 1, bias=local_bias)

    def forward(self, x):
        return torch.tanh(self.spectral(x) + self.local(x))


class FNO2d(nn.Module):
    def __init__(self, config: FNOConfig | None = None):
        super().__init__()
        self.config = config or FNOConfig()
        c = self.config
        self.lift = nn.Linear(c.in_channels, c.width)
        self.layers = nn.ModuleList(
            FourierLayer(c.width, c.modes, c.local_bias)
            for _ in range(c.n_layers))
        self.project = nn.Linear(c.width, c.out_channels)
        coords = coordinate_channels(c.grid)
        self.register_buffer("coords", torch.as_tensor(coords), persistent=False)

    def lift_input(self, y_grid: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) normalized y plus coordinate channels -> (B, width, H, W)."""
        b = y_grid.shape[0]
        x = torch.cat([y_grid, self.coords.expand(b, -1, -1, -1)], dim=1)
        x = x.permute(0, 2, 3, 1)
        return self.lift(x).permute(0, 3, 1, 2)

    def forward(self, y_grid: torch.Tensor) -> torch.Tensor:
        v = self.lift_input(y_grid)
        for layer in self.layers:
            v = layer(v)
        return self.project(v.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


def coordinate_channels(grid: tuple[int, int]) -> np.ndarray:
    """Cell-center x1, x2 coordinates normalized to [0, 1]; shape (2, H, W)."""
    n1, n2 = grid
    x1 = (np.arange(n1) + 0.5) / n1
    x2 = (np.arange(n2) + 0.5) / n2
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    return np.stack([g1, g2]).astype(np.float32)


def fno_forward(model: FNO2d, y_field: np.ndarray, stats: ds.NormStats,
                mask: np.ndarray) -> np.ndarray:
    """Raw y field in, raw denormalized state field out, sentinels restored."""
    y_norm = ds.normalize_y(y_field, stats, mask)
    model.eval()
    with torch.no_grad():
        pred = model(torch.as_tensor(y_norm.astype(np.float32))[None, None])
    return ds.denormalize_h(pred[0].numpy(), stats, mask)


def train_fno(y_norm: np.ndarray, h_norm: np.ndarray, mask: np.ndarray,
              config: FNOConfig, train_cfg: TrainConfig, seed: int):
    """Masked-MSE training over normalized (N,H,W) -> (N,24,H,W) arrays."""
    torch.manual_seed(seed)
    model = FNO2d(config)
    mask_t = torch.as_tensor(np.asarray(mask, dtype=np.float32))
    x = torch.as_tensor(y_norm.astype(np.float32)).unsqueeze(1) * mask_t
    t = torch.as_tensor(h_norm.astype(np.float32))
    gen = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    n = x.shape[0]
    n_active = float(mask_t.sum())
    history = []
    for epoch in range(train_cfg.epochs):
        order = torch.randperm(n, generator=gen)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            pred = model(x[idx])
            loss = (((pred - t[idx]) * mask_t) ** 2).sum() / (
                idx.numel() * t.shape[1] * n_active)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite FNO loss at epoch {epoch}", history=history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss)
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return model, history


def save_fno_checkpoint(path, model: FNO2d, fingerprint: str = ""):
    state = {}
    for key, val in model.state_dict().items():
        arr = val.detach().numpy()
        if np.iscomplexobj(arr):
            state[key + ".re"] = arr.real
            state[key + ".im"] = arr.imag
        else:
            state[key] = arr
    ds.save_checkpoint(path, state, config=model.config.to_dict(),
                       kind="fno", fingerprint=fingerprint)


def load_fno_checkpoint(path) -> tuple[FNO2d, dict]:
    state, meta = ds.load_checkpoint(path, expected_kind="fno")
    model = FNO2d(FNOConfig.from_dict(meta["config"]))
    tensors = {}
    for key, val in state.items():
        if key.endswith(".re"):
            base = key[:-3]
            tensors[base] = torch.complex(
                torch.as_tensor(np.array(val)),
                torch.as_tensor(np.array(state[base + ".im"])))
        elif not key.endswith(".im"):
            tensors[key] = torch.as_tensor(np.array(val))
    model.load_state_dict(tensors)
    model.eval()
    return model, meta
