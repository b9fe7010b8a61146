"""Branch-trunk operator network over KLE coefficients and space-time coords.

The branch consumes the truncated KLE coefficient vector of the parameter
field; the trunk consumes (x1, x2, t) normalized to the unit cube; their
90-wide outputs combine by dot product plus a scalar bias.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import data as ds
from .exceptions import TrainingDivergedError
from .geostat import KLEBasis, kle_project
from .vae import TrainConfig


@dataclass(frozen=True)
class DeepONetConfig:
    branch_input: int = 150  # KLE coefficient count
    branch_hidden: tuple[int, ...] = (1200, 1200, 1200, 1200)
    trunk_input: int = 3
    trunk_hidden: tuple[int, ...] = (300, 300, 300, 300)
    output_width: int = 90

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["branch_hidden"] = tuple(d["branch_hidden"])
        d["trunk_hidden"] = tuple(d["trunk_hidden"])
        return cls(**d)


def _mlp(dims):
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        layers.append(nn.Linear(a, b))
    return nn.ModuleList(layers)


def _run_mlp(layers, x):
    for layer in layers[:-1]:
        x = torch.tanh(layer(x))
    return layers[-1](x)


class DeepONet(nn.Module):
    def __init__(self, config: DeepONetConfig | None = None):
        super().__init__()
        self.config = config or DeepONetConfig()
        c = self.config
        self.branch = _mlp((c.branch_input, *c.branch_hidden, c.output_width))
        self.trunk = _mlp((c.trunk_input, *c.trunk_hidden, c.output_width))
        self.bias = nn.Parameter(torch.zeros(1))

    def forward(self, xi: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """(B, N_xi) coefficients and (M, 3) coords -> (B, M) predictions."""
        b = _run_mlp(self.branch, xi)
        t = _run_mlp(self.trunk, coords)
        return b @ t.T + self.bias


def observation_coordinates(mask: np.ndarray, n_t: int) -> tuple[np.ndarray, tuple]:
    """Unit-cube coords of every active cell at every snapshot, time-major.

    Returns (coords (n_t * n_active, 3), (rows, cols)) where rows/cols give
    the active-cell scan order shared with the target gathering.
    """
    mask = np.asarray(mask, dtype=bool)
    n1, n2 = mask.shape
    rows, cols = np.nonzero(mask)
    x1 = (rows + 0.5) / n1
    x2 = (cols + 0.5) / n2
    t_norm = np.arange(n_t) / max(n_t - 1, 1)
    coords = np.concatenate([
        np.stack([x1, x2, np.full(rows.size, tv)], axis=1) for tv in t_norm
    ]).astype(np.float32)
    return coords, (rows, cols)


def gather_targets(h_norm: np.ndarray, rows, cols) -> np.ndarray:
    """(N, N_t, H, W) normalized heads -> (N, N_t * n_active), time-major."""
    return h_norm[:, :, rows, cols].reshape(h_norm.shape[0], -1)


def project_samples(basis: KLEBasis, y_fields: np.ndarray,
                    n_modes: int) -> np.ndarray:
    return np.stack([kle_project(basis, f, n_modes=n_modes)
                     for f in y_fields]).astype(np.float32)


def train_deeponet(xi: np.ndarray, h_norm: np.ndarray, mask: np.ndarray,
                   config: DeepONetConfig, train_cfg: TrainConfig, seed: int):
    """Each step pairs one sample batch with all active space-time coords."""
    torch.manual_seed(seed)
    model = DeepONet(config)
    coords_np, (rows, cols) = observation_coordinates(mask, h_norm.shape[1])
    coords = torch.as_tensor(coords_np)
    xi_t = torch.as_tensor(xi.astype(np.float32))
    targets = torch.as_tensor(gather_targets(h_norm, rows, cols)
                              .astype(np.float32))
    gen = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    n = xi_t.shape[0]
    history = []
    for epoch in range(train_cfg.epochs):
        order = torch.randperm(n, generator=gen)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            pred = model(xi_t[idx], coords)
            loss = ((pred - targets[idx]) ** 2).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite DeepONet loss at epoch {epoch}",
                    history=history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss)
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return model, history


def deeponet_forward_field(model: DeepONet, xi: np.ndarray,
                           stats: ds.NormStats, mask: np.ndarray,
                           n_t: int = 24) -> np.ndarray:
    """Evaluate on the full active space-time grid; raw field with sentinels."""
    coords_np, (rows, cols) = observation_coordinates(mask, n_t)
    model.eval()
    with torch.no_grad():
        pred = model(torch.as_tensor(xi.astype(np.float32))[None],
                     torch.as_tensor(coords_np))[0].numpy()
    mask = np.asarray(mask, dtype=bool)
    h_norm = np.zeros((n_t,) + mask.shape, dtype=np.float64)
    h_norm[:, rows, cols] = pred.reshape(n_t, rows.size)
    return ds.denormalize_h(h_norm, stats, mask)


def save_deeponet_checkpoint(path, model: DeepONet, fingerprint: str = ""):
    state = {k: v.detach().numpy() for k, v in model.state_dict().items()}
    ds.save_checkpoint(path, state, config=model.config.to_dict(),
                       kind="deeponet", fingerprint=fingerprint)


def load_deeponet_checkpoint(path) -> tuple[DeepONet, dict]:
    state, meta = ds.load_checkpoint(path, expected_kind="deeponet")
    model = DeepONet(DeepONetConfig.from_dict(meta["config"]))
    model.load_state_dict({k: torch.as_tensor(np.array(v))
                           for k, v in state.items()})
    model.eval()
    return model, meta
