"""Latent-to-latent map and the composed encoder/map/decoder surrogate.

The three components train independently and communicate only through
checkpoints; a SurrogateBundle reassembles them for pure inference.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import data as ds
from .exceptions import BundleAssemblyError, FingerprintMismatchError, \
    TrainingDivergedError
from .vae import ConvVAE, TrainConfig, VAEConfig, encode_means


@dataclass(frozen=True)
class MapConfig:
    in_dim: int = 150
    hidden: tuple[int, ...] = (500, 500)
    out_dim: int = 90

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class LatentMap(nn.Module):
    """Fully connected map between latent spaces; tanh hidden activations."""

    def __init__(self, config: MapConfig | None = None):
        super().__init__()
        self.config = config or MapConfig()
        dims = (self.config.in_dim, *self.config.hidden, self.config.out_dim)
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers.append(nn.Linear(a, b))
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = torch.tanh(layer(x))
        return self.layers[-1](x)


@dataclass
class LatentPairDataset:
    mu_y: np.ndarray  # (N, in_dim)
    mu_h: np.ndarray  # (N, out_dim)
    fingerprint: str

    @property
    def n(self):
        return self.mu_y.shape[0]


def build_latent_dataset(y_model: ConvVAE, h_model: ConvVAE,
                         y_norm: np.ndarray, h_norm: np.ndarray,
                         mask: np.ndarray, fingerprint: str = "") -> LatentPairDataset:
    """Latent means of both encoders over the normalized dataset (no sampling)."""
    if y_norm.shape[0] != h_norm.shape[0]:
        raise ValueError("y and h sample counts differ")
    mu_y = encode_means(y_model, y_norm[:, None], mask)
    mu_h = encode_means(h_model, h_norm, mask)
    return LatentPairDataset(mu_y=mu_y, mu_h=mu_h, fingerprint=fingerprint)


def train_map(pairs: LatentPairDataset, train_cfg: TrainConfig, seed: int,
              config: MapConfig | None = None):
    """Minimize the mean squared latent mismatch; returns (model, history)."""
    if pairs.n < 2:
        raise ValueError("latent map training needs at least 2 pairs")
    config = config or MapConfig(in_dim=pairs.mu_y.shape[1],
                                 out_dim=pairs.mu_h.shape[1])
    torch.manual_seed(seed)
    model = LatentMap(config)
    x = torch.as_tensor(pairs.mu_y.astype(np.float32))
    t = torch.as_tensor(pairs.mu_h.astype(np.float32))
    gen = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    history = []
    n = pairs.n
    for epoch in range(train_cfg.epochs):
        order = torch.randperm(n, generator=gen)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            pred = model(x[idx])
            loss = ((pred - t[idx]) ** 2).sum(dim=1).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite map loss at epoch {epoch}", history=history)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss)
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))
    return model, history


@dataclass
class SurrogateBundle:
    y_vae: ConvVAE
    latent_map: LatentMap
    h_vae: ConvVAE
    stats: ds.NormStats
    mask: np.ndarray
    fingerprint: str = ""


def predict(bundle: SurrogateBundle, y_field: np.ndarray) -> np.ndarray:
    """Raw y field in, raw (N_t, n_x1, n_x2) state field out; deterministic."""
    mask = bundle.mask
    y_norm = ds.normalize_y(y_field, bundle.stats, mask)
    with torch.no_grad():
        x = torch.as_tensor(y_norm.astype(np.float32))[None, None]
        mu_y = bundle.y_vae.encode(x).mu
        mu_h = bundle.latent_map(mu_y)
        h_norm = bundle.h_vae.decode(mu_h)[0].numpy()
    return ds.denormalize_h(h_norm, bundle.stats, mask)


# ---------------------------------------------------------------------------
# Checkpoint plumbing

def state_to_arrays(model: nn.Module) -> dict:
    return {k: v.detach().numpy() for k, v in model.state_dict().items()}


def arrays_to_state(model: nn.Module, arrays: dict) -> None:
    model.load_state_dict({k: torch.as_tensor(np.array(v))
                           for k, v in arrays.items()})


def save_vae_checkpoint(path, model: ConvVAE, fingerprint: str = ""):
    ds.save_checkpoint(path, state_to_arrays(model),
                       config=model.config.to_dict(),
                       kind=f"{model.config.variant}_vae",
                       fingerprint=fingerprint)


def load_vae_checkpoint(path, variant: str) -> tuple[ConvVAE, dict]:
    state, meta = ds.load_checkpoint(path, expected_kind=f"{variant}_vae")
    model = ConvVAE(VAEConfig.from_dict(meta["config"]))
    arrays_to_state(model, state)
    model.eval()
    return model, meta


def save_map_checkpoint(path, model: LatentMap, fingerprint: str = ""):
    ds.save_checkpoint(path, state_to_arrays(model),
                       config=model.config.to_dict(), kind="latent_map",
                       fingerprint=fingerprint)


def load_map_checkpoint(path) -> tuple[LatentMap, dict]:
    state, meta = ds.load_checkpoint(path, expected_kind="latent_map")
    model = LatentMap(MapConfig.from_dict(meta["config"]))
    arrays_to_state(model, state)
    model.eval()
    return model, meta


def assemble_bundle(y_vae_path, map_path, h_vae_path, stats_path,
                    mask: np.ndarray, check_fingerprints: bool = True
                    ) -> SurrogateBundle:
    """Load the three trained components plus statistics from disk.

    Raises BundleAssemblyError naming whichever artifact is missing and
    FingerprintMismatchError if the components disagree on provenance.
    """
    pieces = {"y-encoder checkpoint": y_vae_path,
              "latent map checkpoint": map_path,
              "h-decoder checkpoint": h_vae_path,
              "normalization stats": stats_path}
    for name, path in pieces.items():
        if not os.path.isdir(path):
            raise BundleAssemblyError(f"missing {name}: {path}")
    y_vae, y_meta = load_vae_checkpoint(y_vae_path, "y")
    latent_map, m_meta = load_map_checkpoint(map_path)
    h_vae, h_meta = load_vae_checkpoint(h_vae_path, "h")
    stats = ds.load_norm_stats(stats_path)
    prints = {y_meta.get("fingerprint"), m_meta.get("fingerprint"),
              h_meta.get("fingerprint")} - {"", None}
    if check_fingerprints and len(prints) > 1:
        raise FingerprintMismatchError(
            f"bundle components carry inconsistent fingerprints: {prints}")
    mask = np.asarray(mask, dtype=bool)
    return SurrogateBundle(y_vae=y_vae, latent_map=latent_map, h_vae=h_vae,
                           stats=stats, mask=mask,
                           fingerprint=next(iter(prints), ""))
