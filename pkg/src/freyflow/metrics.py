"""Error metrics computed over active cells only."""

from __future__ import annotations

import numpy as np

from .exceptions import ZeroReferenceError


def relative_l2(pred, ref, mask) -> float:
    """sqrt(||pred - ref||^2 / ||ref||^2) over active cells and all timesteps."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    mask = np.asarray(mask, dtype=bool)
    extra = ref.ndim - mask.ndim
    sel = np.broadcast_to(mask.reshape((1,) * extra + mask.shape), ref.shape)
    ref_sq = float((ref[sel] ** 2).sum())
    if ref_sq == 0.0:
        raise ZeroReferenceError("reference is identically zero on the mask")
    diff_sq = float(((pred[sel] - ref[sel]) ** 2).sum())
    return float(np.sqrt(diff_sq / ref_sq))
