"""CSV tables and figures for forward and inverse experiment results."""

from __future__ import annotations

import csv
import os

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import relative_l2

REPORT_TIMESTEPS = (0, 11, 22)


def write_csv(path, header, rows) -> None:
    """Deterministic RFC-4180 CSV with \r\n line endings."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def compare_forward(predictors: dict, y_test: np.ndarray, h_test: np.ndarray,
                    mask: np.ndarray, manifests: dict | None = None):
    """Held-out forward accuracy table: one row per requested model.

    ``predictors`` maps model name to a raw-field forward function; the
    returned rows join training manifests (time/energy/params) if given.
    """
    manifests = manifests or {}
    rows = []
    for name, fn in predictors.items():
        errs = [relative_l2(fn(y_test[i]), h_test[i], mask)
                for i in range(y_test.shape[0])]
        info = manifests.get(name, {})
        rows.append({
            "model": name,
            "rl2_h": float(np.mean(errs)) if errs else None,
            "n_parameters": info.get("n_parameters"),
            "train_time_s": info.get("train_time_s"),
            "energy_joules": info.get("energy_joules"),
            "epochs": info.get("epochs"),
        })
    return rows


def save_comparison_csv(path, rows) -> None:
    header = ["model", "rl2_h", "n_parameters", "train_time_s",
              "energy_joules", "epochs"]
    write_csv(path, header, [[r.get(k, "") if r.get(k) is not None else ""
                              for k in header] for r in rows])


def _head_panel(field, mask, ax, title, cmap="viridis"):
    shown = np.where(mask, field, np.nan)
    im = ax.imshow(shown.T, origin="lower", cmap=cmap)
    ax.set_title(title, fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])
    return im


def render_forward_report(out_dir, h_ref, predictions: dict,
                          mask: np.ndarray, timesteps=REPORT_TIMESTEPS):
    """Reference head maps plus per-model pointwise-error maps and one CSV.

    Emits one image for the reference and one per model, plus a summary
    CSV; returns the list of written files.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    fig, axes = plt.subplots(1, len(timesteps), figsize=(9, 3))
    for ax, t in zip(np.atleast_1d(axes), timesteps):
        im = _head_panel(h_ref[t], mask, ax, f"reference, month {t + 1}")
        fig.colorbar(im, ax=ax, shrink=0.7)
    ref_path = os.path.join(out_dir, "forward_reference.png")
    fig.savefig(ref_path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    written.append(ref_path)

    for name, pred in predictions.items():
        fig, axes = plt.subplots(1, len(timesteps), figsize=(9, 3))
        for ax, t in zip(np.atleast_1d(axes), timesteps):
            err = np.abs(pred[t] - h_ref[t])
            im = _head_panel(err, mask, ax, f"{name} |error|, month {t + 1}",
                             cmap="magma")
            fig.colorbar(im, ax=ax, shrink=0.7)
        path = os.path.join(out_dir, f"forward_error_{name}.png")
        fig.savefig(path, dpi=110, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    csv_path = os.path.join(out_dir, "forward_errors.csv")
    rows = [[name, relative_l2(pred, h_ref, mask)]
            for name, pred in predictions.items()]
    write_csv(csv_path, ["model", "rl2_h"], rows)
    written.append(csv_path)
    return written


def render_gamma_report(out_dir, sweeps: dict):
    """rl2_y versus gamma on a log-x plot, one curve per method, plus CSV."""
    os.makedirs(out_dir, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 4))
    csv_rows = []
    for method, rows in sweeps.items():
        gammas = [r["gamma"] for r in rows if r.get("ok")]
        errs = [r["rl2_y"] for r in rows if r.get("ok")]
        ax.plot(gammas, errs, marker="o", label=method)
        csv_rows.extend([[method, g, e] for g, e in zip(gammas, errs)])
    ax.set_xscale("log")
    ax.set_xlabel("regularization weight")
    ax.set_ylabel("relative l2 error in y")
    ax.legend()
    fig_path = os.path.join(out_dir, "inverse_gamma_sweep.png")
    fig.savefig(fig_path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    csv_path = os.path.join(out_dir, "inverse_gamma_sweep.csv")
    write_csv(csv_path, ["method", "gamma", "rl2_y"], csv_rows)
    return [fig_path, csv_path]


def render_inverse_report(out_dir, y_ref, estimates: dict, mask: np.ndarray):
    """Estimated y, reference y, and point-error maps per method."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for method, y_est in estimates.items():
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        panels = ((y_est, f"{method} estimate", "viridis"),
                  (y_ref, "reference", "viridis"),
                  (y_ref - y_est, "point error", "coolwarm"))
        for ax, (field, title, cmap) in zip(axes, panels):
            im = _head_panel(field, mask, ax, title, cmap=cmap)
            fig.colorbar(im, ax=ax, shrink=0.7)
        path = os.path.join(out_dir, f"inverse_estimate_{method}.png")
        fig.savefig(path, dpi=110, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written
