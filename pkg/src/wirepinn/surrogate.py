"""Linear map from normalized electron density to electrostatic potential.

Fit on the low-bias snapshots only, this affine surrogate emulates the
inverse of the discretized Poisson operator: once the charge profile is
known, the potential is a linear function of it, so plain least squares
can learn the solve.  With 40 snapshots against 2193 features the fit is
underdetermined; the minimum-norm pseudoinverse solution interpolates the
training set exactly and is the canonical deterministic choice.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DENSITY_OFFSET",
    "DENSITY_SCALE",
    "LinearSurrogate",
    "SurrogateMeta",
    "denormalize_density",
    "fit",
    "normalize_density",
    "predict_phi",
    "scatter_stats",
]

logger = logging.getLogger(__name__)

DENSITY_OFFSET = 1e10  # cm^-3, keeps oxide nodes positive for the log
DENSITY_SCALE = 1e19   # cm^-3


def normalize_density(n):
    """n -> (n + 1e10) / 1e19 elementwise."""
    return (np.asarray(n, dtype=float) + DENSITY_OFFSET) / DENSITY_SCALE


def denormalize_density(n_tilde):
    """Inverse of ``normalize_density``."""
    return np.asarray(n_tilde, dtype=float) * DENSITY_SCALE - DENSITY_OFFSET


@dataclass(frozen=True)
class SurrogateMeta:
    n_snapshots: int
    bias_min: float
    bias_max: float
    mesh_fingerprint: str
    rcond: float
    ridge: float
    density_offset: float = DENSITY_OFFSET
    density_scale: float = DENSITY_SCALE


@dataclass(frozen=True)
class LinearSurrogate:
    """phi = weights @ n_tilde + intercept, with training provenance."""

    weights: np.ndarray    # (n_nodes, n_nodes), output x input
    intercept: np.ndarray  # (n_nodes,)
    meta: SurrogateMeta

    def __post_init__(self):
        n = len(self.intercept)
        if self.weights.shape != (n, n):
            raise ValueError(f"weights shape {self.weights.shape} does not match intercept ({n},)")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.intercept))):
            raise ValueError("surrogate entries must be finite")
        self.weights.flags.writeable = False
        self.intercept.flags.writeable = False


def fit(
    snapshots,
    mesh_fingerprint: str = "",
    rcond: float = 1e-12,
    ridge: float = 0.0,
) -> LinearSurrogate:
    """Least-squares fit of potential profiles against normalized densities.

    ``snapshots`` is the training slice (typically the first 40 of a
    sweep).  The fit centers both sides, computes the minimum-norm
    solution through an SVD with relative cutoff ``rcond`` (optionally
    Tikhonov-damped by ``ridge``), and absorbs the static donor/boundary
    contribution into the intercept.  Raises ValueError on empty input or
    mismatched field lengths.
    """
    if len(snapshots) == 0:
        raise ValueError("cannot fit a surrogate on zero snapshots")
    if len(snapshots) < 2:
        logger.warning("fitting on %d snapshot(s): rank-deficient, intercept-only model", len(snapshots))

    n_nodes = len(snapshots[0].phi)
    for s in snapshots:
        if len(s.phi) != n_nodes or len(s.n) != n_nodes:
            raise ValueError("snapshots disagree on mesh size")

    x = np.stack([normalize_density(s.n) for s in snapshots])  # (k, n)
    y = np.stack([s.phi for s in snapshots])                   # (k, n)
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)

    u, s, vt = np.linalg.svd(x - x_mean, full_matrices=False)
    keep = s > rcond * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    logger.info("surrogate fit: %d snapshots, rank %d kept of %d", len(snapshots), keep.sum(), len(s))
    if keep.any():
        s_kept = s[keep]
        gain = s_kept / (s_kept**2 + ridge) if ridge > 0.0 else 1.0 / s_kept
        # weights = Yc^T U diag(gain) V^T, assembled right-to-left
        weights = ((y - y_mean).T @ u[:, keep] * gain) @ vt[keep]
    else:
        weights = np.zeros((n_nodes, n_nodes))
    intercept = y_mean - weights @ x_mean

    biases = [float(s.v_gate) for s in snapshots]
    meta = SurrogateMeta(
        n_snapshots=len(snapshots),
        bias_min=min(biases),
        bias_max=max(biases),
        mesh_fingerprint=mesh_fingerprint,
        rcond=rcond,
        ridge=ridge,
    )
    return LinearSurrogate(weights=weights, intercept=intercept, meta=meta)


def predict_phi(surrogate: LinearSurrogate, n_tilde: np.ndarray) -> np.ndarray:
    """phi = W @ n_tilde + b.  The adjoint of this exact linear map is W^T,
    which is what backpropagation through the frozen surrogate uses."""
    n_tilde = np.asarray(n_tilde, dtype=float)
    if n_tilde.shape != surrogate.intercept.shape:
        raise ValueError(
            f"n_tilde has shape {n_tilde.shape}, surrogate expects {surrogate.intercept.shape}"
        )
    return surrogate.weights @ n_tilde + surrogate.intercept


def scatter_stats(surrogate: LinearSurrogate, dataset, gate_nodes=None) -> dict:
    """Predicted-vs-oracle statistics over a whole sweep.

    Returns R^2 over all nodes and snapshots, the per-snapshot max
    absolute potential error, and (if gate nodes are given) the error of
    the mean gate potential against each snapshot's bias.
    """
    preds = np.stack([predict_phi(surrogate, normalize_density(s.n)) for s in dataset.snapshots])
    truth = np.stack([s.phi for s in dataset.snapshots])
    resid = preds - truth
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    stats = {
        "r2": 1.0 - ss_res / ss_tot,
        "max_abs_err": float(np.max(np.abs(resid))),
        "per_snapshot_max_err": np.max(np.abs(resid), axis=1),
        "biases": dataset.biases,
    }
    if gate_nodes is not None:
        gate_mean = preds[:, gate_nodes].mean(axis=1)
        stats["gate_err"] = gate_mean - dataset.biases
    return stats
