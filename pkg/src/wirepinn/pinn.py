"""Self-supervised solver: generator + frozen surrogate + Fermi closure.

For a requested gate bias, a freshly initialized generator network is
trained to emit a normalized density profile whose surrogate-predicted
potential (a) matches the bias on the gate contact nodes and (b) maps
back to the same density through the Fermi-Dirac closure.  No bias
ramping and no labeled solution data are involved; the only trained-on-
data component is the frozen low-bias surrogate.

The density-consistency loss is taken in log10 space: the density spans
many orders of magnitude and a linear-scale MSE would see everything
below the normalization scale as zero.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fermi
from .mesh import Q_COULOMB, TensorMesh, nearest_node
from .oracle import Snapshot, SweepDataset
from .surrogate import DENSITY_OFFSET, DENSITY_SCALE, LinearSurrogate, predict_phi

__all__ = [
    "DivergedError",
    "ErrorReport",
    "PinnProblem",
    "PinnResult",
    "SolveOptions",
    "SweepSolveResult",
    "best_losses_within",
    "evaluate_against",
    "gate_voltage",
    "loss_boundary",
    "loss_fd",
    "postprocess",
    "solve_bias",
    "sweep_solve",
    "teacher_forced_losses",
]

logger = logging.getLogger(__name__)

V_GATE_SCALE = 0.75          # network input is v_gate / V_GATE_SCALE
POSTPROCESS_SHIFT = 1.0 + 1e-9


class DivergedError(RuntimeError):
    """Training loss became non-finite; carries the step index and the
    loss history accumulated up to it."""

    def __init__(self, message: str, step: int, history: np.ndarray | None = None):
        super().__init__(message)
        self.step = step
        self.history = history


@dataclass
class PinnProblem:
    """Frozen ingredients of a self-supervised solve.

    The surrogate must have been trained only below ``max_training_bias``
    (the out-of-range firewall); violating metadata raises at
    construction.
    """

    mesh: TensorMesh
    surrogate: LinearSurrogate
    params: fermi.SemiconductorParams
    w_boundary: float = 1.0
    w_fd: float = 1.0
    epochs: int = 200_000
    seed: int = 42
    max_training_bias: float = 0.30

    gate_nodes: np.ndarray = field(init=False)
    oxide_nodes: np.ndarray = field(init=False)

    def __post_init__(self):
        meta = self.surrogate.meta
        if meta.bias_max > self.max_training_bias + 1e-9:
            raise ValueError(
                f"surrogate was trained up to V_G={meta.bias_max} V, above the "
                f"{self.max_training_bias} V firewall for out-of-range claims"
            )
        if meta.mesh_fingerprint and meta.mesh_fingerprint != self.mesh.fingerprint():
            raise ValueError("surrogate was fitted on a different mesh")
        self.gate_nodes = self.mesh.gate_nodes()
        self.oxide_nodes = np.flatnonzero(~self.mesh.silicon_mask())
        if len(self.gate_nodes) == 0:
            raise ValueError("mesh has no gate contact nodes")
        self._silicon_mask = self.mesh.silicon_mask()
        self._factorize_surrogate()

    def _factorize_surrogate(self) -> None:
        """Capture the surrogate's low-rank range for cheap training matvecs.

        The fitted weight matrix has rank at most n_snapshots - 1, so
        W = Q (Q^T W) holds to rounding once Q spans its range; a seeded
        randomized range finder gets Q in two thin matmuls.  Training then
        costs two skinny matvecs per pass instead of a full n^2 one.
        Falls back to the dense matrix if the capture is not exact.
        """
        w = self.surrogate.weights
        n = w.shape[0]
        r = min(n, max(64, self.surrogate.meta.n_snapshots + 24))
        self._factors = None
        if r >= n:
            self._weights_t = np.ascontiguousarray(w.T)
            return
        rng = np.random.default_rng(0)
        sample = w @ rng.standard_normal((n, r))
        q, _ = np.linalg.qr(sample)
        b = q.T @ w
        x = rng.standard_normal((n, 3))
        ref = w @ x
        err = np.linalg.norm(ref - q @ (b @ x)) / max(np.linalg.norm(ref), 1e-300)
        if err < 1e-10:
            self._factors = (
                np.ascontiguousarray(q), np.ascontiguousarray(b),
                np.ascontiguousarray(q.T), np.ascontiguousarray(b.T),
            )
            self._weights_t = None
        else:  # pragma: no cover - only for hand-built full-rank matrices
            logger.warning("surrogate range capture missed (err %.2e); using dense matvecs", err)
            self._weights_t = np.ascontiguousarray(w.T)

    def surrogate_phi(self, n_tilde):
        """phi = W @ n_tilde + b as a tape op (factored when possible)."""
        if self._factors is not None:
            q, b, qt, bt = self._factors
            inner = ad.fixed_affine(n_tilde, b, 0.0, a_transpose=bt)
            return ad.fixed_affine(inner, q, self.surrogate.intercept, a_transpose=qt)
        return ad.fixed_affine(n_tilde, self.surrogate.weights,
                               self.surrogate.intercept, a_transpose=self._weights_t)

    def build_losses(self, net: "ad.GeneratorNet", v_gate: float):
        """The exact training graph: (loss_boundary, loss_fd, total)."""
        raw = net.forward(v_gate / V_GATE_SCALE)
        n_tilde = postprocess(raw)
        phi = self.surrogate_phi(n_tilde)
        l1 = loss_boundary(phi, v_gate, self.gate_nodes)
        l2 = loss_fd(n_tilde, phi, self.params, self.mesh)
        total = ad.add_weighted(l1, self.w_boundary, l2, self.w_fd)
        return l1, l2, total


@dataclass
class SolveOptions:
    epochs: int | None = None      # None -> problem.epochs
    seed: int | None = None        # None -> problem.seed
    lr: float = 1e-3
    lr_factor: float = 0.5
    lr_patience: int = 2000
    lr_threshold: float = 1e-3
    lr_min: float = 1e-5
    arch: str = "dense"
    hidden: tuple = (64, 256)
    channels: tuple = (4, 8)
    checkpoints: tuple = ()        # epoch counts at which to snapshot the prediction
    accept_loss: float = 1e-6      # total-loss bound marking a run as converged
    log_every: int = 0             # 0 disables progress logging


@dataclass
class ErrorReport:
    """Per-profile error metrics against an oracle snapshot."""

    v_gate: float
    max_phi_err_pct: float
    max_logn_err_pct: float
    phi_err_pct: np.ndarray
    logn_err_pct: np.ndarray
    epochs: int = 0
    final_loss_boundary: float = float("nan")
    final_loss_fd: float = float("nan")
    final_loss_total: float = float("nan")
    v_gate_extracted: float = float("nan")

    def __post_init__(self):
        if self.max_phi_err_pct < 0 or self.max_logn_err_pct < 0:
            raise ValueError("error percentages cannot be negative")


@dataclass
class PinnResult:
    prediction: Snapshot           # fields of the best-loss state in the budget
    history: np.ndarray            # (steps, 5): step, lr, loss1, loss2, total
    checkpoints: dict              # epoch budget -> Snapshot (best state within it)
    seed: int
    epochs: int
    wall_time_s: float
    best_loss: float = float("nan")
    best_losses: tuple = (float("nan"),) * 3


def postprocess(raw):
    """Raw ELU output -> normalized density: n_tilde = raw + 1 + 1e-9.

    The +1 lifts the ELU floor to zero; the extra 1e-9 keeps the log
    defined and equals the 1e10/1e19 normalization offset, so a floored
    output means exactly zero physical density.
    """
    return ad.scale_shift(raw, 1.0, POSTPROCESS_SHIFT)


def density_from_normalized(n_tilde: np.ndarray) -> np.ndarray:
    """Physical density n = n_tilde * 1e19 - 1e10 (inverse of normalize)."""
    return np.asarray(n_tilde) * DENSITY_SCALE - DENSITY_OFFSET


def gate_voltage(phi, gate_nodes: np.ndarray) -> float:
    """Extracted gate bias: mean potential over the gate contact nodes."""
    if len(gate_nodes) == 0:
        raise ValueError("gate node set is empty")
    phi = phi.value if isinstance(phi, ad.Tensor) else np.asarray(phi)
    return float(np.mean(phi[gate_nodes]))


def loss_boundary(phi, v_gate: float, gate_nodes: np.ndarray):
    """Mean squared gate-node deviation from the requested bias [V^2]."""
    if len(gate_nodes) == 0:
        raise ValueError("gate node set is empty")
    return ad.mse(ad.gather(phi, gate_nodes), float(v_gate))


def loss_fd(n_tilde, phi, params: fermi.SemiconductorParams, mesh: TensorMesh):
    """Fermi-Dirac consistency loss in log space.

    The potential is pushed through the density closure (region aware, so
    oxide nodes pin to the normalization floor), normalized exactly like
    the generator output, and compared in log10 over all nodes.
    """
    n_fd = ad.fermi_density(phi, params, mesh.silicon_mask())
    n_fd_tilde = ad.shift_divide(n_fd, DENSITY_OFFSET, DENSITY_SCALE)
    return ad.mse(ad.log10(n_fd_tilde), ad.log10(n_tilde))


def _prediction_snapshot(problem: PinnProblem, n_tilde: np.ndarray, v_gate: float,
                         converged: bool) -> Snapshot:
    phi = predict_phi(problem.surrogate, n_tilde)
    n = density_from_normalized(n_tilde)
    charge = Q_COULOMB * (problem.mesh.net_doping - n)
    return Snapshot(v_gate=float(v_gate), phi=phi, n=n, net_charge=charge,
                    converged=converged, residual_norm=float("nan"))


def solve_bias(problem: PinnProblem, v_gate: float, opts: SolveOptions | None = None) -> PinnResult:
    """Train a fresh generator to solve one gate bias.

    Every step: forward -> postprocess -> surrogate potential -> boundary
    loss; potential -> Fermi closure -> consistency loss; Adam update with
    the plateau schedule.  Returns the predicted snapshot (potential from
    the surrogate, density from the generator) taken at the best-loss
    state within the budget, the full loss history and any requested
    intermediate checkpoints (each the best state within its own budget,
    so a checkpoint equals a run stopped there).  Raises DivergedError if
    the loss goes non-finite.
    """
    opts = opts or SolveOptions()
    if not (-0.01 <= v_gate <= 1.0):
        raise ValueError(f"v_gate {v_gate} outside the sane [0, 1] V range")
    epochs = opts.epochs if opts.epochs is not None else problem.epochs
    seed = opts.seed if opts.seed is not None else problem.seed
    if epochs < 1:
        raise ValueError("epochs must be >= 1")

    net = ad.GeneratorNet(
        arch=opts.arch, n_out=problem.mesh.n_nodes, hidden=opts.hidden,
        grid_shape=(problem.mesh.nx, problem.mesh.ny), channels=opts.channels, seed=seed,
    )
    adam = ad.AdamState(net.params, lr=opts.lr)
    sched = ad.PlateauScheduler(lr=opts.lr, factor=opts.lr_factor, patience=opts.lr_patience,
                                threshold=opts.lr_threshold, min_lr=opts.lr_min)

    v_in = v_gate / V_GATE_SCALE
    want_checkpoint = set(int(c) for c in opts.checkpoints)

    # The run keeps the best-loss parameter state: Adam occasionally takes
    # a transient excursion, and the trained state for a given epoch
    # budget should not depend on whether the budget ends mid-excursion.
    best_loss = np.inf
    best_losses = (np.nan, np.nan, np.nan)
    best_params = [np.empty_like(p.value) for p in net.params]

    def best_prediction(converged):
        live = [p.value for p in net.params]
        for p, b in zip(net.params, best_params):
            p.value = b
        n_pred = postprocess(net.forward(v_in).value)
        for p, v in zip(net.params, live):
            p.value = v
        return _prediction_snapshot(problem, n_pred, v_gate, converged)

    history = np.empty((epochs, 5))
    checkpoints = {}
    t0 = time.perf_counter()
    for step in range(epochs):
        net.zero_grad()
        l1, l2, total = problem.build_losses(net, v_gate)
        tv = float(total.value)
        if not np.isfinite(tv):
            raise DivergedError(f"loss diverged at step {step} (V_G={v_gate})",
                                step=step, history=history[:step].copy())
        if tv < best_loss:
            best_loss = tv
            best_losses = (float(l1.value), float(l2.value), tv)
            for p, b in zip(net.params, best_params):
                np.copyto(b, p.value)
        ad.backward(total)
        lr = ad.scheduler_step(sched, tv)
        adam.lr = lr
        ad.adam_step(adam, net.params, [p.grad for p in net.params])
        history[step] = (step, lr, float(l1.value), float(l2.value), tv)
        done = step + 1
        if done in want_checkpoint:
            checkpoints[done] = best_prediction(converged=bool(best_loss <= opts.accept_loss))
        if opts.log_every and done % opts.log_every == 0:
            logger.info("V_G=%.4f step %d/%d lr=%.2e loss=%.3e best=%.3e",
                        v_gate, done, epochs, lr, tv, best_loss)

    converged = bool(best_loss <= opts.accept_loss)
    prediction = checkpoints[epochs] if epochs in checkpoints else best_prediction(converged)
    return PinnResult(
        prediction=prediction,
        history=history,
        checkpoints=checkpoints,
        seed=seed,
        epochs=epochs,
        wall_time_s=time.perf_counter() - t0,
        best_loss=float(best_loss),
        best_losses=best_losses,
    )


def best_losses_within(history: np.ndarray, budget: int):
    """(loss1, loss2, total) at the best-total step within a budget prefix."""
    budget = min(int(budget), len(history))
    idx = int(np.argmin(history[:budget, 4]))
    return tuple(history[idx, 2:5])


def evaluate_against(prediction: Snapshot, oracle: Snapshot,
                     gate_nodes: np.ndarray | None = None,
                     epochs: int = 0, losses=(float("nan"),) * 3) -> ErrorReport:
    """Max-percentage error report of a prediction against an oracle snapshot.

    Potential errors are normalized by the oracle's max |phi|; density
    errors are compared as log10 of the normalized density (+1e10, /1e19,
    same convention on both sides) and normalized by the oracle's max
    |log10 n_tilde|.
    """
    if prediction.phi.shape != oracle.phi.shape:
        raise ValueError("prediction and oracle live on different meshes")
    phi_scale = float(np.max(np.abs(oracle.phi)))
    phi_err = 100.0 * np.abs(prediction.phi - oracle.phi) / phi_scale

    log_pred = np.log10((prediction.n + DENSITY_OFFSET) / DENSITY_SCALE)
    log_orac = np.log10((oracle.n + DENSITY_OFFSET) / DENSITY_SCALE)
    log_scale = float(np.max(np.abs(log_orac)))
    logn_err = 100.0 * np.abs(log_pred - log_orac) / log_scale

    return ErrorReport(
        v_gate=prediction.v_gate,
        max_phi_err_pct=float(phi_err.max()),
        max_logn_err_pct=float(logn_err.max()),
        phi_err_pct=phi_err,
        logn_err_pct=logn_err,
        epochs=epochs,
        final_loss_boundary=float(losses[0]),
        final_loss_fd=float(losses[1]),
        final_loss_total=float(losses[2]),
        v_gate_extracted=(gate_voltage(prediction.phi, gate_nodes)
                          if gate_nodes is not None else float("nan")),
    )


def teacher_forced_losses(problem: PinnProblem, snapshot: Snapshot):
    """Losses with the generator bypassed and the oracle density fed in.

    Documents the fixed-point property: at ground truth the consistency
    loss vanishes up to surrogate error and the boundary loss equals the
    squared surrogate gate error.
    """
    n_tilde = (snapshot.n + DENSITY_OFFSET) / DENSITY_SCALE
    phi = predict_phi(problem.surrogate, n_tilde)
    l1 = loss_boundary(phi, snapshot.v_gate, problem.gate_nodes)
    l2 = loss_fd(n_tilde, phi, problem.params, problem.mesh)
    return float(l1), float(l2), float(problem.w_boundary * l1 + problem.w_fd * l2)


@dataclass
class SweepSolveResult:
    biases: np.ndarray
    reports: list                 # ErrorReport or None per bias
    predictions: list             # Snapshot or None per bias
    failures: dict                # bias index -> message
    probe_node: int
    probe_table: np.ndarray       # (n_ok, 5): v_gate, phi_oracle, phi_pred, n_oracle, n_pred


_WORKER_CTX = {}


def _sweep_worker(args):
    idx, v_gate = args
    problem = _WORKER_CTX["problem"]
    opts = _WORKER_CTX["opts"]
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=1):
            result = solve_bias(problem, v_gate, opts)
    except ImportError:  # pragma: no cover - threadpoolctl ships with sklearn
        result = solve_bias(problem, v_gate, opts)
    except DivergedError as exc:
        return idx, None, str(exc)
    return idx, result, None


def sweep_solve(problem: PinnProblem, biases, oracle: SweepDataset | None = None,
                opts: SolveOptions | None = None, probe_xy=(0.0405, 0.002),
                workers: int = 1) -> SweepSolveResult:
    """Independent ``solve_bias`` per bias, optionally in parallel workers.

    Each solve is deterministic for its (bias, seed) regardless of worker
    count.  Per-bias divergences are recorded in ``failures`` and the rest
    of the sweep continues.  When an oracle sweep is supplied, snapshots
    at matching biases are scored into per-bias error reports and the
    probe-trace table is filled.
    """
    opts = opts or SolveOptions()
    biases = np.asarray(list(biases), dtype=float)
    results: list = [None] * len(biases)
    failures: dict = {}

    if workers > 1 and len(biases) > 1:
        import multiprocessing as mp

        _WORKER_CTX["problem"] = problem
        _WORKER_CTX["opts"] = opts
        ctx = mp.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            for idx, res, err in pool.imap_unordered(_sweep_worker, list(enumerate(biases))):
                if err is not None:
                    failures[idx] = err
                else:
                    results[idx] = res
        _WORKER_CTX.clear()
    else:
        for idx, v in enumerate(biases):
            try:
                results[idx] = solve_bias(problem, float(v), opts)
            except DivergedError as exc:
                failures[idx] = str(exc)

    probe_node = nearest_node(problem.mesh, *probe_xy)
    oracle_by_bias = {}
    if oracle is not None:
        for snap in oracle.snapshots:
            oracle_by_bias[round(snap.v_gate, 9)] = snap

    reports: list = [None] * len(biases)
    predictions: list = [None] * len(biases)
    probe_rows = []
    for idx, res in enumerate(results):
        if res is None:
            continue
        predictions[idx] = res.prediction
        snap = oracle_by_bias.get(round(float(biases[idx]), 9))
        if snap is not None:
            reports[idx] = evaluate_against(
                res.prediction, snap, gate_nodes=problem.gate_nodes,
                epochs=res.epochs, losses=res.best_losses,
            )
            probe_rows.append((
                float(biases[idx]),
                float(snap.phi[probe_node]), float(res.prediction.phi[probe_node]),
                float(snap.n[probe_node]), float(res.prediction.n[probe_node]),
            ))
    probe_table = np.array(probe_rows) if probe_rows else np.empty((0, 5))
    return SweepSolveResult(
        biases=biases, reports=reports, predictions=predictions,
        failures=failures, probe_node=probe_node, probe_table=probe_table,
    )
