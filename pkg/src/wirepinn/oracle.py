"""Equilibrium nonlinear Poisson oracle for the gated nanowire.

Solves div(eps grad phi) = -q (N_D - N_A - n(phi)) on the tensor mesh by
damped Newton iteration with a direct banded factorization (y-fastest
ordering, bandwidth ny), and generates the gate-bias sweep that is the
only ground truth in this project.  Holes are neglected: the electron
density dominates the space charge in this device.

Boundary conditions: gate nodes are Dirichlet at the applied gate bias
(zero workfunction offset), source/drain nodes are Dirichlet at the
built-in potential fixed by charge neutrality, everything else -
including the y = 0 symmetry axis - is natural zero flux.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import fermi
from .mesh import (
    CONTACT_DRAIN,
    CONTACT_GATE,
    CONTACT_SOURCE,
    EPS0_F_PER_CM,
    FvCoefficients,
    Q_COULOMB,
    TensorMesh,
    assemble_fv_coefficients,
    nearest_node,
)

__all__ = [
    "ConvergenceError",
    "Snapshot",
    "SolverOptions",
    "SweepDataset",
    "built_in_potential",
    "extract_probe",
    "ramp_sweep",
    "residual_check",
    "solve_equilibrium",
]

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Newton iteration failed; carries the last residual norm."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class Snapshot:
    """Fields of one bias point on the shared mesh."""

    v_gate: float
    phi: np.ndarray          # [V] per node
    n: np.ndarray            # [cm^-3] per node, 0 in oxide
    net_charge: np.ndarray | None  # q*(N_D - N_A - n) [C/cm^3], None if unknown
    converged: bool = True
    residual_norm: float = float("nan")
    newton_iterations: int = 0


@dataclass
class SweepDataset:
    """Ordered snapshots of a gate ramp plus provenance."""

    snapshots: list
    mesh_fingerprint: str
    params: fermi.SemiconductorParams

    def __post_init__(self):
        b = self.biases
        if len(b) > 1 and np.any(np.diff(b) <= 0):
            raise ValueError("sweep biases must be strictly increasing")

    @property
    def biases(self) -> np.ndarray:
        return np.array([s.v_gate for s in self.snapshots])

    def __len__(self) -> int:
        return len(self.snapshots)


@dataclass
class SolverOptions:
    max_iterations: int = 100
    damping_clamp_vt: float = 10.0   # |delta phi| <= clamp * V_T per node per step
    tolerance: float | None = None   # absolute residual inf-norm; None -> charge-scaled
    zero_charge: bool = False        # testing hook: drop doping and carriers entirely


def default_tolerance(mesh: TensorMesh, coeffs: FvCoefficients) -> float:
    """1e-10 of the largest charge term q * |doping|_max * vol_max."""
    doping_scale = max(float(np.max(np.abs(mesh.net_doping))), 1e10)
    return 1e-10 * Q_COULOMB * doping_scale * float(np.max(coeffs.volume))


def built_in_potential(mesh: TensorMesh, params: fermi.SemiconductorParams) -> float:
    """Source/drain Dirichlet value from charge neutrality n = N_D."""
    source = mesh.contact_nodes(CONTACT_SOURCE)
    nd = float(mesh.net_doping[source].max()) if len(source) else 0.0
    if nd <= 0.0:
        return 0.0
    return params.phi_ref + params.v_t * fermi.inverse_fermi_half(nd / params.n_c)


def _dirichlet_values(mesh: TensorMesh, params, v_gate: float, zero_charge: bool) -> np.ndarray:
    """Per-node boundary values on contact nodes (0 elsewhere)."""
    phi_bi = 0.0 if zero_charge else built_in_potential(mesh, params)
    bc = np.zeros(mesh.n_nodes)
    bc[mesh.contact == CONTACT_GATE] = v_gate
    bc[mesh.contact == CONTACT_SOURCE] = phi_bi
    bc[mesh.contact == CONTACT_DRAIN] = phi_bi
    return bc


def _initial_guess(mesh: TensorMesh, bc: np.ndarray, v_gate: float, phi_bi: float) -> np.ndarray:
    """Interpolate between contact values: phi_bi in the bulk, blending
    linearly in y toward the gate value under the gate span."""
    nx, ny = mesh.nx, mesh.ny
    phi = np.full((nx, ny), phi_bi)
    gate_cols = np.unique(mesh.gate_nodes() // ny)
    if len(gate_cols):
        frac = mesh.y_nodes / mesh.y_nodes[-1]
        phi[gate_cols, :] = phi_bi + (v_gate - phi_bi) * frac[None, :]
    phi = phi.reshape(-1)
    mask = mesh.dirichlet_mask()
    phi[mask] = bc[mask]
    return phi


def solve_equilibrium(
    mesh: TensorMesh,
    coeffs: FvCoefficients,
    params: fermi.SemiconductorParams,
    v_gate: float,
    opts: SolverOptions | None = None,
    phi0: np.ndarray | None = None,
) -> Snapshot:
    """Damped Newton solve of the equilibrium Poisson system at one bias.

    The discrete residual at node c is
        F_c = sum_edges g * (phi_nb - phi_c) + q * (N_D - N_A - n(phi_c)) * vol_c
    and convergence requires max|F| <= tolerance over all non-Dirichlet
    nodes.  Newton updates are clamped to +-damping_clamp_vt * V_T per node.
    Raises ConvergenceError on stagnation or a singular linear system.
    """
    opts = opts or SolverOptions()
    nx, ny = mesh.nx, mesh.ny
    n_nodes = mesh.n_nodes
    tol = opts.tolerance if opts.tolerance is not None else default_tolerance(mesh, coeffs)
    clamp = opts.damping_clamp_vt * params.v_t

    bc_mask = mesh.dirichlet_mask()
    bc = _dirichlet_values(mesh, params, v_gate, opts.zero_charge)
    phi_bi = 0.0 if opts.zero_charge else built_in_potential(mesh, params)
    si = mesh.silicon_mask()
    doping = np.zeros(n_nodes) if opts.zero_charge else mesh.net_doping
    q_vol = Q_COULOMB * coeffs.volume

    if phi0 is None:
        phi = _initial_guess(mesh, bc, v_gate, phi_bi)
    else:
        phi = phi0.copy()
        phi[bc_mask] = bc[bc_mask]

    gx, gy = coeffs.gx, coeffs.gy
    free = ~bc_mask

    def density(p):
        if opts.zero_charge:
            return np.zeros(n_nodes)
        return fermi.electron_density(p, params, si)

    def residual(p):
        p2 = p.reshape(nx, ny)
        f = np.zeros((nx, ny))
        flux_x = gx * (p2[1:, :] - p2[:-1, :])
        f[:-1, :] += flux_x
        f[1:, :] -= flux_x
        flux_y = gy * (p2[:, 1:] - p2[:, :-1])
        f[:, :-1] += flux_y
        f[:, 1:] -= flux_y
        f = f.reshape(-1)
        f += q_vol * (doping - density(p))
        f[bc_mask] = p[bc_mask] - bc[bc_mask]
        return f

    # Banded Jacobian storage for solve_banded: ab[u + i - j, j] = J[i, j]
    u = ny
    ab = np.zeros((2 * ny + 1, n_nodes))

    def jacobian(p):
        ab[:] = 0.0
        diag = np.zeros((nx, ny))
        diag[:-1, :] -= gx
        diag[1:, :] -= gx
        diag[:, :-1] -= gy
        diag[:, 1:] -= gy
        diag = diag.reshape(-1)
        if not opts.zero_charge:
            diag -= q_vol * fermi.electron_density_deriv(p, params, si)
        diag[bc_mask] = 1.0

        # y edges couple i and i+1 only within a column (i % ny != ny - 1)
        gy_vals = np.zeros(n_nodes - 1)
        gy_vals[(np.arange(n_nodes - 1) % ny) != ny - 1] = gy.reshape(-1)
        upper_y = gy_vals.copy()  # J[i, i+1]
        lower_y = gy_vals.copy()  # J[i+1, i]
        upper_x = gx.reshape(-1).copy()  # J[i, i+ny]
        lower_x = gx.reshape(-1).copy()  # J[i+ny, i]

        # zero the off-diagonals of Dirichlet rows
        upper_y[bc_mask[:-1]] = 0.0
        lower_y[bc_mask[1:]] = 0.0
        upper_x[bc_mask[:-ny]] = 0.0
        lower_x[bc_mask[ny:]] = 0.0

        ab[u, :] = diag
        ab[u - 1, 1:] = upper_y
        ab[u + 1, :-1] = lower_y
        ab[0, ny:] = upper_x
        ab[2 * ny, :-ny] = lower_x
        return ab

    rnorm = float("inf")
    for iteration in range(opts.max_iterations + 1):
        f = residual(phi)
        rnorm = float(np.max(np.abs(f[free]))) if free.any() else 0.0
        if rnorm <= tol:
            n = density(phi)
            charge = Q_COULOMB * (doping - n)
            return Snapshot(
                v_gate=float(v_gate),
                phi=phi,
                n=n,
                net_charge=charge,
                converged=True,
                residual_norm=rnorm,
                newton_iterations=iteration,
            )
        if iteration == opts.max_iterations:
            break
        try:
            dphi = solve_banded((ny, ny), jacobian(phi), -f)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise ConvergenceError(
                f"singular linear system at V_G={v_gate} (iteration {iteration})",
                residual=rnorm,
                iterations=iteration,
            ) from exc
        np.clip(dphi, -clamp, clamp, out=dphi)
        phi = phi + dphi

    raise ConvergenceError(
        f"Newton did not converge at V_G={v_gate}: residual {rnorm:.3e} > {tol:.3e} "
        f"after {opts.max_iterations} iterations",
        residual=rnorm,
        iterations=opts.max_iterations,
    )


def ramp_sweep(
    mesh: TensorMesh,
    params: fermi.SemiconductorParams,
    v_start: float,
    v_end: float,
    step: float,
    opts: SolverOptions | None = None,
) -> SweepDataset:
    """Solve a gate ramp, reusing each solution as the next initial guess.

    The bias list is v_start + k*step up to v_end inclusive; the default
    0 -> 0.75 V at 7.5 mV gives 101 snapshots.  Solver failures are
    re-raised with the offending bias index attached.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if v_end < v_start:
        raise ValueError(f"v_end={v_end} must be >= v_start={v_start}")
    n_steps = int(round((v_end - v_start) / step)) if v_end > v_start else 0
    biases = v_start + step * np.arange(n_steps + 1)

    coeffs = assemble_fv_coefficients(mesh)
    snapshots = []
    phi_prev = None
    for k, v in enumerate(biases):
        try:
            snap = solve_equilibrium(mesh, coeffs, params, float(v), opts, phi0=phi_prev)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"sweep failed at bias index {k} (V_G={v:.6g} V): {exc}",
                residual=exc.residual,
                iterations=exc.iterations,
            ) from exc
        snapshots.append(snap)
        phi_prev = snap.phi
        logger.debug("V_G=%.4f V converged in %d iterations", v, snap.newton_iterations)
    return SweepDataset(snapshots=snapshots, mesh_fingerprint=mesh.fingerprint(), params=params)


def residual_check(
    mesh: TensorMesh,
    coeffs: FvCoefficients,
    params: fermi.SemiconductorParams,
    snapshot: Snapshot,
) -> float:
    """Independent residual of a snapshot's stored (phi, n) fields.

    Recomputes the discrete flux balance from the mesh geometry with its
    own edge bookkeeping (no code shared with the Newton assembly) and
    returns the inf-norm over non-Dirichlet nodes.  Uses the snapshot's
    stored n, so it verifies the pair of fields, not just phi.
    """
    nx, ny = mesh.nx, mesh.ny
    x = mesh.x_nodes * 1e-4  # um -> cm
    y = mesh.y_nodes * 1e-4
    phi = snapshot.phi.reshape(nx, ny)
    eps = mesh.eps_node().reshape(nx, ny)

    def width(c):
        w = np.empty_like(c)
        w[0] = 0.5 * (c[1] - c[0])
        w[-1] = 0.5 * (c[-1] - c[-2])
        if len(c) > 2:
            w[1:-1] = 0.5 * (c[2:] - c[:-2])
        return w

    wx, wy = width(x), width(y)
    f = np.zeros((nx, ny))

    g = EPS0_F_PER_CM * (2.0 / (1.0 / eps[:-1, :] + 1.0 / eps[1:, :])) * wy[None, :] / np.diff(x)[:, None]
    jump = phi[1:, :] - phi[:-1, :]
    f[:-1, :] += g * jump
    f[1:, :] -= g * jump

    g = EPS0_F_PER_CM * (2.0 / (1.0 / eps[:, :-1] + 1.0 / eps[:, 1:])) * wx[:, None] / np.diff(y)[None, :]
    jump = phi[:, 1:] - phi[:, :-1]
    f[:, :-1] += g * jump
    f[:, 1:] -= g * jump

    f = f.reshape(-1) + Q_COULOMB * (mesh.net_doping - snapshot.n) * coeffs.volume
    free = ~mesh.dirichlet_mask()
    return float(np.max(np.abs(f[free]))) if free.any() else 0.0


def extract_probe(dataset: SweepDataset, mesh: TensorMesh, x_um: float, y_um: float):
    """(v_gate, phi, n) series at the node nearest (x_um, y_um).

    Returns (node_index, biases, phi_series, n_series) across all
    snapshots, for probe-trace reporting.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if dataset.mesh_fingerprint != mesh.fingerprint():
        raise ValueError("dataset was generated on a different mesh")
    node = nearest_node(mesh, x_um, y_um)
    biases = dataset.biases
    phi = np.array([s.phi[node] for s in dataset.snapshots])
    n = np.array([s.n[node] for s in dataset.snapshots])
    return node, biases, phi, n
