"""Built-in self tests behind the ``check`` command.

Each check returns (name, passed, detail).  The checks re-derive their
expectations from independent routes (quadrature, finite differences,
mirror symmetry, the from-scratch residual), so a fresh build passing
here means the numerical core is wired correctly.  Functions are looked
up through their modules at call time, which keeps the suite honest under
fault injection in tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import fermi
from . import mesh as mesh_mod
from . import oracle
from . import pinn
from . import surrogate as sur_mod

__all__ = ["run_self_checks"]


def _check_fermi_accuracy(fast: bool):
    step = 0.25 if fast else 0.05
    grid = np.arange(-30.0, 50.0 + step / 2, step)
    approx = fermi.fermi_half_approx(grid)
    worst = 0.0
    for eta, a in zip(grid, approx):
        q = fermi.fermi_half_quadrature(eta)
        worst = max(worst, abs(a - q) / q)
    return worst <= 5e-3, f"max relative error of the closed form vs quadrature: {worst:.3e} (<= 5e-3)"


def _check_fermi_derivative(fast: bool):
    grid = np.linspace(-25.0, 45.0, 30 if fast else 200)
    h = 1e-6
    fd = (fermi.fermi_half_approx(grid + h) - fermi.fermi_half_approx(grid - h)) / (2 * h)
    an = fermi.fermi_half_deriv(grid)
    rel = np.max(np.abs(an - fd) / np.abs(fd))
    return rel <= 1e-5, f"analytic derivative vs central differences: {rel:.3e} (<= 1e-5)"


def _check_fermi_inverse(fast: bool):
    worst = 0.0
    for eta in np.linspace(-20.0, 20.0, 9):
        u = fermi.fermi_half_approx(eta)
        worst = max(worst, abs(fermi.fermi_half_approx(fermi.inverse_fermi_half(u)) - u) / u)
    return worst <= 1e-12, f"inverse round-trip residual: {worst:.3e} (<= 1e-12)"


def _check_oracle(fast: bool):
    mesh = mesh_mod.build_device_mesh()
    coeffs = mesh_mod.assemble_fv_coefficients(mesh)
    params = fermi.default_params()
    tol = oracle.default_tolerance(mesh, coeffs)
    biases = (0.0, 0.75) if fast else (0.0, 0.3, 0.75)
    msgs = []
    ok = True
    for v in biases:
        snap = oracle.solve_equilibrium(mesh, coeffs, params, v)
        p2 = snap.phi.reshape(mesh.nx, mesh.ny)
        asym = float(np.max(np.abs(p2 - p2[::-1, :])))
        resid = oracle.residual_check(mesh, coeffs, params, snap)
        ok = ok and asym <= 1e-10 and resid <= tol and snap.converged
        msgs.append(f"V_G={v}: residual {resid:.2e}, mirror asymmetry {asym:.2e}")
    return ok, "; ".join(msgs)


def _check_laplace(fast: bool):
    cfg = mesh_mod.DeviceConfig(nx=33, ny=9)
    mesh = mesh_mod.build_device_mesh(cfg)
    coeffs = mesh_mod.assemble_fv_coefficients(mesh)
    params = fermi.default_params()
    snap = oracle.solve_equilibrium(
        mesh, coeffs, params, 0.0, oracle.SolverOptions(zero_charge=True))
    worst = float(np.max(np.abs(snap.phi)))
    return worst <= 1e-12, f"zero charge, grounded contacts: max |phi| = {worst:.2e}"


def _check_gradients(fast: bool):
    mesh = mesh_mod.build_device_mesh(mesh_mod.DeviceConfig(nx=17, ny=8))
    params = fermi.default_params()
    ds = oracle.ramp_sweep(mesh, params, 0.0, 0.2925, 0.0075 if not fast else 0.0225)
    sur = sur_mod.fit(ds.snapshots, mesh.fingerprint())
    problem = pinn.PinnProblem(mesh=mesh, surrogate=sur, params=params)
    net = ad.GeneratorNet(n_out=mesh.n_nodes, hidden=(8, 16), seed=11)
    _, _, total = problem.build_losses(net, 0.5)
    ad.backward(total)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20 if fast else 50):
        li = int(rng.integers(len(net.params)))
        values = net.params[li].value
        idx = np.unravel_index(int(rng.integers(values.size)), values.shape)
        h = 1e-6
        keep = values[idx]
        values[idx] = keep + h
        f_plus = float(problem.build_losses(net, 0.5)[2].value)
        values[idx] = keep - h
        f_minus = float(problem.build_losses(net, 0.5)[2].value)
        values[idx] = keep
        fd = (f_plus - f_minus) / (2 * h)
        an = float(net.params[li].grad[idx])
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-12))
    return worst <= 1e-4, f"composed-loss gradient vs finite differences: {worst:.3e} (<= 1e-4)"


def _check_optimizer(fast: bool):
    w = ad.Tensor(np.array([0.0]))
    state = ad.AdamState([w], lr=1e-2)
    for _ in range(2000):
        grad = 2.0 * (w.value - 3.0)
        ad.adam_step(state, [w], [grad])
    err = abs(float(w.value[0]) - 3.0)
    sched = ad.PlateauScheduler(lr=1e-3, patience=10)
    lr = 1e-3
    for _ in range(200):
        lr = ad.scheduler_step(sched, 1.0)
    return err <= 1e-3 and lr == 1e-5, f"scalar Adam |w-3|={err:.2e}; plateau floor lr={lr:g}"


_CHECKS = (
    ("fermi-approx-vs-quadrature", _check_fermi_accuracy),
    ("fermi-derivative-fd", _check_fermi_derivative),
    ("fermi-inverse-roundtrip", _check_fermi_inverse),
    ("oracle-laplace-zero", _check_laplace),
    ("oracle-symmetry-residual", _check_oracle),
    ("gradient-composed-loss", _check_gradients),
    ("adam-and-scheduler", _check_optimizer),
)


def run_self_checks(fast: bool = False):
    """Run every check; returns a list of (name, passed, detail)."""
    results = []
    for name, fn in _CHECKS:
        try:
            passed, detail = fn(fast)
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, passed, detail))
    return results
