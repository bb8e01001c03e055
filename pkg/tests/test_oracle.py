import numpy as np
import pytest

from wirepinn import fermi
from wirepinn.mesh import CONTACT_SOURCE, DeviceConfig, assemble_fv_coefficients, build_device_mesh
from wirepinn.oracle import (
    ConvergenceError,
    SolverOptions,
    SweepDataset,
    built_in_potential,
    default_tolerance,
    extract_probe,
    ramp_sweep,
    residual_check,
    solve_equilibrium,
)


class TestSolveEquilibrium:
    def test_laplace_with_grounded_contacts_is_zero(self, params):
        mesh = build_device_mesh(DeviceConfig(nx=33, ny=9))
        coeffs = assemble_fv_coefficients(mesh)
        snap = solve_equilibrium(mesh, coeffs, params, 0.0, SolverOptions(zero_charge=True))
        assert np.max(np.abs(snap.phi)) <= 1e-12
        assert np.all(snap.n == 0.0)

    def test_source_density_matches_doping(self, default_mesh, default_coeffs, params):
        snap = solve_equilibrium(default_mesh, default_coeffs, params, 0.0)
        source = default_mesh.contact_nodes(CONTACT_SOURCE)
        assert np.max(np.abs(snap.n[source] - 1e20)) / 1e20 <= 0.01

    @pytest.mark.parametrize("v_gate", [0.0, 0.3, 0.75])
    def test_mirror_symmetry(self, default_mesh, default_coeffs, params, v_gate):
        snap = solve_equilibrium(default_mesh, default_coeffs, params, v_gate)
        phi = snap.phi.reshape(default_mesh.nx, default_mesh.ny)
        n = snap.n.reshape(default_mesh.nx, default_mesh.ny)
        assert np.max(np.abs(phi - phi[::-1, :])) <= 1e-10
        scale = np.maximum(np.abs(n), 1.0)
        assert np.max(np.abs(n - n[::-1, :]) / scale) <= 1e-8

    def test_gate_nodes_pinned_to_bias(self, default_mesh, default_coeffs, params):
        snap = solve_equilibrium(default_mesh, default_coeffs, params, 0.42)
        assert np.all(snap.phi[default_mesh.gate_nodes()] == 0.42)

    def test_density_is_shared_closure_of_phi(self, default_mesh, default_coeffs, params):
        snap = solve_equilibrium(default_mesh, default_coeffs, params, 0.6)
        recomputed = fermi.electron_density(snap.phi, params, default_mesh.silicon_mask())
        assert np.array_equal(snap.n, recomputed)

    def test_nonconvergence_raises_with_diagnostics(self, default_mesh, default_coeffs, params):
        with pytest.raises(ConvergenceError) as err:
            solve_equilibrium(default_mesh, default_coeffs, params, 0.75,
                              SolverOptions(max_iterations=1))
        assert err.value.iterations == 1
        assert np.isfinite(err.value.residual)


class TestRampSweep:
    def test_canonical_sweep_has_101_snapshots(self, oracle_sweep):
        assert len(oracle_sweep) == 101
        assert oracle_sweep.biases[0] == 0.0
        assert oracle_sweep.biases[-1] == pytest.approx(0.75)

    def test_degenerate_range_yields_one_snapshot(self, default_mesh, params):
        ds = ramp_sweep(default_mesh, params, 0.3, 0.3, 0.0075)
        assert len(ds) == 1
        assert ds.snapshots[0].v_gate == 0.3

    def test_invalid_ranges(self, default_mesh, params):
        with pytest.raises(ValueError):
            ramp_sweep(default_mesh, params, 0.0, 0.75, 0.0)
        with pytest.raises(ValueError):
            ramp_sweep(default_mesh, params, 0.75, 0.0, 0.0075)

    def test_every_snapshot_converged_within_budget(self, oracle_sweep):
        iters = [s.newton_iterations for s in oracle_sweep.snapshots]
        assert all(s.converged for s in oracle_sweep.snapshots)
        assert max(iters) <= 30

    def test_every_snapshot_passes_residual_check(self, default_mesh, default_coeffs, params, oracle_sweep):
        tol = default_tolerance(default_mesh, default_coeffs)
        worst = max(residual_check(default_mesh, default_coeffs, params, s)
                    for s in oracle_sweep.snapshots)
        assert worst <= tol

    def test_biases_strictly_increasing(self, oracle_sweep):
        assert np.all(np.diff(oracle_sweep.biases) > 0)


class TestResidualCheck:
    def test_perturbation_increases_residual(self, default_mesh, default_coeffs, params, oracle_sweep):
        snap = oracle_sweep.snapshots[50]
        base = residual_check(default_mesh, default_coeffs, params, snap)
        node = default_mesh.node_index(default_mesh.nx // 2, 3)
        phi = snap.phi.copy()
        phi[node] += 1e-3
        perturbed = type(snap)(v_gate=snap.v_gate, phi=phi, n=snap.n,
                               net_charge=snap.net_charge)
        assert residual_check(default_mesh, default_coeffs, params, perturbed) > base

    def test_zero_field_zero_charge_gives_zero(self, params):
        from wirepinn.oracle import Snapshot

        mesh = build_device_mesh(DeviceConfig(nx=9, ny=7))
        coeffs = assemble_fv_coefficients(mesh)
        # constant-zero field with n exactly cancelling the doping: no flux, no charge
        neutral = Snapshot(v_gate=0.0, phi=np.zeros(mesh.n_nodes), n=mesh.net_doping.copy(),
                           net_charge=np.zeros(mesh.n_nodes))
        assert residual_check(mesh, coeffs, params, neutral) == 0.0


class TestBuiltInPotential:
    def test_neutrality(self, default_mesh, params):
        phi_bi = built_in_potential(default_mesh, params)
        assert fermi.electron_density(phi_bi, params) == pytest.approx(1e20, rel=1e-9)


class TestExtractProbe:
    def test_series_length_and_monotonicity(self, oracle_sweep, default_mesh):
        node, biases, phi, n = extract_probe(oracle_sweep, default_mesh, 0.0405, 0.002)
        assert default_mesh.node_xy(node) == (0.0405, 0.002)
        assert len(biases) == len(phi) == len(n) == len(oracle_sweep)
        assert np.all(np.diff(phi) >= 0)

    def test_gate_probe_equals_bias_series(self, oracle_sweep, default_mesh):
        m = default_mesh
        _, biases, phi, _ = extract_probe(oracle_sweep, m, 0.0405, float(m.y_nodes[-1]))
        assert np.array_equal(phi, biases)

    def test_empty_dataset_rejected(self, default_mesh, params):
        empty = SweepDataset(snapshots=[], mesh_fingerprint=default_mesh.fingerprint(), params=params)
        with pytest.raises(ValueError):
            extract_probe(empty, default_mesh, 0.0, 0.0)

    def test_wrong_mesh_rejected(self, oracle_sweep, params):
        other = build_device_mesh(DeviceConfig(length_nm=80.0))
        with pytest.raises(ValueError, match="different mesh"):
            extract_probe(oracle_sweep, other, 0.0, 0.0)
