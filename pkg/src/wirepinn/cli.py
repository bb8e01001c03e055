"""Operator entry point: generate data, fit the surrogate, solve biases.

Subcommands: generate, fit-lr, solve, sweep, report, check.  Every
command is reproducible: the same config and seed produce byte-identical
data products (no timestamps in payloads).  The WIREPINN_SEED environment
variable overrides any seed given on the command line.

Exit codes: 0 ok, 1 configuration error, 2 oracle failure, 3 solver
divergence, 4 self-test failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import checks, dataset_io, fermi, pinn, surrogate
from .mesh import (
    ConfigError,
    DeviceConfig,
    assemble_fv_coefficients,
    build_device_mesh,
    load_device_config,
)
from .oracle import (
    ConvergenceError,
    SweepDataset,
    default_tolerance,
    extract_probe,
    ramp_sweep,
    residual_check,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ORACLE = 2
EXIT_DIVERGED = 3
EXIT_SELFTEST = 4


def _device_config(args) -> DeviceConfig:
    if getattr(args, "config", None):
        return load_device_config(args.config)
    return DeviceConfig()


def _seed(args) -> int:
    env = os.environ.get("WIREPINN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"WIREPINN_SEED must be an integer, got {env!r}") from None
    return args.seed


def _maybe_svg(args, path, columns, labels, kind="line", logy=False):
    if not getattr(args, "svg", False):
        return
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("--svg requested but matplotlib is not installed; skipping %s", path)
        return
    fig, ax = plt.subplots(figsize=(5, 4))
    x = columns[0]
    for y, label in zip(columns[1:], labels[1:]):
        if kind == "scatter":
            ax.plot(x, y, ".", markersize=2, label=label)
        else:
            ax.plot(x, y, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(labels[0])
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_generate(args) -> int:
    config = _device_config(args)
    mesh = build_device_mesh(config)
    coeffs = assemble_fv_coefficients(mesh)
    params = fermi.default_params()
    dataset = ramp_sweep(mesh, params, args.v_start, args.v_end, args.step)
    tol = default_tolerance(mesh, coeffs)
    for k, snap in enumerate(dataset.snapshots):
        resid = residual_check(mesh, coeffs, params, snap)
        if resid > tol:
            raise ConvergenceError(
                f"independent residual check failed at snapshot {k}: {resid:.3e} > {tol:.3e}",
                residual=resid,
            )
    dataset_io.write_sweep(dataset, mesh, args.out)
    node, biases, phi, n = extract_probe(dataset, mesh, args.probe_x, args.probe_y)
    probe_csv = os.path.splitext(args.out)[0] + "_probe.csv"
    dataset_io.write_csv(probe_csv, ["v_gate", "phi_V", "n_cm3"], [biases, phi, n])
    _maybe_svg(args, os.path.splitext(args.out)[0] + "_probe.svg",
               [biases, phi], ["V_G [V]", f"phi at node {node} [V]"])
    print(f"wrote {len(dataset)} snapshots to {args.out} (probe node {node} -> {probe_csv})")
    return EXIT_OK


def cmd_fit_lr(args) -> int:
    mesh = build_device_mesh(_device_config(args))
    dataset = dataset_io.read_sweep(args.sweep, mesh)
    if not 1 <= args.cutoff <= len(dataset):
        raise ConfigError(f"cutoff {args.cutoff} outside 1..{len(dataset)}")
    sur = surrogate.fit(dataset.snapshots[:args.cutoff], dataset.mesh_fingerprint)
    dataset_io.write_model(sur, args.out)

    stats = surrogate.scatter_stats(sur, dataset, mesh.gate_nodes())
    scatter_csv = os.path.splitext(args.out)[0] + "_scatter.csv"
    preds = np.concatenate([
        surrogate.predict_phi(sur, surrogate.normalize_density(s.n)) for s in dataset.snapshots
    ])
    truth = np.concatenate([s.phi for s in dataset.snapshots])
    vg = np.repeat(dataset.biases, mesh.n_nodes)
    dataset_io.write_csv(scatter_csv, ["v_gate", "phi_oracle_V", "phi_predicted_V"],
                         [vg, truth, preds])
    _maybe_svg(args, os.path.splitext(args.out)[0] + "_scatter.svg",
               [truth, preds], ["oracle phi [V]", "predicted phi [V]"], kind="scatter")
    print(f"fitted on first {args.cutoff} snapshots "
          f"(V_G {sur.meta.bias_min:g}..{sur.meta.bias_max:g} V) -> {args.out}")
    print(f"R2 over all snapshots: {stats['r2']:.8f}; max |dphi| {stats['max_abs_err']*1e3:.4f} mV; "
          f"max gate-mean error {np.abs(stats['gate_err']).max()*1e3:.4f} mV")
    return EXIT_OK


def _load_problem(args):
    mesh = build_device_mesh(_device_config(args))
    sur = dataset_io.read_model(args.surrogate)
    if not isinstance(sur, surrogate.LinearSurrogate):
        raise ConfigError(f"{args.surrogate} does not contain a surrogate model")
    params = fermi.default_params()
    return pinn.PinnProblem(
        mesh=mesh, surrogate=sur, params=params,
        w_boundary=args.w1, w_fd=args.w2,
    )


def _solve_options(args, checkpoints=()) -> pinn.SolveOptions:
    return pinn.SolveOptions(
        epochs=args.epochs, seed=_seed(args), arch=args.arch,
        checkpoints=tuple(checkpoints), log_every=args.log_every,
    )


def cmd_solve(args) -> int:
    problem = _load_problem(args)
    mesh = problem.mesh
    oracle_ds = dataset_io.read_sweep(args.sweep, mesh) if args.sweep else None
    study = sorted(int(e) for e in args.epoch_study.split(",")) if args.epoch_study else []
    if study:
        args.epochs = max(study)
    os.makedirs(args.out, exist_ok=True)

    prefix = os.path.join(args.out, f"vg{args.vg:g}")
    try:
        result = pinn.solve_bias(problem, args.vg, _solve_options(args, checkpoints=study))
    except pinn.DivergedError as exc:
        if exc.history is not None and len(exc.history):
            dataset_io.write_loss_history(exc.history, prefix + "_loss_history.csv")
        raise
    dataset_io.write_loss_history(result.history, prefix + "_loss_history.csv")
    pred_ds = SweepDataset(snapshots=[result.prediction],
                           mesh_fingerprint=mesh.fingerprint(), params=problem.params)
    dataset_io.write_sweep(pred_ds, mesh, prefix + "_prediction.txt")
    print(f"V_G={args.vg} V: {result.epochs} epochs in {result.wall_time_s/60:.1f} min, "
          f"final losses l1={result.history[-1,2]:.3e} l2={result.history[-1,3]:.3e}")

    if oracle_ds is not None:
        matches = [s for s in oracle_ds.snapshots if abs(s.v_gate - args.vg) < 1e-9]
        if matches:
            snaps = dict(result.checkpoints) if study else {result.epochs: result.prediction}
            for epoch_count, snap in sorted(snaps.items()):
                report = pinn.evaluate_against(
                    snap, matches[0], gate_nodes=problem.gate_nodes, epochs=epoch_count,
                    losses=pinn.best_losses_within(result.history, epoch_count),
                )
                suffix = f"_report_{epoch_count}.txt" if study else "_report.txt"
                dataset_io.write_report(report, mesh, prefix + suffix)
                print(f"  epochs={epoch_count}: max phi err {report.max_phi_err_pct:.4f}%, "
                      f"max log-n err {report.max_logn_err_pct:.4f}%, "
                      f"V_G'={report.v_gate_extracted:.5f} V")
        else:
            logger.warning("no oracle snapshot at V_G=%g; skipping error report", args.vg)
    _maybe_svg(args, prefix + "_loss_history.svg",
               [result.history[:, 0], result.history[:, 4]], ["step", "total loss"], logy=True)
    if not result.prediction.converged:
        logger.warning("final total loss %.3e above the accept threshold", result.history[-1, 4])
    return EXIT_OK


def cmd_sweep(args) -> int:
    problem = _load_problem(args)
    mesh = problem.mesh
    oracle_ds = dataset_io.read_sweep(args.sweep, mesh) if args.sweep else None
    biases = [float(b) for b in args.biases.split(",")]
    os.makedirs(args.out, exist_ok=True)

    result = pinn.sweep_solve(
        problem, biases, oracle=oracle_ds, opts=_solve_options(args),
        probe_xy=(args.probe_x, args.probe_y), workers=args.workers,
    )
    for idx, message in sorted(result.failures.items()):
        print(f"bias {biases[idx]:g} V FAILED: {message}", file=sys.stderr)

    if result.probe_table.size:
        probe_csv = os.path.join(args.out, "probe_trace.csv")
        dataset_io.write_csv(
            probe_csv,
            ["v_gate", "phi_oracle_V", "phi_pinn_V", "n_oracle_cm3", "n_pinn_cm3"],
            [result.probe_table[:, i] for i in range(5)],
        )
        _maybe_svg(args, os.path.join(args.out, "probe_trace.svg"),
                   [result.probe_table[:, 0], result.probe_table[:, 1], result.probe_table[:, 2]],
                   ["V_G [V]", "oracle", "solver"])
        print(f"probe trace at node {result.probe_node} -> {probe_csv}")

    rows_truth, rows_pred = [], []
    for idx, report in enumerate(result.reports):
        if report is None:
            continue
        dataset_io.write_report(report, mesh, os.path.join(args.out, f"report_vg{biases[idx]:g}.txt"))
        print(f"V_G={biases[idx]:g} V: max phi err {report.max_phi_err_pct:.4f}%, "
              f"max log-n err {report.max_logn_err_pct:.4f}%")
    if oracle_ds is not None:
        by_bias = {round(s.v_gate, 9): s for s in oracle_ds.snapshots}
        for idx, pred in enumerate(result.predictions):
            snap = by_bias.get(round(biases[idx], 9))
            if pred is None or snap is None:
                continue
            rows_truth.append(np.stack([snap.phi, snap.n]))
            rows_pred.append(np.stack([pred.phi, pred.n]))
        if rows_truth:
            truth = np.concatenate([r[0] for r in rows_truth])
            pred = np.concatenate([r[0] for r in rows_pred])
            truth_n = np.concatenate([r[1] for r in rows_truth])
            pred_n = np.concatenate([r[1] for r in rows_pred])
            dataset_io.write_csv(
                os.path.join(args.out, "scatter_all_nodes.csv"),
                ["phi_oracle_V", "phi_pinn_V", "n_oracle_cm3", "n_pinn_cm3"],
                [truth, pred, truth_n, pred_n],
            )
    return EXIT_DIVERGED if result.failures else EXIT_OK


def cmd_report(args) -> int:
    for path in args.files:
        if path.endswith(".csv"):
            data = dataset_io.read_loss_history(path)
            print(f"{path}: {len(data)} rows; final lr={data[-1,1]:g} total={data[-1,4]:.3e}")
            continue
        with open(path, "r", encoding="utf-8") as fh:
            head = fh.readline().rstrip("\n")
        if head == dataset_io.REPORT_HEADER:
            scalars, per_node = dataset_io.read_report(path)
            print(f"{path}:")
            for key in ("v_gate", "v_gate_extracted", "epochs",
                        "max_phi_err_pct", "max_logn_err_pct", "final_loss_total"):
                if key in scalars:
                    print(f"  {key} = {scalars[key]:g}")
            if len(per_node):
                print(f"  per-node rows: {len(per_node)}")
        elif head == dataset_io.SWEEP_HEADER:
            ds = dataset_io.read_sweep(path)
            n_nodes = len(ds.snapshots[0].phi)
            print(f"{path}: {len(ds)} snapshots x {n_nodes} nodes, "
                  f"V_G {ds.biases[0]:g}..{ds.biases[-1]:g} V, "
                  f"constants n_c={ds.params.n_c:g} v_t={ds.params.v_t:g} phi_ref={ds.params.phi_ref:g}")
        else:
            print(f"{path}: unrecognized file", file=sys.stderr)
            return EXIT_CONFIG
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_self_checks(fast=args.fast)
    failed = [name for name, ok, _ in results if not ok]
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SELFTEST
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wirepinn",
        description="Gated-nanowire electrostatics: finite-volume oracle and self-supervised solver",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="solve the gate ramp and write the sweep dataset")
    p.add_argument("--config", help="device config file (key/value text)")
    p.add_argument("--v-start", type=float, default=0.0)
    p.add_argument("--v-end", type=float, default=0.75)
    p.add_argument("--step", type=float, default=0.0075)
    p.add_argument("--probe-x", type=float, default=0.0405, help="probe x [um]")
    p.add_argument("--probe-y", type=float, default=0.002, help="probe y [um]")
    p.add_argument("--out", required=True, help="output sweep file")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit-lr", help="fit the density->potential surrogate on a sweep prefix")
    p.add_argument("--config", help="device config file")
    p.add_argument("--sweep", required=True)
    p.add_argument("--cutoff", type=int, default=40, help="number of leading snapshots to train on")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_fit_lr)

    for name in ("solve", "sweep"):
        p = sub.add_parser(name, help=f"{name} gate bias(es) with the self-supervised solver")
        p.add_argument("--config", help="device config file")
        p.add_argument("--surrogate", required=True)
        p.add_argument("--sweep", help="oracle sweep file for error reports")
        p.add_argument("--epochs", type=int, default=200_000)
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--arch", choices=("dense", "conv"), default="dense")
        p.add_argument("--w1", type=float, default=1.0, help="boundary-loss weight")
        p.add_argument("--w2", type=float, default=1.0, help="density-consistency loss weight")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--log-every", type=int, default=0)
        p.add_argument("--svg", action="store_true")
        if name == "solve":
            p.add_argument("--vg", type=float, required=True)
            p.add_argument("--epoch-study", help="comma list of epoch counts to report, e.g. 30000,100000,200000")
            p.set_defaults(func=cmd_solve)
        else:
            p.add_argument("--biases", required=True, help="comma list of gate biases [V]")
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--probe-x", type=float, default=0.0405)
            p.add_argument("--probe-y", type=float, default=0.002)
            p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize sweep/report/loss-history files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check", help="run the built-in self tests")
    p.add_argument("--fast", action="store_true", help="coarser grids, fewer probes")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (dataset_io.SweepFormatError, dataset_io.ModelFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except pinn.DivergedError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
