"""Command-line driver: invlab {forward, reconstruct, localize, verify, sweep} CONFIG.

Physical parameters come from the TOML config; flags only pick files,
subcommands and suites (reconstruct also accepts the documented overrides).
Exit codes: 0 pass, 1 gated-check failure, 2 usage/validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

log = logging.getLogger("invlab")


def _limit_threads(threads: int | None):
    """Honour --threads / INVLAB_THREADS; effective when set before numpy loads BLAS."""
    value = threads or os.environ.get("INVLAB_THREADS")
    if value:
        for var in _THREAD_VARS:
            os.environ[var] = str(int(value))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invlab", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="BLAS/FFT thread limit (else INVLAB_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forward", help="synthesize potentials and DtN maps")
    f.add_argument("config")
    f.add_argument("--dtn-out", default=None, help="path of the measured DtN file")

    r = sub.add_parser("reconstruct", help="reconstruct the potential difference from two DtN maps")
    r.add_argument("config")
    r.add_argument("--dtn1", required=True, help="reference map Phi0[q1]")
    r.add_argument("--dtn2", required=True, help="measured map")
    r.add_argument("--ref-q", required=True, help="SFLD file of the reference potential q1")
    r.add_argument("--true-q", default=None, help="SFLD of q2 (oracle mode; also enables the error report)")
    r.add_argument("--mode", choices=("born", "oracle"), default=None)
    r.add_argument("--rho", type=float, default=None)
    r.add_argument("--radius", default=None, help="'auto' or a number")

    loc = sub.add_parser("localize", help="recover (a, z) from a measured map and a potential")
    loc.add_argument("config")
    loc.add_argument("--dtn", required=True)
    loc.add_argument("--q", required=True, help="SFLD file of the (estimated) potential")

    v = sub.add_parser("verify", help="run the estimate suites")
    v.add_argument("config")
    v.add_argument("--suite", action="append", choices=("decay", "identity", "separation", "consistency", "radius"),
                   help="repeatable; default all")

    s = sub.add_parser("sweep", help="noise sweep of the stability experiment")
    s.add_argument("config")
    s.add_argument("--channel", choices=("joint", "potential"), default="joint")
    return p


def _meta(cfg, kind: str) -> dict:
    from . import __version__

    return {"invlab_version": __version__, "kind": kind, **cfg.provenance()}


def _write_report(cfg, report, name: str) -> str:
    path = cfg.output_path(name)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    report.write(path, cfg.provenance())
    return str(path)


def cmd_forward(cfg, args) -> int:
    from .dtn import assemble_dtn, write_dtn
    from .errors import KernelError
    from .forward import check_kernel_trivial
    from .io import write_field

    sc = cfg.scenario()
    data = sc.data
    g = data.grid
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for name, q in (("q_ref", data.q_ref), ("q_true", data.q_true)):
        report = check_kernel_trivial(q, g)
        print(f"{name}: {report}")
        if not report.trivial:
            raise KernelError(f"{name}: zero is a Dirichlet eigenvalue of Delta + q")
    source = data.source if cfg.source.enabled else None
    write_field(cfg.output_path("q_ref.sfld"), data.q_ref.values, g, _meta(cfg, "q_ref"))
    write_field(cfg.output_path("q_true.sfld"), data.q_true.values, g, _meta(cfg, "q_true"))
    ref = assemble_dtn(data.q_ref, g)
    write_dtn(cfg.output_path("dtn_ref.dtnm"), ref, _meta(cfg, "dtn_ref"))
    del ref
    meas = assemble_dtn(data.q_true, g, source, sc.cutoff_margin)
    meta = _meta(cfg, "dtn_measured")
    if source is not None:
        meta.update(source_amplitude=str(source.amplitude), source_position=list(source.position))
    path = args.dtn_out or cfg.output_path("dtn.dtnm")
    write_dtn(path, meas, meta)
    print(f"wrote {path} (affine map, {meas.size} boundary nodes, symmetry defect {meas.symmetry_defect():.2e})")
    return EXIT_OK


def _read_q(path, grid):
    from .io import read_field

    values, _, _ = read_field(path, grid)
    if values.shape == grid.closed_shape:
        values = values[(slice(0, -1),) * grid.dim]
    return values


def cmd_reconstruct(cfg, args) -> int:
    from dataclasses import replace

    from .dtn import read_dtn
    from .experiments import ExperimentReport
    from .inversion import potential_error, reconstruct_potential_diff
    from .io import write_field

    g = cfg.grid_object()
    dtn1, dtn2 = read_dtn(args.dtn1, g), read_dtn(args.dtn2, g)
    q1 = _read_q(args.ref_q, g)
    q2 = _read_q(args.true_q, g) if args.true_q else None
    params = cfg.scenario().params
    if args.mode:
        params = replace(params, mode=args.mode)
    if args.rho is not None:
        params = replace(params, rho=args.rho)
    radius = args.radius if args.radius is not None else cfg.reconstruction.radius
    R = None if radius in (None, "auto") else float(radius)
    rec = reconstruct_potential_diff(dtn1, dtn2, q1, params, q2=q2 if params.mode == "oracle" else None, R=R)
    cols = ["eta_x", "eta_y", "eta_z", "re_qhat", "im_qhat"]
    rep = ExperimentReport("reconstruct", cols, [list(r) for r in rec.rows()])
    rep.summary = {"R": rec.R, "rho": rec.rho, "mode": rec.mode, "frequencies": len(rec.etas),
                   "epsilon_measured": rec.epsilon if rec.epsilon is not None else "given-R",
                   "tail_estimate": rec.tail_estimate, "imag_residue": rec.imag_residue}
    if q2 is not None:
        rep.summary["error_h_minus_s"] = potential_error(rec.values, q2 - q1, g, params.s)
    rep.checks = {"real_field": rec.imag_residue <= 1e-10}
    print("wrote", _write_report(cfg, rep, "reconstruct.csv"))
    write_field(cfg.output_path("dq_est.sfld"), rec.values, g, _meta(cfg, "dq_est"))
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_localize(cfg, args) -> int:
    from .dtn import read_dtn
    from .experiments import ExperimentReport
    from .inversion import recover_source

    g = cfg.grid_object()
    dtn = read_dtn(args.dtn, g)
    q = _read_q(args.q, g)
    est = recover_source(dtn, q, margin=cfg.scenario().cutoff_margin)
    cols = ["a_re", "a_im", "z_x", "z_y", "z_z", "residual", "sens_x", "sens_y", "sens_z"]
    row = [est.a_hat.real, est.a_hat.imag, *est.z_hat, est.residual, *est.sensitivity]
    rep = ExperimentReport("localize", cols, [row])
    rep.summary = {"probes": len(est.pairings), "starts": est.starts}
    rep.checks = {"finite": bool(all(map(lambda x: x == x, row[:6])))}
    print("wrote", _write_report(cfg, rep, "localize.csv"))
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_verify(cfg, args) -> int:
    from .experiments import (
        estimator_consistency_experiment,
        identity_residual_suite,
        separation_and_theta_suite,
        truncation_radius_suite,
        verify_decay_estimates,
    )

    c = cfg.constants
    suites = {
        "decay": lambda: verify_decay_estimates(constants=c),
        "identity": lambda: identity_residual_suite(50, cfg.potential.seed),
        "separation": lambda: separation_and_theta_suite(100, cfg.potential.seed, constants=c),
        "consistency": lambda: estimator_consistency_experiment(seed=cfg.potential.seed, constants=c),
        "radius": truncation_radius_suite,
    }
    status = EXIT_OK
    for name in args.suite or list(suites):
        rep = suites[name]()
        path = _write_report(cfg, rep, f"verify_{name}.csv")
        verdict = "PASS" if rep.passed else "FAIL"
        failed = [k for k, ok in rep.checks.items() if not ok]
        print(f"{name}: {verdict} {'(failed: ' + ', '.join(failed) + ')' if failed else ''} -> {path}")
        if not rep.passed:
            status = EXIT_CHECK
    return status


def cmd_sweep(cfg, args) -> int:
    from .experiments import joint_stability_experiment, potential_stability_experiment

    sc, noise = cfg.scenario(), cfg.noise_model()
    eps = cfg.noise.epsilons
    if args.channel == "joint":
        rep = joint_stability_experiment(sc, eps, noise)
    else:
        rep = potential_stability_experiment(sc, eps, noise)
    path = _write_report(cfg, rep, f"sweep_{args.channel}.csv")
    failed = [k for k, ok in rep.checks.items() if not ok]
    print(f"sweep {args.channel}: {'PASS' if not failed else 'FAIL'} {failed or ''} -> {path}")
    return EXIT_OK if not failed else EXIT_CHECK


COMMANDS = {"forward": cmd_forward, "reconstruct": cmd_reconstruct, "localize": cmd_localize,
            "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    _limit_threads(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .config import load_config
    from .errors import FormatError, InvlabError, NumericalError

    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except FormatError as exc:
        print(f"invlab: format error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"invlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvlabError, ValueError) as exc:
        print(f"invlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"invlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
