"""Command-line front end: simulate, estimate, certify, reproduce-chen.

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 estimation invalid (non-contractive optimizer or degenerate data).
"""

import argparse
import math
import os
import sys

import numpy as np

from . import certify as certify_mod
from . import constants as const_mod
from . import coupled as coupled_mod
from . import plots as plots_mod
from .config import ConfigError, ScenarioConfig, default_chen_config, load_config
from .constants import (ContractionViolationError, EstimationError,
                        REFERENCE_REPORTED, load_bundle,
                        reported_reference_bundle, save_bundle)
from .coupled import RolloutOracleError
from .optimizer import OptimizerStepError, OracleFailureError
from .plant import IntegrationDivergedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ESTIMATION = 4


def _outdir(cfg_dir: str, override) -> str:
    out = override if override else cfg_dir
    os.makedirs(out, exist_ok=True)
    return out


def _run_rollouts(cfg: ScenarioConfig, spec, settings, bundle, rng):
    """One closed-loop trace per configured initial condition."""
    if bundle is not None:
        offset = cfg.z0_offset_frac * bundle.r_tilde_z
    elif cfg.z0_offset_abs is not None:
        offset = cfg.z0_offset_abs
    else:
        offset = 0.0
    traces = []
    for x0 in cfg.initial_conditions:
        z0 = coupled_mod.initial_iterate(spec, settings, x0, offset, rng)
        traces.append(coupled_mod.rollout(
            spec, settings, cfg.sampling_time, x0, z0, cfg.rollout_steps,
            with_oracle=True, bundle=bundle))
    return traces


def _write_traces(outdir: str, traces):
    names = []
    for i, tr in enumerate(traces):
        name = f"trace_{i:02d}.csv"
        coupled_mod.write_trace_csv(os.path.join(outdir, name), tr)
        names.append(name)
    plots_mod.write_gnuplot_script(names, os.path.join(outdir, "plots.gp"),
                                   n_x=traces[0].x.shape[1],
                                   n_u=traces[0].u.shape[1])
    return names


def _simulate_summary(traces, names) -> str:
    lines = ["closed-loop simulation summary", ""]
    for i, (tr, name) in enumerate(zip(traces, names)):
        fx = float(np.linalg.norm(tr.x[-1]))
        lines.append(f"  ic {i}: x0 = {np.array2string(tr.x0, precision=4)}  "
                     f"steps = {tr.n_steps}  final ||x|| = {fx:.3e}  -> {name}")
    return "\n".join(lines)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    outdir = _outdir(cfg.output_dir, args.out)
    spec = cfg.build_spec()
    settings = cfg.build_settings()
    bundle = load_bundle(args.bundle) if args.bundle else None
    rng = np.random.default_rng(cfg.seed)

    traces = _run_rollouts(cfg, spec, settings, bundle, rng)
    names = _write_traces(outdir, traces)
    plots_mod.render_all(outdir, traces, bundle)

    summary = _simulate_summary(traces, names)
    if bundle is None:
        summary += ("\n  note: no constants bundle supplied; V_so column "
                    "left empty")
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        fh.write(summary + "\n")
    print(summary)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    outdir = _outdir(cfg.output_dir, args.out)
    spec = cfg.build_spec()
    settings = cfg.build_settings()
    rng = np.random.default_rng(cfg.seed)
    if not cfg.initial_conditions:
        raise ConfigError("simulation.initial_conditions",
                          "estimation needs at least one initial condition")

    bundle, _ = const_mod.estimate_bundle(
        spec, settings, cfg.sampling_time, cfg.initial_conditions,
        cfg.estimation, rng)
    bundle.provenance["seed"] = cfg.seed
    path = os.path.join(outdir, "constants_bundle.txt")
    save_bundle(path, bundle)
    print(f"constants bundle written to {path}")
    print(f"  kappa_hat = {bundle.kappa_hat:.6g}  (must be < 1)")
    print(f"  a_bar = {bundle.a_bar:.6g}  sigma = {bundle.sigma:.6g}  "
          f"gamma_hat = {bundle.gamma_hat:.6g}  mu_hat = {bundle.mu_hat:.6g}")
    print(f"  T3' = {bundle.T3p:.6g}  T4' = {bundle.T4p:.6g}  "
          f"T5 = {bundle.T5:.6g}  T_max = {bundle.T_max:.6g}")
    return EXIT_OK


def _certificate_lines(bundle, T_values, expected_T5):
    lines = []
    kv = []
    for i, T in enumerate(T_values):
        prefix = f"cert{i}"
        if T * bundle.a_bar >= 1.0:
            lines.append(f"T = {T:.6g}: out-of-domain (T * a_bar = "
                         f"{T * bundle.a_bar:.4g} >= 1)")
            kv.append(f"{prefix}.T = {T:.17g}")
            kv.append(f"{prefix}.out_of_domain = 1")
            continue
        cert = certify_mod.stability_condition(bundle, T)
        verdict = "stable" if cert.stable else "UNSTABLE"
        lines.append(
            f"T = {T:.6g}: {verdict}  condition_value = "
            f"{cert.condition_value:.6e}  rho(A_a) = {cert.spectral_radius:.9f}")
        lines.append(
            f"    beta = {cert.beta:.6g}  d_hat = {cert.d_hat:.6g}  "
            f"T3' = {bundle.T3p:.6g}  T4' = {bundle.T4p:.6g}  "
            f"T5 = {cert.T5:.6g}  T_max = {bundle.T_max:.6g}")
        for note in cert.notes:
            lines.append(f"    note: {note}")
        kv.append(f"{prefix}.T = {T:.17g}")
        kv.append(f"{prefix}.stable = {int(cert.stable)}")
        kv.append(f"{prefix}.condition_value = {cert.condition_value:.17g}")
        kv.append(f"{prefix}.beta = {cert.beta:.17g}")
        kv.append(f"{prefix}.d_hat = {cert.d_hat:.17g}")
        kv.append(f"{prefix}.T5 = {cert.T5:.17g}")
        kv.append(f"{prefix}.rho = {cert.spectral_radius:.17g}")

    T5_formula = None
    if bundle.gamma_hat > 0.0 and bundle.mu_hat > 0.0:
        beta = certify_mod.compute_beta(bundle)
        T5_formula = beta * (1.0 - bundle.kappa) / bundle.mu_hat
        lines.append(f"formula T5 = beta (1 - kappa) / mu_hat = {T5_formula:.6g}")
        kv.append(f"T5_formula = {T5_formula:.17g}")
    if expected_T5 is not None and T5_formula is not None:
        rel = abs(T5_formula - expected_T5) / max(abs(expected_T5), 1e-300)
        if rel > 0.01:
            lines.append(
                f"    note: formula T5 = {T5_formula:.6g} DISAGREES with the "
                f"supplied expected value {expected_T5:.6g} "
                f"(ratio {T5_formula / expected_T5:.3g}); neither number is "
                "adopted as validated ground truth")
            kv.append(f"T5_expected = {expected_T5:.17g}")
            kv.append("T5_mismatch = 1")
        else:
            lines.append(f"    note: formula T5 agrees with the supplied "
                         f"expected value {expected_T5:.6g}")
            kv.append("T5_mismatch = 0")
    return lines, kv


def cmd_certify(args) -> int:
    if not args.T:
        raise ConfigError("T", "at least one sampling time is required")
    if args.reference_constants:
        bundle = reported_reference_bundle()
        expected = args.expected_T5 if args.expected_T5 is not None \
            else REFERENCE_REPORTED["T5"]
    else:
        if not args.bundle:
            raise ConfigError("bundle",
                              "either --bundle or --reference-constants "
                              "is required")
        bundle = load_bundle(args.bundle)
        expected = args.expected_T5

    lines, kv = _certificate_lines(bundle, args.T, expected)
    report = "certificate report\n" + "\n".join(lines)
    print(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "certificate.txt"), "w") as fh:
            fh.write(report + "\n")
        with open(os.path.join(args.out, "certificate_kv.txt"), "w") as fh:
            fh.write("\n".join(kv) + "\n")
    return EXIT_OK


def _audit_summary(audits) -> str:
    lines = ["trace audits (violated steps per check):"]
    total = {}
    for i, audit in enumerate(audits):
        counts = audit.counts
        for k, v in counts.items():
            total[k] = total.get(k, 0) + v
        lines.append(f"  ic {i}: " + "  ".join(f"{k}={v}" for k, v in counts.items()))
    lines.append("  total: " + "  ".join(f"{k}={v}" for k, v in total.items()))
    lines.append(f"  all clean: {all(v == 0 for v in total.values())}")
    return "\n".join(lines)


def cmd_reproduce_chen(args) -> int:
    cfg = default_chen_config()
    if args.seed is not None:
        cfg.seed = args.seed
    outdir = _outdir("chen_out", args.out)
    spec = cfg.build_spec()
    settings = cfg.build_settings()
    rng = np.random.default_rng(cfg.seed)

    print("[1/4] estimating constants from exact-policy trajectories ...")
    bundle, _ = const_mod.estimate_bundle(
        spec, settings, cfg.sampling_time, cfg.initial_conditions,
        cfg.estimation, rng)
    bundle.provenance["seed"] = cfg.seed
    bundle_path = os.path.join(outdir, "constants_bundle.txt")
    save_bundle(bundle_path, bundle)

    print("[2/4] evaluating stability certificates ...")
    T_list = [cfg.sampling_time, 0.005, 0.01, 0.02]
    cert_lines, cert_kv = _certificate_lines(bundle, T_list, None)

    print("[3/4] closed-loop rollouts with the real-time iteration ...")
    traces = _run_rollouts(cfg, spec, settings, bundle, rng)
    names = _write_traces(outdir, traces)

    print("[4/4] auditing traces and rendering figures ...")
    audits = [certify_mod.audit_trace(bundle, tr, slack=cfg.estimation.slack)
              for tr in traces]
    plots_mod.render_all(outdir, traces, bundle)

    ref = REFERENCE_REPORTED
    beta = certify_mod.compute_beta(bundle)
    rows = [
        ("kappa", bundle.kappa, ref["kappa"]),
        ("kappa_hat", bundle.kappa_hat, None),
        ("a_bar", bundle.a_bar, ref["a_bar"]),
        ("gamma_hat", bundle.gamma_hat, ref["gamma_hat"]),
        ("mu_hat", bundle.mu_hat, ref["mu_hat"]),
        ("beta", beta, ref["beta"]),
        ("T5", bundle.T5, ref["T5"]),
        ("sigma", bundle.sigma, None),
        ("T3'", bundle.T3p, None),
        ("T4'", bundle.T4p, None),
        ("T_max", bundle.T_max, None),
    ]
    table = ["constant        estimated        reference-reported"]
    for name, est, rep in rows:
        rep_s = f"{rep:<16.6g}" if rep is not None else "-"
        table.append(f"{name:<15} {est:<16.6g} {rep_s}")
    table.append("")
    table.append("reference-reported values depend on unpublished sampling "
                 "details; they are indicative, not ground truth.")

    summary = "\n".join([
        "reproduce-chen summary",
        "=" * 60,
        f"scenario: N={cfg.shooting_nodes}, T_f={cfg.horizon}, "
        f"Q={cfg.state_weight}*I, R={cfg.input_weight}, "
        f"bounds [{cfg.u_min[0]}, {cfg.u_max[0]}], T={cfg.sampling_time}, "
        f"{len(cfg.initial_conditions)} initial conditions, "
        f"{cfg.rollout_steps} steps, seed={cfg.seed}",
        "",
        "\n".join(table),
        "",
        "certificates:",
        "\n".join("  " + ln for ln in cert_lines),
        "",
        _simulate_summary(traces, names),
        "",
        _audit_summary(audits),
    ])
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        fh.write(summary + "\n")
    with open(os.path.join(outdir, "certificate_kv.txt"), "w") as fh:
        fh.write("\n".join(cert_kv) + "\n")
    print(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rticert",
        description="real-time NMPC simulation and stability certification")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="closed-loop rollouts to CSV + figures")
    ps.add_argument("--config", required=True)
    ps.add_argument("--bundle", help="constants bundle for V_so and z0 offset")
    ps.add_argument("--out", help="output directory (overrides config)")
    ps.add_argument("--seed", type=int, help="seed override")
    ps.set_defaults(func=cmd_simulate)

    pe = sub.add_parser("estimate", help="estimate the constants bundle")
    pe.add_argument("--config", required=True)
    pe.add_argument("--out", help="output directory (overrides config)")
    pe.add_argument("--seed", type=int, help="seed override")
    pe.set_defaults(func=cmd_estimate)

    pc = sub.add_parser("certify", help="evaluate stability certificates")
    pc.add_argument("--bundle", help="constants bundle file")
    pc.add_argument("--reference-constants", action="store_true",
                    help="use the previously reported benchmark constants")
    pc.add_argument("--T", action="append", type=float, default=[],
                    help="sampling time to certify (repeatable)")
    pc.add_argument("--expected-T5", type=float, default=None,
                    help="externally supplied T5 to compare against")
    pc.add_argument("--out", help="directory for report files")
    pc.set_defaults(func=cmd_certify)

    pr = sub.add_parser("reproduce-chen",
                        help="full pipeline with pinned defaults")
    pr.add_argument("--out", help="output directory (default chen_out)")
    pr.add_argument("--seed", type=int, help="seed override")
    pr.set_defaults(func=cmd_reproduce_chen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractionViolationError, EstimationError) as exc:
        print(f"estimation invalid: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except RolloutOracleError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OracleFailureError, OptimizerStepError,
            IntegrationDivergedError, FileNotFoundError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
