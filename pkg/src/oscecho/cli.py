"""Command-line front end: propagate | mc | sweep | fig4.

All commands read a JSON config (the shipped preset when --config is
omitted), write CSV files under --out, and are deterministic functions of
(config, seed): re-running a command reproduces its outputs byte for byte.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .core import CovMat, GaussianState
from .errors import ConfigurationError, OscEchoError
from .estimation import (
    SweepResult,
    bootstrap_cov_se,
    ensemble_stats,
    fit_f0_from_displacement,
    fit_sigma_from_vtot,
    mean_standard_error,
    sweep_rprime,
)
from .montecarlo import _ensemble_arrays
from .protocol import EchoSpec, echo_cov, echo_mean, optimal_ratio, run_sequence, state_size

ENV_THREADS = "OSC_ECHO_THREADS"


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def _workers() -> int:
    raw = os.environ.get(ENV_THREADS)
    if raw is None:
        return 0
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{ENV_THREADS}: expected an integer, got {raw!r}") from exc
    if value < 0:
        raise ConfigurationError(f"{ENV_THREADS}: must be >= 0, got {value}")
    return value


def _mark_labels(config: RunConfig) -> list[str]:
    return [f"t{i + 1}" for i in range(len(config.marks))]


def _analytic_states(config: RunConfig):
    seq = config.sequence()
    states = run_sequence(
        config.initial_state(), seq, config.force.f0_mean, config.oscillator
    )
    thetas = [seq.cumulative_phase(m) for m in seq.sample_marks] + [seq.total_phase()]
    return seq, states, thetas


def cmd_propagate(config: RunConfig, out_dir: Path) -> None:
    """Closed-form state evolution at every sample mark -> states.csv."""
    _, states, thetas = _analytic_states(config)
    labels = _mark_labels(config) + ["final"]
    rows = []
    for label, theta, st in zip(labels, thetas, states):
        rows.append([
            label, theta, st.mean.q, st.mean.p,
            st.cov.qq, st.cov.qp, st.cov.pp, state_size(st.cov),
        ])
    _write_csv(
        out_dir / "states.csv",
        ["mark_label", "theta_cum", "mean_q", "mean_p", "cov_qq", "cov_qp", "cov_pp", "v_tot"],
        rows,
    )


def cmd_mc(config: RunConfig, out_dir: Path) -> None:
    """Seeded trajectory ensemble: per-mark point clouds plus a summary
    comparing ensemble statistics against the closed forms."""
    if config.mc.shots < 2:
        raise ConfigurationError("monte_carlo.shots: the mc command needs >= 2 shots")
    seq, analytic, _ = _analytic_states(config)
    _, samples = _ensemble_arrays(
        config.initial_state(), seq, config.force, config.oscillator, config.mc,
        workers=_workers(),
    )
    labels = _mark_labels(config)
    for k, label in enumerate(labels):
        _write_csv(
            out_dir / f"cloud_{label}.csv",
            ["shot_index", "q", "p"],
            ([i, samples[k, i, 0], samples[k, i, 1]] for i in range(config.mc.shots)),
        )
    def z(diff, se):
        if se > 0.0:
            return diff / se
        return 0.0 if diff == 0.0 else math.inf

    summary = []
    for k, label in enumerate(labels + ["final"]):
        cloud = samples[k]
        stats = ensemble_stats(cloud)
        ref = analytic[k]
        se_mean = mean_standard_error(stats)
        se_cov = bootstrap_cov_se(cloud, master_seed=config.mc.master_seed)
        summary.append([
            label, stats.mean.q, stats.mean.p,
            stats.cov.qq, stats.cov.qp, stats.cov.pp,
            state_size(stats.cov), state_size(ref.cov),
            z(stats.mean.q - ref.mean.q, se_mean.q),
            z(stats.mean.p - ref.mean.p, se_mean.p),
            z(stats.cov.qq - ref.cov.qq, se_cov.qq),
            z(stats.cov.qp - ref.cov.qp, se_cov.qp),
            z(stats.cov.pp - ref.cov.pp, se_cov.pp),
        ])
    _write_csv(
        out_dir / "mc_summary.csv",
        ["mark", "mean_q", "mean_p", "cov_qq", "cov_qp", "cov_pp", "v_tot",
         "analytic_v_tot", "z_mean_q", "z_mean_p", "z_cov_qq", "z_cov_qp", "z_cov_pp"],
        summary,
    )


def _run_sweep(config: RunConfig, backend: str):
    settings = config.sweep
    grid = settings.grid()
    cov0 = config.initial_state().cov
    result = sweep_rprime(
        settings.r, config.spec.theta2, grid, settings.force, config.oscillator,
        backend=backend, mc=config.mc, cov0=cov0, workers=_workers(),
    )
    problems = []
    fit_f0 = fit_sigma = None
    try:
        fit_f0 = fit_f0_from_displacement(
            result.rows, settings.r, config.spec.theta2, config.oscillator
        )
    except OscEchoError as exc:
        problems.append(f"f0 fit failed: {exc}")
    try:
        fit_sigma = fit_sigma_from_vtot(
            result.rows, settings.r, config.spec.theta2, config.oscillator, cov0
        )
    except OscEchoError as exc:
        problems.append(f"sigma fit failed: {exc}")
    result = SweepResult(result.rows, fit_f0, fit_sigma)
    return result, "; ".join(problems) if problems else "ok"


def _write_sweep(config: RunConfig, out_dir: Path, result, status: str) -> None:
    settings = config.sweep
    cov0 = config.initial_state().cov
    rows = []
    for row in result.rows:
        spec = EchoSpec(settings.r, row.r_prime, config.spec.theta2)
        d_model = echo_mean(
            GaussianState.vacuum().mean, settings.force.f0_mean, spec, config.oscillator.omega
        ).norm()
        v_model = state_size(echo_cov(cov0, spec, config.oscillator, settings.force.f0_sigma))
        rows.append([row.r_prime, row.d_norm, row.v_tot, d_model, v_model])
    _write_csv(
        out_dir / "sweep.csv",
        ["r_prime", "d_norm", "v_tot", "d_norm_model", "v_tot_model"],
        rows,
    )
    nan = float("nan")
    _write_csv(
        out_dir / "fit.csv",
        ["f0_hat", "f0_err", "sigma_hat", "sigma_err", "r_prime_op", "status"],
        [[
            result.fit_f0.value if result.fit_f0 else nan,
            result.fit_f0.stderr if result.fit_f0 else nan,
            result.fit_sigma_f0.value if result.fit_sigma_f0 else nan,
            result.fit_sigma_f0.stderr if result.fit_sigma_f0 else nan,
            optimal_ratio(settings.r),
            status,
        ]],
    )


def cmd_sweep(config: RunConfig, out_dir: Path, backend: str) -> None:
    """Decoupling-ratio sweep with force-parameter fits -> sweep.csv, fit.csv."""
    result, status = _run_sweep(config, backend)
    _write_sweep(config, out_dir, result, status)


def cmd_fig4(config: RunConfig, out_dir: Path, backend: str) -> None:
    """One-command run of all standard outputs: closed-form evolution and
    point clouds under state_evolution/, the decoupling-ratio sweep under
    ratio_sweep/, and a summary report."""
    evo_dir = out_dir / "state_evolution"
    sweep_dir = out_dir / "ratio_sweep"
    evo_dir.mkdir(parents=True, exist_ok=True)
    sweep_dir.mkdir(parents=True, exist_ok=True)

    cmd_propagate(config, evo_dir)
    cmd_mc(config, evo_dir)
    result, status = _run_sweep(config, backend)
    _write_sweep(config, sweep_dir, result, status)

    osc, spec = config.oscillator, config.spec
    seq = config.sequence()
    omega_hz = osc.omega / (2.0 * math.pi)
    step_us = [seg.duration(osc.omega) * 1e6 for seg in seq.segments]
    state0 = config.initial_state()
    v_t1 = state_size(state0.cov)
    v_final = state_size(echo_cov(state0.cov, spec, osc, config.force.f0_sigma))
    spec_op = EchoSpec(spec.r, optimal_ratio(spec.r), spec.theta2)
    v_config_pred = state_size(echo_cov(state0.cov, spec_op, osc, 0.0))
    v_reported_pred = state_size(echo_cov(CovMat.identity(4.0), spec_op, osc, 0.0))

    lines = [
        "oscillator-echo run summary",
        "===========================",
        f"omega/2pi: {omega_hz:.6g} Hz, gamma/2pi: {osc.gamma / (2 * math.pi):.6g} Hz, n0: {osc.n0:.6g}",
        f"protocol: r = {spec.r:.6g}, r' = {spec.r_prime:.10g}, theta2 = {spec.theta2:.10g} rad",
        f"step (i) duration: {step_us[0]:.1f} us",
        f"step (ii) duration: {step_us[1]:.1f} us",
        f"step (iii) duration: {step_us[2]:.1f} us",
        f"v_tot at start (config initial state): {v_t1:.6g}",
        f"v_tot at protocol end (closed form, config force): {v_final:.6g}",
        f"predicted v_tot at protocol end for config initial state, r' = r'_op, no shot noise: {v_config_pred:.6g}",
        f"predicted v_tot at protocol end for reported V_t1 = 4, r' = r'_op, no shot noise: {v_reported_pred:.6g}",
        f"sweep context: r = {config.sweep.r:.10g}, r'_op = {optimal_ratio(config.sweep.r):.10g}",
        f"sweep backend: {backend}",
        f"fitted |f0| [1/s]: {result.fit_f0.value:.6g} +/- {result.fit_f0.stderr:.3g}"
        if result.fit_f0 else "fitted |f0| [1/s]: n/a",
        f"fitted sigma_f0 [1/s]: {result.fit_sigma_f0.value:.6g} +/- {result.fit_sigma_f0.stderr:.3g}"
        if result.fit_sigma_f0 else "fitted sigma_f0 [1/s]: n/a",
        f"fit status: {status}",
        f"mc shots: {config.mc.shots}, master seed: {config.mc.master_seed}",
    ]
    with open(out_dir / "report.txt", "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osc-echo",
        description="Frequency-jump oscillator-echo simulation and estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("propagate", "closed-form state evolution at the configured sample marks"),
        ("mc", "seeded Monte Carlo ensemble with per-mark point clouds"),
        ("sweep", "decoupling-ratio sweep with force-parameter fits"),
        ("fig4", "all standard outputs plus a summary report"),
    ]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="JSON config path (default: shipped preset)")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override monte_carlo.master_seed")
        if name in ("sweep", "fig4"):
            cmd.add_argument(
                "--backend", choices=("analytic", "mc"),
                default="analytic" if name == "sweep" else "mc",
                help="sweep data source",
            )
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError(f"--seed: must fit in 64 bits, got {args.seed}")
            config = config.with_seed(args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "propagate":
            cmd_propagate(config, out_dir)
        elif args.command == "mc":
            cmd_mc(config, out_dir)
        elif args.command == "sweep":
            cmd_sweep(config, out_dir, args.backend)
        else:
            cmd_fig4(config, out_dir, args.backend)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OscEchoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
