"""Command-line entry point: ``nsdarcy <subcommand> [--config FILE] [--set section.key=value] ...``.

Exit status: 0 success, 2 invalid configuration, 3 solver failure, 4 blow-up signal.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, SimConfig, parse_config, parse_config_text
from .diagnostics import NORM_REPORT_HEADER, FitError, NormKind, NormRegion, NormSpec, decay_rate_fit, \
    evaluate_norm, norm_report_row, weighted_bochner_norm
from .mesh import write_mesh
from .operator import SPECTRUM_HEADER, SolverError, bj_dissipativity_threshold, constrained_forms, \
    extension_trace_errors, spectrum
from .timeloop import TRAJECTORY_HEADER, blowup_monitor, mesh_from_config, pencil_from_config, run_simulation

log = logging.getLogger("nsdarcy")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BLOWUP = 0, 2, 3, 4

# smooth trace data for the extension check, away from any compatibility condition
TRACE_WINDOW = (0.25, 0.75)


def extension_phi(x):
    return np.cos(np.pi * x) + 0.5


def extension_psi(x):
    return np.array([np.sin(np.pi * x) + x, 1.0 + x * x])


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _orders(h, errs):
    return [None] + [math.log2(errs[i - 1] / errs[i]) / math.log2(h[i - 1] / h[i]) for i in range(1, len(errs))]


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg: SimConfig, out: Path, jobs: int) -> int:
    from .plotting import plot_energy

    traj = run_simulation(cfg)
    P = traj.pencil
    write_csv(out / "trajectory.csv", TRAJECTORY_HEADER,
              zip(*(traj.column(name) for name in TRAJECTORY_HEADER)))
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for n, s in sorted(traj.states.items()):
        write_mesh(P.mesh, snap_dir / f"state_{n:06d}.txt", {"t": [s.t], "p": s.p, "u": s.u, "pi": s.pi})

    serrin, proxy = blowup_monitor(traj, cfg.r, cfg.q)
    mu_w = cfg.mu_weight_value
    series = np.hypot(traj.column("h32_p"), traj.column("h32_u"))
    bochner = weighted_bochner_norm(series, cfg.r, mu_w, cfg.dt)
    try:
        omega, fit_res = decay_rate_fit(traj.times, traj.column("energy"))
    except FitError:
        omega, fit_res = float("nan"), float("nan")
    write_csv(out / "monitors.csv",
              ("serrin_integral", "sup_norm_proxy", "bochner_h32", "mu_weight", "omega", "fit_residual", "blowup"),
              [(serrin, proxy, bochner, mu_w, omega, fit_res, traj.blowup)])

    final = traj.final
    rows = []
    for kind in (NormKind.L2, NormKind.H1, NormKind.HFRAC, NormKind.LIONS_MAGENES):
        for region, values in ((NormRegion.POROUS, final.p), (NormRegion.FLUID, final.u)):
            spec = NormSpec(kind, s_frac=cfg.s_frac, r=cfg.r, mu_weight=mu_w, region=region)
            rows.append(norm_report_row(spec, evaluate_norm(spec, values, P.mesh)))
    spec = NormSpec(NormKind.BOCHNER_WEIGHTED, s_frac=cfg.s_frac, r=cfg.r, mu_weight=mu_w, region=NormRegion.FLUID)
    rows.append(norm_report_row(spec, bochner))
    write_csv(out / "norms.csv", NORM_REPORT_HEADER, rows)

    plot_energy(traj.times, traj.column("energy"), out / "energy.png", omega)
    print(f"simulated {len(traj.times) - 1} steps to t = {traj.times[-1]:.6g}; "
          f"E = {traj.column('energy')[-1]:.6e}, omega = {omega:.6g}")
    if traj.blowup:
        print("blow-up suspected: energy growth exceeded the monitor limit", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def cmd_spectrum(cfg: SimConfig, out: Path, jobs: int) -> int:
    from .plotting import plot_spectrum

    P = pencil_from_config(cfg)
    rep = spectrum(P, cfg.n_eigs, cfg.shift, seed=cfg.seed)
    write_csv(out / "spectrum.csv", SPECTRUM_HEADER, rep.rows())
    plot_spectrum(rep.eigenvalues, out / "spectrum.png")
    lead = rep.eigenvalues[0]
    print(f"{len(rep.eigenvalues)} eigenvalues; leading {lead.real:.10g}{lead.imag:+.3g}i; "
          f"max residual {np.max(rep.residuals):.3e}")
    return EXIT_OK


def cmd_threshold(cfg: SimConfig, out: Path, jobs: int) -> int:
    from .plotting import plot_threshold

    m = mesh_from_config(cfg)
    forms = constrained_forms(m, cfg.k, cfg.mu, "bj")
    beta_c = bj_dissipativity_threshold(m, cfg.k, cfg.mu, forms=forms)
    lmin10, scale10 = forms.least_eigenvalue(10.0 * beta_c)
    level = int(round(-math.log2(m.h)))
    write_csv(out / "threshold.csv", ("k", "mu", "level", "h", "beta_c", "least_eig_at_10x"),
              [(cfg.k, cfg.mu, level, m.h, beta_c, lmin10)])
    betas = beta_c * np.logspace(-2, 2, 17)
    curve = [forms.least_eigenvalue(b) for b in betas]
    write_csv(out / "threshold_curve.csv", ("beta", "least_eig", "scale"),
              [(b, lm, sc) for b, (lm, sc) in zip(betas, curve)])
    plot_threshold(betas, [lm / sc for lm, sc in curve], beta_c, out / "threshold.png")
    print(f"beta_c = {beta_c:.6g} (k = {cfg.k:g}, mu = {cfg.mu:g}, h = {m.h:g})")
    return EXIT_OK


def _levels(cfg: SimConfig) -> list[int]:
    base = cfg.nx * 2**cfg.refinements
    return [base * 2**i for i in range(cfg.levels)]


def cmd_converge(cfg: SimConfig, out: Path, jobs: int) -> int:
    from .mms import RATE_HEADER, convergence_study
    from .plotting import plot_convergence

    table = convergence_study(cfg.case, _levels(cfg), jobs=jobs, k=cfg.k, mu=cfg.mu, beta=cfg.beta,
                              variant=cfg.variant, T_final=cfg.T)
    write_csv(out / f"rates_case{cfg.case}.csv", RATE_HEADER, table.rows())
    plot_convergence(table.h, {"velocity": table.err_u, "Darcy pressure": table.err_p},
                     out / f"rates_case{cfg.case}.png")
    for row in table.rows():
        print(" ".join(fmt(v) for v in row))
    return EXIT_OK


def cmd_extension_check(cfg: SimConfig, out: Path, jobs: int) -> int:
    from .mesh import build_layered_rectangle
    from .plotting import plot_convergence

    hs, win_p, win_u, full_p, full_u = [], [], [], [], []
    for n in _levels(cfg):
        m = build_layered_rectangle(n, n, n)
        ep, eu = extension_trace_errors(m, cfg.k, cfg.mu, extension_phi, extension_psi, window=TRACE_WINDOW)
        fp, fu = extension_trace_errors(m, cfg.k, cfg.mu, extension_phi, extension_psi)
        hs.append(1.0 / n)
        win_p.append(ep)
        win_u.append(eu)
        full_p.append(fp)
        full_u.append(fu)
    op, ou = _orders(hs, win_p), _orders(hs, win_u)
    header = ("level", "h", "err_darcy", "err_stokes", "order_darcy", "order_stokes",
              "err_darcy_full", "err_stokes_full")
    rows = [(i, hs[i], win_p[i], win_u[i], op[i], ou[i], full_p[i], full_u[i]) for i in range(len(hs))]
    write_csv(out / "extension_check.csv", header, rows)
    plot_convergence(hs, {"Darcy flux": win_p, "Stokes traction": win_u}, out / "extension_check.png")
    for row in rows:
        print(" ".join(fmt(v) for v in row))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "spectrum": cmd_spectrum,
    "threshold": cmd_threshold,
    "converge": cmd_converge,
    "extension-check": cmd_extension_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsdarcy", description="Coupled Navier-Stokes/Darcy solver and checks.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="sectioned key = value configuration file")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one configuration value (repeatable)")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for convergence levels")
    ap.add_argument("--out", help="output directory (overrides io.out)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(path: str | None, overrides) -> SimConfig:
    if path is None:
        return parse_config_text("", overrides)
    return parse_config(path, overrides)


def run_subcommand(name: str, cfg: SimConfig, jobs: int = 1) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[name](cfg, out, jobs)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.out:
            cfg = replace(cfg, out=args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be positive")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run_subcommand(args.command, cfg, args.jobs)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
