"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or ``python3 tests/test_acceptance.py``.
"""
import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from nsdarcy.assembly import assemble_coupled_system
from nsdarcy.cli import extension_phi, extension_psi, main
from nsdarcy.config import SimConfig
from nsdarcy.diagnostics import NormKind, NormRegion, NormSpec, decay_rate_fit, evaluate_norm, \
    weighted_bochner_norm
from nsdarcy.mesh import build_layered_rectangle
from nsdarcy.mms import convergence_study
from nsdarcy.operator import assemble_pencil, bj_dissipativity_threshold, constrained_forms, \
    extension_trace_errors, resolvent_solve, spectrum
from nsdarcy.timeloop import blowup_monitor, integrate, random_state, run_simulation

RESULTS = {}


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def orders(h, errs):
    return [float(np.log2(errs[i - 1] / errs[i]) / np.log2(h[i - 1] / h[i])) for i in range(1, len(errs))]


def mesh(n):
    return build_layered_rectangle(n, n, n)


def test_criterion_01_spectral_negativity():
    start = time.perf_counter()
    worst_re, worst_res = -np.inf, 0.0
    for n in (4, 8, 16):
        m = mesh(n)
        for k, mu, beta in itertools.product((0.1, 1.0, 10.0), repeat=3):
            rep = spectrum(assemble_pencil(m, k=k, mu=mu, beta=beta, variant="bjs"), 10)
            assert len(rep.eigenvalues) == 10
            worst_re = max(worst_re, rep.eigenvalues.real.max())
            worst_res = max(worst_res, rep.residuals.max())
    elapsed = time.perf_counter() - start
    ok = worst_re < -1e-8 and worst_res <= 1e-8 and elapsed <= 300
    report(1, ok, f"max Re lambda = {worst_re:.4g}, max residual = {worst_res:.2e}, {elapsed:.1f} s")


def test_criterion_02_energy_identity():
    start = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(2)
    for variant, beta in (("bjs", 1.0), ("bj", 0.01)):
        P = assemble_pencil(mesh(8), k=1.0, mu=1.0, beta=beta, variant=variant)
        traj = integrate(P, random_state(P, rng), 1e-3, 1000)
        assert len(traj.times) == 1001
        scaled = traj.column("identity_residual")[1:] / np.maximum(traj.column("energy")[:-1], 1.0)
        worst = max(worst, scaled.max())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed <= 60
    report(2, ok, f"max residual / max(E_n, 1) = {worst:.2e} over 2 x 1000 steps, {elapsed:.1f} s")


def test_criterion_03_bj_threshold():
    start = time.perf_counter()
    m = mesh(8)
    forms = constrained_forms(m, 1.0, 1.0, "bj")
    beta_c = bj_dissipativity_threshold(m, 1.0, 1.0, forms=forms)
    least, _ = forms.least_eigenvalue(10 * beta_c)
    elapsed = time.perf_counter() - start
    ok = beta_c > 1e-3 and least <= -1e-6 and elapsed <= 300
    report(3, ok, f"beta_c = {beta_c:.4g} at h = 1/8; least eigenvalue at 10 beta_c = {least:.4g}, {elapsed:.1f} s")


def test_criterion_04_resolvent():
    rng = np.random.default_rng(4)
    worst = 0.0
    for n in (4, 8, 16):
        for variant, beta in (("bjs", 1.0), ("bj", 0.01)):
            P = assemble_pencil(mesh(n), k=1.0, mu=1.0, beta=beta, variant=variant)
            rhs = P.state(rng.standard_normal(P.A.shape[0]))
            v = resolvent_solve(P, 1.0, rhs)
            b = P.M @ rhs.vector()
            worst = max(worst, np.linalg.norm((P.M - P.A) @ v.vector() - b) / np.linalg.norm(b))
    rec = [convergence_study(1, (4, 8, 16), lam=1.0, variant=v, beta=b) for v, b in (("bjs", 1.0), ("bj", 0.01))]
    rate = min(min(t.order_u + t.order_p) for t in rec)
    ok = worst <= 1e-10 and rate >= 1.8
    report(4, ok, f"max relative residual = {worst:.2e}; manufactured recovery order >= {rate:.2f}")


def test_criterion_05_exponential_decay():
    cfg = SimConfig(nx=8, ny_fluid=8, ny_porous=8, dt=1e-3, T=1.0, seed=5)
    traj = run_simulation(cfg)
    omega, _ = decay_rate_fit(traj.times, traj.column("energy"))
    lam1 = spectrum(traj.pencil, 10).eigenvalues[0]
    rel = abs(omega - abs(lam1.real)) / abs(lam1.real)
    ok = omega > 0 and rel <= 0.10
    report(5, ok, f"omega = {omega:.5g}, |Re lambda_1| = {abs(lam1.real):.5g}, relative gap = {rel:.2%}")


def test_criterion_06_extension_identity():
    h, ep, eu, fp, fu = [], [], [], [], []
    for n in (4, 8, 16):
        m = mesh(n)
        a, b = extension_trace_errors(m, 1.0, 1.0, extension_phi, extension_psi, window=(0.25, 0.75))
        c, d = extension_trace_errors(m, 1.0, 1.0, extension_phi, extension_psi)
        h.append(1.0 / n)
        ep.append(a)
        eu.append(b)
        fp.append(c)
        fu.append(d)
    op, ou = min(orders(h, ep)), min(orders(h, eu))
    ok = op >= 1.0 and ou >= 1.0
    report(6, ok, f"orders on x in [1/4, 3/4]: Darcy {op:.2f}, Stokes {ou:.2f} "
                  f"(whole interface: Darcy {min(orders(h, fp)):.2f}, Stokes {min(orders(h, fu)):.2f})")


def test_criterion_07_mms_convergence():
    start = time.perf_counter()
    t1 = convergence_study(1, (4, 8, 16))
    t2 = convergence_study(2, (4, 8, 16))
    t3 = convergence_study(3, (4, 8, 16))
    r1 = min(t1.order_u + t1.order_p)
    r2 = min(t2.order_u + t2.order_p)
    r3 = min(t3.order_u + t3.order_p)
    elapsed = time.perf_counter() - start
    ok = r1 >= 2.7 and r2 >= 1.8 and r3 >= 1.5 and elapsed <= 600
    report(7, ok, f"min orders: case 1 {r1:.2f}, case 2 {r2:.2f}, case 3 {r3:.2f}, {elapsed:.1f} s")


def test_criterion_08_monitors():
    cfg = SimConfig(nx=8, ny_fluid=8, ny_porous=8, dt=0.01, T=2.0)
    s1, _ = blowup_monitor(run_simulation(cfg))
    s2, _ = blowup_monitor(run_simulation(replace(cfg, T=4.0)))
    tail = abs(s2 - s1) / s1
    dt = 1e-3
    bochner = weighted_bochner_norm(np.ones(1001), 2.0, 0.75, dt)
    exact = np.sqrt(2.0 / 3.0)
    err = abs(bochner - exact) / exact
    ok = np.isfinite(s1) and tail < 0.01 and err <= 0.01
    report(8, ok, f"Serrin functional {s1:.6g}, tail change {tail:.2e}; Bochner {bochner:.6f} "
                  f"vs {exact:.6f} ({err:.2e})")


def test_criterion_09_small_data_global():
    cfg = SimConfig(nx=8, ny_fluid=8, ny_porous=8, dt=0.01, T=10.0, scheme="imex", amplitude=1e-3, seed=9)
    traj = run_simulation(cfg)
    e = traj.column("energy")
    ok = (not traj.blowup) and traj.times[-1] == pytest.approx(10.0) and e[-1] < 1e-2 * e[0]
    report(9, ok, f"blow-up signal: {traj.blowup}; E(T) / E(0) = {e[-1] / e[0]:.3e}")


def test_criterion_10_structural(tmp_path):
    skew = 0.0
    for variant, beta in (("bjs", 1.0), ("bj", 0.3)):
        b = assemble_coupled_system(mesh(8), k=0.7, mu=1.1, beta=beta, variant=variant)
        skew = max(skew, abs(b.C_pu + b.C_up.T).max())
    m = mesh(4)
    P = assemble_pencil(m)
    rng = np.random.default_rng(10)
    v = random_state(P, rng)
    worst = 0.0
    for kind in (NormKind.L2, NormKind.H1, NormKind.HFRAC, NormKind.LIONS_MAGENES):
        for region, values in ((NormRegion.POROUS, v.p), (NormRegion.FLUID, v.u)):
            spec = NormSpec(kind, region=region, s_frac=1.5)
            base = evaluate_norm(spec, values, m)
            for c in (-2.0, 0.5):
                worst = max(worst, abs(evaluate_norm(spec, c * values, m) - abs(c) * base) / (abs(c) * base))
    series = rng.uniform(size=40)
    spec = NormSpec.critical()
    base = evaluate_norm(spec, series, dt=0.05)
    for c in (-2.0, 0.5):
        worst = max(worst, abs(evaluate_norm(spec, c * series, dt=0.05) - abs(c) * base) / (abs(c) * base))

    fast = ["--set", "geometry.nx=4", "--set", "geometry.ny_fluid=4", "--set", "geometry.ny_porous=4",
            "--set", "time.T=0.1", "--set", "time.dt=0.01"]
    for i in range(2):
        for cmd in ("simulate", "spectrum", "threshold"):
            assert main([cmd, "--out", str(tmp_path / f"run{i}")] + fast) == 0
    files = sorted(p.relative_to(tmp_path / "run0") for p in (tmp_path / "run0").rglob("*")
                   if p.is_file() and p.suffix != ".png")
    same = all((tmp_path / "run0" / f).read_bytes() == (tmp_path / "run1" / f).read_bytes() for f in files)
    ok = skew == 0.0 and worst <= 1e-12 and same and len(files) > 5
    report(10, ok, f"max |C_pu + C_up^T| = {skew:g}; homogeneity error {worst:.1e}; "
                   f"{len(files)} output files byte-identical: {same}")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failures = 0
    for name, fn in sorted((k, f) for k, f in globals().items() if k.startswith("test_criterion")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failures += 1
    sys.exit(1 if failures else 0)
