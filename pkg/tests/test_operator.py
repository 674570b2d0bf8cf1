import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nsdarcy.assembly import Field, assemble_coupled_system, assemble_darcy_stiffness, build_dofmap
from nsdarcy.mesh import build_layered_rectangle
from nsdarcy.operator import (
    CoupledState, DegenerateThresholdError, OperatorPencil, SpectralCollisionError, assemble_pencil,
    bj_dissipativity_threshold, build_pencil, constrained_forms, decoupled, dissipation_form,
    extension_trace_errors, interface_mass, is_dissipative, neumann_extension_darcy, neumann_extension_stokes,
    project_divergence_free, resolvent_solve, rotated_dissipation, spectrum, spectrum_dense, trace_nodes,
)


def random_state(P, rng, complex_=False):
    n_p, n_u, n_pi = P.sizes
    draw = (lambda n: rng.standard_normal(n) + 1j * rng.standard_normal(n)) if complex_ else rng.standard_normal
    u = draw(n_u)
    u = project_divergence_free(P, u.real) + (1j * project_divergence_free(P, u.imag) if complex_ else 0)
    return CoupledState(0.0, draw(n_p), u, draw(n_pi))


# ---------------------------------------------------------------------------
# pencil structure

def test_mass_kernel_is_pressure_block(pencil4):
    n_p, n_u, n_pi = pencil4.sizes
    M = pencil4.M.toarray()
    assert np.all(M[-n_pi:] == 0) and np.all(M[:, -n_pi:] == 0)
    w = np.linalg.eigvalsh(M[: n_p + n_u, : n_p + n_u])
    assert w[0] > 0


def test_symmetric_part_negative_semidefinite_bjs(mesh4):
    forms = constrained_forms(mesh4, 1.0, 1.0, "bjs")
    for beta in (0.0, 1.0, 100.0):
        assert is_dissipative(forms, beta)


# ---------------------------------------------------------------------------
# resolvent

def test_resolvent_zero_rhs(pencil4):
    v = resolvent_solve(pencil4, 1.0, CoupledState.zeros(pencil4.sizes))
    assert not np.any(v.vector())


@pytest.mark.parametrize("variant,beta", [("bjs", 1.0), ("bj", 0.01)])
@pytest.mark.parametrize("n", [4, 8])
def test_resolvent_at_one(variant, beta, n, rng):
    P = assemble_pencil(build_layered_rectangle(n, n, n), k=1.0, mu=1.0, beta=beta, variant=variant)
    rhs = random_state(P, rng)
    v = resolvent_solve(P, 1.0, rhs)
    b = P.M @ rhs.vector()
    assert np.linalg.norm((P.M - P.A) @ v.vector() - b) <= 1e-10 * np.linalg.norm(b)


def test_resolvent_complex_parameter(pencil4, rng):
    rhs = random_state(pencil4, rng)
    lam = 1.0 + 2.0j
    v = resolvent_solve(pencil4, lam, rhs)
    b = pencil4.M @ rhs.vector()
    assert np.linalg.norm((lam * pencil4.M - pencil4.A) @ v.vector() - b) <= 1e-10 * np.linalg.norm(b)


def test_resolvent_blows_up_near_eigenvalue(pencil4):
    rep = spectrum(pencil4, 2)
    lam0, vec = rep.eigenvalues[0].real, rep.eigenvectors[:, 0].real
    rhs = pencil4.state(vec)
    b = pencil4.M @ vec

    def rel_residual(d):
        x = pencil4.factorized(lam0 + d, 1.0).solve(b)
        return np.linalg.norm(((lam0 + d) * pencil4.M - pencil4.A) @ x - b) / np.linalg.norm(b)

    # residual grows like 1 / |lam - lam*|
    ratio = rel_residual(1e-6) / rel_residual(1e-3)
    assert 1e2 < ratio < 1e4
    # (lam M - A) x = M v* has the solution v* / (lam - lam*)
    v = resolvent_solve(pencil4, lam0 + 0.1, rhs)
    assert np.linalg.norm(v.vector()) * 0.1 == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(SpectralCollisionError):
        resolvent_solve(pencil4, lam0 + 1e-8, rhs)


def test_singular_pencil_reports_collision(pencil4, rng):
    P = OperatorPencil(sp.csr_matrix(pencil4.A.shape), pencil4.M, pencil4.blocks)
    with pytest.raises(SpectralCollisionError) as info:
        resolvent_solve(P, 0.0, random_state(pencil4, rng))
    assert info.value.lam == 0.0


# ---------------------------------------------------------------------------
# spectrum

@pytest.mark.parametrize("variant,beta", [("bjs", 1.0), ("bj", 0.05)])
def test_spectrum_matches_dense_oracle(mesh4, variant, beta):
    P = assemble_pencil(mesh4, k=0.7, mu=1.3, beta=beta, variant=variant)
    rep = spectrum(P, 8)
    dense = spectrum_dense(P)
    dist = np.abs(rep.eigenvalues[:, None] - dense[None, :]).min(axis=1)
    assert np.all(dist <= 1e-9 * np.abs(rep.eigenvalues))
    # the eight computed values are the eight nearest the shift
    np.testing.assert_allclose(np.sort(np.abs(rep.eigenvalues)), np.sort(np.abs(dense))[:8], rtol=1e-9)
    assert np.all(rep.residuals <= 1e-8)


def test_spectrum_properties(pencil4):
    rep = spectrum(pencil4, 10)
    assert len(rep.eigenvalues) == 10
    assert np.all(rep.eigenvalues.real < -1e-8)
    assert np.all(np.diff(rep.eigenvalues.real) <= 0)
    u = rep.eigenvectors[pencil4.slices[1]]
    assert np.max(np.abs(pencil4.blocks.B_div @ u)) <= 1e-10
    rows = list(rep.rows())
    assert rows[0][3:] == (2, "bjs", 1.0, 1.0, 1.0)


def test_spectrum_is_reproducible(pencil4):
    a, b = spectrum(pencil4, 6), spectrum(pencil4, 6)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.residuals, b.residuals)


def test_spectrum_rejects_bad_count(pencil4):
    with pytest.raises(ValueError):
        spectrum(pencil4, 0)


def test_decoupled_darcy_leading_eigenvalue():
    # separation of variables: sin(pi x) cos(pi y / 2) on (0,1) x (-1,0)
    m = build_layered_rectangle(16, 16, 16)
    P = build_pencil(decoupled(assemble_coupled_system(m, k=1.0, mu=1.0, beta=1.0)))
    rep = spectrum(P, 6, shift=-10.0)
    darcy = [lam for lam, vec in zip(rep.eigenvalues, rep.eigenvectors.T)
             if np.linalg.norm(vec[P.slices[0]]) > 0.5]
    nearest = min(darcy, key=lambda lam: abs(lam + 10.0))
    assert nearest.real == pytest.approx(-5 * np.pi**2 / 4, rel=0.02)


def test_spectrum_stable_under_refinement():
    lead = [spectrum(assemble_pencil(build_layered_rectangle(n, n, n)), 5).eigenvalues for n in (8, 16)]
    np.testing.assert_allclose(lead[1].real, lead[0].real, rtol=0.05)


# ---------------------------------------------------------------------------
# dissipation

def test_dissipation_zero(pencil4):
    assert dissipation_form(pencil4, CoupledState.zeros(pencil4.sizes)) == 0.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_dissipation_equals_quadratic_forms_bjs(pencil4, seed):
    rng = np.random.default_rng(seed)
    v = random_state(pencil4, rng)
    b = pencil4.blocks
    expected = -(v.p @ b.K_p @ v.p + v.u @ b.K_u @ v.u + v.u @ b.S_t @ v.u)
    value = dissipation_form(pencil4, v)
    assert value <= 0
    assert value == pytest.approx(expected, rel=1e-12)


def test_dissipation_bj_extra_term(pencil4_bj, rng):
    v = random_state(pencil4_bj, rng)
    b = pencil4_bj.blocks
    expected = -(v.p @ b.K_p @ v.p + v.u @ b.K_u @ v.u + v.u @ b.S_t @ v.u) + v.u @ b.G_t @ v.p
    assert dissipation_form(pencil4_bj, v) == pytest.approx(expected, rel=1e-12)


def test_dissipation_rejects_constraint_violation(pencil4, rng):
    n_p, n_u, n_pi = pencil4.sizes
    v = CoupledState(0.0, np.zeros(n_p), rng.standard_normal(n_u), np.zeros(n_pi))
    with pytest.raises(ValueError):
        dissipation_form(pencil4, v)


@pytest.mark.parametrize("angle", [np.pi / 4, -np.pi / 4, np.pi / 3, -np.pi / 3])
def test_rotated_dissipation_real_states(pencil4, rng, angle):
    for _ in range(5):
        v = random_state(pencil4, rng)
        assert rotated_dissipation(pencil4, v, angle) <= 0
        assert rotated_dissipation(pencil4, v, angle) == pytest.approx(
            np.cos(angle) * dissipation_form(pencil4, v), rel=1e-12)


# ---------------------------------------------------------------------------
# Beavers-Joseph threshold

def test_threshold_positive_and_monotone(mesh8):
    forms = constrained_forms(mesh8, 1.0, 1.0, "bj")
    beta_c = bj_dissipativity_threshold(mesh8, 1.0, 1.0, forms=forms)
    assert beta_c > 0
    assert is_dissipative(forms, beta_c)
    assert is_dissipative(forms, beta_c / 2)
    assert not is_dissipative(forms, beta_c * 1.02)


def test_threshold_errors(mesh4):
    with pytest.raises(ValueError):
        bj_dissipativity_threshold(mesh4, 0.0, 1.0)
    with pytest.raises(DegenerateThresholdError):
        bj_dissipativity_threshold(mesh4, 1.0, 1.0, floor=1e3)


def test_bjs_needs_no_smallness(mesh4):
    forms = constrained_forms(mesh4, 1.0, 1.0, "bjs")
    assert all(is_dissipative(forms, b) for b in (0.1, 1.0, 10.0, 100.0))


# ---------------------------------------------------------------------------
# Neumann extensions

def test_extensions_of_zero(mesh4):
    dp, du = build_dofmap(mesh4, Field.DARCY_P), build_dofmap(mesh4, Field.FLUID_U)
    assert not np.any(neumann_extension_darcy(mesh4, 1.0, np.zeros(len(trace_nodes(dp)))))
    u, pi = neumann_extension_stokes(mesh4, 1.0, np.zeros((2, len(trace_nodes(du)))))
    assert not np.any(u) and not np.any(pi)


def test_darcy_flux_balance(mesh4):
    # interface inflow equals the consistent outflow through the outer porous boundary
    k = 2.0
    d = build_dofmap(mesh4, Field.DARCY_P)
    nodes = trace_nodes(d)
    p = neumann_extension_darcy(mesh4, k, np.ones(len(nodes)))
    one = np.zeros(d.n_nodes)
    one[nodes] = 1.0
    load = -k * (interface_mass(mesh4, d) @ one)
    residual = assemble_darcy_stiffness(mesh4, d, k) @ p - load
    np.testing.assert_allclose(residual[d.free], 0.0, atol=1e-12)
    outflow = residual[d.essential].sum()
    assert outflow == pytest.approx(k * 1.0, abs=1e-10)


def test_stokes_extension_divergence_free(mesh4, rng):
    from nsdarcy.assembly import assemble_divergence

    du, dpi = build_dofmap(mesh4, Field.FLUID_U), build_dofmap(mesh4, Field.FLUID_PI)
    u, _ = neumann_extension_stokes(mesh4, 1.5, rng.standard_normal((2, len(trace_nodes(du)))))
    assert np.linalg.norm(assemble_divergence(mesh4, du, dpi) @ u) <= 1e-10


def test_extension_shape_checked(mesh4):
    with pytest.raises(ValueError):
        neumann_extension_darcy(mesh4, 1.0, np.ones(3))
    with pytest.raises(ValueError):
        neumann_extension_stokes(mesh4, 1.0, np.ones((2, 3)))


def test_traces_recovered_with_refinement():
    phi = lambda x: np.cos(np.pi * x) + 0.5  # noqa: E731
    psi = lambda x: np.array([np.sin(np.pi * x) + x, 1.0 + x * x])  # noqa: E731
    errs = [extension_trace_errors(build_layered_rectangle(n, n, n), 1.0, 1.0, phi, psi, window=(0.25, 0.75))
            for n in (4, 8)]
    assert np.log2(errs[0][0] / errs[1][0]) >= 1.0
    assert np.log2(errs[0][1] / errs[1][1]) >= 1.0
