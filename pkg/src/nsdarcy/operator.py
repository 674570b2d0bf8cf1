"""The coupled linear operator as a generalized pencil ``A v = lambda M v``.

Unknowns are ordered ``v = (p, u, pi)`` on free dofs.  The pencil reads

    A = [[ -K_p,          -C_up,        0  ],
         [ -C_pu + G_t,   -K_u - S_t,   B^T],
         [  0,             B,           0  ]]

    M = diag(M_p, M_u, 0)

so that ``M v' = A v`` is the semi-discrete linear evolution, the last row
being the divergence constraint.  The mass matrix is singular on the pressure
block; the resulting infinite eigenvalues are removed by shift-invert.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    Field,
    OperatorBlocks,
    Variant,
    assemble_coupled_system,
    assemble_laplacian,
    assemble_mass,
    gauss01,
    interface_quadrature,
    reference_basis,
)
from .mesh import FacetTag, Mesh


class SolverError(RuntimeError):
    """A linear or eigen solve failed."""


class SpectralCollisionError(SolverError):
    """The resolvent is (numerically) singular at the requested spectral parameter."""

    def __init__(self, lam, detail: str = ""):
        self.lam = lam
        super().__init__(f"lambda = {lam!r} is at or near the spectrum{': ' + detail if detail else ''}")


@dataclass
class CoupledState:
    """Free-dof coefficients of ``(p, u, pi)`` at time ``t``."""

    t: float
    p: np.ndarray
    u: np.ndarray
    pi: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.u, self.pi])

    @classmethod
    def from_vector(cls, x: np.ndarray, sizes, t: float = 0.0) -> "CoupledState":
        n_p, n_u, _ = sizes
        x = np.asarray(x)
        return cls(t, x[:n_p].copy(), x[n_p:n_p + n_u].copy(), x[n_p + n_u:].copy())

    @classmethod
    def zeros(cls, sizes, t: float = 0.0) -> "CoupledState":
        return cls.from_vector(np.zeros(sum(sizes)), sizes, t)


@dataclass(frozen=True, eq=False)
class OperatorPencil:
    A: sp.csr_matrix
    M: sp.csr_matrix
    blocks: OperatorBlocks
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def variant(self) -> Variant:
        return self.blocks.variant

    @property
    def params(self) -> tuple[float, float, float]:
        return self.blocks.k, self.blocks.mu, self.blocks.beta

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.blocks.sizes

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        n_p, n_u, n_pi = self.sizes
        return slice(0, n_p), slice(n_p, n_p + n_u), slice(n_p + n_u, n_p + n_u + n_pi)

    @property
    def mesh(self) -> Mesh:
        return self.blocks.mesh

    @property
    def level(self) -> int:
        """Mesh level ``log2(1/h)`` (rounded)."""
        return int(round(-np.log2(self.blocks.mesh.h)))

    def dofmap(self, fld: Field):
        return self.blocks.dofmaps[fld]

    def state(self, x: np.ndarray, t: float = 0.0) -> CoupledState:
        return CoupledState.from_vector(x, self.sizes, t)

    def expand(self, fld: Field, free_values: np.ndarray) -> np.ndarray:
        """Scatter free-dof values into a full dof vector (zeros on essential dofs)."""
        d = self.dofmap(fld)
        out = np.zeros(d.ndofs, dtype=np.result_type(free_values, float))
        out[d.free] = free_values
        return out

    def factorized(self, a: complex, b: complex):
        """Cached sparse LU of ``a M - b A``."""
        key = (complex(a), complex(b))
        with self._lock:
            if key not in self._cache:
                if key[0].imag == 0 and key[1].imag == 0:
                    mat = key[0].real * self.M - key[1].real * self.A
                else:
                    mat = key[0] * self.M - key[1] * self.A
                try:
                    self._cache[key] = spla.splu(sp.csc_matrix(mat))
                except RuntimeError as exc:
                    raise SpectralCollisionError(a / b if b else np.inf, str(exc)) from exc
            return self._cache[key]


def build_pencil(blocks: OperatorBlocks) -> OperatorPencil:
    b = blocks
    A = sp.bmat([
        [-b.K_p, -b.C_up, None],
        [-b.C_pu + b.G_t, -b.K_u - b.S_t, b.B_div.T],
        [None, b.B_div, None],
    ], format="csr")
    n_pi = b.M_pi.shape[0]
    M = sp.block_diag([b.M_p, b.M_u, sp.csr_matrix((n_pi, n_pi))], format="csr")
    A.sort_indices()
    M.sort_indices()
    return OperatorPencil(A, M, blocks)


def assemble_pencil(m: Mesh, cfg=None, **overrides) -> OperatorPencil:
    return build_pencil(assemble_coupled_system(m, cfg, **overrides))


def decoupled(blocks: OperatorBlocks) -> OperatorBlocks:
    """Copy of ``blocks`` with every interface matrix zeroed."""
    from dataclasses import replace

    zero = {name: sp.csr_matrix(getattr(blocks, name).shape) for name in ("C_pu", "C_up", "S_t", "G_t")}
    return replace(blocks, **zero)


# ---------------------------------------------------------------------------
# resolvent

RESOLVENT_RTOL = 1e-10


def resolvent_solve(P: OperatorPencil, lam: complex, rhs: CoupledState,
                    load: np.ndarray | None = None) -> CoupledState:
    """Solve ``(lam M - A) v = M rhs (+ load)`` on free dofs.

    ``load`` is an optional extra dual vector (e.g. interface data) of the
    full system length.
    """
    b = P.M @ rhs.vector()
    if load is not None:
        b = b + load
    norm_b = np.linalg.norm(b)
    dtype = complex if np.iscomplexobj(b) or np.imag(lam) != 0 else float
    if norm_b == 0.0:
        return P.state(np.zeros(P.A.shape[0], dtype=dtype), rhs.t)
    lu = P.factorized(lam, 1.0)
    x = lu.solve(b.astype(dtype))
    if not np.all(np.isfinite(x)):
        raise SpectralCollisionError(lam, "non-finite solution")
    res = np.linalg.norm((lam * P.M - P.A) @ x - b)
    if res > RESOLVENT_RTOL * norm_b:
        raise SpectralCollisionError(lam, f"residual {res:.3e} > {RESOLVENT_RTOL:g} * |b|")
    return P.state(x, rhs.t)


# ---------------------------------------------------------------------------
# spectrum

@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    shift: complex
    level: int
    variant: Variant
    k: float
    mu: float
    beta: float
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        for lam, res in zip(self.eigenvalues, self.residuals):
            yield (float(lam.real), float(lam.imag), float(res), self.level,
                   self.variant.value, self.k, self.mu, self.beta)


SPECTRUM_HEADER = ("re", "im", "residual", "level", "variant", "k", "mu", "beta")


def _residuals(P: OperatorPencil, lam: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    r = P.A @ vecs - (P.M @ vecs) * lam[None, :]
    return np.linalg.norm(r, axis=0) / np.linalg.norm(vecs, axis=0)


def spectrum(P: OperatorPencil, n_eigs: int = 10, shift: complex = 0.0, maxiter: int | None = None,
             tol: float = 0.0, seed: int = 0) -> SpectrumReport:
    """Finite eigenvalues nearest ``shift``, sorted by decreasing real part.

    The Arnoldi start vector is drawn from ``seed`` so repeated calls agree bit for bit.
    """
    if n_eigs < 1:
        raise ValueError("n_eigs must be at least 1")
    n = P.A.shape[0]
    if n_eigs >= n - 1:
        raise ValueError(f"n_eigs={n_eigs} too large for a system of size {n}")
    lu = P.factorized(shift, 1.0)  # factor of shift*M - A
    dtype = complex if np.imag(shift) != 0 else float

    # (A - sM)^{-1} M x = nu x  <=>  A x = (s + 1/nu) M x
    op = spla.LinearOperator((n, n), matvec=lambda x: -lu.solve(P.M @ x), dtype=dtype)
    ncv = min(n - 1, max(2 * n_eigs + 1, 40))
    try:
        v0 = np.random.default_rng(seed).standard_normal(n).astype(dtype)
        nu, vecs = spla.eigs(op, k=n_eigs, which="LM", ncv=ncv, maxiter=maxiter, tol=tol, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(
            f"eigensolver did not converge: {len(exc.eigenvalues)} of {n_eigs} pairs "
            f"(shift {shift}, level {P.level}, size {n})"
        ) from exc
    finite = np.abs(nu) > 1e-12 * np.max(np.abs(nu))
    lam = shift + 1.0 / nu[finite]
    vecs = vecs[:, finite]
    vecs /= np.linalg.norm(vecs, axis=0)
    order = np.lexsort((lam.imag, -lam.real))
    lam, vecs = lam[order], vecs[:, order]
    k, mu, beta = P.params
    return SpectrumReport(lam, _residuals(P, lam, vecs), complex(shift), P.level, P.variant,
                          k, mu, beta, vecs)


def spectrum_dense(P: OperatorPencil) -> np.ndarray:
    """All finite eigenvalues by dense QZ; the oracle for :func:`spectrum`."""
    w = sla.eig(P.A.toarray(), P.M.toarray(), right=False, homogeneous_eigvals=True)
    alpha, beta = w
    finite = np.abs(beta) > 1e-10 * np.abs(alpha)
    lam = alpha[finite] / beta[finite]
    return lam[np.argsort(-lam.real)]


# ---------------------------------------------------------------------------
# dissipation

def _check_constraint(P: OperatorPencil, v: CoupledState, tol: float = 1e-10) -> None:
    div = np.linalg.norm(P.blocks.B_div @ v.u)
    if div > tol * max(1.0, np.linalg.norm(v.u)):
        raise ValueError(f"state violates the divergence constraint: |B u| = {div:.3e}")


def dissipation_form(P: OperatorPencil, v: CoupledState) -> float:
    """``Re <A v, v>`` over the (p, u) rows for a divergence-consistent state."""
    _check_constraint(P, v)
    x = v.vector()
    sp_, su, _ = P.slices
    Ax = P.A @ x
    return float(np.real(np.vdot(x[sp_], Ax[sp_]) + np.vdot(x[su], Ax[su])))


def rotated_dissipation(P: OperatorPencil, v: CoupledState, angle: float) -> float:
    """``Re(e^{i angle} <A v, v>)`` using the same quadratic forms; ``v`` may be complex."""
    _check_constraint(P, v)
    x = v.vector()
    sp_, su, _ = P.slices
    Ax = P.A @ x
    form = np.vdot(x[sp_], Ax[sp_]) + np.vdot(x[su], Ax[su])
    return float(np.real(np.exp(1j * angle) * form))


def project_divergence_free(P: OperatorPencil, u: np.ndarray) -> np.ndarray:
    """M-orthogonal projection of free velocity dofs onto ``ker B``."""
    b = P.blocks
    n_pi = b.M_pi.shape[0]
    K = sp.bmat([[b.M_u, b.B_div.T], [b.B_div, None]], format="csc")
    rhs = np.concatenate([b.M_u @ u, np.zeros(n_pi)])
    return spla.spsolve(K, rhs)[: b.M_u.shape[0]]


def _discrete_kernel_basis(blocks: OperatorBlocks) -> np.ndarray:
    return sla.null_space(blocks.B_div.toarray())


@dataclass(frozen=True)
class _ConstrainedForms:
    """Dense dissipation and mass matrices on ``{(p, u): B u = 0}``."""

    D0: np.ndarray   # part independent of beta
    D1: np.ndarray   # per unit beta
    Mw: np.ndarray

    def least_eigenvalue(self, beta: float) -> tuple[float, float]:
        D = self.D0 + beta * self.D1
        w = sla.eigh(D, self.Mw, eigvals_only=True)
        return float(w[0]), float(np.max(np.abs(w)))


def constrained_forms(m: Mesh, k: float, mu: float, variant) -> _ConstrainedForms:
    """Dissipation matrix ``-sym(A)`` restricted to the discrete solenoidal space,
    split as ``D0 + beta * D1`` (assembly is affine in beta)."""
    b0 = assemble_coupled_system(m, k=k, mu=mu, beta=0.0, variant=variant)
    b1 = assemble_coupled_system(m, k=k, mu=mu, beta=1.0, variant=variant)
    Z = _discrete_kernel_basis(b0)
    n_p = b0.M_p.shape[0]
    W = sla.block_diag(np.eye(n_p), Z)

    def sym_part(b):
        A = build_pencil(b).A
        n_pu = n_p + b.M_u.shape[0]
        Apu = A[:n_pu, :n_pu].toarray()
        return -0.5 * (Apu + Apu.T)

    D0 = W.T @ sym_part(b0) @ W
    D1 = W.T @ sym_part(b1) @ W - D0
    Mpu = sla.block_diag(b0.M_p.toarray(), b0.M_u.toarray())
    Mw = W.T @ Mpu @ W
    sym = lambda X: 0.5 * (X + X.T)  # noqa: E731
    return _ConstrainedForms(sym(D0), sym(D1), sym(Mw))


DISSIPATIVE_RTOL = 1e-10


def is_dissipative(forms: _ConstrainedForms, beta: float) -> bool:
    lmin, scale = forms.least_eigenvalue(beta)
    return lmin >= -DISSIPATIVE_RTOL * scale


class DegenerateThresholdError(SolverError):
    pass


def bj_dissipativity_threshold(m: Mesh, k: float, mu: float, rtol: float = 0.01,
                               floor: float = 1e-6, ceiling: float = 1e8,
                               forms: _ConstrainedForms | None = None) -> float:
    """Largest beta (to ``rtol``) for which the constrained Beavers-Joseph operator
    has negative semidefinite symmetric part."""
    if not (k > 0 and mu > 0):
        raise ValueError("k and mu must be positive")
    forms = forms or constrained_forms(m, k, mu, Variant.BJ)
    if not is_dissipative(forms, floor):
        raise DegenerateThresholdError(f"not dissipative even at beta = {floor:g}")
    lo, hi = floor, 1.0
    while is_dissipative(forms, hi):
        lo, hi = hi, 10.0 * hi
        if hi > ceiling:
            raise DegenerateThresholdError(f"dissipative up to beta = {ceiling:g}")
    # dissipative set is an interval: lambda_min is concave in beta
    while hi > lo * (1.0 + rtol):
        mid = np.sqrt(lo * hi)
        if is_dissipative(forms, mid):
            lo = mid
        else:
            hi = mid
    return float(lo)


# ---------------------------------------------------------------------------
# Neumann extension operators

def trace_nodes(d) -> np.ndarray:
    """Node ids on the interface, sorted by x."""
    on = np.isclose(d.coords[:, 1], 0.0, atol=1e-12)
    idx = np.flatnonzero(on)
    return idx[np.argsort(d.coords[idx, 0])]


def interface_mass(m: Mesh, d) -> sp.csr_matrix:
    """``int_G phi_i phi_j`` on one component of ``d`` (all nodes)."""
    from .assembly import build_dofmap

    dp = d if d.field is Field.DARCY_P else build_dofmap(m, Field.DARCY_P)
    du = d if d.field is Field.FLUID_U else build_dofmap(m, Field.FLUID_U)
    q = interface_quadrature(m, dp, du)
    cells = q.porous_cell if d is dp else q.fluid_cell
    xi = (q.points - d.origin[cells][:, None, :]) / d.size[cells][:, None, :]
    phi = reference_basis(d.degree, xi.reshape(-1, 2))[0].reshape(*xi.shape[:2], -1)
    local = np.einsum("fq,fqi,fqj->fij", q.weights, phi, phi)
    rows = d.cell_nodes[cells]
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(rows[:, None, :], local.shape).ravel()
    return sp.coo_matrix((local.ravel(), (r, c)), shape=(d.n_nodes, d.n_nodes)).tocsr()


def neumann_extension_darcy(m: Mesh, k: float, phi: np.ndarray) -> np.ndarray:
    """Discrete solution of ``k lap p = 0``, ``d_n p = phi`` on the interface, ``p = 0``
    on the outer porous boundary.

    ``phi`` holds nodal values on :func:`trace_nodes`; returns all Darcy dofs.
    """
    from .assembly import build_dofmap

    d = build_dofmap(m, Field.DARCY_P)
    nodes = trace_nodes(d)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (len(nodes),):
        raise ValueError(f"expected {len(nodes)} trace values, got shape {phi.shape}")
    full_phi = np.zeros(d.n_nodes)
    full_phi[nodes] = phi
    # k int grad p . grad xi = int_G k (d_{n_G} p) xi   (n_G = -n_p)
    load = -k * (interface_mass(m, d) @ full_phi)
    K = k * assemble_laplacian(m, d)
    free = d.free
    p = np.zeros(d.ndofs)
    if np.any(phi):
        p[free] = spla.spsolve(sp.csc_matrix(K[free][:, free]), load[free])
    return p


def neumann_extension_stokes(m: Mesh, mu: float, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Discrete Stokes solution with traction ``sigma n = psi`` on the interface and
    no slip on the outer fluid boundary.

    ``psi`` has shape (2, n_trace) on :func:`trace_nodes`; returns (u, pi) on all dofs.
    """
    from .assembly import assemble_divergence, assemble_fluid_stiffness, build_dofmap

    du = build_dofmap(m, Field.FLUID_U)
    dpi = build_dofmap(m, Field.FLUID_PI)
    nodes = trace_nodes(du)
    psi = np.asarray(psi, dtype=float).reshape(2, -1)
    if psi.shape[1] != len(nodes):
        raise ValueError(f"expected (2, {len(nodes)}) traction values, got {psi.shape}")
    u = np.zeros(du.ndofs)
    pi = np.zeros(dpi.ndofs)
    if not np.any(psi):
        return u, pi
    Mg = interface_mass(m, du)
    load = np.zeros(du.ndofs)
    for c in range(2):
        full = np.zeros(du.n_nodes)
        full[nodes] = psi[c]
        load[c * du.n_nodes:(c + 1) * du.n_nodes] = Mg @ full
    K = assemble_fluid_stiffness(m, du, mu)
    B = assemble_divergence(m, du, dpi)
    free = du.free
    S = sp.bmat([[K[free][:, free], -B[:, free].T], [-B[:, free], None]], format="csc")
    rhs = np.concatenate([load[free], np.zeros(dpi.ndofs)])
    try:
        x = spla.spsolve(S, rhs)
    except RuntimeError as exc:
        raise SolverError(f"Stokes extension solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("Stokes extension solve produced non-finite values")
    u[free] = x[: len(free)]
    pi[:] = x[len(free):]
    return u, pi


def _trace_points(m: Mesh, npts: int = 4):
    facets = m.facets_tagged(FacetTag.GAMMA)
    s, w = gauss01(npts)
    a = m.vertices[m.facets[facets, 0]]
    b = m.vertices[m.facets[facets, 1]]
    pts = (a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
    wts = (np.linalg.norm(b - a, axis=1)[:, None] * w[None, :]).ravel()
    return pts, wts


def recovered_darcy_trace(m: Mesh, p: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``d_{n_G} p = grad p . (0, -1)`` evaluated from the porous side."""
    from .assembly import build_dofmap

    d = build_dofmap(m, Field.DARCY_P)
    pts = points - np.array([0.0, 1e-14])  # porous side of the shared edge
    return -d.evaluate(p, pts, derivative=True)[:, 0, 1]


def recovered_traction(m: Mesh, mu: float, u: np.ndarray, pi: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``sigma n_G`` with ``n_G = (0, -1)``, evaluated from the fluid side; shape (npts, 2)."""
    from .assembly import build_dofmap

    du = build_dofmap(m, Field.FLUID_U)
    dpi = build_dofmap(m, Field.FLUID_PI)
    pts = points + np.array([0.0, 1e-14])
    g = du.evaluate(u, pts, derivative=True)  # (n, comp, d)
    press = dpi.evaluate(pi, pts)[:, 0]
    sigma = mu * (g + np.transpose(g, (0, 2, 1)))
    sigma[:, 0, 0] -= press
    sigma[:, 1, 1] -= press
    n = np.array([0.0, -1.0])
    return sigma @ n


def extension_trace_errors(m: Mesh, k: float, mu: float, phi_func, psi_func,
                           window: tuple[float, float] | None = None) -> tuple[float, float]:
    """L2(G) distance between the recovered Neumann/traction traces and the data.

    ``phi_func(x)`` and ``psi_func(x) -> (psi_x, psi_y)`` are interpolated on the
    trace nodes, extended, and the traces of the extensions compared with the
    exact data at Gauss points.  ``window = (a, b)`` restricts the comparison
    to ``a <= x <= b``, away from the corners where the interface meets the
    no-slip wall and the Stokes traction is singular.
    """
    from .assembly import build_dofmap

    dp = build_dofmap(m, Field.DARCY_P)
    du = build_dofmap(m, Field.FLUID_U)
    xp = dp.coords[trace_nodes(dp), 0]
    xu = du.coords[trace_nodes(du), 0]
    p = neumann_extension_darcy(m, k, phi_func(xp))
    u, pi = neumann_extension_stokes(m, mu, np.asarray(psi_func(xu)))
    pts, wts = _trace_points(m)
    if window is not None:
        keep = (pts[:, 0] >= window[0]) & (pts[:, 0] <= window[1])
        pts, wts = pts[keep], wts[keep]
    e_p = recovered_darcy_trace(m, p, pts) - phi_func(pts[:, 0])
    e_u = recovered_traction(m, mu, u, pi, pts) - np.asarray(psi_func(pts[:, 0])).T
    return float(np.sqrt(wts @ e_p**2)), float(np.sqrt(wts @ np.sum(e_u**2, axis=1)))


def region_mass_and_laplacian(m: Mesh, fld: Field):
    from .assembly import build_dofmap

    d = build_dofmap(m, fld)
    return d, assemble_mass(m, d), assemble_laplacian(m, d)
