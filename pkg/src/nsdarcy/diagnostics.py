"""Energies, norms and monitor quantities for coupled states and trajectories."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg as sla

from .assembly import (
    Field,
    assemble_laplacian,
    assemble_mass,
    build_dofmap,
    gauss01,
    interface_quadrature,
    reference_basis,
)
from .mesh import FacetTag, Mesh, Region
from .operator import CoupledState, OperatorPencil, dissipation_form


class NormKind(Enum):
    L2 = "L2"
    H1 = "H1"
    HFRAC = "HFRAC"
    LIONS_MAGENES = "LIONS_MAGENES"
    BOCHNER_WEIGHTED = "BOCHNER_WEIGHTED"


class NormRegion(Enum):
    POROUS = "POROUS"
    FLUID = "FLUID"
    INTERFACE = "INTERFACE"


def critical_weight(r: float, q: float) -> float:
    """Smallest admissible time weight ``3/(2q) - 1/2 + 1/r``."""
    return 3.0 / (2.0 * q) - 0.5 + 1.0 / r


@dataclass(frozen=True)
class NormSpec:
    kind: NormKind
    region: NormRegion = NormRegion.POROUS
    s_frac: float = 1.0
    r: float = 2.0
    mu_weight: float = 1.0

    def __post_init__(self):
        if self.kind is NormKind.HFRAC and not 0 < self.s_frac <= 2:
            raise ValueError(f"s_frac must lie in (0, 2], got {self.s_frac}")
        if self.kind is NormKind.BOCHNER_WEIGHTED:
            if not self.r > 1:
                raise ValueError(f"time exponent r must exceed 1, got {self.r}")
            if not 1.0 / self.r < self.mu_weight <= 1.0:
                raise ValueError(f"mu_weight must lie in (1/r, 1], got {self.mu_weight}")

    @classmethod
    def critical(cls, r: float = 2.0, q: float = 2.0, **kw) -> "NormSpec":
        return cls(NormKind.BOCHNER_WEIGHTED, r=r, mu_weight=critical_weight(r, q), **kw)


NORM_REPORT_HEADER = ("kind", "s", "r", "mu", "region", "value")


def norm_report_row(spec: NormSpec, value: float) -> tuple:
    return (spec.kind.value, spec.s_frac, spec.r, spec.mu_weight, spec.region.value, value)


# ---------------------------------------------------------------------------
# energy

def energy(v: CoupledState, P: OperatorPencil | None = None, mass=None) -> float:
    """``1/2 (p^T M_p p + u^T M_u u)``; ``mass=(M_p, M_u)`` overrides the pencil's blocks."""
    M_p, M_u = mass if mass is not None else (P.blocks.M_p, P.blocks.M_u)
    return 0.5 * float(np.real(np.vdot(v.p, M_p @ v.p) + np.vdot(v.u, M_u @ v.u)))


def energy_identity_residual(v_n: CoupledState, v_np1: CoupledState, dt: float, P: OperatorPencil) -> float:
    """Defect of the implicit Euler energy balance
    ``E_{n+1} - E_n + 1/2 |v_{n+1} - v_n|_M^2 = dt Re<A v_{n+1}, v_{n+1}>``."""
    delta = CoupledState(v_np1.t, v_np1.p - v_n.p, v_np1.u - v_n.u, v_np1.pi - v_n.pi)
    lhs = energy(v_np1, P) - energy(v_n, P) + energy(delta, P)
    return abs(lhs - dt * dissipation_form(P, v_np1))


# ---------------------------------------------------------------------------
# spectral (fractional) norms

_REGION_FIELD = {
    Region.POROUS: Field.DARCY_P, Region.FLUID: Field.FLUID_U,
    NormRegion.POROUS: Field.DARCY_P, NormRegion.FLUID: Field.FLUID_U,
}


@dataclass(frozen=True, eq=False)
class RegionSpectrum:
    """Eigenpairs of the scalar Laplacian/mass pencil of one region.

    ``vectors`` are mass-orthonormal; vector fields apply them per component.
    """

    values: np.ndarray
    vectors: np.ndarray
    mass: np.ndarray
    ncomp: int
    dofs: np.ndarray  # scalar node ids the pencil acts on

    def coefficients(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v).reshape(self.ncomp, -1)
        return (self.vectors.T @ (self.mass @ v.T)).T  # (ncomp, nmodes)

    def norm(self, v: np.ndarray, s: float) -> float:
        c = self.coefficients(v)
        w = (1.0 + self.values) ** (0.5 * s)
        return float(np.sqrt(np.sum(np.abs(c * w[None, :]) ** 2)))


@functools.lru_cache(maxsize=32)
def region_spectrum(m: Mesh, region, free: bool) -> RegionSpectrum:
    fld = _REGION_FIELD[region]
    d = build_dofmap(m, fld)
    M = assemble_mass(m, d).toarray()
    K = assemble_laplacian(m, d).toarray()
    n = d.n_nodes
    nodes = np.flatnonzero(~d.essential[:n]) if free else np.arange(n)
    M, K = M[np.ix_(nodes, nodes)], K[np.ix_(nodes, nodes)]
    try:
        lam, vec = sla.eigh(K, M)
    except sla.LinAlgError as exc:
        from .operator import SolverError

        raise SolverError(f"eigendecomposition failed for {region}: {exc}") from exc
    lam = np.clip(lam, 0.0, None)
    return RegionSpectrum(lam, vec, M, d.ncomp, nodes)


def _region_context(m: Mesh, region, field_values: np.ndarray) -> tuple[RegionSpectrum, np.ndarray]:
    fld = _REGION_FIELD[region]
    d = build_dofmap(m, fld)
    v = np.asarray(field_values)
    if v.shape == (d.n_free,):
        return region_spectrum(m, region, True), v
    if v.shape == (d.ndofs,):
        return region_spectrum(m, region, False), v
    raise ValueError(f"field of length {v.size} matches neither the free ({d.n_free}) "
                     f"nor the full ({d.ndofs}) dof count of {region}")


def fractional_sobolev_norm(field_values: np.ndarray, s: float, region, mesh: Mesh) -> float:
    """Spectral norm ``|(I + L_h)^{s/2} v|_{L2}`` on one region.

    ``L_h`` is the discrete Laplacian of the region; free-dof vectors use the
    Dirichlet version, full vectors the Neumann one.
    """
    if not 0 < s <= 2:
        raise ValueError(f"s must lie in (0, 2], got {s}")
    spec, v = _region_context(mesh, region, field_values)
    return spec.norm(v, s)


def l2_norm(field_values: np.ndarray, region, mesh: Mesh) -> float:
    spec, v = _region_context(mesh, region, field_values)
    v = np.asarray(v).reshape(spec.ncomp, -1)
    return float(np.sqrt(sum(np.real(np.vdot(c, spec.mass @ c)) for c in v)))


def h1_norm(field_values: np.ndarray, region, mesh: Mesh) -> float:
    spec, v = _region_context(mesh, region, field_values)
    return spec.norm(v, 1.0)


# ---------------------------------------------------------------------------
# Lions-Magenes weighted norm

def distance_to(tag: FacetTag, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Distance to a tagged boundary part of the layered unit rectangles."""
    if tag is FacetTag.GAMMA:
        return np.abs(y)
    if tag is FacetTag.GAMMA1:
        return np.minimum(np.minimum(x, 1.0 - x), y + 1.0)
    if tag is FacetTag.GAMMA2:
        return np.minimum(np.minimum(x, 1.0 - x), 1.0 - y)
    raise ValueError(f"no distance function for {tag!r}")


def weighted_boundary_integral(field_values: np.ndarray, region, gamma_tag: FacetTag, mesh: Mesh,
                               npts: int = 4) -> float:
    """``int |v|^2 / d(x, G)^2`` by interior Gauss points (never on the boundary)."""
    fld = _REGION_FIELD[region]
    d = build_dofmap(mesh, fld)
    v = np.asarray(field_values, dtype=float)
    if v.shape == (d.n_free,):
        full = np.zeros(d.ndofs)
        full[d.free] = v
        v = full
    elif v.shape != (d.ndofs,):
        raise ValueError("field length does not match the region's dofs")
    g, w = gauss01(npts)
    xi = np.array([(a, b) for b in g for a in g])
    wq = np.array([wa * wb for wb in w for wa in w])
    phi, _ = reference_basis(d.degree, xi)
    pts = d.origin[:, None, :] + xi[None] * d.size[:, None, :]
    jw = wq[None, :] * np.prod(d.size, axis=1)[:, None]
    vals = np.einsum("cea,qa->ceq", v.reshape(d.ncomp, -1)[:, d.cell_nodes], phi)
    dist = distance_to(gamma_tag, pts[..., 0], pts[..., 1])
    return float(np.sum(jw * np.sum(vals**2, axis=0) / dist**2))


def lions_magenes_norm(field_values: np.ndarray, region, gamma_tag: FacetTag, mesh: Mesh) -> float:
    """``(|v|_{H^{1/2}}^2 + int |v|^2 / d^2)^{1/2}`` with the spectral H^{1/2} norm."""
    half = fractional_sobolev_norm(field_values, 0.5, region, mesh)
    return float(np.sqrt(half**2 + weighted_boundary_integral(field_values, region, gamma_tag, mesh)))


# ---------------------------------------------------------------------------
# time-weighted norms and monitors

def weighted_bochner_norm(series, r: float, mu: float, dt: float) -> float:
    """``(sum_n dt t_n^{r(1-mu)} a_n^r)^{1/r}`` over ``t_n = n dt``, skipping ``t_0``."""
    if not r > 1:
        raise ValueError(f"r must exceed 1, got {r}")
    if not 1.0 / r < mu <= 1.0:
        raise ValueError(f"mu must lie in (1/r, 1], got {mu}")
    a = np.abs(np.asarray(series, dtype=float))[1:]
    t = dt * np.arange(1, len(a) + 1)
    return float(np.sum(dt * t ** (r * (1.0 - mu)) * a**r) ** (1.0 / r))


def interface_mass_balance(P: OperatorPencil, v: CoupledState) -> float:
    """``|int_G (u . n + k grad p . n)|`` from one-sided traces."""
    dp, du = P.dofmap(Field.DARCY_P), P.dofmap(Field.FLUID_U)
    q = interface_quadrature(P.mesh, dp, du, npts=4)
    pts = q.points.reshape(-1, 2)
    n = np.repeat(q.normal, q.points.shape[1], axis=0)
    u = du.evaluate(P.expand(Field.FLUID_U, v.u), pts + np.array([0.0, 1e-14]))
    gp = dp.evaluate(P.expand(Field.DARCY_P, v.p), pts - np.array([0.0, 1e-14]), derivative=True)[:, 0, :]
    integrand = np.sum(u * n, axis=1) + P.blocks.k * np.sum(gp * n, axis=1)
    return float(abs(q.weights.ravel() @ integrand))


class FitError(ValueError):
    pass


def decay_rate_fit(times, energies) -> tuple[float, float]:
    """Exponential rate ``omega`` of ``E(t) ~ exp(-2 omega t)`` over the second half.

    Returns ``(omega, rms residual of the log-linear fit)``.  Nonpositive
    energies truncate the window.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(energies, dtype=float)
    start = len(t) // 2
    t, e = t[start:], e[start:]
    bad = np.flatnonzero(~(e > 0))
    if bad.size:
        t, e = t[: bad[0]], e[: bad[0]]
    if len(t) < 2:
        raise FitError("fewer than two positive energies in the fit window")
    slope, intercept = np.polyfit(t, np.log(e), 1)
    resid = np.log(e) - (slope * t + intercept)
    return float(-0.5 * slope), float(np.sqrt(np.mean(resid**2)))


def evaluate_norm(spec: NormSpec, values, mesh: Mesh | None = None, dt: float | None = None) -> float:
    """Dispatch on ``spec.kind``; BOCHNER_WEIGHTED takes a time series in ``values``."""
    if spec.kind is NormKind.BOCHNER_WEIGHTED:
        return weighted_bochner_norm(values, spec.r, spec.mu_weight, dt)
    if spec.region is NormRegion.INTERFACE:
        if spec.kind is not NormKind.L2:
            raise ValueError("only L2 norms are defined on the interface")
        return interface_l2_norm(values, mesh)
    if spec.kind is NormKind.L2:
        return l2_norm(values, spec.region, mesh)
    if spec.kind is NormKind.H1:
        return h1_norm(values, spec.region, mesh)
    if spec.kind is NormKind.HFRAC:
        return fractional_sobolev_norm(values, spec.s_frac, spec.region, mesh)
    return lions_magenes_norm(values, spec.region, FacetTag.GAMMA, mesh)


def interface_l2_norm(trace: tuple, mesh: Mesh) -> float:
    """L2(G) norm of a Darcy trace given as ``(field_values,)`` on the Darcy dofs."""
    from .operator import interface_mass

    (values,) = trace
    d = build_dofmap(mesh, Field.DARCY_P)
    v = np.asarray(values, dtype=float)
    if v.shape == (d.n_free,):
        full = np.zeros(d.ndofs)
        full[d.free] = v
        v = full
    return float(np.sqrt(v @ (interface_mass(mesh, d) @ v)))
