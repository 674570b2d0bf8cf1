"""Taylor-Hood finite element spaces and assembly of the coupled weak form.

Spaces on the layered mesh:

* Darcy pressure ``p``: continuous Q2 on the porous cells, zero on the outer
  porous boundary.
* Fluid velocity ``u``: continuous vector Q2 on the fluid cells, zero on the
  outer fluid boundary.
* Fluid pressure ``pi``: continuous Q1 on the fluid cells, unconstrained.

Velocity dofs are stored component-blocked: ``u = [u_x nodes..., u_y nodes...]``.

Sign convention for the interface blocks.  Writing the weak form as
``M v' + a(v, .) = <f, .>`` the interface contributes

    fluid rows:  + C_pu p + S_t u - G_t p
    Darcy rows:  + C_up u

with ``C_pu[i, j] = int_G phi^p_j (phi^u_i . n)`` and ``C_up = -C_pu^T``
(the matrix of ``<-u . n, xi>``).  The skew pair cancels in the energy.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .mesh import FacetTag, Mesh, Region


class Field(Enum):
    DARCY_P = "p"
    FLUID_U = "u"
    FLUID_PI = "pi"


class Variant(str, Enum):
    BJS = "bjs"
    BJ = "bj"


def parse_variant(variant) -> Variant:
    try:
        return Variant(str(getattr(variant, "value", variant)).lower())
    except ValueError:
        raise ValueError(f"unknown interface variant {variant!r}; expected 'bjs' or 'bj'") from None


# ---------------------------------------------------------------------------
# reference elements

def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _lagrange_1d(degree: int, x: np.ndarray):
    """Values and derivatives of the 1D Lagrange basis on equispaced nodes of [0, 1]."""
    x = np.asarray(x, dtype=float)
    if degree == 1:
        val = np.stack([1.0 - x, x])
        der = np.stack([-np.ones_like(x), np.ones_like(x)])
    elif degree == 2:
        val = np.stack([2.0 * (x - 0.5) * (x - 1.0), -4.0 * x * (x - 1.0), 2.0 * x * (x - 0.5)])
        der = np.stack([4.0 * x - 3.0, -8.0 * x + 4.0, 4.0 * x - 1.0])
    else:
        raise ValueError(f"unsupported degree {degree}")
    return val, der


def reference_nodes(degree: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, degree + 1)
    return np.array([(s[i], s[j]) for j in range(degree + 1) for i in range(degree + 1)])


def reference_basis(degree: int, xi: np.ndarray):
    """Tensor-product basis at reference points ``xi`` (n, 2).

    Returns ``phi`` (n, nloc) and ``dphi`` (n, nloc, 2) with local nodes ordered
    x-fastest, matching :func:`reference_nodes`.
    """
    xi = np.atleast_2d(xi)
    vx, dx = _lagrange_1d(degree, xi[:, 0])
    vy, dy = _lagrange_1d(degree, xi[:, 1])
    n1 = degree + 1
    phi = np.empty((len(xi), n1 * n1))
    dphi = np.empty((len(xi), n1 * n1, 2))
    for j in range(n1):
        for i in range(n1):
            a = j * n1 + i
            phi[:, a] = vx[i] * vy[j]
            dphi[:, a, 0] = dx[i] * vy[j]
            dphi[:, a, 1] = vx[i] * dy[j]
    return phi, dphi


# ---------------------------------------------------------------------------
# dof maps

@dataclass(frozen=True, eq=False)
class DofMap:
    """Nodal Lagrange dofs of one field.

    For the vector field the node-level arrays describe one component; the
    dof count is ``ncomp * n_nodes`` and ``essential`` covers all dofs.
    """

    field: Field
    degree: int
    ncomp: int
    mesh: Mesh
    cells: np.ndarray        # mesh cell ids carrying this field
    cell_nodes: np.ndarray   # (ncell, nloc) global node ids
    coords: np.ndarray       # (n_nodes, 2)
    essential: np.ndarray    # (ndofs,) bool
    origin: np.ndarray = field(repr=False)  # (ncell, 2) lower-left corner
    size: np.ndarray = field(repr=False)    # (ncell, 2) cell widths

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def ndofs(self) -> int:
        return self.ncomp * self.n_nodes

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.essential)

    @property
    def n_free(self) -> int:
        return int(np.count_nonzero(~self.essential))

    def cell_dofs(self) -> np.ndarray:
        """(ncell, ncomp * nloc) dof ids, component-blocked."""
        return np.hstack([self.cell_nodes + c * self.n_nodes for c in range(self.ncomp)])

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Local cell index and reference coordinates of each point (closed cells)."""
        points = np.atleast_2d(points)
        lo, hi = self.origin, self.origin + self.size
        tol = 1e-12
        inside = np.all(
            (points[:, None, :] >= lo[None] - tol) & (points[:, None, :] <= hi[None] + tol), axis=2
        )
        if not np.all(inside.any(axis=1)):
            raise ValueError("point outside the field's region")
        local = np.argmax(inside, axis=1)
        xi = (points - lo[local]) / self.size[local]
        return local, np.clip(xi, 0.0, 1.0)

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)``; vector fields return component-blocked values."""
        vals = np.asarray(func(self.coords[:, 0], self.coords[:, 1]), dtype=float)
        if self.ncomp == 1:
            return np.broadcast_to(vals, (self.n_nodes,)).copy()
        return np.concatenate([np.broadcast_to(vals[c], (self.n_nodes,)) for c in range(self.ncomp)])

    def evaluate(self, coeffs: np.ndarray, points: np.ndarray, derivative: bool = False):
        """Field values (npts, ncomp) or gradients (npts, ncomp, 2) at physical points."""
        local, xi = self.locate(points)
        phi, dphi = reference_basis(self.degree, xi)
        nodes = self.cell_nodes[local]
        coeffs = np.asarray(coeffs).reshape(self.ncomp, self.n_nodes)
        vals = coeffs[:, nodes]  # (ncomp, npts, nloc)
        if not derivative:
            return np.einsum("cpa,pa->pc", vals, phi)
        grads = dphi / self.size[local][:, None, :]
        return np.einsum("cpa,pad->pcd", vals, grads)


def _rect_geometry(mesh: Mesh, cells: np.ndarray):
    v = mesh.vertices[mesh.cells[cells]]
    lo, hi = v.min(axis=1), v.max(axis=1)
    size = hi - lo
    # every vertex must sit on a corner of its bounding box
    on_x = np.isclose(v[..., 0], lo[:, None, 0]) | np.isclose(v[..., 0], hi[:, None, 0])
    on_y = np.isclose(v[..., 1], lo[:, None, 1]) | np.isclose(v[..., 1], hi[:, None, 1])
    if not (np.all(on_x & on_y) and np.all(size > 0)):
        raise ValueError("assembly requires axis-aligned rectangular cells")
    return lo, size


def _on_facets(points: np.ndarray, segments: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    mask = np.zeros(len(points), dtype=bool)
    for a, b in segments:
        d = b - a
        rel = points - a
        cross = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])
        s = rel @ d / (d @ d)
        mask |= (cross <= tol * np.linalg.norm(d)) & (s >= -tol) & (s <= 1 + tol)
    return mask


@functools.lru_cache(maxsize=64)
def build_dofmap(mesh: Mesh, fld: Field) -> DofMap:
    region, degree, ncomp, dirichlet = {
        Field.DARCY_P: (Region.POROUS, 2, 1, FacetTag.GAMMA1),
        Field.FLUID_U: (Region.FLUID, 2, 2, FacetTag.GAMMA2),
        Field.FLUID_PI: (Region.FLUID, 1, 1, None),
    }[fld]
    cells = mesh.cells_in(region)
    origin, size = _rect_geometry(mesh, cells)
    ref = reference_nodes(degree)
    pts = origin[:, None, :] + ref[None, :, :] * size[:, None, :]
    scale = 4.0 * degree / mesh.h
    keys = np.round(pts.reshape(-1, 2) * scale).astype(np.int64)
    uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    coords = pts.reshape(-1, 2)[first]
    cell_nodes = inverse.reshape(len(cells), -1)
    if dirichlet is None:
        node_ess = np.zeros(len(coords), dtype=bool)
    else:
        segs = mesh.vertices[mesh.facets[mesh.facets_tagged(dirichlet)]]
        node_ess = _on_facets(coords, segs)
    essential = np.tile(node_ess, ncomp)
    for arr in (cells, cell_nodes, coords, essential, origin, size):
        arr.setflags(write=False)
    return DofMap(fld, degree, ncomp, mesh, cells, cell_nodes, coords, essential, origin, size)


def build_dofmaps(mesh: Mesh) -> dict[Field, DofMap]:
    return {f: build_dofmap(mesh, f) for f in Field}


# ---------------------------------------------------------------------------
# cell integration helpers

QUAD_POINTS = 3


def _cell_quadrature(d: DofMap, npts: int = QUAD_POINTS):
    """phi (nq, nloc), physical grads (ncell, nq, nloc, 2), weights*|J| (ncell, nq),
    physical points (ncell, nq, 2)."""
    g, w = gauss01(npts)
    xi = np.array([(a, b) for b in g for a in g])
    wq = np.array([wa * wb for wb in w for wa in w])
    phi, dphi = reference_basis(d.degree, xi)
    grads = dphi[None, :, :, :] / d.size[:, None, None, :]
    jw = wq[None, :] * np.prod(d.size, axis=1)[:, None]
    points = d.origin[:, None, :] + xi[None, :, :] * d.size[:, None, :]
    return phi, grads, jw, points


def _scatter(rows: np.ndarray, cols: np.ndarray, local: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices local[c] (nr, nc) into a global sparse matrix."""
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    mat = sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _check_dofmap(m: Mesh, d: DofMap) -> None:
    if d.mesh is not m:
        raise ValueError("dof map was built on a different mesh")


def _symmetric(local: np.ndarray) -> np.ndarray:
    """Exactly symmetric element matrices (einsum rounding differs between ij and ji)."""
    return 0.5 * (local + np.swapaxes(local, -1, -2))


def _blockdiag_components(scalar: sp.spmatrix, ncomp: int) -> sp.csr_matrix:
    return sp.block_diag([scalar] * ncomp, format="csr")


def assemble_mass(m: Mesh, d: DofMap) -> sp.csr_matrix:
    """Consistent mass matrix over the field's region (all dofs, before elimination)."""
    _check_dofmap(m, d)
    phi, _, jw, _ = _cell_quadrature(d)
    local = _symmetric(np.einsum("cq,qa,qb->cab", jw, phi, phi))
    scalar = _scatter(d.cell_nodes, d.cell_nodes, local, (d.n_nodes, d.n_nodes))
    return _blockdiag_components(scalar, d.ncomp) if d.ncomp > 1 else scalar


def assemble_laplacian(m: Mesh, d: DofMap) -> sp.csr_matrix:
    """Gradient-form stiffness ``int grad phi_i . grad phi_j``, componentwise for vectors."""
    _check_dofmap(m, d)
    _, grads, jw, _ = _cell_quadrature(d)
    local = _symmetric(np.einsum("cq,cqad,cqbd->cab", jw, grads, grads))
    scalar = _scatter(d.cell_nodes, d.cell_nodes, local, (d.n_nodes, d.n_nodes))
    return _blockdiag_components(scalar, d.ncomp) if d.ncomp > 1 else scalar


def assemble_darcy_stiffness(m: Mesh, d: DofMap, k: float) -> sp.csr_matrix:
    if not k > 0:
        raise ValueError(f"permeability k must be positive, got {k!r}")
    return (k * assemble_laplacian(m, d)).tocsr()


def assemble_fluid_stiffness(m: Mesh, d: DofMap, mu: float) -> sp.csr_matrix:
    """``2 mu int D(phi_j) : D(phi_i)`` on the vector velocity space."""
    if not mu > 0:
        raise ValueError(f"viscosity mu must be positive, got {mu!r}")
    return _deformation_stiffness(m, d, mu)


def _deformation_stiffness(m: Mesh, d: DofMap, mu: float) -> sp.csr_matrix:
    _check_dofmap(m, d)
    _, grads, jw, _ = _cell_quadrature(d)
    nloc = d.cell_nodes.shape[1]
    lap = np.einsum("cq,cqid,cqjd->cij", jw, grads, grads)
    # cross[c, a, b, i, j] = int d_a phi_j d_b phi_i  (test i comp a, trial j comp b)
    cross = np.einsum("cq,cqib,cqja->cabij", jw, grads, grads)
    local = np.empty((len(d.cells), 2 * nloc, 2 * nloc))
    for a in range(2):
        for b in range(2):
            blk = cross[:, a, b] + (lap if a == b else 0.0)
            local[:, a * nloc:(a + 1) * nloc, b * nloc:(b + 1) * nloc] = mu * blk
    dofs = d.cell_dofs()
    return _scatter(dofs, dofs, _symmetric(local), (d.ndofs, d.ndofs))


def assemble_divergence(m: Mesh, du: DofMap, dpi: DofMap) -> sp.csr_matrix:
    """``B[i, j] = int psi_i div phi_j``; shape (n_pi, n_u)."""
    _check_dofmap(m, du)
    _check_dofmap(m, dpi)
    if not np.array_equal(du.cells, dpi.cells):
        raise ValueError("velocity and pressure maps must share cells")
    _, grads_u, jw, _ = _cell_quadrature(du)
    psi = _cell_quadrature(dpi)[0]
    local = np.concatenate(
        [np.einsum("cq,qi,cqj->cij", jw, psi, grads_u[..., comp]) for comp in range(2)], axis=2
    )
    return _scatter(dpi.cell_nodes, du.cell_dofs(), local, (dpi.ndofs, du.ndofs))


def assemble_load(m: Mesh, d: DofMap, func, npts: int = 4) -> np.ndarray:
    """``int f . phi_i`` over the field's region for ``func(x, y)`` (vector fields return a
    sequence of components)."""
    _check_dofmap(m, d)
    phi, _, jw, pts = _cell_quadrature(d, npts)
    vals = np.asarray(func(pts[..., 0], pts[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, (d.ncomp,) + pts.shape[:2]) if d.ncomp > 1 else \
        np.broadcast_to(vals, pts.shape[:2])[None]
    out = np.zeros(d.ndofs)
    for c in range(d.ncomp):
        local = np.einsum("cq,cq,qa->ca", jw, vals[c], phi)
        np.add.at(out, d.cell_nodes + c * d.n_nodes, local)
    return out


# ---------------------------------------------------------------------------
# interface terms

@dataclass(frozen=True)
class InterfaceQuadrature:
    points: np.ndarray   # (nf, nq, 2)
    weights: np.ndarray  # (nf, nq) includes facet length
    normal: np.ndarray   # (nf, 2)
    tangent: np.ndarray  # (nf, 2)
    porous_cell: np.ndarray  # (nf,) local index into the Darcy map
    fluid_cell: np.ndarray   # (nf,) local index into the fluid maps


def interface_quadrature(m: Mesh, dp: DofMap, du: DofMap, npts: int = QUAD_POINTS) -> InterfaceQuadrature:
    from .mesh import interface_frame

    facets = m.facets_tagged(FacetTag.GAMMA)
    s, w = gauss01(npts)
    a = m.vertices[m.facets[facets, 0]]
    b = m.vertices[m.facets[facets, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    lengths = np.linalg.norm(b - a, axis=1)
    frames = [interface_frame(m, int(f)) for f in facets]
    normal = np.array([f[0] for f in frames]).reshape(-1, 2)
    tangent = np.array([f[1] for f in frames]).reshape(-1, 2)
    p_index = {int(c): i for i, c in enumerate(dp.cells)}
    u_index = {int(c): i for i, c in enumerate(du.cells)}
    owners = m.facet_cells[facets]
    return InterfaceQuadrature(
        pts, lengths[:, None] * w[None, :], normal, tangent,
        np.array([p_index[int(c)] for c in owners[:, Region.POROUS]], dtype=np.int64),
        np.array([u_index[int(c)] for c in owners[:, Region.FLUID]], dtype=np.int64),
    )


def _trace_basis(d: DofMap, cells: np.ndarray, points: np.ndarray):
    xi = (points - d.origin[cells][:, None, :]) / d.size[cells][:, None, :]
    nf, nq = xi.shape[:2]
    phi, dphi = reference_basis(d.degree, xi.reshape(-1, 2))
    phi = phi.reshape(nf, nq, -1)
    grads = dphi.reshape(nf, nq, -1, 2) / d.size[cells][:, None, None, :]
    return phi, grads


def assemble_interface_coupling(m: Mesh, dofmaps: dict, k: float, beta: float, variant):
    """Interface blocks ``(C_pu, C_up, S_t, G_t)`` on all dofs (before elimination)."""
    variant = parse_variant(variant)
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta!r}")
    dp, du = dofmaps[Field.DARCY_P], dofmaps[Field.FLUID_U]
    q = interface_quadrature(m, dp, du)
    phi_p, grad_p = _trace_basis(dp, q.porous_cell, q.points)
    phi_u, _ = _trace_basis(du, q.fluid_cell, q.points)
    rows_u = du.cell_dofs()[q.fluid_cell]
    rows_p = dp.cell_nodes[q.porous_cell]
    # vector test functions phi_i e_a dotted with n and t
    u_dot_n = np.concatenate([phi_u * q.normal[:, None, None, c] for c in range(2)], axis=2)
    u_dot_t = np.concatenate([phi_u * q.tangent[:, None, None, c] for c in range(2)], axis=2)

    c_pu_local = np.einsum("fq,fqi,fqj->fij", q.weights, u_dot_n, phi_p)
    C_pu = _scatter(rows_u, rows_p, c_pu_local, (du.ndofs, dp.ndofs))
    C_up = (-C_pu.T).tocsr()
    C_up.sort_indices()

    s_local = beta * np.einsum("fq,fqi,fqj->fij", q.weights, u_dot_t, u_dot_t)
    S_t = _scatter(rows_u, rows_u, s_local, (du.ndofs, du.ndofs))

    if variant is Variant.BJ:
        dpt = np.einsum("fqjd,fd->fqj", grad_p, q.tangent)
        g_local = beta * k * np.einsum("fq,fqi,fqj->fij", q.weights, u_dot_t, dpt)
        G_t = _scatter(rows_u, rows_p, g_local, (du.ndofs, dp.ndofs))
    else:
        G_t = sp.csr_matrix((du.ndofs, dp.ndofs))
    return C_pu, C_up, S_t, G_t


def assemble_interface_load(m: Mesh, d: DofMap, func, other: DofMap | None = None) -> np.ndarray:
    """``int_G g . phi_i`` for a trace datum ``func(x, y, n, t)``.

    ``d`` must be the Darcy or the fluid velocity map; ``other`` is the map of
    the opposite side (needed only to resolve facet owners) and is built on
    demand otherwise.
    """
    if d.field is Field.DARCY_P:
        dp, du = d, other or build_dofmap(m, Field.FLUID_U)
    else:
        dp, du = other or build_dofmap(m, Field.DARCY_P), d
    q = interface_quadrature(m, dp, du, npts=4)
    cells = q.porous_cell if d is dp else q.fluid_cell
    phi, _ = _trace_basis(d, cells, q.points)
    nf, nq = q.points.shape[:2]
    n = np.broadcast_to(q.normal[:, None, :], (nf, nq, 2))
    t = np.broadcast_to(q.tangent[:, None, :], (nf, nq, 2))
    vals = np.asarray(func(q.points[..., 0], q.points[..., 1], n, t), dtype=float)
    out = np.zeros(d.ndofs)
    if d.ncomp == 1:
        vals = np.broadcast_to(vals, (nf, nq))
        np.add.at(out, d.cell_nodes[cells], np.einsum("fq,fq,fqa->fa", q.weights, vals, phi))
    else:
        vals = np.broadcast_to(vals, (d.ncomp, nf, nq))
        for c in range(d.ncomp):
            local = np.einsum("fq,fq,fqa->fa", q.weights, vals[c], phi)
            np.add.at(out, d.cell_nodes[cells] + c * d.n_nodes, local)
    return out


# ---------------------------------------------------------------------------
# convective term

def assemble_convective(m: Mesh, du: DofMap, u: np.ndarray, skew: bool = False) -> np.ndarray:
    """``int (u . grad u) . phi_i`` for all velocity dofs.

    With ``skew=True`` the skew-symmetrised form
    ``1/2 [int (u . grad u) . phi_i - int (u . grad phi_i) . u]`` is returned.
    """
    _check_dofmap(m, du)
    u = np.asarray(u, dtype=float)
    if u.shape != (du.ndofs,):
        raise ValueError(f"velocity vector has shape {u.shape}, expected ({du.ndofs},)")
    phi, grads, jw, _ = _cell_quadrature(du)
    coeffs = u.reshape(2, du.n_nodes)[:, du.cell_nodes]  # (2, ncell, nloc)
    uq = np.einsum("cea,qa->ceq", coeffs, phi)            # (2, ncell, nq)
    gq = np.einsum("cea,eqad->ceqd", coeffs, grads)       # (2, ncell, nq, 2): d_d u_c
    conv = np.einsum("deq,ceqd->ceq", uq, gq)            # (u . grad) u_c
    out = np.zeros(du.ndofs)
    for c in range(2):
        local = np.einsum("eq,eq,qa->ea", jw, conv[c], phi)
        if skew:
            adv_test = np.einsum("deq,eqad->eqa", uq, grads)  # u . grad phi_a
            local = 0.5 * (local - np.einsum("eq,eq,eqa->ea", jw, uq[c], adv_test))
        np.add.at(out, du.cell_nodes + c * du.n_nodes, local)
    return out


# ---------------------------------------------------------------------------
# coupled system

@dataclass(frozen=True, eq=False)
class OperatorBlocks:
    """Blocks of the coupled form restricted to free dofs.

    ``full`` keeps the pre-elimination matrices keyed by the same names.
    """

    M_p: sp.csr_matrix
    M_u: sp.csr_matrix
    M_pi: sp.csr_matrix
    K_p: sp.csr_matrix
    K_u: sp.csr_matrix
    B_div: sp.csr_matrix
    C_pu: sp.csr_matrix
    C_up: sp.csr_matrix
    S_t: sp.csr_matrix
    G_t: sp.csr_matrix
    variant: Variant
    k: float
    mu: float
    beta: float
    mesh: Mesh
    dofmaps: dict
    full: dict = field(repr=False)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.M_p.shape[0], self.M_u.shape[0], self.M_pi.shape[0]

    @property
    def n_free(self) -> int:
        return sum(self.sizes)


def _restrict(mat: sp.spmatrix, rows: np.ndarray, cols: np.ndarray) -> sp.csr_matrix:
    out = sp.csr_matrix(mat)[rows][:, cols].tocsr()
    out.sort_indices()
    return out


def assemble_coupled_system(m: Mesh, cfg=None, *, k: float | None = None, mu: float | None = None,
                            beta: float | None = None, variant=None) -> OperatorBlocks:
    """Assemble every block with essential dofs removed.

    Parameters come from ``cfg`` (anything with ``k``, ``mu``, ``beta`` and
    ``variant`` attributes) and may be overridden by keyword.
    """
    k = k if k is not None else getattr(cfg, "k", 1.0)
    mu = mu if mu is not None else getattr(cfg, "mu", 1.0)
    beta = beta if beta is not None else getattr(cfg, "beta", 1.0)
    variant = parse_variant(variant if variant is not None else getattr(cfg, "variant", "bjs"))
    maps = build_dofmaps(m)
    dp, du, dpi = maps[Field.DARCY_P], maps[Field.FLUID_U], maps[Field.FLUID_PI]
    C_pu, C_up, S_t, G_t = assemble_interface_coupling(m, maps, k, beta, variant)
    full = {
        "M_p": assemble_mass(m, dp),
        "M_u": assemble_mass(m, du),
        "M_pi": assemble_mass(m, dpi),
        "K_p": assemble_darcy_stiffness(m, dp, k),
        "K_u": assemble_fluid_stiffness(m, du, mu),
        "B_div": assemble_divergence(m, du, dpi),
        "C_pu": C_pu, "C_up": C_up, "S_t": S_t, "G_t": G_t,
    }
    fp, fu, fpi = dp.free, du.free, dpi.free
    rows_cols = {
        "M_p": (fp, fp), "M_u": (fu, fu), "M_pi": (fpi, fpi), "K_p": (fp, fp), "K_u": (fu, fu),
        "B_div": (fpi, fu), "C_pu": (fu, fp), "C_up": (fp, fu), "S_t": (fu, fu), "G_t": (fu, fp),
    }
    blocks = {name: _restrict(full[name], *rows_cols[name]) for name in full}
    return OperatorBlocks(**blocks, variant=variant, k=float(k), mu=float(mu), beta=float(beta),
                          mesh=m, dofmaps=maps, full=full)


def write_triplets(mat: sp.spmatrix, path) -> None:
    """Coordinate export: one ``row col value`` line per stored entry."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(Path(path), "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(Path(path)) as fh:
        header = fh.readline().lstrip("#").split()
        nr, nc, _ = (int(x) for x in header)
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix((nr, nc))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(nr, nc))


def inf_sup_constant(m: Mesh) -> float:
    """Discrete inf-sup constant of the velocity/pressure pair.

    Smallest generalized singular value of ``B`` measured in the H1 norm on
    free velocity dofs and the L2 norm on pressure dofs, i.e. the square root
    of the least eigenvalue of ``B H^{-1} B^T`` relative to the pressure mass.
    """
    import scipy.linalg as sla

    du, dpi = build_dofmap(m, Field.FLUID_U), build_dofmap(m, Field.FLUID_PI)
    free = du.free
    H = (assemble_mass(m, du) + assemble_laplacian(m, du))[free][:, free].toarray()
    B = assemble_divergence(m, du, dpi)[:, free].toarray()
    S = B @ np.linalg.solve(H, B.T)
    w = sla.eigh(0.5 * (S + S.T), assemble_mass(m, dpi).toarray(), eigvals_only=True)
    return float(np.sqrt(max(w[0], 0.0)))
