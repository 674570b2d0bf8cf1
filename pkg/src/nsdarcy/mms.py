"""Manufactured solutions and convergence studies.

The exact fields vanish on the essential boundaries.  They do not satisfy
the interface conditions, so the interface residuals are supplied as
prescribed data (``normal_defect`` on the Darcy side, ``traction_defect``
on the fluid side).

Exact fields
  p   = T(t) sin(pi x) cos(pi y / 2)                 on the porous block
  u   = T(t) curl(X(x) Y(y)),  X = sin^2(pi x),  Y = (1 + y) cos^2(pi y / 2)
  pi  = T(t) cos(pi x) (1 + y)                       on the fluid block
with T = 1 (case 1) or T = exp(-t) (cases 2 and 3).
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .assembly import Field, Variant, assemble_interface_load, assemble_load, gauss01, parse_variant, \
    reference_basis
from .mesh import build_layered_rectangle
from .operator import CoupledState, OperatorPencil, assemble_pencil, project_divergence_free, resolvent_solve

log = logging.getLogger(__name__)

PI = math.pi


# 1-D profiles and their derivatives up to third order
def _X(x, n=0):
    return [np.sin(PI * x) ** 2, PI * np.sin(2 * PI * x), 2 * PI**2 * np.cos(2 * PI * x),
            -4 * PI**3 * np.sin(2 * PI * x)][n]


def _Y(y, n=0):
    c, s = np.cos(PI * y), np.sin(PI * y)
    return [(1 + y) * (1 + c) / 2,
            (1 + c) / 2 - (1 + y) * PI * s / 2,
            -PI * s - (1 + y) * PI**2 * c / 2,
            -1.5 * PI**2 * c + (1 + y) * PI**3 * s / 2][n]


@dataclass(frozen=True)
class ManufacturedCase:
    id: int
    k: float = 1.0
    mu: float = 1.0
    beta: float = 1.0
    variant: Variant = Variant.BJS
    convective: bool = False
    steady: bool = False
    T_final: float = 0.5

    # time profile ----------------------------------------------------------
    def amp(self, t):
        return 1.0 if self.steady else math.exp(-t)

    def damp(self, t):
        return 0.0 if self.steady else -math.exp(-t)

    # exact fields ----------------------------------------------------------
    def p(self, x, y, t=0.0):
        return self.amp(t) * np.sin(PI * x) * np.cos(PI * y / 2)

    def grad_p(self, x, y, t=0.0):
        a = self.amp(t)
        return (a * PI * np.cos(PI * x) * np.cos(PI * y / 2),
                -a * PI / 2 * np.sin(PI * x) * np.sin(PI * y / 2))

    def u(self, x, y, t=0.0):
        a = self.amp(t)
        return (a * _X(x) * _Y(y, 1), -a * _X(x, 1) * _Y(y))

    def grad_u(self, x, y, t=0.0):
        """((du_x/dx, du_x/dy), (du_y/dx, du_y/dy))."""
        a = self.amp(t)
        return ((a * _X(x, 1) * _Y(y, 1), a * _X(x) * _Y(y, 2)),
                (-a * _X(x, 2) * _Y(y), -a * _X(x, 1) * _Y(y, 1)))

    def pi(self, x, y, t=0.0):
        return self.amp(t) * np.cos(PI * x) * (1 + y)

    # forcings --------------------------------------------------------------
    def forcing_p(self, x, y, t=0.0, lam=None):
        """Right side of the Darcy equation; with ``lam`` the resolvent form ``lam p - k lap p``."""
        lap = -1.25 * PI**2 * self.p(x, y, t)
        dt = lam * self.p(x, y, t) if lam is not None else self.damp(t) * np.sin(PI * x) * np.cos(PI * y / 2)
        return dt - self.k * lap

    def forcing_u(self, x, y, t=0.0, lam=None):
        a = self.amp(t)
        lap = (a * (_X(x, 2) * _Y(y, 1) + _X(x) * _Y(y, 3)),
               -a * (_X(x, 3) * _Y(y) + _X(x, 1) * _Y(y, 2)))
        gpi = (-a * PI * np.sin(PI * x) * (1 + y), a * np.cos(PI * x))
        if lam is not None:
            ut = tuple(lam * c for c in self.u(x, y, t))
        else:
            ut = (self.damp(t) * _X(x) * _Y(y, 1), -self.damp(t) * _X(x, 1) * _Y(y))
        f = [ut[i] - self.mu * lap[i] + gpi[i] for i in range(2)]
        if self.convective:
            uu, g = self.u(x, y, t), self.grad_u(x, y, t)
            for i in range(2):
                f[i] = f[i] + uu[0] * g[i][0] + uu[1] * g[i][1]
        return tuple(f)

    # interface residuals ---------------------------------------------------
    def stress(self, x, y, t=0.0):
        g = self.grad_u(x, y, t)
        q = self.pi(x, y, t)
        return ((2 * self.mu * g[0][0] - q, self.mu * (g[0][1] + g[1][0])),
                (self.mu * (g[0][1] + g[1][0]), 2 * self.mu * g[1][1] - q))

    def normal_defect(self, x, y, n, t=0.0):
        """``u.n + k grad p . n`` (zero if the mass condition held)."""
        uu, gp = self.u(x, y, t), self.grad_p(x, y, t)
        return (uu[0] + self.k * gp[0]) * n[..., 0] + (uu[1] + self.k * gp[1]) * n[..., 1]

    def traction_defect(self, x, y, n, tau, t=0.0):
        """``sigma n + p n + beta ((u - [bj] k grad p) . t) t`` componentwise."""
        s = self.stress(x, y, t)
        uu, gp, pp = self.u(x, y, t), self.grad_p(x, y, t), self.p(x, y, t)
        slip = uu[0] * tau[..., 0] + uu[1] * tau[..., 1]
        if self.variant is Variant.BJ:
            slip = slip - self.k * (gp[0] * tau[..., 0] + gp[1] * tau[..., 1])
        return tuple(s[i][0] * n[..., 0] + s[i][1] * n[..., 1] + pp * n[..., i] + self.beta * slip * tau[..., i]
                     for i in range(2))

    # discrete data ---------------------------------------------------------
    def load(self, P: OperatorPencil, t: float = 0.0, lam=None) -> np.ndarray:
        """Free-dof dual vector of forcings and interface data at time ``t``."""
        m = P.mesh
        dp, du = P.dofmap(Field.DARCY_P), P.dofmap(Field.FLUID_U)
        fp = assemble_load(m, dp, lambda x, y: self.forcing_p(x, y, t, lam), npts=5)
        fp -= assemble_interface_load(m, dp, lambda x, y, n, tau: self.normal_defect(x, y, n, t), du)
        fu = assemble_load(m, du, lambda x, y: self.forcing_u(x, y, t, lam), npts=5)
        fu += assemble_interface_load(m, du, lambda x, y, n, tau: self.traction_defect(x, y, n, tau, t), dp)
        return np.concatenate([fp[dp.free], fu[du.free], np.zeros(P.sizes[2])])

    def initial_state(self, P: OperatorPencil) -> CoupledState:
        dp, du, dpi = (P.dofmap(f) for f in (Field.DARCY_P, Field.FLUID_U, Field.FLUID_PI))
        p = dp.interpolate(lambda x, y: self.p(x, y, 0.0))[dp.free]
        u = du.interpolate(lambda x, y: self.u(x, y, 0.0))[du.free]
        q = dpi.interpolate(lambda x, y: self.pi(x, y, 0.0))
        return CoupledState(0.0, p, project_divergence_free(P, u), q)

    def errors(self, P: OperatorPencil, v: CoupledState, t: float) -> tuple[float, float]:
        """L2 errors (fluid velocity, Darcy pressure) at time ``t``."""
        dp, du = P.dofmap(Field.DARCY_P), P.dofmap(Field.FLUID_U)
        err_u = l2_error(du, P.expand(Field.FLUID_U, v.u), lambda x, y: self.u(x, y, t))
        err_p = l2_error(dp, P.expand(Field.DARCY_P, v.p), lambda x, y: self.p(x, y, t))
        return err_u, err_p


_CASES = {
    1: dict(steady=True),
    2: dict(),
    3: dict(convective=True),
}


def manufactured_case(case_id: int, *, k: float = 1.0, mu: float = 1.0, beta: float = 1.0,
                      variant="bjs", T_final: float = 0.5) -> ManufacturedCase:
    if case_id not in _CASES:
        raise ValueError(f"unknown manufactured case {case_id!r}; expected 1, 2 or 3")
    return ManufacturedCase(case_id, k, mu, beta, parse_variant(variant), T_final=T_final, **_CASES[case_id])


def l2_error(d, coeffs: np.ndarray, exact, npts: int = 5) -> float:
    """``|u_h - u|_{L2}`` over the field's region using ``npts``-point Gauss per direction."""
    g, w = gauss01(npts)
    xi = np.array([(a, b) for b in g for a in g])
    wq = np.array([wa * wb for wb in w for wa in w])
    phi, _ = reference_basis(d.degree, xi)
    pts = d.origin[:, None, :] + xi[None] * d.size[:, None, :]
    jw = wq[None] * np.prod(d.size, axis=1)[:, None]
    c = np.asarray(coeffs).reshape(d.ncomp, d.n_nodes)
    ex = exact(pts[..., 0], pts[..., 1])
    ex = [ex] if d.ncomp == 1 else ex
    total = 0.0
    for comp in range(d.ncomp):
        uh = np.einsum("ea,qa->eq", c[comp][d.cell_nodes], phi)
        total += np.sum(jw * (uh - ex[comp]) ** 2)
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# pointwise residual check

def _d1(f, h):
    return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h)


def _d2(f, h):
    return (-f(2 * h) + 16 * f(h) - 30 * f(0.0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h)


def pde_residuals(case: ManufacturedCase, x: float, y: float, t: float = 0.3, h: float = 1e-3) -> np.ndarray:
    """Fourth-order finite-difference residuals of the manufactured equations.

    Returns ``[darcy, momentum_x, momentum_y, divergence]`` at one point, using
    only the closed-form fields (never their coded derivatives).
    """
    k, mu = case.k, case.mu

    def lap(f):
        return _d2(lambda s: f(x + s, y), h) + _d2(lambda s: f(x, y + s), h)

    dpdt = 0.0 if case.steady else _d1(lambda s: case.p(x, y, t + s), h)
    r_p = dpdt - k * lap(lambda a, b: case.p(a, b, t)) - case.forcing_p(x, y, t)

    ux = lambda a, b, s=0.0: case.u(a, b, t + s)[0]
    uy = lambda a, b, s=0.0: case.u(a, b, t + s)[1]
    q = lambda a, b: case.pi(a, b, t)
    grad = lambda f: (_d1(lambda s: f(x + s, y), h), _d1(lambda s: f(x, y + s), h))
    gq = grad(q)
    f = case.forcing_u(x, y, t)
    res = []
    for i, ui in enumerate((ux, uy)):
        dudt = 0.0 if case.steady else _d1(lambda s: ui(x, y, s), h)
        r = dudt - mu * lap(ui) + gq[i] - f[i]
        if case.convective:
            g = grad(ui)
            r += ux(x, y) * g[0] + uy(x, y) * g[1]
        res.append(r)
    div = grad(ux)[0] + grad(uy)[1]
    return np.array([r_p, res[0], res[1], div])


def check_case(case: ManufacturedCase, n_probes: int = 10, seed: int = 0, tol: float = 1e-6) -> float:
    """Largest finite-difference residual over random probes (also checks boundary values)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.uniform(0.05, 0.95)
        yp, yf = rng.uniform(-0.95, -0.05), rng.uniform(0.05, 0.95)
        t = rng.uniform(0.0, 1.0)
        r = pde_residuals(case, x, yf, t)
        worst = max(worst, abs(r[1]), abs(r[2]), abs(r[3]), abs(pde_residuals(case, x, yp, t)[0]))
        s = rng.uniform(0, 1)
        worst = max(worst, abs(case.p(0.0, yp, t)), abs(case.p(1.0, yp, t)), abs(case.p(s, -1.0, t)),
                    *np.abs(case.u(0.0, yf, t)), *np.abs(case.u(1.0, yf, t)), *np.abs(case.u(s, 1.0, t)))
    if worst > tol:
        raise ValueError(f"manufactured case {case.id} fails its residual check ({worst:.2e})")
    return worst


# ---------------------------------------------------------------------------
# convergence studies

RATE_HEADER = ("level", "h", "err_u", "err_p", "order_u", "order_p")


@dataclass
class RateTable:
    case_id: int
    h: list = field(default_factory=list)
    err_u: list = field(default_factory=list)
    err_p: list = field(default_factory=list)

    def orders(self, errs) -> list:
        return [math.log2(errs[i - 1] / errs[i]) / math.log2(self.h[i - 1] / self.h[i])
                for i in range(1, len(errs))]

    @property
    def order_u(self):
        return self.orders(self.err_u)

    @property
    def order_p(self):
        return self.orders(self.err_p)

    def rows(self):
        ou, op = [None] + self.order_u, [None] + self.order_p
        for i, h in enumerate(self.h):
            yield (i, h, self.err_u[i], self.err_p[i], ou[i], op[i])

    def write_csv(self, path, fmt=repr) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RATE_HEADER)
            for row in self.rows():
                w.writerow(["" if v is None else (v if isinstance(v, int) else fmt(v)) for v in row])


def default_dt_rule(h: float) -> float:
    return h * h


def solve_level(case: ManufacturedCase, n: int, dt_rule=default_dt_rule, *, lam=None,
                convective: str | None = None) -> tuple[float, float, float]:
    """Errors ``(h, err_u, err_p)`` on the ``(n, n, n)`` mesh.

    Case 1 (steady) solves ``(lam M - A) v = load`` with ``lam = 0`` unless
    given.  Unsteady cases run implicit Euler (case 2) or IMEX (case 3) to
    ``case.T_final``; ``convective`` overrides the treatment of the
    nonlinearity (``"off"`` ignores it).
    """
    from .timeloop import integrate

    m = build_layered_rectangle(n, n, n)
    P = assemble_pencil(m, k=case.k, mu=case.mu, beta=case.beta, variant=case.variant)
    h = 1.0 / n
    if case.steady or lam is not None:
        lam = 0.0 if lam is None else lam
        v = resolvent_solve(P, lam, CoupledState.zeros(P.sizes), case.load(P, 0.0, lam))
        return (h,) + case.errors(P, v, 0.0)
    dt = dt_rule(h)
    steps = max(1, int(round(case.T_final / dt)))
    dt = case.T_final / steps
    scheme = "imex" if case.convective else "theta"
    conv = convective or ("convective" if case.convective else "off")
    traj = integrate(P, case.initial_state(P), dt, steps, scheme=scheme, theta=1.0,
                     forcing=lambda t: case.load(P, t), convective=conv, s_monitor=0.5)
    return (h,) + case.errors(P, traj.final, traj.times[-1])


def convergence_study(case_id: int, levels=(4, 8, 16), dt_rule=default_dt_rule, *, jobs: int = 1,
                      lam=None, convective: str | None = None, **params) -> RateTable:
    """Errors and observed orders over meshes with ``n`` cells per unit length for each ``n`` in ``levels``."""
    case = manufactured_case(case_id, **params)
    check_case(case)
    levels = list(levels)
    if jobs > 1 and len(levels) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_solve_star, [(case, n, dt_rule, lam, convective) for n in levels]))
    else:
        results = [solve_level(case, n, dt_rule, lam=lam, convective=convective) for n in levels]
    table = RateTable(case_id)
    for h, eu, ep in results:
        log.info("case %d h=%g err_u=%.3e err_p=%.3e", case_id, h, eu, ep)
        table.h.append(h)
        table.err_u.append(eu)
        table.err_p.append(ep)
    return table


def _solve_star(args):
    case, n, dt_rule, lam, convective = args
    return solve_level(case, n, dt_rule, lam=lam, convective=convective)
