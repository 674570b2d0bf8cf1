"""Time stepping of the coupled system and the blow-up monitors.

Loads passed to the steppers are dual vectors on free dofs, ordered like
the pencil unknowns ``(p, u, pi)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Field, assemble_convective, assemble_coupled_system
from .diagnostics import critical_weight, energy, energy_identity_residual, fractional_sobolev_norm
from .mesh import Mesh, Region, build_layered_rectangle, refine
from .operator import CoupledState, OperatorPencil, SolverError, build_pencil, dissipation_form, \
    project_divergence_free

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e6


class StepError(SolverError):
    def __init__(self, t: float, detail: str):
        self.t = t
        super().__init__(f"time step from t = {t:g} failed: {detail}")


def _constraint_part(P: OperatorPencil) -> sp.csr_matrix:
    n_p, n_u, n_pi = P.sizes
    B = P.blocks.B_div
    return sp.bmat([
        [sp.csr_matrix((n_p, n_p)), None, None],
        [None, sp.csr_matrix((n_u, n_u)), B.T],
        [None, B, sp.csr_matrix((n_pi, n_pi))],
    ], format="csr")


def _theta_factor(P: OperatorPencil, dt: float, theta: float):
    if theta == 1.0:
        return P.factorized(1.0, dt)
    key = ("theta", float(dt), float(theta))
    with P._lock:
        if key not in P._cache:
            C = _constraint_part(P)
            core = P.A - C
            # pressure and constraint stay fully implicit
            S = P.M - theta * dt * core - dt * C
            P._cache[key] = (spla.splu(sp.csc_matrix(S)), (P.A - C).tocsr())
        return P._cache[key]


def _solve(lu, rhs: np.ndarray, t: float) -> np.ndarray:
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise StepError(t, "non-finite solution")
    return x


def _implicit_euler(P: OperatorPencil, v: CoupledState, dt: float, load: np.ndarray | None) -> CoupledState:
    lu = P.factorized(1.0, dt)
    rhs = P.M @ v.vector()
    if load is not None:
        rhs = rhs + dt * load
    return P.state(_solve(lu, rhs, v.t), v.t + dt)


def step_theta(P: OperatorPencil, v_n: CoupledState, dt: float, theta: float = 1.0,
               f_n: np.ndarray | None = None, f_np1: np.ndarray | None = None) -> CoupledState:
    """One theta-scheme step of ``M v' = A v + f``.

    Solves ``(M - theta dt A) v_{n+1} = (M + (1 - theta) dt A) v_n + dt (theta f_{n+1} + (1 - theta) f_n)``
    with the pressure and divergence constraint taken implicitly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not 0.5 <= theta <= 1.0:
        raise ValueError("theta must lie in [1/2, 1]")
    if theta == 1.0:
        return _implicit_euler(P, v_n, dt, f_np1)
    lu, core = _theta_factor(P, dt, theta)
    x = v_n.vector()
    rhs = P.M @ x + (1.0 - theta) * dt * (core @ x)
    if f_np1 is not None:
        rhs = rhs + dt * theta * f_np1
    if f_n is not None:
        rhs = rhs + dt * (1.0 - theta) * f_n
    return P.state(_solve(lu, rhs, v_n.t), v_n.t + dt)


def convective_load(P: OperatorPencil, u_free: np.ndarray, skew: bool = False) -> np.ndarray:
    """Dual vector of the convective term on free dofs (zero outside the velocity block)."""
    du = P.dofmap(Field.FLUID_U)
    N = assemble_convective(P.mesh, du, P.expand(Field.FLUID_U, u_free), skew=skew)
    out = np.zeros(P.A.shape[0])
    out[P.slices[1]] = N[du.free]
    return out


def step_imex(P: OperatorPencil, v_n: CoupledState, dt: float, f: np.ndarray | None = None,
              convective: str = "convective") -> CoupledState:
    """Implicit in ``A``, explicit in the convective term:
    ``(M - dt A) v_{n+1} = M v_n + dt (f - N(u_n))``.

    ``convective="off"`` drops the nonlinearity, reducing to implicit Euler.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if convective == "off":
        return _implicit_euler(P, v_n, dt, f)
    N = convective_load(P, v_n.u, skew=(convective == "skew"))
    load = -N if f is None else f - N
    return _implicit_euler(P, v_n, dt, load)


@dataclass
class Trajectory:
    times: np.ndarray
    states: dict  # step index -> CoupledState (snapshots)
    diagnostics: dict  # column name -> array over steps
    dt: float
    blowup: bool = False
    pencil: OperatorPencil | None = field(default=None, repr=False)

    @property
    def final(self) -> CoupledState:
        return self.states[max(self.states)]

    def column(self, name: str) -> np.ndarray:
        return self.diagnostics[name]


TRAJECTORY_HEADER = ("t", "energy", "dissipation", "identity_residual", "serrin_partial", "h32_p", "h32_u")


def _state_norms(P: OperatorPencil, v: CoupledState, s: float) -> tuple[float, float]:
    return (fractional_sobolev_norm(v.p, s, Region.POROUS, P.mesh),
            fractional_sobolev_norm(v.u, s, Region.FLUID, P.mesh))


def integrate(P: OperatorPencil, v0: CoupledState, dt: float, n_steps: int, *, scheme: str = "theta",
              theta: float = 1.0, forcing=None, convective: str = "convective",
              snapshot_stride: int = 0, s_monitor: float = 1.5) -> Trajectory:
    """Advance ``n_steps`` uniform steps and record per-step diagnostics.

    ``forcing(t)`` returns a load vector or ``None``.  Snapshots are kept
    every ``snapshot_stride`` steps (0: first and last only).  The run stops
    early, flagged as blow-up, once the energy exceeds ``BLOWUP_FACTOR``
    times its initial value.
    """
    load = (lambda t: None) if forcing is None else forcing
    diag = {name: np.zeros(n_steps + 1) for name in TRAJECTORY_HEADER}
    diag["t"] = v0.t + dt * np.arange(n_steps + 1)
    states = {0: v0}
    v = v0
    e0 = energy(v0, P)
    diag["energy"][0] = e0
    diag["dissipation"][0] = dissipation_form(P, v0)
    diag["h32_p"][0], diag["h32_u"][0] = _state_norms(P, v0, s_monitor)
    blowup = False
    last = n_steps
    for n in range(n_steps):
        t_next = diag["t"][n + 1]
        if scheme == "imex":
            w = step_imex(P, v, dt, load(t_next), convective)
        else:
            w = step_theta(P, v, dt, theta, load(diag["t"][n]), load(t_next))
        w.t = t_next
        diag["energy"][n + 1] = energy(w, P)
        diag["dissipation"][n + 1] = dissipation_form(P, w)
        diag["identity_residual"][n + 1] = energy_identity_residual(v, w, dt, P)
        hp, hu = _state_norms(P, w, s_monitor)
        diag["h32_p"][n + 1], diag["h32_u"][n + 1] = hp, hu
        diag["serrin_partial"][n + 1] = diag["serrin_partial"][n] + dt * (hp**2 + hu**2)
        v = w
        if snapshot_stride and (n + 1) % snapshot_stride == 0:
            states[n + 1] = w
        if not np.isfinite(diag["energy"][n + 1]) or diag["energy"][n + 1] > BLOWUP_FACTOR * max(e0, 1e-300):
            log.warning("energy grew by more than %.0e at t = %g; halting", BLOWUP_FACTOR, t_next)
            blowup = True
            last = n + 1
            break
    states[last] = v
    if last < n_steps:
        diag = {name: col[: last + 1] for name, col in diag.items()}
    return Trajectory(diag["t"], states, diag, dt, blowup, P)


def blowup_monitor(traj: Trajectory, r: float = 2.0, q: float = 2.0) -> tuple[float, float]:
    """Serrin-type functional and the supremum of the critical trace-space proxy.

    For ``r = q = 2`` the functional is ``sum_n dt (|p_n|_{H^{3/2}}^2 + |u_n|_{H^{3/2}}^2)``
    (from the recorded diagnostics) and the proxy is ``max_n (|p_n|_{H^{1/2}} + |u_n|_{H^{1/2}})``.
    Other exponents return the time-weighted ``L^r_mu`` functional of the
    recorded ``H^{3/2}`` norms with ``mu = mu_c(r, q)`` and no proxy.
    """
    from .diagnostics import weighted_bochner_norm

    hp, hu = traj.column("h32_p"), traj.column("h32_u")
    if (r, q) == (2.0, 2.0) or (r, q) == (2, 2):
        serrin = float(traj.column("serrin_partial")[-1])
        if traj.pencil is None:
            return serrin, 0.0
        P = traj.pencil
        proxy = max(sum(_state_norms(P, s, 0.5)) for s in traj.states.values())
        return serrin, float(proxy)
    mu = critical_weight(r, q)
    series = np.sqrt(hp**2 + hu**2)
    return weighted_bochner_norm(series, r, max(mu, 1.0 / r + 1e-12), traj.dt), 0.0


# ---------------------------------------------------------------------------
# configuration-driven runs

def mesh_from_config(cfg) -> Mesh:
    m = build_layered_rectangle(cfg.nx, cfg.ny_fluid, cfg.ny_porous)
    for _ in range(cfg.refinements):
        m = refine(m)
    return m


def pencil_from_config(cfg, mesh: Mesh | None = None) -> OperatorPencil:
    mesh = mesh or mesh_from_config(cfg)
    return build_pencil(assemble_coupled_system(mesh, cfg))


def random_state(P: OperatorPencil, rng: np.random.Generator, norm: float = 1.0) -> CoupledState:
    """Random divergence-free state scaled to ``sqrt(2 E) = norm``."""
    n_p, n_u, n_pi = P.sizes
    v = CoupledState(0.0, rng.standard_normal(n_p),
                     project_divergence_free(P, rng.standard_normal(n_u)), np.zeros(n_pi))
    scale = norm / np.sqrt(2.0 * energy(v, P))
    return CoupledState(0.0, scale * v.p, scale * v.u, v.pi)


def initial_state(P: OperatorPencil, cfg) -> CoupledState:
    n_p, n_u, n_pi = P.sizes
    if cfg.kind == "zero":
        return CoupledState.zeros(P.sizes)
    if cfg.kind == "random":
        return random_state(P, np.random.default_rng(cfg.seed), cfg.amplitude)
    if cfg.kind == "mode":
        dp, du = P.dofmap(Field.DARCY_P), P.dofmap(Field.FLUID_U)
        p = dp.interpolate(lambda x, y: np.sin(np.pi * x) * np.cos(0.5 * np.pi * y))[dp.free]
        u = du.interpolate(lambda x, y: (np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) * np.cos(np.pi * y) / 2,
                                         -np.sin(np.pi * x) * np.cos(np.pi * x) * np.sin(np.pi * y) ** 2 / 2))
        v = CoupledState(0.0, p, project_divergence_free(P, u[du.free]), np.zeros(n_pi))
        scale = cfg.amplitude / np.sqrt(2.0 * energy(v, P))
        return CoupledState(0.0, scale * v.p, scale * v.u, v.pi)
    from .mesh import read_mesh

    _, coeffs = read_mesh(cfg.path)
    try:
        p, u = coeffs["p"], coeffs["u"]
    except KeyError as exc:
        raise ValueError(f"{cfg.path}: missing coefficient line {exc}") from None
    if p.shape != (n_p,) or u.shape != (n_u,):
        raise ValueError(f"{cfg.path}: coefficient lengths do not match the free dofs")
    return CoupledState(0.0, p, project_divergence_free(P, u), np.zeros(n_pi))


def run_simulation(cfg, initial: CoupledState | None = None, forcing=None,
                   pencil: OperatorPencil | None = None) -> Trajectory:
    """Assemble from ``cfg`` and integrate to ``cfg.T``."""
    P = pencil or pencil_from_config(cfg)
    v0 = initial if initial is not None else initial_state(P, cfg)
    n_steps = max(1, int(round(cfg.T / cfg.dt)))
    if abs(n_steps * cfg.dt - cfg.T) > 1e-9 * cfg.T:
        log.warning("T = %g is not a multiple of dt = %g; running %d steps", cfg.T, cfg.dt, n_steps)
    return integrate(P, v0, cfg.dt, n_steps, scheme=cfg.scheme, theta=cfg.theta, forcing=forcing,
                     convective=cfg.convective, snapshot_stride=cfg.snapshot_stride,
                     s_monitor=cfg.s_frac)
