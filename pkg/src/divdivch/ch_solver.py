"""Semi-implicit time stepping, the coupled elliptic projection and run bookkeeping.

Each step solves the linear saddle-point system

    (sigma^n, tau) - (divDiv tau, u^n)        = -(f(u^{n-1}) I, tau) / eps^2 + <g_a, n'tau n>
    (u^n - u^{n-1}, v) / tau + (divDiv sigma^n, v) = (g, v)

for ``sigma^n`` in the divDiv-conforming space (constraints carry the
essential boundary data) and ``u^n`` piecewise linear.  The matrix does not
change between steps and is factorized once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import (ConfigurationError, NumericalFailure, OperatorSet, SparseSystem,
                       assemble_natural_boundary, assemble_nonlinear_load, assemble_source,
                       build_operators, build_static_system, build_step_system, l2_project_v,
                       step_rhs, trace_coupling)
from .manufactured import ManufacturedCase, case_by_name, coalescence_initial
from .mesh import TriMesh, build_mesh, structured_square
from .quadrature import interval_rule, triangle_rule

log = logging.getLogger(__name__)

PROJECTION_DEGREE = 12
POST_LOAD_DEGREE = 18


@dataclass
class RunConfig:
    """Parameters of one trajectory.

    ``case`` is a manufactured case name (``square``, ``lshape``,
    ``constant:<c>``), ``coalescence`` or ``None`` for homogeneous data with
    an initial field given separately.  ``structured`` overrides the mesh
    with an n x n structured square.
    """

    domain: str = "square"
    level: int = 1
    eps: float = 1.0
    tau: float = 1e-5
    T: float = 2e-4
    case: str | None = "square"
    postprocess: bool = False
    structured: int | None = None
    snapshot_times: tuple = ()
    out_dir: str | None = None
    record_mass: bool = True
    stabilization: float = 0.0
    snapshot_csv: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if self.T < self.tau * (1 - 1e-9):
            raise ConfigurationError("final time must be at least one step")

    @property
    def n_steps(self) -> int:
        n = self.T / self.tau
        N = max(1, int(round(n)))
        if abs(n - N) > 1e-9 * max(1.0, n):
            log.warning("T/tau = %.6g is not an integer; using %d steps of %.6g",
                        n, N, self.T / N)
        return N

    @property
    def tau_eff(self) -> float:
        return self.T / self.n_steps

    def make_mesh(self) -> TriMesh:
        if self.structured:
            return structured_square(self.structured)
        return build_mesh(self.domain, self.level)


@dataclass
class FieldState:
    s: np.ndarray
    w: np.ndarray
    m: np.ndarray
    time: float = 0.0
    step: int = 0
    mass: float = field(default=float("nan"))


def mass_of(ops: OperatorSet, w: np.ndarray) -> float:
    return float(ops.j_u @ w)


def _state(ops, x: dict, time: float, step: int) -> FieldState:
    return FieldState(x["s"], x["w"], x["m"], time, step, mass_of(ops, x["w"]))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def _divdiv_sigma_load(ops: OperatorSet, case: ManufacturedCase, t: float, mode: str) -> np.ndarray:
    """Vector ``(divDiv sigma, psi_i)`` elementwise.

    ``closed`` integrates the closed form lap^2 u - lap f(u) / eps^2;
    ``ibp`` uses (Div sigma . n, v)_{dK} - (Div sigma, grad v)_K and needs
    only third derivatives.
    """
    mesh = ops.mesh
    q = triangle_rule(PROJECTION_DEGREE)
    x = mesh.to_physical(q.points)
    wK = 2.0 * mesh.areas[:, None] * q.weights[None, :]
    psi = ops.v_space.tabulate(q.points)
    if mode == "closed":
        dd = case.divdiv_sigma(x[..., 0], x[..., 1], t)
        return np.einsum("kq,kq,qa->ka", wK, dd, psi).ravel()
    if mode != "ibp":
        raise ConfigurationError(f"unknown divDiv load mode {mode!r}")
    G = mesh.barycentric_gradients()
    dv = case.div_sigma(x[..., 0], x[..., 1], t)
    vol = np.einsum("kq,kqd,kad->ka", wK, dv, G)
    s, w = interval_rule(PROJECTION_DEGREE)
    bnd = np.zeros((mesh.n_triangles, 3))
    P = mesh.vertices[mesh.triangles]
    for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        a, b = P[:, i], P[:, j]
        xe = a[:, None, :] * (1 - s)[None, :, None] + b[:, None, :] * s[None, :, None]
        d = b - a
        L = np.linalg.norm(d, axis=1)
        n = np.stack([d[:, 1], -d[:, 0]], 1) / L[:, None]  # outward for ccw K
        dn = np.einsum("kqd,kd->kq", case.div_sigma(xe[..., 0], xe[..., 1], t), n)
        bnd[:, i] += L * ((dn * (1 - s)) @ w)
        bnd[:, j] += L * ((dn * s) @ w)
    return (bnd - vol).ravel()


def _sigma_rhs(ops: OperatorSet, case: ManufacturedCase, t: float) -> np.ndarray:
    """``(sigma, phi_i) - (divDiv phi_i, u)`` by degree-12 quadrature."""
    mesh, S = ops.mesh, ops.sigma_space
    q = triangle_rule(PROJECTION_DEGREE)
    x = mesh.to_physical(q.points)
    wK = 2.0 * mesh.areas[:, None] * q.weights[None, :]
    out = np.zeros(S.dim)
    chunk = 2048
    for lo in range(0, mesh.n_triangles, chunk):
        kk = np.arange(lo, min(lo + chunk, mesh.n_triangles))
        tab = S.tabulate(q.points, kk)
        xs, ys = x[kk, :, 0], x[kk, :, 1]
        sig = case.sigma(xs, ys, t)
        u = case.u(xs, ys, t)
        loc = np.einsum("kq,kqic,kqc->ki", wK[kk], tab.tau * np.array([1.0, 2.0, 1.0]), sig)
        loc -= np.einsum("kq,kqi,kq->ki", wK[kk], tab.divdiv, u)
        out += np.bincount(S.dofmap[kk].ravel(), loc.ravel(), minlength=S.dim)
    return out


def exact_mean(ops: OperatorSet, fn: Callable, degree: int = PROJECTION_DEGREE) -> float:
    q = triangle_rule(degree)
    x = ops.mesh.to_physical(q.points)
    wK = 2.0 * ops.mesh.areas[:, None] * q.weights[None, :]
    return float((wK * fn(x[..., 0], x[..., 1])).sum())


def project_init(ops: OperatorSet, case: ManufacturedCase, t: float = 0.0,
                 divdiv_mode: str = "closed", system: SparseSystem | None = None) -> FieldState:
    """Coupled projection of the exact pair (sigma, u) at time ``t``.

    The scalar equation is tested against mean-free functions (a scalar
    multiplier absorbs the constant mode) and the mean of ``u`` is matched.
    """
    if case is None:
        raise ConfigurationError("projection needs a manufactured case")
    A = system or build_static_system(ops)
    rhs = np.concatenate([
        _sigma_rhs(ops, case, t),
        -_divdiv_sigma_load(ops, case, t, divdiv_mode),
        ops.constraints.data(case, t),
        [exact_mean(ops, lambda x, y: case.u(x, y, t))],
    ])
    x = A.split(A.solve(rhs))
    return _state(ops, x, t, 0)


def coalescence_init(ops: OperatorSet, u0: Callable, eps: float) -> FieldState:
    """L2 projection of ``u0``; sigma from the constitutive row with u frozen."""
    w = l2_project_v(ops, u0)
    nS = ops.sigma_space.dim
    nC = ops.constraints.n_rows
    A = sp.bmat([[ops.M_sigma, ops.C.T], [ops.C, None]], format="csc")
    rhs = np.concatenate([ops.B.T @ w + assemble_nonlinear_load(ops, w, eps), np.zeros(nC)])
    sys_ = SparseSystem(A, {"s": slice(0, nS), "m": slice(nS, nS + nC)})
    x = sys_.split(sys_.solve(rhs))
    return FieldState(x["s"], w, np.zeros(nC), 0.0, 0, mass_of(ops, w))


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

class CahnHilliardStepper:
    """Holds the factorized step matrix and produces successive states.

    ``stabilization = S`` adds ``S (u^n - u^{n-1}, tr tau) / eps^2`` to the
    tensor equation.  The lagged nonlinearity alone is only stable for
    ``tau`` far below ``eps^2 h^2``; the added term damps the explicit part
    without touching the scalar equation, so mass is still conserved.
    """

    def __init__(self, ops: OperatorSet, tau: float, eps: float,
                 case: ManufacturedCase | None = None, nonlinear: bool = True,
                 stabilization: float = 0.0):
        if eps <= 0:
            raise ConfigurationError("eps must be positive")
        if stabilization < 0:
            raise ConfigurationError("stabilization must be non-negative")
        self.ops = ops
        self.tau = float(tau)
        self.eps = float(eps)
        self.case = case
        self.nonlinear = nonlinear
        self.stab = stabilization / eps ** 2
        self.system = build_step_system(ops, tau, self.stab)
        self.system.factor()

    def _data(self, t: float):
        ops, case = self.ops, self.case
        if case is None:
            nS, nV, nC = ops.sizes
            return np.zeros(nS), np.zeros(nV), np.zeros(nC)
        return (assemble_natural_boundary(ops, case.g_a, t),
                assemble_source(ops, case.g, t),
                ops.constraints.data(case, t))

    def step(self, state: FieldState, prev_post=None) -> FieldState:
        """One backward Euler step from ``state``.

        With ``prev_post`` (a reconstructed field) the lagged nonlinearity
        and the time-difference term both use the reconstruction.
        """
        ops = self.ops
        t = state.time + self.tau
        nat, src, d = self._data(t)
        if prev_post is None:
            nl = assemble_nonlinear_load(ops, state.w, self.eps) if self.nonlinear else 0.0
            if self.stab:
                nl = nl + self.stab * (trace_coupling(ops) @ state.w)
            rhs = step_rhs(ops, self.tau, state.w, nl + nat, src, d)
        else:
            if self.stab:
                raise ConfigurationError("stabilization is not combined with the reconstructed step")
            nl = (assemble_nonlinear_load(ops, prev_post.evaluate, self.eps, degree=POST_LOAD_DEGREE)
                  if self.nonlinear else 0.0)
            mom = prev_post.p1_moments()
            rhs = np.concatenate([nl + nat, -mom / self.tau - src, d])
        x = self.system.split(self.system.solve(rhs))
        if not (np.all(np.isfinite(x["w"])) and np.all(np.isfinite(x["s"]))):
            raise NumericalFailure(f"non-finite values at step {state.step + 1}")
        return _state(ops, x, t, state.step + 1)


@dataclass
class RunResult:
    config: RunConfig
    ops: OperatorSet
    initial: FieldState
    final: FieldState
    masses: np.ndarray            # (N+1, 3): step, time, mass
    post: object = None           # reconstruction at the final time
    errors: dict | None = None
    snapshots: list = field(default_factory=list)


def initial_state(ops: OperatorSet, cfg: RunConfig, case, u0: Callable | None = None) -> FieldState:
    if cfg.case == "coalescence":
        return coalescence_init(ops, u0 or coalescence_initial(eps=cfg.eps), cfg.eps)
    if u0 is not None:
        return coalescence_init(ops, u0, cfg.eps)
    if case is None:
        nS, nV, nC = ops.sizes
        return FieldState(np.zeros(nS), np.zeros(nV), np.zeros(nC), 0.0, 0, 0.0)
    return project_init(ops, case, 0.0)


def run(cfg: RunConfig, u0: Callable | None = None, ops: OperatorSet | None = None,
        callback: Callable | None = None) -> RunResult:
    """Advance ``cfg.n_steps`` steps; optional snapshots and final-step reconstruction."""
    from .postprocess import reconstruct_local
    from .verify import error_norms

    mesh = cfg.make_mesh() if ops is None else ops.mesh
    ops = ops or build_operators(mesh)
    case = None
    if cfg.case not in (None, "coalescence", "homogeneous"):
        case = case_by_name(cfg.case, cfg.eps)
    N, tau = cfg.n_steps, cfg.tau_eff
    stepper = CahnHilliardStepper(ops, tau, cfg.eps, case, stabilization=cfg.stabilization)
    state = initial_state(ops, cfg, case, u0)
    first = state
    masses = [(0, 0.0, state.mass)]
    snaps = []
    snap_steps = {int(round(ts / tau)): ts for ts in cfg.snapshot_times}
    out = Path(cfg.out_dir) if cfg.out_dir else None

    def snap(st):
        if out is not None and st.step in snap_steps:
            out.mkdir(parents=True, exist_ok=True)
            p = out / f"snapshot_t{snap_steps[st.step]:g}.vtk"
            write_vtk(p, ops, st)
            snaps.append(p)
            if cfg.snapshot_csv:
                write_csv_snapshot(p.with_suffix(".csv"), ops, st)

    snap(state)
    for n in range(1, N + 1):
        if cfg.postprocess and n == N:
            post_prev = reconstruct_local(ops, state.s, state.w, cfg.eps)
            state = stepper.step(state, prev_post=post_prev)
        else:
            state = stepper.step(state)
        masses.append((n, state.time, state.mass))
        snap(state)
        if callback is not None:
            callback(state)
    post = reconstruct_local(ops, state.s, state.w, cfg.eps) if cfg.postprocess else None
    errors = error_norms(case, ops, state, state.time, post) if case is not None else None
    res = RunResult(cfg, ops, first, state, np.array(masses), post, errors, snaps)
    if out is not None and cfg.record_mass:
        out.mkdir(parents=True, exist_ok=True)
        write_mass_csv(out / "mass_history.csv", res.masses)
    return res


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def write_mass_csv(path, masses: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("step,time,mass\n")
        for n, t, m in masses:
            fh.write(f"{int(n)},{t:.10g},{m:.16e}\n")


def write_csv_snapshot(path, ops: OperatorSet, state: FieldState) -> None:
    """Vertex-averaged ``x,y,u`` rows."""
    mesh = ops.mesh
    tri = mesh.triangles.ravel()
    cnt = np.bincount(tri, minlength=mesh.n_vertices)
    uv = np.bincount(tri, np.asarray(state.w).ravel(), minlength=mesh.n_vertices) / cnt
    with open(path, "w") as fh:
        fh.write("x,y,u\n")
        for (x, y), v in zip(mesh.vertices, uv):
            fh.write(f"{x:.10g},{y:.10g},{v:.10g}\n")


def write_vtk(path, ops: OperatorSet, state: FieldState) -> None:
    """Legacy VTK unstructured grid with u per cell corner and sigma at centroids."""
    mesh = ops.mesh
    nT = mesh.n_triangles
    pts = mesh.vertices[mesh.triangles].reshape(-1, 2)
    u = np.asarray(state.w).reshape(-1)
    cen = np.full((1, 3), 1.0 / 3.0)
    tau, _, _ = ops.sigma_space.evaluate(state.s, cen)
    tau = tau[:, 0, :]
    # vertex-averaged u, convenient for contouring
    cnt = np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)
    uv = np.bincount(mesh.triangles.ravel(), u, minlength=mesh.n_vertices) / cnt
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"u at t={state.time:.6g}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {3 * nT} double\n")
        for x, y in pts:
            fh.write(f"{x:.10g} {y:.10g} 0\n")
        fh.write(f"CELLS {nT} {4 * nT}\n")
        for k in range(nT):
            fh.write(f"3 {3 * k} {3 * k + 1} {3 * k + 2}\n")
        fh.write(f"CELL_TYPES {nT}\n")
        fh.write("5\n" * nT)
        fh.write(f"POINT_DATA {3 * nT}\nSCALARS u double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(f"{v:.10g}" for v in u) + "\n")
        fh.write("SCALARS u_continuous double 1\nLOOKUP_TABLE default\n")
        fh.write("\n".join(f"{v:.10g}" for v in uv[mesh.triangles.ravel()]) + "\n")
        fh.write(f"CELL_DATA {nT}\n")
        for c, name in enumerate(("sigma_xx", "sigma_xy", "sigma_yy")):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            fh.write("\n".join(f"{v:.10g}" for v in tau[:, c]) + "\n")
