"""Newton solution of the fully discrete system and the time loop.

Boundary conditions are applied as row replacement on the assembled system:
constrained velocity DOFs get identity rows with residual u - g.  The
adaptive time-step control follows the CFL-based shrink/grow algorithm with
bounds (s_min, s_max); the previous step is repeated when the proposed shrink
factor falls below s_min.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .diagnostics import StepReport, report
from .fem import Field, mesh_size_field
from .forms import (FormulationParams, GravityForcing, SystemLayout,
                    SystemState, ViscousParams, assemble_jacobian,
                    assemble_residual, default_rule, density_replay_step)
from .linalg import SparseLU

__all__ = [
    "NewtonConfig",
    "StepControl",
    "VelocityBC",
    "NewtonFailure",
    "newton_step",
    "advance",
    "replay_density_twin",
]


class NewtonFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iter: int = 30
    divergence_factor: float = 1e4
    # never: fresh Jacobian each iteration; step: one Jacobian per step;
    # auto: keep the factorization across steps until convergence degrades
    reuse_jacobian: str = "step"

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("Newton tolerances must be positive")
        if self.reuse_jacobian not in ("never", "step", "auto"):
            raise ValueError(f"unknown reuse_jacobian {self.reuse_jacobian!r}")


@dataclass(frozen=True)
class StepControl:
    cfl: float = 0.5
    s_min: float = 0.8
    s_max: float = 1.2
    dt0: float | None = None
    mode: str = "constant_dt"  # constant_dt | adaptive
    velocity_scale: str = "nodal_max"  # nodal_max | coefficient_l2

    def __post_init__(self):
        if not (0 < self.s_min < 1 < self.s_max):
            raise ValueError("need 0 < s_min < 1 < s_max")
        if self.mode not in ("constant_dt", "adaptive"):
            raise ValueError(f"unknown step mode {self.mode!r}")
        if self.velocity_scale not in ("nodal_max", "coefficient_l2"):
            raise ValueError(f"unknown velocity_scale {self.velocity_scale!r}")


@dataclass
class VelocityBC:
    """Strong velocity constraints per box side.

    sides maps 'left'/'right'/'bottom'/'top' to 'dirichlet' or 'slip';
    omitted sides are unconstrained (periodic sides must be omitted).
    value(points, t) supplies Dirichlet data as (n, 2) arrays.
    """

    sides: dict = field(default_factory=dict)
    value: object = None

    def constrained_dofs(self, space, t):
        """(dof indices, prescribed values) for the velocity space at time t."""
        idx, vals = [], []
        for side, kind in self.sides.items():
            nodes = space.boundary_nodes(side)
            if kind == "dirichlet":
                pts = space.node_coords[nodes]
                g = np.asarray(self.value(pts, t), dtype=float)
                for comp in (0, 1):
                    idx.append(2 * nodes + comp)
                    vals.append(g[:, comp])
            elif kind == "slip":
                comp = 0 if side in ("left", "right") else 1
                idx.append(2 * nodes + comp)
                vals.append(np.zeros(len(nodes)))
            else:
                raise ValueError(f"unknown BC kind {kind!r}")
        if not idx:
            return np.empty(0, dtype=np.int64), np.empty(0)
        idx = np.concatenate(idx)
        vals = np.concatenate(vals)
        # deduplicate (corners appear on two sides)
        uniq, first = np.unique(idx, return_index=True)
        return uniq, vals[first]


class _JacOp:
    """Factorized Jacobian with boundary rows and optional rank-one update."""

    def __init__(self, J, rank_one, fixed, size):
        if len(fixed):
            keep = np.ones(size)
            keep[fixed] = 0.0
            D = sp.diags(keep)
            J = (D @ J + sp.diags(1.0 - keep)).tocsc()
            if rank_one is not None:
                a, b = rank_one
                a = a.copy()
                a[fixed] = 0.0
                rank_one = (a, b)
        self.lu = SparseLU(J, rank_one)

    def solve(self, rhs):
        return self.lu.solve(rhs)


def _apply_bc_residual(R, x, fixed, fixed_vals):
    if len(fixed):
        R[fixed] = x[fixed] - fixed_vals
    return R


def newton_step(state_old: SystemState, dt, fp: FormulationParams,
                vp: ViscousParams, forcing=None,
                cfg: NewtonConfig = NewtonConfig(), bc: VelocityBC | None = None,
                rule=None, jac_cache: dict | None = None):
    """Solve one implicit step; returns (state_new, iterations, final residual).

    jac_cache (reuse_jacobian='auto') keeps the factorization across steps;
    pass the same dict for consecutive calls.
    """
    lay = SystemLayout(state_old)
    if rule is None:
        rule = default_rule(lay.rho_space.degree, lay.u_space.degree)
    t_new = state_old.t + dt
    if bc is not None:
        fixed_loc, fixed_vals = bc.constrained_dofs(lay.u_space, t_new)
        fixed = lay.u_sl.start + fixed_loc
    else:
        fixed, fixed_vals = np.empty(0, dtype=np.int64), np.empty(0)

    x = lay.pack(state_old)
    state = lay.unpack(x, t_new)

    def residual(st):
        R = assemble_residual(state_old, st, dt, fp, vp, forcing, rule)
        return _apply_bc_residual(R, lay.pack(st), fixed, fixed_vals)

    def build_jac(st):
        J, r1 = assemble_jacobian(state_old, st, dt, fp, vp, forcing, rule)
        return _JacOp(J, r1, fixed, lay.size)

    R = residual(state)
    norm0 = np.linalg.norm(R)
    if norm0 <= cfg.abs_tol:
        return state, 0, norm0
    target = max(cfg.rel_tol * norm0, cfg.abs_tol)

    op = None
    if jac_cache is not None and cfg.reuse_jacobian == "auto":
        op = jac_cache.get("op")
    norm_prev = norm0
    for it in range(1, cfg.max_iter + 1):
        if op is None:
            op = build_jac(state)
            if jac_cache is not None:
                jac_cache["op"] = op
        x = lay.pack(state) - op.solve(R)
        state = lay.unpack(x, t_new)
        R = residual(state)
        norm = np.linalg.norm(R)
        if not np.isfinite(norm):
            raise NewtonFailure(f"non-finite residual at iteration {it}")
        if norm <= target:
            return state, it, norm
        if norm > cfg.divergence_factor * (norm0 + cfg.abs_tol):
            raise NewtonFailure(
                f"diverged at iteration {it}: |R| = {norm:.3e}")
        if cfg.reuse_jacobian == "never":
            op = None
        elif norm > 0.25 * norm_prev:
            # stalling with a stale Jacobian: refresh and keep going
            op = build_jac(state)
            if jac_cache is not None:
                jac_cache["op"] = op
        norm_prev = norm
    raise NewtonFailure(
        f"no convergence in {cfg.max_iter} iterations: |R| = {norm:.3e}, "
        f"target {target:.3e}")


def _speed_scale(u: Field, how: str) -> float:
    if how == "coefficient_l2":
        return float(np.linalg.norm(u.coeffs))
    vals = u.coeffs.reshape(-1, 2)
    return float(np.sqrt((vals**2).sum(axis=1)).max())


def advance(state: SystemState, t_end: float, fp: FormulationParams,
            vp: ViscousParams, forcing=None,
            ctrl: StepControl = StepControl(),
            cfg: NewtonConfig = NewtonConfig(), bc: VelocityBC | None = None,
            rule=None, max_steps: int | None = None, velocity_log=None,
            on_step=None):
    """Integrate to t_end; returns (final state, list of StepReport).

    The first report row describes the initial state.  velocity_log, when a
    list, receives the velocity field of every accepted step (including the
    initial one) for density-replay experiments.
    """
    if t_end <= state.t:
        raise ValueError("t_end must exceed the current time")
    Ms, Vs = state.rho.space, state.u.space
    if rule is None:
        rule = default_rule(Ms.degree, Vs.degree)
    h_min = float(mesh_size_field(Ms.mesh, Vs.degree, Ms.degree).coeffs.min())

    def cfl_dt(ust):
        speed = max(_speed_scale(ust, ctrl.velocity_scale), 1e-12)
        return ctrl.cfl * h_min / speed

    dt = ctrl.dt0 if ctrl.dt0 is not None else cfl_dt(state.u)
    reports = [report(state, rule, dt=dt)]
    if velocity_log is not None:
        velocity_log.append(state.u.copy())
    jac_cache: dict = {}
    prev = None  # rollback buffer for the adaptive repeat rule
    n_accepted = 0

    while state.t < t_end - 1e-13 * max(1.0, abs(t_end)):
        if ctrl.mode == "adaptive" and n_accepted > 0:
            s_cfl = ctrl.cfl * h_min / (
                max(_speed_scale(state.u, ctrl.velocity_scale), 1e-12) * dt)
            s = min(s_cfl, ctrl.s_max)
            dt_new = s * dt
            if s < ctrl.s_min and prev is not None:
                # repeat the previous step with the smaller dt
                state = prev
                jac_cache.clear()
                dt = dt_new
                n_accepted -= 1
                reports.pop()
                if velocity_log is not None:
                    velocity_log.pop()
                continue
            dt = dt_new
        dt_step = min(dt, t_end - state.t)

        attempt = dt_step
        last_err = None
        for _ in range(6):
            try:
                new_state, iters, rnorm = newton_step(
                    state, attempt, fp, vp, forcing, cfg, bc, rule, jac_cache)
                break
            except NewtonFailure as exc:
                last_err = exc
                attempt *= 0.5
                jac_cache.clear()
        else:
            raise NewtonFailure(
                f"step at t = {state.t:.6g} failed after 5 halvings: {last_err}")

        prev = state
        state = new_state
        if ctrl.mode == "adaptive":
            dt = attempt
        n_accepted += 1
        reports.append(report(state, rule, dt=attempt, newton_iters=iters,
                              newton_residual=rnorm))
        if velocity_log is not None:
            velocity_log.append(state.u.copy())
        if on_step is not None:
            on_step(state, reports[-1])
        if max_steps is not None and n_accepted >= max_steps:
            break
    return state, reports


def replay_density_twin(rho0: Field, velocity_log, dts, fp: FormulationParams,
                        kappa: float = 0.0, rule=None):
    """Re-run only the density update along a recorded velocity trajectory.

    velocity_log holds the velocity at steps 0..N, dts the N step sizes.
    Returns the list of density fields at steps 0..N.  This isolates the
    density-equation operator, which is the object the shift-invariance
    definition constrains.
    """
    if len(velocity_log) != len(dts) + 1:
        raise ValueError("need one velocity per time level")
    out = [rho0.copy()]
    rho = rho0
    for n, dt in enumerate(dts):
        rho = density_replay_step(rho, velocity_log[n], velocity_log[n + 1],
                                  dt, fp, kappa, rule)
        out.append(rho)
    return out
