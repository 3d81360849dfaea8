"""Weak-form assembly for the fully discrete variable-density system.

One time step advances (rho^n, u^n) to (rho^{n+1}, u^{n+1}, P^{n+1/2}) with a
modified Crank-Nicolson method: every nonlinear term is evaluated at the
midpoint fields, the momentum m = rho*u is always formed pointwise at
quadrature points (never stored as an unknown), and the kinetic-energy
pairings carry u^n . u^{n+1} or u^{n+1/2} . u^{n+1/2} depending on
midpoint_energy_mode.  Three equation layouts are supported: momentum,
primitive-velocity and mixed.

Residual layout: [density rows | momentum rows | divergence rows | zero-mean
row].  The Jacobian is the exact derivative with respect to the new state;
with rho_bar_mode = 'global_mean' the mean density couples every row to all
density DOFs, returned as a rank-one pair (a, b) with J_full = J + a b^T so
the sparse pattern stays local.

The Jacobian is organized around pointwise partial derivatives of the
residual kernels with respect to the quadrature-point quantities (r, grad r,
u, grad u, ...); a single set of contractions then maps those tensors to
matrix blocks for any formulation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .fem import FESpace, Field
from .linalg import SparseLU, augment_zero_mean
from .quadrature import QuadratureRule, quadrature_rule

__all__ = [
    "FormulationParams",
    "ViscousParams",
    "SystemState",
    "GravityForcing",
    "SystemLayout",
    "default_rule",
    "trilinear_b",
    "assemble_residual",
    "assemble_jacobian",
    "assemble_residual_velocity_form",
    "assemble_residual_mixed_form",
    "viscous_momentum_term",
    "leray_project",
    "density_replay_step",
    "VISCOUS_PRESET_AS",
]

VISCOUS_PRESET_AS = {
    "GP": (0.0, 0.0, 0.0, 1.0, 1.0),
    "KS": (0.0, 1.0, 0.0, 1.0, 1.0),
    "zero": (0.0, 0.0, 0.0, 0.0, 0.0),
}


@dataclass(frozen=True)
class FormulationParams:
    """Parameters selecting a member of the conservative formulation family."""

    alpha_rho: float = 0.0
    alpha_m: float = 1.0
    alpha_P: float = 0.5
    rho_bar_mode: str = "none"  # zero | global_mean | none
    form: str = "momentum"  # momentum | velocity | mixed
    midpoint_energy_mode: str = "u_n_dot_u_np1"  # or u_half_dot_u_half
    # Pairing of the velocity product in the energy terms.  'projected' runs
    # it through the L2 projection onto the density space, which closes the
    # discrete energy balance exactly (with continuous density elements the
    # raw product leaves a projection-gap drift).  Only meaningful for
    # midpoint_energy_mode = 'u_n_dot_u_np1'; the u_half mode stays raw so
    # its exact momentum balance is untouched.
    ke_pairing: str = "projected"

    def __post_init__(self):
        if self.rho_bar_mode not in ("zero", "global_mean", "none"):
            raise ValueError(f"unknown rho_bar_mode {self.rho_bar_mode!r}")
        if self.rho_bar_mode == "none" and self.alpha_rho != 0.0:
            raise ValueError("rho_bar_mode 'none' requires alpha_rho = 0")
        if self.form not in ("momentum", "velocity", "mixed"):
            raise ValueError(f"unknown form {self.form!r}")
        if self.midpoint_energy_mode not in ("u_n_dot_u_np1", "u_half_dot_u_half"):
            raise ValueError(
                f"unknown midpoint_energy_mode {self.midpoint_energy_mode!r}"
            )
        if self.ke_pairing not in ("raw", "projected"):
            raise ValueError(f"unknown ke_pairing {self.ke_pairing!r}")

    @property
    def uses_mean(self) -> bool:
        return self.rho_bar_mode == "global_mean"


@dataclass(frozen=True)
class ViscousParams:
    """Mass diffusivity kappa, shear viscosity mu and the five-parameter
    viscous momentum flux (or a named preset)."""

    preset: str | None = "zero"
    A: tuple | None = None
    kappa: float = 0.0
    mu: float = 0.0
    mu_mode: str = "constant"  # constant | rho_scaled (mu_eff = mu * rho)
    flux_form: str = "divergence_weak"  # divergence_weak | literal

    def __post_init__(self):
        if self.preset is not None and self.A is not None:
            raise ValueError("give either a viscous preset or explicit A values")
        if self.preset is not None and self.preset not in VISCOUS_PRESET_AS:
            raise ValueError(f"unknown viscous preset {self.preset!r}")
        if self.kappa < 0 or self.mu < 0:
            raise ValueError("kappa and mu must be nonnegative")
        if self.flux_form not in ("divergence_weak", "literal"):
            raise ValueError(f"unknown flux_form {self.flux_form!r}")
        if self.flux_form == "divergence_weak" and self.preset is None:
            raise ValueError("divergence_weak flux requires a named preset")
        if self.mu_mode not in ("constant", "rho_scaled"):
            raise ValueError(f"unknown mu_mode {self.mu_mode!r}")

    def A_values(self) -> tuple:
        if self.A is not None:
            return tuple(float(a) for a in self.A)
        return VISCOUS_PRESET_AS[self.preset]


@dataclass(frozen=True)
class GravityForcing:
    """Body force (0, -rho g) evaluated with the midpoint density."""

    g: float = 1.0


@dataclass
class SystemState:
    """Unknown triple (rho, u, P) plus the zero-mean multiplier and time."""

    rho: Field
    u: Field
    P_mod: Field
    lam: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        if not self.P_mod.space.degree < self.u.space.degree:
            raise ValueError(
                f"inf-sup ordering requires k_P < k_u, got "
                f"k_P={self.P_mod.space.degree}, k_u={self.u.space.degree}"
            )
        if not (self.rho.space.mesh is self.u.space.mesh
                is self.P_mod.space.mesh):
            raise ValueError("state fields must share one mesh")

    def copy(self) -> "SystemState":
        return SystemState(self.rho.copy(), self.u.copy(), self.P_mod.copy(),
                           self.lam, self.t)


class SystemLayout:
    """Index bookkeeping for the packed unknown/residual vector."""

    def __init__(self, state: SystemState):
        self.rho_space = state.rho.space
        self.u_space = state.u.space
        self.P_space = state.P_mod.space
        self.n_rho = self.rho_space.num_nodes
        self.n_u = self.u_space.num_dofs
        self.n_P = self.P_space.num_nodes
        self.rho_sl = slice(0, self.n_rho)
        self.u_sl = slice(self.n_rho, self.n_rho + self.n_u)
        self.P_sl = slice(self.n_rho + self.n_u,
                          self.n_rho + self.n_u + self.n_P)
        self.lam_ix = self.n_rho + self.n_u + self.n_P
        self.size = self.lam_ix + 1

    def pack(self, state: SystemState) -> np.ndarray:
        x = np.empty(self.size)
        x[self.rho_sl] = state.rho.coeffs
        x[self.u_sl] = state.u.coeffs
        x[self.P_sl] = state.P_mod.coeffs
        x[self.lam_ix] = state.lam
        return x

    def unpack(self, x: np.ndarray, t: float) -> SystemState:
        return SystemState(
            Field(self.rho_space, x[self.rho_sl].copy()),
            Field(self.u_space, x[self.u_sl].copy()),
            Field(self.P_space, x[self.P_sl].copy()),
            float(x[self.lam_ix]),
            t,
        )


def default_rule(k_rho: int, k_u: int) -> QuadratureRule:
    """Exact rule for the highest-degree nonlinear pairing, capped at 14."""
    return quadrature_rule(min(k_rho + 3 * k_u - 1, 14))


# ---------------------------------------------------------------------------
# cached tabulations
# ---------------------------------------------------------------------------

def _space_cache(space, name):
    cache = getattr(space, name, None)
    if cache is None:
        cache = {}
        setattr(space, name, cache)
    return cache


def _phys_grads(space: FESpace, rule: QuadratureRule) -> np.ndarray:
    """(N_K, n_loc, n_q, 2) physical basis gradients."""
    return space.phys_grads(rule)


def _phys_hessians(space: FESpace, rule: QuadratureRule) -> np.ndarray:
    """(N_K, n_loc, n_q, 2, 2) physical basis second derivatives."""
    cache = _space_cache(space, "_phys_hess_cache")
    key = id(rule)
    if key not in cache:
        href = space.ref.hessians(rule.xy)
        _, invJT = space.geometry()
        cache[key] = np.einsum("iqcd,exc,eyd->eiqxy", href, invJT, invJT)
    return cache[key]


def _qpoints(space: FESpace, rule: QuadratureRule) -> np.ndarray:
    cache = _space_cache(space, "_qpt_cache")
    key = id(rule)
    if key not in cache:
        mesh = space.mesh
        cache[key] = np.einsum("qj,kjd->kqd", rule.points,
                               mesh.vertices[mesh.triangles])
    return cache[key]


def _mass_solver(space: FESpace, rule: QuadratureRule):
    """Cached factorized scalar mass matrix on the space."""
    cache = _space_cache(space, "_mass_lu_cache")
    key = id(rule)
    if key not in cache:
        from .fem import mass_matrix
        cache[key] = SparseLU(mass_matrix(space, rule).tocsc())
    return cache[key]


def _project_scalar(space: FESpace, rule: QuadratureRule, wdet, Wr,
                    values) -> Field:
    """L2-project quadrature-point values onto the scalar space."""
    rhs = np.zeros(space.num_nodes)
    np.add.at(rhs, space.cell_dofs.ravel(),
              np.einsum("eq,iq->ei", wdet * values, Wr).ravel())
    return Field(space, _mass_solver(space, rule).solve(rhs))


def _integral_weights(space: FESpace, rule: QuadratureRule) -> np.ndarray:
    """w_i = integral of scalar basis function i."""
    cache = _space_cache(space, "_intw_cache")
    key = id(rule)
    if key not in cache:
        vals, _ = space.tabulate(rule)
        areas, _ = space.geometry()
        wdet = areas[:, None] * rule.weights[None, :]
        out = np.zeros(space.num_nodes)
        np.add.at(out, space.cell_dofs.ravel(),
                  np.einsum("eq,iq->ei", wdet, vals).ravel())
        cache[key] = out
    return cache[key]


def trilinear_b(u: Field, v: Field, w: Field,
                rule: QuadratureRule | None = None) -> float:
    """b(u, v, w) = (u . grad v, w) summed over the mesh."""
    if not (u.space.mesh is v.space.mesh is w.space.mesh):
        raise ValueError("trilinear_b requires fields on one mesh")
    if rule is None:
        deg = u.space.degree + v.space.degree - 1 + w.space.degree
        rule = quadrature_rule(min(max(deg, 1), 14))
    areas, _ = u.space.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    uv = u.cell_values(rule)
    gv = v.cell_gradients(rule)  # (e, q, d, a)
    wv = w.cell_values(rule)
    conv = np.einsum("eqd,eqda->eqa", uv, gv)
    return float(np.sum(wdet * np.einsum("eqa,eqa->eq", conv, wv)))


# ---------------------------------------------------------------------------
# assembly context: all quadrature-point data for one step
# ---------------------------------------------------------------------------

class _Ctx:
    def __init__(self, state_old, state_new, dt, fp, vp, forcing, rule):
        if rule is None:
            rule = default_rule(state_old.rho.space.degree,
                                state_old.u.space.degree)
        self.rule = rule
        self.fp, self.vp = fp, vp
        self.dt = float(dt)
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if state_old.rho.space is not state_new.rho.space or \
           state_old.u.space is not state_new.u.space:
            raise ValueError("old and new states must share spaces")
        for fld in (state_old.rho, state_old.u, state_new.rho, state_new.u,
                    state_new.P_mod):
            if not np.all(np.isfinite(fld.coeffs)):
                raise FloatingPointError("non-finite coefficients in state")

        self.layout = SystemLayout(state_new)
        Ms, Vs, Qs = self.layout.rho_space, self.layout.u_space, self.layout.P_space
        self.Ms, self.Vs, self.Qs = Ms, Vs, Qs
        areas, _ = Vs.geometry()
        self.wdet = areas[:, None] * rule.weights[None, :]
        self.area_total = float(areas.sum())

        self.Wr, _ = Ms.tabulate(rule)
        self.Wv, _ = Vs.tabulate(rule)
        self.Wp, _ = Qs.tabulate(rule)
        self.Gr = _phys_grads(Ms, rule)
        self.Gv = _phys_grads(Vs, rule)
        self.Gp = _phys_grads(Qs, rule)

        self.r0 = state_old.rho.cell_values(rule)
        self.r1 = state_new.rho.cell_values(rule)
        self.r = 0.5 * (self.r0 + self.r1)
        self.gr = 0.5 * (state_old.rho.cell_gradients(rule)
                         + state_new.rho.cell_gradients(rule))
        self.u0 = state_old.u.cell_values(rule)
        self.u1 = state_new.u.cell_values(rule)
        self.u = 0.5 * (self.u0 + self.u1)
        self.gu0 = state_old.u.cell_gradients(rule)
        self.gu1 = state_new.u.cell_gradients(rule)
        self.gu = 0.5 * (self.gu0 + self.gu1)
        self.divu = self.gu[..., 0, 0] + self.gu[..., 1, 1]
        self.gP = state_new.P_mod.cell_gradients(rule)

        self.w_rho = _integral_weights(Ms, rule)
        self.w_P = _integral_weights(Qs, rule)
        if fp.uses_mean:
            tot = 0.5 * (self.w_rho @ state_old.rho.coeffs
                         + self.w_rho @ state_new.rho.coeffs)
            self.rbar = tot / self.area_total
        else:
            self.rbar = 0.0

        # kinetic-energy pairing field S, its gradient, and the trial
        # structure of its variation: dS = sval[b] phi_j,
        # d(gS[d]) = gSval[d, b] phi_j + gSgrad[b] G_j[d]
        form, mode = fp.form, fp.midpoint_energy_mode
        if form == "mixed":
            self.S = self.gS = self.sval = self.gSval = self.gSgrad = None
        elif mode == "u_half_dot_u_half":
            self.S = np.einsum("eqa,eqa->eq", self.u, self.u)
            self.gS = 2.0 * np.einsum("eqda,eqa->eqd", self.gu, self.u)
            self.sval = self.u
            self.gSval = self.gu
            self.gSgrad = self.u
        elif form == "velocity":
            # energy-friendly pairing for the primitive form
            self.S = 0.5 * (np.einsum("eqa,eqa->eq", self.u0, self.u0)
                            + np.einsum("eqa,eqa->eq", self.u1, self.u1))
            self.gS = (np.einsum("eqda,eqa->eqd", self.gu0, self.u0)
                       + np.einsum("eqda,eqa->eqd", self.gu1, self.u1))
            self.sval = self.u1
            self.gSval = self.gu1
            self.gSgrad = self.u1
        else:
            self.S = np.einsum("eqa,eqa->eq", self.u0, self.u1)
            self.gS = (np.einsum("eqda,eqa->eqd", self.gu0, self.u1)
                       + np.einsum("eqda,eqa->eqd", self.gu1, self.u0))
            self.sval = self.u0
            self.gSval = self.gu0
            self.gSgrad = self.u0
        if (self.S is not None and fp.ke_pairing == "projected"
                and fp.midpoint_energy_mode == "u_n_dot_u_np1"):
            # element-exact L2 projection of the pairing field onto the
            # density space; the Jacobian keeps the raw chain (the residual
            # defines the solution, Newton still converges on it)
            sfield = _project_scalar(Ms, rule, self.wdet, self.Wr, self.S)
            self.S = sfield.cell_values(rule)
            self.gS = sfield.cell_gradients(rule)

        t_mid = state_old.t + 0.5 * self.dt
        self.gravity = None
        self.fq = None
        if isinstance(forcing, GravityForcing):
            self.gravity = forcing.g
        elif forcing is not None:
            pts = _qpoints(Vs, rule)
            flat = np.asarray(forcing(pts.reshape(-1, 2), t_mid), dtype=float)
            self.fq = flat.reshape(pts.shape)

        self.mu_q = vp.mu * self.r if vp.mu_mode == "rho_scaled" else None
        self.H = None
        if vp.flux_form == "literal" and vp.kappa:
            Hb = _phys_hessians(Ms, rule)
            c = 0.5 * (state_old.rho.coeffs + state_new.rho.coeffs)
            self.H = np.einsum("ei,eiqxy->eqxy", c[Ms.cell_dofs], Hb)

        self.state_old = state_old
        self.state_new = state_new

    def rows_rho(self):
        return self.Ms.cell_dofs

    def rows_u(self):
        cd = self.Vs.cell_dofs
        return (2 * cd[:, :, None] + np.arange(2)[None, None, :]).reshape(
            cd.shape[0], -1)

    def rows_P(self):
        return self.Qs.cell_dofs


_EYE2 = np.eye(2)


# ---------------------------------------------------------------------------
# residual kernels and their pointwise derivatives
# ---------------------------------------------------------------------------

class _Kernels:
    """Pointwise residual kernels and (optionally) their partial derivatives
    with respect to the quadrature-point quantities.

    Momentum rows:  Ku (e,q,a) pairs with v_a, Kgu (e,q,d,a) with d_d v_a.
    Density rows:   Kr (e,q) with w, Kgr (e,q,d) with d_d w.
    Derivative tensors follow the naming dK<target>_d<source>.
    """

    def __init__(self, ctx, need_jac):
        fp, vp = ctx.fp, ctx.vp
        e, q = ctx.r.shape
        dt = ctx.dt
        a_r, a_m, a_p = fp.alpha_rho, fp.alpha_m, fp.alpha_P
        r, gr, u, gu = ctx.r, ctx.gr, ctx.u, ctx.gu
        divu = ctx.divu
        kappa = vp.kappa

        conv_u = np.einsum("eqd,eqda->eqa", u, gu)
        gr_dot_u = np.einsum("eqd,eqd->eq", gr, u)
        uu = np.einsum("eqa,eqa->eq", u, u)
        gud_u = np.einsum("eqda,eqa->eqd", gu, u)  # sum_c gu[d,c] u[c]

        Ku = np.zeros((e, q, 2))
        Kgu = np.zeros((e, q, 2, 2))
        J = need_jac
        if J:
            z = np.zeros
            dKu_dr = z((e, q, 2))
            dKu_dgr = z((e, q, 2, 2))       # [a, d]
            dKu_du = z((e, q, 2, 2))        # [a, b]
            dKu_dgu = z((e, q, 2, 2, 2))    # [a, d, b]
            dKu_dr1 = z((e, q, 2))
            dKu_du1_diag = z((e, q))        # coefficient of delta_ab
            dKu_dS = z((e, q, 2))
            dKu_dgS_diag = z((e, q))        # dKu[a]/dgS[d] = diag * delta_ad
            dKu_drbar = z((e, q, 2))
            dKgu_dr = z((e, q, 2, 2))
            dKgu_dgr = z((e, q, 2, 2, 2))   # [d, a, c]
            dKgu_du = z((e, q, 2, 2, 2))    # [d, a, b]
            dKu_dH = None

        # ------------------------------------------------------ form terms
        if fp.form == "momentum":
            Ku += (ctx.r1[..., None] * ctx.u1 - ctx.r0[..., None] * ctx.u0) / dt
            Ku += gr_dot_u[..., None] * u + r[..., None] * conv_u
            Ku += a_m * (divu * r)[..., None] * u
            c_gr_uu = (a_p - 0.5) + 0.5 * a_r
            c_r_gud = 2.0 * a_p + a_r
            Ku += c_gr_uu * gr * uu[..., None]
            Ku += c_r_gud * r[..., None] * gud_u
            c_S = 0.5 * (1.0 - a_r)
            Ku += c_S * gr * ctx.S[..., None]
            Ku -= 0.5 * a_r * (r - ctx.rbar)[..., None] * ctx.gS
            if J:
                dKu_dr1 += ctx.u1 / dt
                dKu_du1_diag += ctx.r1 / dt
                dKu_dr += conv_u + a_m * divu[..., None] * u + c_r_gud * gud_u
                dKu_dr -= 0.5 * a_r * ctx.gS
                dKu_dgr += np.einsum("eqa,eqd->eqad", u, u)
                diag = c_gr_uu * uu + c_S * ctx.S
                dKu_dgr += diag[..., None, None] * _EYE2
                dKu_du += (np.einsum("eqb,eqa->eqab", gr, u)
                           + gr_dot_u[..., None, None] * _EYE2
                           + np.einsum("eqba->eqab", gu) * r[..., None, None]
                           + (a_m * divu * r)[..., None, None] * _EYE2
                           + 2.0 * c_gr_uu * np.einsum("eqa,eqb->eqab", gr, u)
                           + c_r_gud * r[..., None, None] * gu
                           )
                dKu_dgu += (np.einsum("eqd,ab->eqadb", u, _EYE2) * r[..., None, None, None]
                            + a_m * r[..., None, None, None]
                            * np.einsum("eqa,db->eqadb", u, _EYE2)
                            + c_r_gud * r[..., None, None, None]
                            * np.einsum("ad,eqb->eqadb", _EYE2, u))
                dKu_dS += c_S * gr
                dKu_dgS_diag -= 0.5 * a_r * (r - ctx.rbar)
                dKu_drbar += 0.5 * a_r * ctx.gS
        elif fp.form == "velocity":
            Ku += r[..., None] * (ctx.u1 - ctx.u0) / dt
            Ku += r[..., None] * conv_u
            Ku += a_m * (divu * r)[..., None] * u
            c_gr_uu = (a_p + 0.5) - 0.5 * a_r
            c_r_gud = 2.0 * a_p - a_r
            Ku += c_gr_uu * gr * uu[..., None]
            Ku += c_r_gud * r[..., None] * gud_u
            c_S = 0.5 * (a_r - 1.0)
            Ku += c_S * gr * ctx.S[..., None]
            Ku += 0.5 * a_r * (r - ctx.rbar)[..., None] * ctx.gS
            if a_r:
                Ku += a_r * ctx.rbar * (divu[..., None] * u + 2.0 * gud_u)
            if kappa:
                Ku -= kappa * np.einsum("eqd,eqda->eqa", gr, gu)
                Kgu -= kappa * np.einsum("eqd,eqa->eqda", gr, u)
            if J:
                dKu_dr += ((ctx.u1 - ctx.u0) / dt + conv_u
                           + a_m * divu[..., None] * u + c_r_gud * gud_u
                           + 0.5 * a_r * ctx.gS)
                dKu_du1_diag += r / dt
                diag = c_gr_uu * uu + c_S * ctx.S
                dKu_dgr += diag[..., None, None] * _EYE2
                if kappa:
                    dKu_dgr -= kappa * np.einsum("eqda->eqad", gu)
                dKu_du += (np.einsum("eqba->eqab", gu) * r[..., None, None]
                           + (a_m * divu * r)[..., None, None] * _EYE2
                           + 2.0 * c_gr_uu * np.einsum("eqa,eqb->eqab", gr, u)
                           + c_r_gud * r[..., None, None] * gu)
                dKu_dgu += (np.einsum("eqd,ab->eqadb", u, _EYE2) * r[..., None, None, None]
                            + a_m * r[..., None, None, None]
                            * np.einsum("eqa,db->eqadb", u, _EYE2)
                            + c_r_gud * r[..., None, None, None]
                            * np.einsum("ad,eqb->eqadb", _EYE2, u))
                if a_r:
                    dKu_du += a_r * ctx.rbar * (
                        divu[..., None, None] * _EYE2 + 2.0 * gu)
                    dKu_dgu += a_r * ctx.rbar * (
                        np.einsum("eqa,db->eqadb", u, _EYE2)
                        + 2.0 * np.einsum("ad,eqb->eqadb", _EYE2, u))
                    dKu_drbar += a_r * (divu[..., None] * u + 2.0 * gud_u)
                if kappa:
                    dKu_dgu -= kappa * np.einsum("eqd,ab->eqadb", gr, _EYE2)
                    dKgu_dgr -= kappa * np.einsum("dc,eqa->eqdac", _EYE2, u)
                    dKgu_du -= kappa * np.einsum("eqd,ab->eqdab", gr, _EYE2)
                dKu_dS += c_S * gr
                dKu_dgS_diag += 0.5 * a_r * (r - ctx.rbar)
                dKu_drbar -= 0.5 * a_r * ctx.gS
        else:  # mixed
            dr10 = ctx.r1 - ctx.r0
            Ku += (r[..., None] * (ctx.u1 - ctx.u0)
                   + 0.5 * dr10[..., None] * u) / dt
            Ku += r[..., None] * conv_u + 0.5 * gr_dot_u[..., None] * u
            Ku += a_m * (divu * r)[..., None] * u
            Ku += a_p * gr * uu[..., None]
            Ku += 2.0 * a_p * r[..., None] * gud_u
            if a_r:
                Ku += 0.5 * a_r * ctx.rbar * (divu[..., None] * u + 2.0 * gud_u)
            if kappa:
                Ku -= 0.5 * kappa * np.einsum("eqd,eqda->eqa", gr, gu)
                Kgu -= 0.5 * kappa * np.einsum("eqd,eqa->eqda", gr, u)
            if J:
                dKu_dr += (ctx.u1 - ctx.u0) / dt + conv_u \
                    + a_m * divu[..., None] * u + 2.0 * a_p * gud_u
                dKu_dr1 += 0.5 * u / dt
                dKu_du1_diag += r / dt
                dKu_du += 0.5 * (dr10 / dt)[..., None, None] * _EYE2
                dKu_dgr += 0.5 * np.einsum("eqa,eqd->eqad", u, u)
                dKu_dgr += (a_p * uu)[..., None, None] * _EYE2
                if kappa:
                    dKu_dgr -= 0.5 * kappa * np.einsum("eqda->eqad", gu)
                dKu_du += (np.einsum("eqba->eqab", gu) * r[..., None, None]
                           + 0.5 * (np.einsum("eqb,eqa->eqab", gr, u)
                                    + gr_dot_u[..., None, None] * _EYE2)
                           + (a_m * divu * r)[..., None, None] * _EYE2
                           + 2.0 * a_p * np.einsum("eqa,eqb->eqab", gr, u)
                           + 2.0 * a_p * r[..., None, None] * gu)
                dKu_dgu += (np.einsum("eqd,ab->eqadb", u, _EYE2) * r[..., None, None, None]
                            + a_m * r[..., None, None, None]
                            * np.einsum("eqa,db->eqadb", u, _EYE2)
                            + 2.0 * a_p * r[..., None, None, None]
                            * np.einsum("ad,eqb->eqadb", _EYE2, u))
                if a_r:
                    dKu_du += 0.5 * a_r * ctx.rbar * (
                        divu[..., None, None] * _EYE2 + 2.0 * gu)
                    dKu_dgu += 0.5 * a_r * ctx.rbar * (
                        np.einsum("eqa,db->eqadb", u, _EYE2)
                        + 2.0 * np.einsum("ad,eqb->eqadb", _EYE2, u))
                    dKu_drbar += 0.5 * a_r * (divu[..., None] * u + 2.0 * gud_u)
                if kappa:
                    dKu_dgu -= 0.5 * kappa * np.einsum("eqd,ab->eqadb", gr, _EYE2)
                    dKgu_dgr -= 0.5 * kappa * np.einsum("dc,eqa->eqdac", _EYE2, u)
                    dKgu_du -= 0.5 * kappa * np.einsum("eqd,ab->eqdab", gr, _EYE2)

        # ----------------------------------------------- modified pressure
        Ku += ctx.gP  # (grad P, v); the J block is assembled directly

        # ----------------------------------------------------- shear stress
        if vp.mu:
            sym = gu + np.swapaxes(gu, 2, 3)
            if ctx.mu_q is not None:
                Kgu += ctx.mu_q[..., None, None] * sym
                if J:
                    dKgu_dr += vp.mu * sym  # d(mu_eff)/dr = nu
            else:
                Kgu += vp.mu * sym
        # the mu (grad u + grad u^T, grad v) Jacobian block is assembled
        # directly in assemble_jacobian (constant sparsity pattern)

        # -------------------------------------------------------- forcing
        if ctx.fq is not None:
            Ku -= ctx.fq
        if ctx.gravity is not None:
            Ku[..., 1] += ctx.gravity * r
            if J:
                dKu_dr[..., 1] += ctx.gravity

        # ------------------------------------------------- viscous momentum
        if kappa and vp.flux_form == "divergence_weak" and vp.preset != "zero":
            f = kappa * gr
            Kgu += np.einsum("eqd,eqa->eqda", f, u)
            if J:
                dKgu_dgr += kappa * np.einsum("dc,eqa->eqdac", _EYE2, u)
                dKgu_du += np.einsum("eqd,ab->eqdab", f, _EYE2)
            if vp.preset == "KS":
                Kgu += np.einsum("eqa,eqd->eqda", f, u)
                if J:
                    dKgu_dgr += kappa * np.einsum("ac,eqd->eqdac", _EYE2, u)
                    dKgu_du += kappa * np.einsum("eqa,db->eqdab", gr, _EYE2)
        elif kappa and vp.flux_form == "literal":
            a1, a2, a3, a4, a5 = vp.A_values()
            H = ctx.H
            trH = H[..., 0, 0] + H[..., 1, 1]
            Ku -= kappa * ((a1 + a2) * np.einsum("eqab,eqb->eqa", H, u)
                           + a3 * np.einsum("eqab,eqb->eqa", gu, gr)
                           + a4 * np.einsum("eqba,eqb->eqa", gu, gr)
                           + a5 * trH[..., None] * u)
            if J:
                dKu_dH = np.zeros((e, q, 2, 2, 2))  # [a, x, y]
                dKu_dH -= kappa * (a1 + a2) * np.einsum("ax,eqy->eqaxy", _EYE2, u)
                dKu_dH -= kappa * a5 * np.einsum("xy,eqa->eqaxy", _EYE2, u)
                dKu_dgr -= kappa * (a3 * np.einsum("eqad->eqad", gu)
                                    + a4 * np.einsum("eqda->eqad", gu))
                dKu_du -= kappa * ((a1 + a2) * H
                                   + a5 * trH[..., None, None] * _EYE2)
                dKu_dgu -= kappa * (a3 * np.einsum("ad,eqb->eqadb", _EYE2, gr)
                                    + a4 * np.einsum("ab,eqd->eqadb", _EYE2, gr))

        # --------------------------------------------------- density kernels
        Kr = (ctx.r1 - ctx.r0) / dt + gr_dot_u
        if a_r:
            Kr = Kr + a_r * divu * (r - ctx.rbar)
        Kgr = kappa * gr if kappa else None

        self.Ku, self.Kgu, self.Kr, self.Kgr = Ku, Kgu, Kr, Kgr
        if J:
            self.dKu_dr, self.dKu_dgr = dKu_dr, dKu_dgr
            self.dKu_du, self.dKu_dgu = dKu_du, dKu_dgu
            self.dKu_dr1, self.dKu_du1_diag = dKu_dr1, dKu_du1_diag
            self.dKu_dS, self.dKu_dgS_diag = dKu_dS, dKu_dgS_diag
            self.dKu_drbar = dKu_drbar
            self.dKgu_dr, self.dKgu_dgr, self.dKgu_du = dKgu_dr, dKgu_dgr, dKgu_du
            self.dKu_dH = dKu_dH
            # density-row derivatives
            self.dKr_dr = a_r * divu if a_r else None        # + 1/dt via r1
            self.dKr_dgr = u
            self.dKr_du = gr
            self.dKr_ddivu = a_r * (r - ctx.rbar) if a_r else None
            self.dKr_drbar = -a_r * divu if a_r else None


# ---------------------------------------------------------------------------
# residual assembly
# ---------------------------------------------------------------------------

def _assemble_residual_from(ctx, kern) -> np.ndarray:
    lay = ctx.layout
    R = np.zeros(lay.size)
    wdet = ctx.wdet

    contrib = (wdet * kern.Kr) @ ctx.Wr.T
    if kern.Kgr is not None:
        contrib += np.einsum("eqd,eiqd->ei", wdet[..., None] * kern.Kgr,
                             ctx.Gr, optimize=True)
    R[:lay.n_rho] += np.bincount(ctx.rows_rho().ravel(), contrib.ravel(),
                                 minlength=lay.n_rho)

    cu = np.einsum("eqa,iq->eia", wdet[..., None] * kern.Ku, ctx.Wv)
    cu += np.einsum("eqda,eiqd->eia", wdet[..., None, None] * kern.Kgu,
                    ctx.Gv, optimize=True)
    R[lay.u_sl] += np.bincount(ctx.rows_u().ravel(),
                               cu.reshape(cu.shape[0], -1).ravel(),
                               minlength=lay.n_u)

    cP = (wdet * ctx.divu) @ ctx.Wp.T
    R[lay.P_sl] += np.bincount(ctx.rows_P().ravel(), cP.ravel(),
                               minlength=lay.n_P)

    R[lay.P_sl] += ctx.state_new.lam * ctx.w_P
    R[lay.lam_ix] = ctx.w_P @ ctx.state_new.P_mod.coeffs
    return R


def assemble_residual(state_old: SystemState, state_new: SystemState, dt,
                      fp: FormulationParams, vp: ViscousParams, forcing=None,
                      rule: QuadratureRule | None = None) -> np.ndarray:
    """Galerkin residual of one modified Crank-Nicolson step.

    Boundary conditions other than periodicity are applied by the caller via
    row replacement; this is the raw weak form on the folded spaces.
    """
    ctx = _Ctx(state_old, state_new, dt, fp, vp, forcing, rule)
    kern = _Kernels(ctx, need_jac=False)
    return _assemble_residual_from(ctx, kern)


def assemble_residual_velocity_form(state_old, state_new, dt, fp, vp,
                                    forcing=None, rule=None) -> np.ndarray:
    return assemble_residual(state_old, state_new, dt,
                             replace(fp, form="velocity"), vp, forcing, rule)


def assemble_residual_mixed_form(state_old, state_new, dt, fp, vp,
                                 forcing=None, rule=None) -> np.ndarray:
    return assemble_residual(state_old, state_new, dt,
                             replace(fp, form="mixed"), vp, forcing, rule)


# ---------------------------------------------------------------------------
# Jacobian assembly
# ---------------------------------------------------------------------------

def _scatter(blocks, rows, cols, coo_i, coo_j, coo_v):
    coo_i.append(np.broadcast_to(rows[:, :, None],
                                 blocks.shape).ravel())
    coo_j.append(np.broadcast_to(cols[:, None, :],
                                 blocks.shape).ravel())
    coo_v.append(blocks.ravel())


def _pair_table(test_space, trial_space, rule):
    """(n_q, n_test * n_trial) table of basis-value products, cached."""
    cache = _space_cache(test_space, "_pairtab_cache")
    key = (id(trial_space), id(rule))
    if key not in cache:
        Wt, _ = test_space.tabulate(rule)
        Ws, _ = trial_space.tabulate(rule)
        P = Wt[:, None, :] * Ws[None, :, :]  # (i, j, q)
        cache[key] = np.ascontiguousarray(
            P.transpose(2, 0, 1).reshape(P.shape[2], -1))
    return cache[key]


def _vv(kernel, PW, ni, nj):
    """val-test x val-trial: kernel (e, q) -> (e, ni, nj)."""
    return (kernel @ PW).reshape(kernel.shape[0], ni, nj)


def _vg(kernel_d, Wt, Gtrial):
    """val-test x grad-trial: kernel (e, q, d) -> (e, n_test, n_trial)."""
    T = np.einsum("eqd,ejqd->ejq", kernel_d, Gtrial)  # (e, j, q)
    return np.matmul(T, Wt.T).transpose(0, 2, 1)


def _gv(kernel_d, Gtest, Wtrial):
    """grad-test x val-trial: kernel (e, q, d) -> (e, n_test, n_trial)."""
    T = np.einsum("eqd,eiqd->eiq", kernel_d, Gtest)
    return np.matmul(T, Wtrial.T)


def _gg(kernel_dc, Gtest, Gtrial):
    """grad-test x grad-trial: kernel (e, q, d, c) -> (e, n_test, n_trial)."""
    T = np.einsum("eqdc,ejqc->ejqd", kernel_dc, Gtrial)
    return np.einsum("ejqd,eiqd->eij", T, Gtest)


def assemble_jacobian(state_old: SystemState, state_new: SystemState, dt,
                      fp: FormulationParams, vp: ViscousParams, forcing=None,
                      rule: QuadratureRule | None = None):
    """Exact derivative of assemble_residual with respect to state_new.

    Returns (J, rank_one) where rank_one is None or a pair (a, b) of vectors
    such that the full Jacobian is J + outer(a, b) (global-mean coupling).
    """
    ctx = _Ctx(state_old, state_new, dt, fp, vp, forcing, rule)
    kern = _Kernels(ctx, need_jac=True)
    lay = ctx.layout
    wdet = ctx.wdet
    E = wdet.shape[0]
    nR, nV, nP = ctx.Ms.ref.n_loc, ctx.Vs.ref.n_loc, ctx.Qs.ref.n_loc

    rows_r = ctx.rows_rho()
    rows_u = lay.u_sl.start + ctx.rows_u()
    rows_P = lay.P_sl.start + ctx.rows_P()
    cols_r = ctx.rows_rho()
    cols_u = lay.u_sl.start + ctx.rows_u()
    cols_P = lay.P_sl.start + ctx.rows_P()

    PW_rr = _pair_table(ctx.Ms, ctx.Ms, ctx.rule)
    PW_rv = _pair_table(ctx.Ms, ctx.Vs, ctx.rule)
    PW_vr = _pair_table(ctx.Vs, ctx.Ms, ctx.rule)
    PW_vv = _pair_table(ctx.Vs, ctx.Vs, ctx.rule)

    coo_i, coo_j, coo_v = [], [], []

    # ---- density rows x density cols
    aval = 0.5 * kern.dKr_dr + 1.0 / ctx.dt if kern.dKr_dr is not None \
        else np.full(ctx.r.shape, 1.0 / ctx.dt)
    blk = _vv(wdet * aval, PW_rr, nR, nR)
    blk += _vg(0.5 * wdet[..., None] * kern.dKr_dgr, ctx.Wr, ctx.Gr)
    if vp.kappa:
        blk += 0.5 * vp.kappa * np.einsum("eq,eiqd,ejqd->eij", wdet,
                                          ctx.Gr, ctx.Gr, optimize=True)
    _scatter(blk, rows_r, cols_r, coo_i, coo_j, coo_v)

    # ---- density rows x velocity cols
    blk = np.empty((E, nR, nV, 2))
    for b in range(2):
        blk[..., b] = _vv(0.5 * wdet * kern.dKr_du[..., b], PW_rv, nR, nV)
        if kern.dKr_ddivu is not None:
            T = (0.5 * wdet * kern.dKr_ddivu)[:, None, :] * ctx.Gv[..., b]
            blk[..., b] += np.matmul(T, ctx.Wr.T).transpose(0, 2, 1)
    _scatter(blk.reshape(E, nR, -1), rows_r, cols_u, coo_i, coo_j, coo_v)

    # ---- momentum rows x density cols
    Aval = 0.5 * kern.dKu_dr + kern.dKu_dr1
    Hr = _phys_hessians(ctx.Ms, ctx.rule) if kern.dKu_dH is not None else None
    blk = np.empty((E, nV, 2, nR))
    for a in range(2):
        B = _vv(wdet * Aval[..., a], PW_vr, nV, nR)
        B += _vg(0.5 * wdet[..., None] * kern.dKu_dgr[:, :, a, :],
                 ctx.Wv, ctx.Gr)
        if Hr is not None:
            T = np.einsum("eqxy,ejqxy->ejq",
                          0.5 * wdet[..., None, None] * kern.dKu_dH[:, :, a],
                          Hr)
            B += np.matmul(T, ctx.Wv.T).transpose(0, 2, 1)
        B += _gv(0.5 * wdet[..., None] * kern.dKgu_dr[..., a], ctx.Gv, ctx.Wr)
        B += _gg(0.5 * wdet[..., None, None] * kern.dKgu_dgr[:, :, :, a, :],
                 ctx.Gv, ctx.Gr)
        blk[:, :, a, :] = B
    _scatter(blk.reshape(E, 2 * nV, nR), rows_u, cols_r, coo_i, coo_j, coo_v)

    # ---- momentum rows x velocity cols
    Cval = 0.5 * kern.dKu_du.copy()
    Cval += kern.dKu_du1_diag[..., None, None] * _EYE2
    if ctx.sval is not None:
        Cval += np.einsum("eqa,eqb->eqab", kern.dKu_dS, ctx.sval)
        Cval += kern.dKu_dgS_diag[..., None, None] * ctx.gSval
    Cgrad = 0.5 * kern.dKu_dgu.copy()  # [a, d, b]
    if ctx.sval is not None:
        # dKu[a]/dgS[d] = diag * delta_ad, paired with gSgrad[b] G_j[d]
        Cgrad += np.einsum("eq,ad,eqb->eqadb", kern.dKu_dgS_diag, _EYE2,
                           ctx.gSgrad)
    mu_w = None
    if vp.mu:
        mu_w = wdet * (ctx.mu_q if ctx.mu_q is not None else vp.mu)
        lap = 0.5 * np.einsum("eq,eiqd,ejqd->eij", mu_w, ctx.Gv, ctx.Gv,
                              optimize=True)
    blk = np.empty((E, nV, 2, nV, 2))
    for a in range(2):
        for b in range(2):
            B = _vv(wdet * Cval[..., a, b], PW_vv, nV, nV)
            B += _vg(wdet[..., None] * Cgrad[:, :, a, :, b], ctx.Wv, ctx.Gv)
            B += _gv(0.5 * wdet[..., None] * kern.dKgu_du[..., a, b],
                     ctx.Gv, ctx.Wv)
            if mu_w is not None:
                if a == b:
                    B += lap
                T = (0.5 * mu_w)[:, None, :] * ctx.Gv[..., b]
                B += np.einsum("eiq,ejq->eij", T, ctx.Gv[..., a])
            blk[:, :, a, :, b] = B
    _scatter(blk.reshape(E, 2 * nV, 2 * nV), rows_u, cols_u,
             coo_i, coo_j, coo_v)

    # ---- momentum rows x pressure cols: (grad P, v)
    blk = np.empty((E, nV, 2, nP))
    for a in range(2):
        T = wdet[:, None, :] * ctx.Gp[..., a]
        blk[:, :, a, :] = np.matmul(T, ctx.Wv.T).transpose(0, 2, 1)
    _scatter(blk.reshape(E, 2 * nV, nP), rows_u, cols_P, coo_i, coo_j, coo_v)

    # ---- divergence rows x velocity cols
    blk = np.empty((E, nP, nV, 2))
    for b in range(2):
        T = (0.5 * wdet)[:, None, :] * ctx.Gv[..., b]
        blk[..., b] = np.matmul(T, ctx.Wp.T).transpose(0, 2, 1)
    _scatter(blk.reshape(E, nP, 2 * nV), rows_P, cols_u, coo_i, coo_j, coo_v)

    n_core = lay.lam_ix  # without the multiplier
    J = sp.coo_matrix(
        (np.concatenate(coo_v),
         (np.concatenate(coo_i), np.concatenate(coo_j))),
        shape=(n_core, n_core),
    ).tocsr()
    J = augment_zero_mean(J, np.arange(lay.P_sl.start, lay.P_sl.stop), ctx.w_P)

    rank_one = None
    if fp.uses_mean and fp.alpha_rho:
        a = np.zeros(lay.size)
        av = np.einsum("eq,iq->ei", wdet * kern.dKr_drbar, ctx.Wr)
        np.add.at(a, rows_r.ravel(), av.ravel())
        au = np.einsum("eqa,iq->eia", wdet[..., None] * kern.dKu_drbar, ctx.Wv)
        np.add.at(a, rows_u.ravel(), au.reshape(au.shape[0], -1).ravel())
        b = np.zeros(lay.size)
        b[lay.rho_sl] = ctx.w_rho / (2.0 * ctx.area_total)
        rank_one = (a, b)
    return J, rank_one


# ---------------------------------------------------------------------------
# standalone viscous contributions (tests, diagnostics)
# ---------------------------------------------------------------------------

def viscous_momentum_term(u_half: Field, rho_half: Field, vp: ViscousParams,
                          rule: QuadratureRule | None = None) -> np.ndarray:
    """Momentum-row contributions of the shear stress plus the mass-diffusion
    momentum flux, evaluated at the given fields.  Returns a vector over the
    velocity DOFs."""
    Vs, Ms = u_half.space, rho_half.space
    if Vs.mesh is not Ms.mesh:
        raise ValueError("fields must share one mesh")
    if rule is None:
        rule = default_rule(Ms.degree, Vs.degree)
    areas, _ = Vs.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    Wv, _ = Vs.tabulate(rule)
    Gv = _phys_grads(Vs, rule)
    u = u_half.cell_values(rule)
    gu = u_half.cell_gradients(rule)
    r = rho_half.cell_values(rule)
    gr = rho_half.cell_gradients(rule)

    Ku = np.zeros(u.shape)
    Kgu = np.zeros(gu.shape)
    mu_fac = vp.mu * r if vp.mu_mode == "rho_scaled" else vp.mu
    sym = gu + np.swapaxes(gu, 2, 3)
    Kgu += (mu_fac[..., None, None] if isinstance(mu_fac, np.ndarray)
            else mu_fac) * sym
    if vp.kappa:
        if vp.flux_form == "divergence_weak":
            if vp.preset != "zero":
                f = vp.kappa * gr
                Kgu += np.einsum("eqd,eqa->eqda", f, u)
                if vp.preset == "KS":
                    Kgu += np.einsum("eqa,eqd->eqda", f, u)
        else:
            a1, a2, a3, a4, a5 = vp.A_values()
            Hb = _phys_hessians(Ms, rule)
            H = np.einsum("ei,eiqxy->eqxy", rho_half.coeffs[Ms.cell_dofs], Hb)
            trH = H[..., 0, 0] + H[..., 1, 1]
            Ku -= vp.kappa * ((a1 + a2) * np.einsum("eqab,eqb->eqa", H, u)
                              + a3 * np.einsum("eqab,eqb->eqa", gu, gr)
                              + a4 * np.einsum("eqba,eqb->eqa", gu, gr)
                              + a5 * trH[..., None] * u)
    cu = np.einsum("eqa,iq->eia", wdet[..., None] * Ku, Wv)
    cu += np.einsum("eqda,eiqd->eia", wdet[..., None, None] * Kgu, Gv)
    out = np.zeros(Vs.num_dofs)
    cd = Vs.cell_dofs
    rows = (2 * cd[:, :, None] + np.arange(2)[None, None, :]).reshape(
        cd.shape[0], -1)
    np.add.at(out, rows.ravel(), cu.reshape(cu.shape[0], -1).ravel())
    return out


def leray_project(u: Field, Q_space: FESpace,
                  rule: QuadratureRule | None = None) -> Field:
    """Closest field to u that is weakly divergence-free against Q_space.

    Nodal interpolants of divergence-free fields are not discretely
    divergence-free; starting the midpoint scheme from them makes div(u^n)
    oscillate with a dt-independent amplitude.  Projecting the initial
    velocity removes that transient.
    """
    from .fem import mass_matrix
    Vs = u.space
    if rule is None:
        rule = quadrature_rule(min(2 * Vs.degree + 1, 14))
    Ms_scalar = mass_matrix(Vs, rule)  # nodal scalar mass on the V nodes
    n_nodes = Vs.num_nodes
    n_u = Vs.num_dofs
    nQ = Q_space.num_nodes
    # vector mass: interleave the scalar mass on both components
    M = sp.kron(Ms_scalar, sp.identity(2)).tocsr()
    # divergence coupling D[q, u] = (div u, chi_q)
    Wp, _ = Q_space.tabulate(rule)
    Gv = _phys_grads(Vs, rule)
    areas, _ = Vs.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    nP_loc = Q_space.ref.n_loc
    nV_loc = Vs.ref.n_loc
    blk = np.empty((wdet.shape[0], nP_loc, nV_loc, 2))
    for b in range(2):
        T = wdet[:, None, :] * Gv[..., b]
        blk[..., b] = np.matmul(T, Wp.T).transpose(0, 2, 1)
    rows = np.repeat(Q_space.cell_dofs, 2 * nV_loc, axis=1).ravel()
    cd = Vs.cell_dofs
    cols_u = (2 * cd[:, :, None] + np.arange(2)[None, None, :]).reshape(
        cd.shape[0], -1)
    cols = np.tile(cols_u, (1, nP_loc)).reshape(-1)
    D = sp.coo_matrix(
        (blk.reshape(blk.shape[0], nP_loc, -1).transpose(0, 1, 2).ravel(),
         (rows, cols)), shape=(nQ, n_u)).tocsr()
    w_P = _integral_weights(Q_space, rule)
    K = sp.bmat([[M, D.T], [D, None]], format="csr")
    K = augment_zero_mean(K, np.arange(n_u, n_u + nQ), w_P)
    rhs = np.concatenate([M @ u.coeffs, np.zeros(nQ + 1)])
    sol = SparseLU(K.tocsc()).solve(rhs)
    return Field(Vs, sol[:n_u])


# ---------------------------------------------------------------------------
# density-only replay (shift-invariance twin runs)
# ---------------------------------------------------------------------------

def density_replay_step(rho_old: Field, u_old: Field, u_new: Field, dt,
                        fp: FormulationParams, kappa: float = 0.0,
                        rule: QuadratureRule | None = None) -> Field:
    """Advance only the density equation with a frozen velocity pair.

    The update is linear in rho^{n+1} (the global mean enters linearly), so a
    single sparse solve per step suffices.
    """
    from .linalg import SparseLU

    Ms, Vs = rho_old.space, u_old.space
    if rule is None:
        rule = default_rule(Ms.degree, Vs.degree)
    areas, _ = Ms.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    Wr, _ = Ms.tabulate(rule)
    Gr = _phys_grads(Ms, rule)
    area_total = float(areas.sum())
    a_r = fp.alpha_rho

    u = 0.5 * (u_old.cell_values(rule) + u_new.cell_values(rule))
    gu = 0.5 * (u_old.cell_gradients(rule) + u_new.cell_gradients(rule))
    divu = gu[..., 0, 0] + gu[..., 1, 1]

    n = Ms.num_nodes
    cd = Ms.cell_dofs
    rows = np.repeat(cd, cd.shape[1], axis=1).ravel()
    cols = np.tile(cd, (1, cd.shape[1])).ravel()

    # operator pieces: (w, phi)/dt + 1/2 [ (u.grad phi, w) + a_r (divu phi, w)
    #                  + kappa (grad phi, grad w) ]  acting on rho^{n+1},
    # and the mirrored combination acting on rho^n in the right-hand side
    mass = np.einsum("eq,iq,jq->eij", wdet, Wr, Wr)
    adv = np.einsum("eq,ejqd,eqd,iq->eij", wdet, Gr, u, Wr, optimize=True)
    dv = np.einsum("eq,jq,iq->eij", wdet * divu, Wr, Wr)
    stiff = np.einsum("eq,eiqd,ejqd->eij", wdet, Gr, Gr, optimize=True) \
        if kappa else 0.0

    op = 0.5 * (adv + a_r * dv) + (kappa * 0.5) * stiff
    A_loc = mass / dt + op
    B_loc = mass / dt - op
    A = sp.coo_matrix((A_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    B = sp.coo_matrix((B_loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    rhs = B @ rho_old.coeffs

    rank_one = None
    if a_r:
        w_rho = _integral_weights(Ms, rule)
        dvec = np.zeros(n)
        np.add.at(dvec, cd.ravel(),
                  np.einsum("eq,iq->ei", wdet * divu, Wr).ravel())
        if fp.uses_mean:
            # -a_r (divu, w) * rbar with rbar = (w.(rho0+rho1)) / (2|Omega|)
            b = a_r * w_rho / (2.0 * area_total)
            rank_one = (-dvec, b)
            rhs += dvec * a_r * (w_rho @ rho_old.coeffs) / (2.0 * area_total)
    lu = SparseLU(A, rank_one)
    return Field(Ms, lu.solve(rhs))
