import numpy as np
import pytest

from helpers import periodic_spaces, random_scalar, random_vector

from varden.fem import Field, build_space
from varden.forms import (FormulationParams, GravityForcing, SystemLayout,
                          SystemState, ViscousParams, assemble_jacobian,
                          assemble_residual, assemble_residual_mixed_form,
                          assemble_residual_velocity_form, trilinear_b,
                          viscous_momentum_term)
from varden.mesh import apply_periodic, build_rect_mesh
from varden.quadrature import quadrature_rule


@pytest.fixture(scope="module")
def spaces():
    return periodic_spaces(n=3)


def _state(Ms, Vs, Qs, seed, rho_shift=2.0):
    rng = np.random.default_rng(seed)
    return SystemState(
        random_scalar(Ms, rng, shift=rho_shift, scale=0.3),
        random_vector(Vs, rng, scale=0.4),
        random_scalar(Qs, rng, scale=0.3),
        lam=float(rng.standard_normal() * 0.05),
    )


# ---------------------------------------------------------------------------
# trilinear form
# ---------------------------------------------------------------------------

def test_trilinear_linear_field():
    mesh = build_rect_mesh((0, 1, 0, 1), 2, 2)
    V = build_space(mesh, 2, 2)
    u = V.interpolate(lambda p: np.stack([np.ones(len(p)), np.zeros(len(p))],
                                         axis=-1))
    v = V.interpolate(lambda p: np.stack([p[:, 0], np.zeros(len(p))],
                                         axis=-1))
    assert abs(trilinear_b(u, v, u) - 1.0) <= 1e-13


def test_trilinear_skew_with_solenoidal_transport():
    Ms, Vs, Qs = periodic_spaces(n=3)
    rng = np.random.default_rng(4)
    u = Vs.interpolate(lambda p: np.stack([np.ones(len(p)),
                                           np.zeros(len(p))], axis=-1))
    w = random_vector(Vs, rng)
    assert abs(trilinear_b(u, w, w)) <= 1e-12 * (1 + np.abs(w.coeffs).max())


def test_trilinear_mesh_mismatch():
    m1 = build_rect_mesh((0, 1, 0, 1), 2, 2)
    m2 = build_rect_mesh((0, 1, 0, 1), 2, 2)
    u = build_space(m1, 2, 2).zero_field()
    v = build_space(m2, 2, 2).zero_field()
    with pytest.raises(ValueError):
        trilinear_b(u, v, u)


# ---------------------------------------------------------------------------
# residual structure
# ---------------------------------------------------------------------------

def test_steady_state_zero_residual(spaces):
    Ms, Vs, Qs = spaces
    state = SystemState(
        Field(Ms, np.full(Ms.num_dofs, 3.0)),
        Vs.zero_field(), Qs.zero_field())
    for form in ("momentum", "velocity", "mixed"):
        fp = FormulationParams(0.5, 1.0, 0.25, "global_mean", form=form)
        R = assemble_residual(state, state.copy(), 0.1, fp, ViscousParams())
        assert np.abs(R).max() <= 1e-14


def test_rigid_rotation_density_row(spaces):
    # u = (-y, x), rho = 1: pointwise u.grad rho = 0 and div u = 0
    Ms, Vs, Qs = spaces
    state = SystemState(
        Field(Ms, np.ones(Ms.num_dofs)),
        Vs.interpolate(lambda p: np.stack([-p[:, 1], p[:, 0]], axis=-1)),
        Qs.zero_field())
    fp = FormulationParams(1.0, 1.0, 0.0, "global_mean")
    R = assemble_residual(state, state.copy(), 0.05, fp, ViscousParams())
    lay = SystemLayout(state)
    assert np.abs(R[lay.rho_sl]).max() <= 1e-12


def test_alpha_terms_affine_decomposition(spaces):
    # the residual is affine in (alpha_rho, alpha_m, alpha_P) at fixed states
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 1)
    new = _state(Ms, Vs, Qs, 2)
    vp = ViscousParams()

    def res(ar, am, ap):
        fp = FormulationParams(ar, am, ap, "zero", ke_pairing="raw")
        return assemble_residual(old, new, 0.02, fp, vp)

    base = res(0, 0, 0)
    combo = res(1, 1, 0)
    split = (res(1, 0, 0) - base) + (res(0, 1, 0) - base) + base
    assert np.abs(combo - split).max() <= 1e-12 * np.abs(combo).max()


def test_nan_rejected(spaces):
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 3)
    new = old.copy()
    new.u.coeffs[0] = np.nan
    with pytest.raises(FloatingPointError):
        assemble_residual(old, new, 0.1, FormulationParams(), ViscousParams())


def test_invalid_dt(spaces):
    Ms, Vs, Qs = spaces
    st = _state(Ms, Vs, Qs, 3)
    with pytest.raises(ValueError):
        assemble_residual(st, st.copy(), 0.0, FormulationParams(),
                          ViscousParams())


def test_infsup_degree_guard(spaces):
    Ms, Vs, Qs = spaces
    with pytest.raises(ValueError):
        SystemState(Ms.zero_field(), Vs.zero_field(),
                    build_space(Vs.mesh, 3, 1).zero_field())


# ---------------------------------------------------------------------------
# Jacobian
# ---------------------------------------------------------------------------

CONFIGS = [
    ("momentum-inviscid-mean",
     FormulationParams(0.5, 1, 0.25, "global_mean", ke_pairing="raw"),
     ViscousParams(), None),
    ("momentum-uhalf",
     FormulationParams(0.5, 1, 0.25, "zero",
                       midpoint_energy_mode="u_half_dot_u_half"),
     ViscousParams(), None),
    ("momentum-KS-mu-gravity",
     FormulationParams(1, 1, 0, "global_mean", ke_pairing="raw"),
     ViscousParams(preset="KS", kappa=0.02, mu=0.01), GravityForcing(1.0)),
    ("momentum-GP-rho-scaled",
     FormulationParams(0.5, 1, 0.25, "zero", ke_pairing="raw"),
     ViscousParams(preset="GP", kappa=0.02, mu=0.003, mu_mode="rho_scaled"),
     None),
    ("literal-A-flux",
     FormulationParams(0.5, 1, 0.25, "global_mean", ke_pairing="raw"),
     ViscousParams(preset=None, A=(0.3, 0.7, 0.2, 1.1, 0.9), kappa=0.02,
                   flux_form="literal"), None),
    ("velocity-form",
     FormulationParams(0.5, 1, 0.25, "global_mean", form="velocity",
                       ke_pairing="raw"),
     ViscousParams(preset="GP", kappa=0.02, mu=0.01), None),
    ("mixed-form",
     FormulationParams(0.5, 1, 0.25, "global_mean", form="mixed"),
     ViscousParams(preset="KS", kappa=0.02, mu=0.01), None),
]


@pytest.mark.parametrize("label,fp,vp,forcing",
                         CONFIGS, ids=[c[0] for c in CONFIGS])
def test_jacobian_matches_finite_differences(spaces, label, fp, vp, forcing):
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 10)
    new = _state(Ms, Vs, Qs, 11)
    lay = SystemLayout(new)
    rng = np.random.default_rng(12)
    R0 = assemble_residual(old, new, 0.01, fp, vp, forcing)
    J, r1 = assemble_jacobian(old, new, 0.01, fp, vp, forcing)
    delta = rng.standard_normal(lay.size)
    eps = 1e-7
    Rp = assemble_residual(old, lay.unpack(lay.pack(new) + eps * delta, 0.0),
                           0.01, fp, vp, forcing)
    Jd = J @ delta
    if r1 is not None:
        Jd = Jd + r1[0] * (r1[1] @ delta)
    err = np.linalg.norm(Jd - (Rp - R0) / eps) / np.linalg.norm(Jd)
    assert err <= 1e-6


def test_projected_pairing_chord_jacobian(spaces):
    # with the projected energy pairing the returned Jacobian deliberately
    # keeps the raw chain; the mismatch is projection-error sized, far below
    # what Newton needs to contract
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 20)
    new = _state(Ms, Vs, Qs, 21)
    lay = SystemLayout(new)
    fp = FormulationParams(0.5, 1, 0.25, "global_mean", ke_pairing="projected")
    vp = ViscousParams()
    rng = np.random.default_rng(1)
    R0 = assemble_residual(old, new, 0.01, fp, vp)
    J, r1 = assemble_jacobian(old, new, 0.01, fp, vp)
    delta = rng.standard_normal(lay.size)
    eps = 1e-7
    Rp = assemble_residual(old, lay.unpack(lay.pack(new) + eps * delta, 0.0),
                           0.01, fp, vp)
    Jd = J @ delta + (r1[0] * (r1[1] @ delta) if r1 is not None else 0.0)
    err = np.linalg.norm(Jd - (Rp - R0) / eps) / np.linalg.norm(Jd)
    assert err <= 1e-2


def test_jacobian_density_block_locality(spaces):
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 30)
    fp = FormulationParams(0.5, 1, 0.25, "zero")
    J, r1 = assemble_jacobian(old, old.copy(), 0.05, fp, ViscousParams())
    lay = SystemLayout(old)
    Jrr = J[lay.rho_sl, lay.rho_sl].tocsr()
    # DOFs couple only when they share a triangle
    adjacent = {}
    for cell in Ms.cell_dofs:
        for i in cell:
            adjacent.setdefault(int(i), set()).update(int(j) for j in cell)
    for i in range(lay.n_rho):
        cols = set(Jrr.indices[Jrr.indptr[i]:Jrr.indptr[i + 1]].tolist())
        assert cols <= adjacent[i]


def test_no_rank_one_without_mean(spaces):
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 31)
    fp = FormulationParams(0.0, 0.0, 0.0, "none")
    _, r1 = assemble_jacobian(old, old.copy(), 0.05, fp, ViscousParams())
    assert r1 is None


# ---------------------------------------------------------------------------
# viscous momentum contributions
# ---------------------------------------------------------------------------

def test_viscous_zero_preset_is_mu_term_only(spaces):
    Ms, Vs, Qs = spaces
    rng = np.random.default_rng(7)
    u = random_vector(Vs, rng)
    rho = random_scalar(Ms, rng, shift=2.0)
    only_mu = viscous_momentum_term(u, rho, ViscousParams(mu=0.37))
    with_zero_flux = viscous_momentum_term(
        u, rho, ViscousParams(preset="zero", kappa=0.5, mu=0.37))
    assert np.allclose(only_mu, with_zero_flux, atol=1e-15)


def test_viscous_constant_test_function_annihilates(spaces):
    # divergence-form fluxes pair with grad v, so constant fields see zero
    Ms, Vs, Qs = spaces
    rng = np.random.default_rng(8)
    u = random_vector(Vs, rng)
    rho = random_scalar(Ms, rng, shift=2.0)
    contrib = viscous_momentum_term(
        u, rho, ViscousParams(preset="KS", kappa=0.11, mu=0.05))
    e1 = Vs.interpolate(lambda p: np.stack([np.ones(len(p)),
                                            np.zeros(len(p))], axis=-1))
    assert abs(contrib @ e1.coeffs) <= 1e-12 * np.abs(contrib).max()


def test_gp_literal_matches_weak_when_flux_is_conforming():
    # integration by parts connecting the literal and divergence-weak GP
    # assemblies is exact when the diffusive flux kappa*grad(rho) has a
    # continuous normal component (here: rho is one global cubic) and the
    # boundary term vanishes (u = 0 on the boundary); for a generic C0
    # density the two differ by the inter-element flux jumps
    mesh = build_rect_mesh((0, 1, 0, 1), 3, 3, "alternating")
    Ms, Vs = build_space(mesh, 3, 1), build_space(mesh, 3, 2)
    rng = np.random.default_rng(9)
    rho = Ms.interpolate(
        lambda p: 2 + p[:, 0] ** 2 * p[:, 1] - 0.5 * p[:, 1] ** 3 + p[:, 0])
    u = Field(Vs, 0.4 * rng.standard_normal(Vs.num_dofs))
    bnodes = np.unique(np.concatenate(
        [Vs.boundary_nodes(s) for s in ("left", "right", "bottom", "top")]))
    u.coeffs.reshape(-1, 2)[bnodes] = 0.0
    weak = viscous_momentum_term(
        u, rho, ViscousParams(preset="GP", kappa=0.2))
    lit = viscous_momentum_term(
        u, rho, ViscousParams(preset=None, A=(0, 0, 0, 1, 1), kappa=0.2,
                              flux_form="literal"))
    scale = np.abs(weak).max()
    assert np.abs(weak - lit).max() <= 1e-12 * max(scale, 1.0)


def test_viscous_param_validation():
    with pytest.raises(ValueError):
        ViscousParams(preset="GP", A=(1, 2, 3, 4, 5))
    with pytest.raises(ValueError):
        ViscousParams(preset="nope")
    with pytest.raises(ValueError):
        ViscousParams(kappa=-1.0)
    with pytest.raises(ValueError):
        FormulationParams(0.5, 1, 0.25, "none")


# ---------------------------------------------------------------------------
# alternative equation forms
# ---------------------------------------------------------------------------

def test_velocity_form_equals_momentum_form_at_unit_density(spaces):
    Ms, Vs, Qs = spaces
    rng = np.random.default_rng(40)
    rho = Field(Ms, np.ones(Ms.num_dofs))
    u_old = random_vector(Vs, rng, scale=0.4)
    u_new = random_vector(Vs, rng, scale=0.4)
    P = random_scalar(Qs, rng, scale=0.2)
    old = SystemState(rho.copy(), u_old, Qs.zero_field())
    new = SystemState(rho.copy(), u_new, P)
    fp = FormulationParams(0.0, 1.0, 0.5, "none")
    vp = ViscousParams(mu=0.01)
    r_mom = assemble_residual(old, new, 0.02, fp, vp)
    r_vel = assemble_residual_velocity_form(old, new, 0.02, fp, vp)
    assert np.abs(r_mom - r_vel).max() <= 1e-12 * max(np.abs(r_mom).max(), 1)


def test_mixed_form_without_rho_bar(spaces):
    Ms, Vs, Qs = spaces
    old = _state(Ms, Vs, Qs, 50)
    new = _state(Ms, Vs, Qs, 51)
    fp = FormulationParams(0.0, 1.0, 0.5, "none", form="mixed")
    R = assemble_residual_mixed_form(old, new, 0.02, fp, ViscousParams())
    assert np.all(np.isfinite(R))
    _, r1 = assemble_jacobian(old, new, 0.02, fp, ViscousParams())
    assert r1 is None
