import numpy as np
import pytest
from scipy.integrate import quad

from varden.bench import gresho_rho, gresho_u
from varden.diagnostics import (CSV_HEADER, ElementPolyData,
                                convergence_table, projected_speed, report,
                                squared_density_shift_root)
from varden.fem import Field, build_space
from varden.forms import SystemState
from varden.mesh import apply_periodic, build_rect_mesh
from varden.quadrature import quadrature_rule


def _state(mesh, rho_fn, u_fn, k_rho=2, k_u=3):
    Ms = build_space(mesh, k_rho, 1)
    Vs = build_space(mesh, k_u, 2)
    Qs = build_space(mesh, k_u - 1, 1)
    return SystemState(Ms.interpolate(rho_fn), Vs.interpolate(u_fn),
                       Qs.zero_field())


def test_report_constant_state():
    mesh = build_rect_mesh((0, 1, 0, 1), 2, 2)
    st = _state(mesh, lambda p: np.full(len(p), 2.0),
                lambda p: np.zeros((len(p), 2)))
    rep = report(st)
    assert abs(rep.mass - 2.0) <= 1e-14
    assert rep.momentum == (0.0, 0.0)
    assert rep.kinetic_energy == 0.0
    assert abs(rep.squared_density - 2.0) <= 1e-14
    assert abs(rep.modified_squared_density) <= 1e-13
    assert rep.min_rho == pytest.approx(2.0)


def test_report_rigid_rotation():
    mesh = build_rect_mesh((-0.5, 0.5, -0.5, 0.5), 4, 4)
    st = _state(mesh, lambda p: np.ones(len(p)),
                lambda p: np.stack([-p[:, 1], p[:, 0]], axis=-1))
    rep = report(st)
    assert abs(rep.angular_momentum - 1.0 / 6.0) <= 1e-13
    assert np.abs(rep.momentum).max() <= 1e-14
    assert rep.div_norm <= 1e-12


def test_report_gresho_energy_against_radial_oracle():
    case_mesh = apply_periodic(
        build_rect_mesh((-0.5, 0.5, -0.5, 0.5), 24, 24, "alternating"),
        "both")
    st = _state(case_mesh, gresho_rho, gresho_u, k_rho=3)
    rep = report(st)

    def rho_r(r):
        return 5.0 + 0.1 * (1.0 - np.tanh(r**2 / 0.125**2 - 1.0))

    def speed(r):
        if r <= 0.2:
            return 5.0 * r
        if r <= 0.4:
            return 2.0 - 5.0 * r
        return 0.0

    ke_oracle = quad(lambda r: 0.5 * rho_r(r) * speed(r) ** 2 * 2 * np.pi * r,
                     0.0, 0.4, points=[0.2], limit=200)[0]
    assert abs(rep.kinetic_energy - ke_oracle) / ke_oracle <= 2e-3


def test_report_shift_identity():
    mesh = build_rect_mesh((0, 2, 0, 1), 3, 3)
    rng = np.random.default_rng(0)
    Ms = build_space(mesh, 2, 1)
    Vs = build_space(mesh, 3, 2)
    Qs = build_space(mesh, 2, 1)
    rho = Field(Ms, 2 + 0.3 * rng.standard_normal(Ms.num_dofs))
    u = Field(Vs, 0.5 * rng.standard_normal(Vs.num_dofs))
    st = SystemState(rho, u, Qs.zero_field())
    shifted = SystemState(Field(Ms, rho.coeffs + 7.0), u.copy(),
                          Qs.zero_field())
    r1, r2 = report(st), report(shifted)
    area = 2.0
    assert abs(r2.mass - r1.mass - 7.0 * area) <= 1e-12 * abs(r2.mass)
    assert abs(r2.modified_squared_density - r1.modified_squared_density) \
        <= 1e-10 * max(abs(r1.modified_squared_density), 1.0)


def test_projected_speed_constant_exact():
    mesh = build_rect_mesh((0, 1, 0, 1), 2, 2)
    Vs = build_space(mesh, 2, 2)
    Ms = build_space(mesh, 2, 1)
    u = Vs.interpolate(lambda p: np.tile([0.3, -0.4], (len(p), 1)))
    proj = projected_speed(u, Ms)
    assert np.abs(proj.values() - 0.25).max() <= 1e-13


@pytest.mark.parametrize("k_u,k_rho", [(3, 3), (2, 1), (3, 2)])
def test_projected_speed_pairing(k_u, k_rho):
    mesh = build_rect_mesh((0, 1, 0, 1), 3, 3, "alternating")
    Vs = build_space(mesh, k_u, 2)
    Ms = build_space(mesh, k_rho, 1)
    rng = np.random.default_rng(1)
    u = Field(Vs, rng.standard_normal(Vs.num_dofs))
    proj = projected_speed(u, Ms)
    rule = proj.rule
    # random test data in the broken space of degree k_u + k_rho - 1
    g = ElementPolyData(proj.degree,
                        rng.standard_normal(proj.coeffs.shape), rule)
    areas, _ = Vs.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    uu = np.einsum("eqa,eqa->eq", u.cell_values(rule), u.cell_values(rule))
    lhs = float(np.sum(wdet * g.values() * uu))
    rhs = float(np.sum(wdet * g.values() * proj.values()))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_convergence_table():
    assert convergence_table([(100, 1e-2), (400, 1.25e-3)])[0] == \
        pytest.approx(3.0, abs=1e-12)
    assert convergence_table([(100, 1e-2), (400, 1e-2)])[0] == \
        pytest.approx(0.0, abs=1e-12)
    rates = convergence_table([(100, 1.0), (400, 2 ** -3.9),
                               (1600, 2 ** -3.9 * 2 ** -3.95)])
    assert rates == pytest.approx([3.9, 3.95], abs=1e-12)
    with pytest.raises(ValueError):
        convergence_table([(400, 1.0), (100, 0.5)])
    with pytest.raises(ValueError):
        convergence_table([(100, 1.0)])


def test_squared_density_shift_root():
    mesh = build_rect_mesh((0, 1, 0, 1), 3, 3)
    Ms = build_space(mesh, 2, 1)
    rng = np.random.default_rng(5)
    rho = Field(Ms, 2 + 0.5 * rng.standard_normal(Ms.num_dofs))
    rule = quadrature_rule(6)
    alpha, rbar = 0.7, 1.9
    A = squared_density_shift_root(rho, alpha, rbar, rule)
    areas, _ = Ms.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    r = rho.cell_values(rule)
    val = float(np.sum(wdet * (0.5 * (r - A) ** 2
                               - alpha * (r - rbar) * (r - A))))
    assert abs(val) <= 1e-12 * float(np.sum(wdet * r * r))


def test_csv_row_matches_header():
    mesh = build_rect_mesh((0, 1, 0, 1), 2, 2)
    st = _state(mesh, lambda p: np.ones(len(p)),
                lambda p: np.zeros((len(p), 2)))
    rep = report(st, dt=0.1, newton_iters=3, newton_residual=1e-13)
    row = rep.to_csv_row()
    assert len(row.split(",")) == len(CSV_HEADER.split(","))
    vals = row.split(",")
    assert float(vals[2]) == pytest.approx(rep.mass)
    assert int(vals[11]) == 3
