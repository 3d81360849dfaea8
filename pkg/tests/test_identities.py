"""Weak-form identities on periodic meshes with random coefficient fields.

These are the algebraic backbone of every conservation proof: integration by
parts without boundary terms, the product-rule identities for m = rho*u, the
rigid-rotation annihilation, and the discrete energy decomposition.
"""
import numpy as np
import pytest

from helpers import QP, periodic_spaces, random_scalar, random_vector, \
    rotation_test_field

TOL = 1e-12


@pytest.fixture(scope="module")
def setup():
    Ms, Vs, Qs = periodic_spaces(n=4)
    return Ms, Vs, QP(Vs)


def _fields(Ms, Vs, seed):
    rng = np.random.default_rng(seed)
    rho = random_scalar(Ms, rng, shift=2.0, scale=0.5)
    u = random_vector(Vs, rng)
    v = random_vector(Vs, rng)
    w = random_vector(Vs, rng)
    return rho, u, v, w


@pytest.mark.parametrize("seed", range(5))
def test_ibp_identities(setup, seed):
    Ms, Vs, qp = setup
    rho, u, v, w = _fields(Ms, Vs, seed)
    uv, vv, wv = qp.vals(u), qp.vals(v), qp.vals(w)
    gu, gv, gw = qp.grads(u), qp.grads(v), qp.grads(w)
    divu = qp.div(gu)
    scale = max(abs(qp.b(uv, gv, wv)), 1.0)

    # b(u, v, w) = -b(u, w, v) - ((div u) v, w)
    lhs = qp.b(uv, gv, wv)
    rhs = -qp.b(uv, gw, vv) - qp.integral(divu * qp.dot(vv, wv))
    assert abs(lhs - rhs) <= TOL * scale

    # b(u, w, w) = -1/2 ((div u) w, w)
    lhs = qp.b(uv, gw, wv)
    rhs = -0.5 * qp.integral(divu * qp.dot(wv, wv))
    assert abs(lhs - rhs) <= TOL * scale


@pytest.mark.parametrize("seed", range(5))
def test_advection_ibp_identities(setup, seed):
    Ms, Vs, qp = setup
    rho, u, v, w = _fields(Ms, Vs, seed)
    rng = np.random.default_rng(seed + 1000)
    wsc = random_scalar(Ms, rng)
    uv, gu = qp.vals(u), qp.grads(u)
    rv, gr = qp.vals(rho), qp.grads(rho)
    wv, gw = qp.vals(wsc), qp.grads(wsc)
    divu = qp.div(gu)
    adv = np.einsum("eqd,eqd->eq", uv, gr)

    # (u . grad rho, w) = -(u . grad w, rho) - ((div u) rho, w)
    lhs = qp.integral(adv * wv)
    rhs = (-qp.integral(np.einsum("eqd,eqd->eq", uv, gw) * rv)
           - qp.integral(divu * rv * wv))
    assert abs(lhs - rhs) <= TOL * max(abs(lhs), 1.0)

    # (u . grad rho, rho) = -1/2 ((div u) rho, rho)
    lhs = qp.integral(adv * rv)
    rhs = -0.5 * qp.integral(divu * rv * rv)
    assert abs(lhs - rhs) <= TOL * max(abs(lhs), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_momentum_product_identities(setup, seed):
    Ms, Vs, qp = setup
    rho, u, v, w = _fields(Ms, Vs, seed)
    uv, vv = qp.vals(u), qp.vals(v)
    gu = qp.grads(u)
    rv, gr = qp.vals(rho), qp.grads(rho)
    mv = rv[..., None] * uv
    gm = QP.grad_product(rv, gr, uv, gu)

    # b(u, m, v) = b(m, u, v) + (u . grad rho, u . v)
    lhs = qp.b(uv, gm, vv)
    rhs = qp.b(mv, gu, vv) + qp.integral(
        np.einsum("eqd,eqd->eq", uv, gr) * qp.dot(uv, vv))
    assert abs(lhs - rhs) <= TOL * max(abs(lhs), 1.0)

    # b(u, u, m) = b(m, u, u)
    lhs = qp.b(uv, gu, mv)
    rhs = qp.b(mv, gu, uv)
    assert abs(lhs - rhs) <= TOL * max(abs(lhs), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_rotation_field_identities(seed):
    # pointwise identities: no periodicity involved, and the rotation field
    # (y, -x) is only representable on an unconstrained space
    from varden.mesh import build_rect_mesh
    from varden.fem import build_space
    mesh = build_rect_mesh((0, 1, 0, 1), 4, 4, "alternating")
    Ms, Vs = build_space(mesh, 3, 1), build_space(mesh, 3, 2)
    qp = QP(Vs)
    rho, u, v, w = _fields(Ms, Vs, seed)
    phi = rotation_test_field(Vs)
    gphi = qp.grads(phi)
    # the interpolant reproduces the linear field: antisymmetric gradient
    assert np.abs(gphi + np.swapaxes(gphi, 2, 3)).max() <= 1e-12
    assert np.abs(qp.div(gphi)).max() <= 1e-12

    uv, rv = qp.vals(u), qp.vals(rho)
    mv = rv[..., None] * uv
    # b(u, phi, rho u) = 0
    val = qp.b(uv, gphi, mv)
    scale = qp.integral(qp.dot(uv, mv) ** 0 * 1.0)
    assert abs(val) <= 1e-12 * max(qp.integral(abs(qp.dot(uv, mv))), 1.0)

    # symmetric/antisymmetric contraction: (mu(grad u + grad u^T), grad phi) = 0
    gu = qp.grads(u)
    sym = gu + np.swapaxes(gu, 2, 3)
    val = qp.integral(np.einsum("eqda,eqda->eq", 0.7 * sym, gphi))
    assert abs(val) <= 1e-12 * max(qp.integral(np.abs(sym).sum((-1, -2))), 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_gawlik_energy_identity(setup, seed):
    Ms, Vs, qp = setup
    rng = np.random.default_rng(seed)
    r0 = random_scalar(Ms, rng, shift=2.0, scale=0.4)
    r1 = random_scalar(Ms, rng, shift=2.0, scale=0.4)
    u0 = random_vector(Vs, rng)
    u1 = random_vector(Vs, rng)
    r0v, r1v = qp.vals(r0), qp.vals(r1)
    u0v, u1v = qp.vals(u0), qp.vals(u1)
    uh = 0.5 * (u0v + u1v)
    lhs = 0.5 * qp.integral(r1v * qp.dot(u1v, u1v)) \
        - 0.5 * qp.integral(r0v * qp.dot(u0v, u0v))
    rhs = qp.integral(qp.dot(r1v[..., None] * u1v - r0v[..., None] * u0v, uh)) \
        - 0.5 * qp.integral((r1v - r0v) * qp.dot(u0v, u1v))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
