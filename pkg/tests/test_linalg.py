import numpy as np
import pytest
import scipy.sparse as sp

from varden.fem import build_space, mass_matrix
from varden.linalg import FactorizationError, SparseLU, augment_zero_mean, \
    lu_solve
from varden.mesh import apply_periodic, build_rect_mesh


def test_identity_solve():
    A = sp.identity(7, format="csr")
    b = np.arange(7.0)
    assert np.allclose(lu_solve(A, b), b)


def test_two_by_two():
    A = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
    x = lu_solve(A, np.array([3.0, 4.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-14)


def test_random_spd_residual():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((50, 50))
    A = A @ A.T + 50 * np.eye(50)
    As = sp.csr_matrix(A)
    b = rng.standard_normal(50)
    x = lu_solve(As, b)
    assert np.linalg.norm(As @ x - b) / np.linalg.norm(b) <= 1e-12


def test_factor_solve_roundtrip():
    rng = np.random.default_rng(11)
    A = sp.random(80, 80, density=0.1, random_state=3) + 8 * sp.identity(80)
    x_true = rng.standard_normal(80)
    b = A @ x_true
    x = lu_solve(A.tocsr(), b)
    assert np.linalg.norm(x - x_true) / np.linalg.norm(x_true) <= 1e-11


def test_nonsquare_rejected():
    A = sp.random(4, 5, density=0.5)
    with pytest.raises(ValueError):
        lu_solve(A, np.ones(4))


def test_rank_one_update():
    rng = np.random.default_rng(2)
    A = sp.csr_matrix(rng.standard_normal((20, 20)) + 10 * np.eye(20))
    a = rng.standard_normal(20)
    b = rng.standard_normal(20)
    rhs = rng.standard_normal(20)
    lu = SparseLU(A.tocsc(), rank_one=(a, b))
    x = lu.solve(rhs)
    full = A.toarray() + np.outer(a, b)
    assert np.linalg.norm(full @ x - rhs) <= 1e-11 * np.linalg.norm(rhs)


def test_augment_zero_mean_enforces_constraint():
    # singular Neumann-type system: P1 stiffness on a periodic mesh has the
    # constant nullspace; the multiplier row makes it solvable with zero mean
    mesh = apply_periodic(build_rect_mesh((0, 1, 0, 1), 4, 4), "both")
    space = build_space(mesh, 1, 1)
    from varden.quadrature import quadrature_rule
    rule = quadrature_rule(2)
    vals, _ = space.tabulate(rule)
    G = space.phys_grads(rule)
    areas, _ = space.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    n = space.num_nodes
    loc = np.einsum("eq,eiqd,ejqd->eij", wdet, G, G)
    rows = np.repeat(space.cell_dofs, space.ref.n_loc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, space.ref.n_loc)).ravel()
    K = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    m = np.asarray(mass_matrix(space, rule).sum(axis=1)).ravel()
    Ka = augment_zero_mean(K, np.arange(n), m)
    assert Ka.shape == (n + 1, n + 1)
    # compatible (periodic, zero-mean) forcing
    fvals = np.sin(2 * np.pi * space.node_coords[:, 0]) \
        * np.cos(2 * np.pi * space.node_coords[:, 1])
    f = mass_matrix(space, rule) @ fvals
    rhs = np.concatenate([f, [0.0]])
    x = lu_solve(Ka, rhs)
    sol, lam = x[:n], x[n]
    assert abs(m @ sol) <= 1e-11 * np.abs(sol).max()
    assert abs(lam) <= 1e-11 * max(np.abs(sol).max(), 1.0)
    # a constant shift of the solution is detected by the multiplier row
    shifted = sol + 3.0
    assert abs(m @ shifted - 3.0 * m.sum()) <= 1e-12 * max(3.0 * m.sum(), 1)


def test_singular_matrix_raises():
    A = sp.csr_matrix((3, 3))
    with pytest.raises(FactorizationError):
        lu_solve(A, np.ones(3))
