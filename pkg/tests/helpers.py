"""Shared quadrature-level helpers for the weak-form identity checks.

The identities pair FE fields with pointwise products (e.g. m = rho*u), which
are not coefficient fields, so they are evaluated directly on quadrature-point
arrays.
"""
import numpy as np

from varden.fem import Field, build_space
from varden.forms import default_rule
from varden.mesh import apply_periodic, build_rect_mesh

__all__ = [
    "periodic_spaces",
    "random_scalar",
    "random_vector",
    "QP",
    "rotation_test_field",
]


def periodic_spaces(n=8, k_u=3, k_rho=3, k_p=2, box=(0.0, 1.0, 0.0, 1.0),
                    diagonal_rule="alternating"):
    mesh = apply_periodic(build_rect_mesh(box, n, n, diagonal_rule), "both")
    return (build_space(mesh, k_rho, 1), build_space(mesh, k_u, 2),
            build_space(mesh, k_p, 1))


def random_scalar(space, rng, shift=0.0, scale=1.0):
    return Field(space, shift + scale * rng.standard_normal(space.num_dofs))


def random_vector(space, rng, scale=1.0):
    return Field(space, scale * rng.standard_normal(space.num_dofs))


def rotation_test_field(space):
    """Interpolant of (y, -x), the rigid-rotation test function."""
    return space.interpolate(lambda p: np.stack([p[:, 1], -p[:, 0]], axis=-1))


class QP:
    """Quadrature-point data of a collection of fields on one mesh."""

    def __init__(self, space_v, rule=None):
        if rule is None:
            rule = default_rule(3, space_v.degree)
        self.rule = rule
        areas, _ = space_v.geometry()
        self.w = areas[:, None] * rule.weights[None, :]

    def vals(self, f):
        return f.cell_values(self.rule)

    def grads(self, f):
        return f.cell_gradients(self.rule)

    def integral(self, arr):
        return float(np.sum(self.w * arr))

    def b(self, u_vals, grad_v, w_vals):
        """b(u, v, w) from quadrature arrays; grad_v indexed [d, a]."""
        conv = np.einsum("eqd,eqda->eqa", u_vals, grad_v)
        return self.integral(np.einsum("eqa,eqa->eq", conv, w_vals))

    def div(self, grad_u):
        return grad_u[..., 0, 0] + grad_u[..., 1, 1]

    def dot(self, a, b):
        return np.einsum("eqa,eqa->eq", a, b)

    @staticmethod
    def grad_product(rho_vals, grad_rho, u_vals, grad_u):
        """Gradient of the pointwise product m = rho*u, indexed [d, a]."""
        return (np.einsum("eqd,eqa->eqda", grad_rho, u_vals)
                + rho_vals[..., None, None] * grad_u)
