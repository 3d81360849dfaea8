"""Quadrature rules on the reference triangle {x, y >= 0, x + y <= 1}.

Points are stored in barycentric coordinates and weights are normalized to
sum to 1, so integrals read |K| * sum(w_q * f(x_q)).  Rules of degree 1 and 2
are the classical symmetric ones; higher degrees come from a collapsed
Gauss-Legendre product (Duffy transform), which has all-positive weights and
is exact for any requested total degree.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

__all__ = ["QuadratureRule", "quadrature_rule", "MAX_EXACTNESS"]

MAX_EXACTNESS = 14


@dataclass(frozen=True)
class QuadratureRule:
    """points: (n_q, 3) barycentric; weights: (n_q,), sum = 1."""

    degree: int
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def xy(self) -> np.ndarray:
        """Reference (x, y) coordinates, shape (n_q, 2)."""
        return self.points[:, 1:]

    def integrate_reference(self, f) -> float:
        """Integral over the reference triangle (area 1/2) of f(x, y)."""
        xy = self.xy
        vals = f(xy[:, 0], xy[:, 1])
        return 0.5 * float(np.dot(self.weights, vals))


def _duffy_rule(degree: int):
    # integrand after the map (a, b) -> (a (1 - b), b) has degree <= degree in a
    # and <= degree + 1 in b (Jacobian 1 - b absorbed)
    n_a = (degree + 2) // 2
    n_b = (degree + 3) // 2
    ga, wa = np.polynomial.legendre.leggauss(n_a)
    gb, wb = np.polynomial.legendre.leggauss(n_b)
    ga = 0.5 * (ga + 1.0)
    gb = 0.5 * (gb + 1.0)
    wa *= 0.5
    wb *= 0.5
    A, B = np.meshgrid(ga, gb, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    x = (A * (1.0 - B)).ravel()
    y = B.ravel()
    w = (WA * WB * (1.0 - B)).ravel()
    # reference-triangle area is 1/2; normalize weights to sum to 1
    w = w / w.sum()
    return x, y, w


@lru_cache(maxsize=None)
def quadrature_rule(exactness_degree: int) -> QuadratureRule:
    """Rule integrating all bivariate polynomials of the given total degree."""
    if exactness_degree < 1:
        exactness_degree = 1
    if exactness_degree > MAX_EXACTNESS:
        raise ValueError(
            f"quadrature exactness {exactness_degree} exceeds the supported "
            f"maximum {MAX_EXACTNESS}"
        )
    if exactness_degree == 1:
        x = np.array([1.0 / 3.0])
        y = np.array([1.0 / 3.0])
        w = np.array([1.0])
    elif exactness_degree == 2:
        x = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])
        y = np.array([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0])
        w = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
    else:
        x, y, w = _duffy_rule(exactness_degree)
    pts = np.column_stack([1.0 - x - y, x, y])
    return QuadratureRule(exactness_degree, pts, w)


def reference_monomial_integral(a: int, b: int) -> float:
    """Exact integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)
