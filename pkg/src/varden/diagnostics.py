"""Conserved-quantity evaluation and error/rate utilities."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import FESpace, Field
from .forms import SystemState, default_rule
from .quadrature import QuadratureRule, quadrature_rule

__all__ = [
    "StepReport",
    "CSV_HEADER",
    "report",
    "ElementPolyData",
    "projected_speed",
    "convergence_table",
    "squared_density_shift_root",
]

CSV_HEADER = ("t,dt,mass,mom_x,mom_y,ang_mom,kinetic_energy,squared_density,"
              "mod_squared_density,min_rho,div_norm,newton_iters,newton_residual")


@dataclass
class StepReport:
    """Per-step ledger of the conserved quantities."""

    t: float
    dt: float
    mass: float
    momentum: tuple
    angular_momentum: float
    kinetic_energy: float
    squared_density: float
    modified_squared_density: float
    min_rho: float
    div_norm: float
    newton_iters: int = 0
    newton_residual: float = 0.0

    def to_csv_row(self) -> str:
        vals = [self.t, self.dt, self.mass, self.momentum[0], self.momentum[1],
                self.angular_momentum, self.kinetic_energy,
                self.squared_density, self.modified_squared_density,
                self.min_rho, self.div_norm]
        return ",".join(f"{v!r}" for v in vals) + \
            f",{self.newton_iters},{self.newton_residual!r}"


def report(state: SystemState, rule: QuadratureRule | None = None,
           dt: float = 0.0, newton_iters: int = 0,
           newton_residual: float = 0.0) -> StepReport:
    """Evaluate all conserved quantities of the current state."""
    Ms, Vs = state.rho.space, state.u.space
    if rule is None:
        rule = default_rule(Ms.degree, Vs.degree)
    areas, _ = Vs.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    area = float(areas.sum())

    r = state.rho.cell_values(rule)
    u = state.u.cell_values(rule)
    gu = state.u.cell_gradients(rule)
    pts = np.einsum("qj,kjd->kqd", rule.points,
                    Ms.mesh.vertices[Ms.mesh.triangles])

    mass = float(np.sum(wdet * r))
    m = r[..., None] * u
    mom = np.einsum("eq,eqa->a", wdet, m)
    ang = float(np.sum(wdet * (pts[..., 0] * m[..., 1]
                               - pts[..., 1] * m[..., 0])))
    ke = 0.5 * float(np.sum(wdet * r * np.einsum("eqa,eqa->eq", u, u)))
    sq = 0.5 * float(np.sum(wdet * r * r))
    mod_sq = float(np.sum(wdet * r * r)) - mass**2 / area
    divu = gu[..., 0, 0] + gu[..., 1, 1]
    div_norm = float(np.sqrt(np.sum(wdet * divu * divu)))
    return StepReport(
        t=state.t, dt=dt, mass=mass, momentum=(float(mom[0]), float(mom[1])),
        angular_momentum=ang, kinetic_energy=ke, squared_density=sq,
        modified_squared_density=mod_sq,
        min_rho=float(state.rho.coeffs.min()), div_norm=div_norm,
        newton_iters=newton_iters, newton_residual=newton_residual,
    )


# ---------------------------------------------------------------------------
# element-local (broken) polynomial data and the velocity-product projection
# ---------------------------------------------------------------------------

class _BrokenBasis:
    """Orthonormal polynomial basis on the reference triangle with respect to
    the normalized quadrature measure (weights summing to 1)."""

    _cache: dict = {}

    def __new__(cls, degree: int, rule: QuadratureRule):
        key = (degree, id(rule))
        if key not in cls._cache:
            obj = super().__new__(cls)
            obj._build(degree, rule)
            cls._cache[key] = obj
        return cls._cache[key]

    def _build(self, degree, rule):
        self.degree = degree
        xy = rule.xy
        cols = [xy[:, 0] ** a * xy[:, 1] ** b
                for tot in range(degree + 1)
                for a in range(tot, -1, -1) for b in (tot - a,)]
        V = np.array(cols)  # (n_basis, n_q)
        W = rule.weights
        # two orthonormalization passes: the monomial Gram is ill-conditioned
        # at degree ~5 and a single Cholesky leaves ~1e-9 residuals
        for _ in range(2):
            M = (V * W[None, :]) @ V.T
            L = np.linalg.cholesky(M)
            V = np.linalg.solve(L, V)
        self.vals = V  # (n_basis, n_q), orthonormal in the weighted product


@dataclass
class ElementPolyData:
    """Discontinuous elementwise polynomial data of a fixed degree."""

    degree: int
    coeffs: np.ndarray  # (N_K, n_basis) in the orthonormal reference basis
    rule: QuadratureRule

    def values(self) -> np.ndarray:
        """(N_K, n_q) values at the rule's quadrature points."""
        basis = _BrokenBasis(self.degree, self.rule)
        return self.coeffs @ basis.vals


def projected_speed(u: Field, rho_space: FESpace,
                    rule: QuadratureRule | None = None) -> ElementPolyData:
    """Element-local L2 projection of u . u onto broken polynomials of degree
    k_u + k_rho - 1 (a diagnostic for the kinetic-energy mechanism)."""
    k = u.space.degree + rho_space.degree - 1
    if rule is None:
        rule = quadrature_rule(min(max(2 * max(k, u.space.degree * 2), 4), 14))
    basis = _BrokenBasis(k, rule)
    uv = u.cell_values(rule)
    s = np.einsum("eqa,eqa->eq", uv, uv)
    coeffs = np.einsum("eq,q,iq->ei", s, rule.weights, basis.vals)
    return ElementPolyData(k, coeffs, rule)


def convergence_table(errors) -> list:
    """Observed rates from (dof_count, error) pairs, h ~ dof^(-1/2) in 2D."""
    rows = list(errors)
    if len(rows) < 2:
        raise ValueError("need at least two (dofs, error) entries")
    dofs = [r[0] for r in rows]
    if any(d2 <= d1 for d1, d2 in zip(dofs, dofs[1:])):
        raise ValueError("DOF counts must be strictly increasing")
    rates = []
    for (n1, e1), (n2, e2) in zip(rows, rows[1:]):
        h_ratio = np.sqrt(n2 / n1)
        if e2 == 0.0:
            rates.append(np.inf)
        else:
            rates.append(float(np.log(e1 / e2) / np.log(h_ratio)))
    return rates


def squared_density_shift_root(rho: Field, alpha_rho: float, rho_bar: float,
                               rule: QuadratureRule | None = None) -> float:
    """Closed-form root A making the quadratic density functional
    integral( (rho - A)^2 / 2 - alpha_rho (rho - rho_bar)(rho - A) ) vanish."""
    Ms = rho.space
    if rule is None:
        rule = quadrature_rule(min(2 * Ms.degree + 2, 14))
    areas, _ = Ms.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    omega = float(areas.sum())
    r = rho.cell_values(rule)
    i1 = float(np.sum(wdet * r))          # integral of rho
    i2 = float(np.sum(wdet * r * r))      # integral of rho^2
    a = alpha_rho
    disc = (a**2 * omega**2 * rho_bar**2 - 2 * a**2 * omega * rho_bar * i1
            + a**2 * i1**2 + 2 * a * omega * i2 - 2 * a * i1**2
            - omega * i2 + i1**2)
    if disc < 0:
        raise ValueError("no real shift root for this density field")
    return (a * omega * rho_bar + (1 - a) * i1 + np.sqrt(disc)) / omega
