"""Lagrange finite-element spaces (P1-P3) on triangles.

Global DOFs are identified by rounded, periodicity-wrapped physical node
coordinates, which folds periodic slave nodes onto their masters and keeps the
numbering conforming across shared edges without any orientation bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, mesh_size_field_values
from .quadrature import QuadratureRule, quadrature_rule

__all__ = [
    "FESpace",
    "Field",
    "ReferenceElement",
    "build_space",
    "mesh_size_field",
    "l2_project",
    "l2_error",
    "mass_matrix",
]

_KEY_DECIMALS = 10


def _reference_nodes(k: int) -> np.ndarray:
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    nodes = list(verts)
    edges = [(0, 1), (1, 2), (2, 0)]
    for a, b in edges:
        for i in range(1, k):
            t = i / k
            nodes.append(
                (
                    (1 - t) * verts[a][0] + t * verts[b][0],
                    (1 - t) * verts[a][1] + t * verts[b][1],
                )
            )
    if k == 3:
        nodes.append((1.0 / 3.0, 1.0 / 3.0))
    return np.array(nodes)


@lru_cache(maxsize=None)
def ReferenceElement(degree: int) -> "_RefElem":
    return _RefElem(degree)


class _RefElem:
    """Nodal Lagrange basis on the reference triangle via monomial coefficients."""

    def __init__(self, degree: int):
        if degree not in (1, 2, 3):
            raise ValueError(f"unsupported polynomial degree {degree}")
        self.degree = degree
        self.nodes = _reference_nodes(degree)
        self.exponents = [
            (a, b) for total in range(degree + 1) for a in range(total, -1, -1)
            for b in (total - a,)
        ]
        V = np.array(
            [[x**a * y**b for (a, b) in self.exponents] for (x, y) in self.nodes]
        )
        self.coeffs = np.linalg.inv(V)  # (n_mono, n_loc)
        self.n_loc = len(self.nodes)

    def _mono(self, pts, da=0, db=0):
        x, y = pts[:, 0], pts[:, 1]
        cols = []
        for a, b in self.exponents:
            fa = 1.0
            aa, bb = a, b
            for _ in range(da):
                fa *= aa
                aa -= 1
            for _ in range(db):
                fa *= bb
                bb -= 1
            if fa == 0 or aa < 0 or bb < 0:
                cols.append(np.zeros(len(x)))
            else:
                cols.append(fa * x**aa * y**bb)
        return np.array(cols)  # (n_mono, n_pts)

    def values(self, pts) -> np.ndarray:
        """(n_loc, n_pts) basis values."""
        return self.coeffs.T @ self._mono(pts)

    def grads(self, pts) -> np.ndarray:
        """(n_loc, n_pts, 2) reference gradients."""
        gx = self.coeffs.T @ self._mono(pts, da=1)
        gy = self.coeffs.T @ self._mono(pts, db=1)
        return np.stack([gx, gy], axis=-1)

    def hessians(self, pts) -> np.ndarray:
        """(n_loc, n_pts, 2, 2) reference second derivatives."""
        hxx = self.coeffs.T @ self._mono(pts, da=2)
        hxy = self.coeffs.T @ self._mono(pts, da=1, db=1)
        hyy = self.coeffs.T @ self._mono(pts, db=2)
        H = np.empty(hxx.shape + (2, 2))
        H[..., 0, 0] = hxx
        H[..., 0, 1] = hxy
        H[..., 1, 0] = hxy
        H[..., 1, 1] = hyy
        return H


class FESpace:
    """Continuous Lagrange space of given degree; components = 1 or 2.

    cell_dofs holds scalar node ids; vector DOFs interleave as
    components * node + comp.
    """

    def __init__(self, mesh: Mesh, degree: int, components: int = 1):
        if degree not in (1, 2, 3):
            raise ValueError(f"unsupported polynomial degree {degree}")
        if components not in (1, 2):
            raise ValueError("components must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self.components = components
        self.ref = ReferenceElement(degree)
        self._build_dofs()
        self._geom = None
        self._tab_cache = {}

    # -- construction -----------------------------------------------------
    def _build_dofs(self):
        mesh = self.mesh
        x0, x1, y0, y1 = mesh.domain_box
        Lx, Ly = x1 - x0, y1 - y0
        per = mesh.periodic_pairs
        per_x = any(
            abs(mesh.vertices[s, 0] - mesh.vertices[m, 0]) > 0.5 * Lx
            for s, m in per.items()
        )
        per_y = any(
            abs(mesh.vertices[s, 1] - mesh.vertices[m, 1]) > 0.5 * Ly
            for s, m in per.items()
        )
        self.periodic_x, self.periodic_y = per_x, per_y

        ref_nodes = self.ref.nodes
        n_loc = self.ref.n_loc
        tri = mesh.triangles
        verts = mesh.vertices
        lam = np.column_stack([1 - ref_nodes.sum(axis=1), ref_nodes])  # (n_loc, 3)
        # physical positions of all local nodes: (N_K, n_loc, 2)
        phys = np.einsum("lj,kjd->kld", lam, verts[tri])

        tx = np.round((phys[..., 0] - x0) / Lx, _KEY_DECIMALS)
        ty = np.round((phys[..., 1] - y0) / Ly, _KEY_DECIMALS)
        if per_x:
            tx = tx % 1.0
        if per_y:
            ty = ty % 1.0

        keys = np.stack([tx.ravel(), ty.ravel()], axis=1)
        _, first_idx, inverse = np.unique(
            keys, axis=0, return_index=True, return_inverse=True
        )
        self.cell_dofs = inverse.reshape(mesh.num_triangles, n_loc).astype(np.int64)
        self.node_coords = phys.reshape(-1, 2)[first_idx]
        self.num_nodes = len(first_idx)
        self.num_dofs = self.components * self.num_nodes
        # map mesh vertices to space nodes (vertices are local nodes 0..2)
        vmap = np.full(mesh.num_vertices, -1, dtype=np.int64)
        vmap[tri[:, 0]] = self.cell_dofs[:, 0]
        vmap[tri[:, 1]] = self.cell_dofs[:, 1]
        vmap[tri[:, 2]] = self.cell_dofs[:, 2]
        self.vertex_nodes = vmap
        self.constrained = {
            "periodic_x": per_x,
            "periodic_y": per_y,
        }

    @property
    def dof_coords(self) -> np.ndarray:
        """(num_dofs, 2): nodal coordinates, repeated per component."""
        if self.components == 1:
            return self.node_coords
        return np.repeat(self.node_coords, 2, axis=0)

    def geometry(self):
        """(areas, invJT) with invJT[e] mapping reference to physical gradients."""
        if self._geom is None:
            p = self.mesh.vertices[self.mesh.triangles]
            J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            inv = np.empty_like(J)
            inv[:, 0, 0] = J[:, 1, 1]
            inv[:, 0, 1] = -J[:, 0, 1]
            inv[:, 1, 0] = -J[:, 1, 0]
            inv[:, 1, 1] = J[:, 0, 0]
            inv /= det[:, None, None]
            invJT = np.ascontiguousarray(np.swapaxes(inv, 1, 2))
            self._geom = (0.5 * det, invJT)
        return self._geom

    def tabulate(self, rule: QuadratureRule):
        """Cached (values (n_loc, n_q), ref grads (n_loc, n_q, 2)) at rule points."""
        key = id(rule)
        if key not in self._tab_cache:
            pts = rule.xy
            self._tab_cache[key] = (self.ref.values(pts), self.ref.grads(pts))
        return self._tab_cache[key]

    def phys_grads(self, rule: QuadratureRule) -> np.ndarray:
        """Cached physical basis gradients, (N_K, n_loc, n_q, 2)."""
        key = ("pg", id(rule))
        if key not in self._tab_cache:
            _, gref = self.tabulate(rule)
            _, invJT = self.geometry()
            self._tab_cache[key] = np.einsum("iqc,edc->eiqd", gref, invJT)
        return self._tab_cache[key]

    def interpolate(self, fn) -> "Field":
        """Nodal interpolant.  fn maps (n, 2) points to (n,) or (n, 2) values."""
        vals = np.asarray(fn(self.node_coords), dtype=float)
        if self.components == 1:
            if vals.shape != (self.num_nodes,):
                vals = vals.reshape(self.num_nodes)
            return Field(self, vals.copy())
        if vals.shape != (self.num_nodes, 2):
            raise ValueError("vector interpolation needs (n, 2) values")
        return Field(self, vals.reshape(-1).copy())

    def zero_field(self) -> "Field":
        return Field(self, np.zeros(self.num_dofs))

    def boundary_nodes(self, side: str) -> np.ndarray:
        """Node ids on one side of the domain box (left/right/bottom/top)."""
        x0, x1, y0, y1 = self.mesh.domain_box
        c = self.node_coords
        tol = 1e-10 * max(x1 - x0, y1 - y0)
        sel = {
            "left": np.abs(c[:, 0] - x0) <= tol,
            "right": np.abs(c[:, 0] - x1) <= tol,
            "bottom": np.abs(c[:, 1] - y0) <= tol,
            "top": np.abs(c[:, 1] - y1) <= tol,
        }[side]
        return np.where(sel)[0]


def build_space(mesh: Mesh, degree: int, components: int = 1) -> FESpace:
    return FESpace(mesh, degree, components)


@dataclass
class Field:
    """Coefficient vector over an FESpace."""

    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (self.space.num_dofs,):
            raise ValueError(
                f"coefficient length {self.coeffs.shape} does not match "
                f"space with {self.space.num_dofs} DOFs"
            )

    def copy(self) -> "Field":
        return Field(self.space, self.coeffs.copy())

    def node_values(self) -> np.ndarray:
        """(num_nodes,) for scalars, (num_nodes, 2) for vectors."""
        if self.space.components == 1:
            return self.coeffs
        return self.coeffs.reshape(-1, 2)

    def cell_values(self, rule: QuadratureRule) -> np.ndarray:
        """Values at quadrature points: (N_K, n_q) or (N_K, n_q, 2)."""
        vals, _ = self.space.tabulate(rule)
        gathered = self._gather()
        if self.space.components == 1:
            return gathered @ vals
        return np.matmul(gathered.transpose(0, 2, 1), vals).transpose(0, 2, 1)

    def cell_gradients(self, rule: QuadratureRule) -> np.ndarray:
        """Physical gradients at quadrature points.

        Scalars: (N_K, n_q, 2); vectors: (N_K, n_q, 2, 2) with [d, a] = d_d u_a
        (the gradient convention used throughout the weak forms).
        """
        G = self.space.phys_grads(rule)  # (e, i, q, d)
        gathered = self._gather()
        e, i, q, d = G.shape
        if self.space.components == 1:
            out = np.matmul(gathered[:, None, :], G.reshape(e, i, q * d))
            return out.reshape(e, q, d)
        out = np.matmul(gathered.transpose(0, 2, 1), G.reshape(e, i, q * d))
        return out.reshape(e, 2, q, d).transpose(0, 2, 3, 1)

    def _gather(self):
        cd = self.space.cell_dofs
        if self.space.components == 1:
            return self.coeffs[cd]
        return self.coeffs.reshape(-1, 2)[cd]

    def eval(self, points) -> np.ndarray:
        """Evaluate at arbitrary physical points (test/diagnostic use)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mesh = self.space.mesh
        p = mesh.vertices[mesh.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        out_shape = (len(pts),) if self.space.components == 1 else (len(pts), 2)
        out = np.zeros(out_shape)
        gathered = self._gather()
        for n, xy in enumerate(pts):
            d = xy - p[:, 0]
            xi = (J[:, 1, 1] * d[:, 0] - J[:, 0, 1] * d[:, 1]) / det
            eta = (-J[:, 1, 0] * d[:, 0] + J[:, 0, 0] * d[:, 1]) / det
            ok = (xi >= -1e-12) & (eta >= -1e-12) & (xi + eta <= 1 + 1e-12)
            if not ok.any():
                raise ValueError(f"point {xy} is outside the mesh")
            e = int(np.argmax(ok))
            ref = np.array([[xi[e], eta[e]]])
            vals = self.space.ref.values(ref)[:, 0]
            if self.space.components == 1:
                out[n] = gathered[e] @ vals
            else:
                out[n] = vals @ gathered[e]
        return out[0] if np.asarray(points).ndim == 1 else out


def mesh_size_field(mesh: Mesh, k_u: int, k_rho: int) -> Field:
    """Continuous P1 field of the nodal mesh-size function."""
    h_vertex = mesh_size_field_values(mesh, k_u, k_rho)
    space = build_space(mesh, 1, 1)
    vals = np.empty(space.num_nodes)
    vals[space.vertex_nodes] = h_vertex
    return Field(space, vals)


def mass_matrix(space: FESpace, rule: QuadratureRule | None = None) -> sp.csr_matrix:
    """Scalar mass matrix on the (periodically folded) node numbering."""
    if rule is None:
        rule = quadrature_rule(min(2 * space.degree, 14))
    vals, _ = space.tabulate(rule)
    areas, _ = space.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    local = np.einsum("eq,iq,jq->eij", wdet, vals, vals)
    n_loc = space.ref.n_loc
    rows = np.repeat(space.cell_dofs, n_loc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, n_loc)).ravel()
    M = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(space.num_nodes, space.num_nodes)
    )
    return M.tocsr()


def l2_project(target, space: FESpace, rule: QuadratureRule | None = None) -> Field:
    """L2 projection of a callable or Field onto space."""
    if rule is None:
        rule = quadrature_rule(min(2 * space.degree + 2, 14))
    if isinstance(target, Field) and target.space is space:
        return target.copy()
    vals, _ = space.tabulate(rule)
    areas, _ = space.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    pts = _physical_points(space, rule)
    if isinstance(target, Field):
        fvals = target.cell_values(rule)
    else:
        flat = pts.reshape(-1, 2)
        fvals = np.asarray(target(flat), dtype=float)
        if space.components == 1:
            fvals = fvals.reshape(pts.shape[0], pts.shape[1])
        else:
            fvals = fvals.reshape(pts.shape[0], pts.shape[1], 2)
    M = mass_matrix(space, rule)
    try:
        solve = spla.factorized(M.tocsc())
    except RuntimeError as exc:  # pragma: no cover - defensive
        raise RuntimeError(f"singular mass matrix in l2_project: {exc}") from exc
    if space.components == 1:
        rhs = np.zeros(space.num_nodes)
        np.add.at(rhs, space.cell_dofs.ravel(),
                  np.einsum("eq,iq->ei", wdet * fvals, vals).ravel())
        return Field(space, solve(rhs))
    coeffs = np.empty((space.num_nodes, 2))
    for comp in range(2):
        rhs = np.zeros(space.num_nodes)
        np.add.at(rhs, space.cell_dofs.ravel(),
                  np.einsum("eq,iq->ei", wdet * fvals[..., comp], vals).ravel())
        coeffs[:, comp] = solve(rhs)
    return Field(space, coeffs.reshape(-1))


def _physical_points(space: FESpace, rule: QuadratureRule) -> np.ndarray:
    """(N_K, n_q, 2) quadrature points in physical coordinates."""
    mesh = space.mesh
    lam = rule.points  # barycentric (n_q, 3)
    return np.einsum("qj,kjd->kqd", lam, mesh.vertices[mesh.triangles])


def l2_error(field: Field, exact, rule: QuadratureRule | None = None,
             relative: bool = False) -> float:
    """||field - exact||_L2, optionally normalized by ||exact||_L2."""
    space = field.space
    if rule is None:
        rule = quadrature_rule(min(2 * space.degree + 4, 14))
    areas, _ = space.geometry()
    wdet = areas[:, None] * rule.weights[None, :]
    pts = _physical_points(space, rule)
    flat = pts.reshape(-1, 2)
    evals = np.asarray(exact(flat), dtype=float)
    fvals = field.cell_values(rule)
    if space.components == 1:
        evals = evals.reshape(fvals.shape)
        err2 = float(np.sum(wdet * (fvals - evals) ** 2))
        ref2 = float(np.sum(wdet * evals**2))
    else:
        evals = evals.reshape(fvals.shape)
        err2 = float(np.sum(wdet * np.sum((fvals - evals) ** 2, axis=-1)))
        ref2 = float(np.sum(wdet * np.sum(evals**2, axis=-1)))
    if relative:
        if ref2 <= 0.0:
            raise ZeroDivisionError("relative error requested but ||exact|| = 0")
        return np.sqrt(err2 / ref2)
    return np.sqrt(err2)
