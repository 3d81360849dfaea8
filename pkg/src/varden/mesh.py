"""Structured triangulations of rectangles with periodic identification.

Meshes are immutable after construction.  Periodicity is realized as a
slave -> master vertex map that downstream FE spaces fold into their DOF
numbering, so the discrete spaces live on the torus exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "build_rect_mesh",
    "apply_periodic",
    "mesh_size_field_values",
    "read_mesh_text",
    "write_mesh_text",
]

_MATCH_TOL = 1e-12


class MeshError(ValueError):
    """Rejected mesh input (degenerate box, non-matching periodic faces, ...)."""


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation of a rectangle.

    vertices        : (N_v, 2) coordinates
    triangles       : (N_K, 3) CCW vertex index triples
    boundary_edges  : list of ((v0, v1), tag) with tag in {left,right,bottom,top}
    periodic_pairs  : dict slave vertex index -> master vertex index (chain-free)
    domain_box      : (x_min, x_max, y_min, y_max)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: tuple
    periodic_pairs: dict = field(default_factory=dict)
    domain_box: tuple = (0.0, 1.0, 0.0, 1.0)

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def master_vertex(self, v: int) -> int:
        return self.periodic_pairs.get(v, v)

    def box_area(self) -> float:
        x0, x1, y0, y1 = self.domain_box
        return (x1 - x0) * (y1 - y0)


def build_rect_mesh(box, nx: int, ny: int, diagonal_rule: str = "right") -> Mesh:
    """Triangulate box = (x_min, x_max, y_min, y_max) into 2*nx*ny CCW triangles.

    diagonal_rule 'right' uses the same diagonal everywhere; 'alternating'
    flips it per cell to reduce directional bias.
    """
    x0, x1, y0, y1 = map(float, box)
    if nx < 1 or ny < 1:
        raise MeshError(f"need nx, ny >= 1, got nx={nx}, ny={ny}")
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate box {box}")
    if diagonal_rule not in ("right", "alternating"):
        raise MeshError(f"unknown diagonal_rule {diagonal_rule!r}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            flip = diagonal_rule == "alternating" and (i + j) % 2 == 1
            if flip:
                tris.append((v00, v10, v01))
                tris.append((v10, v11, v01))
            else:
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
    triangles = np.asarray(tris, dtype=np.int64)

    bedges = []
    for j in range(ny):
        bedges.append(((vid(0, j), vid(0, j + 1)), "left"))
        bedges.append(((vid(nx, j), vid(nx, j + 1)), "right"))
    for i in range(nx):
        bedges.append(((vid(i, 0), vid(i + 1, 0)), "bottom"))
        bedges.append(((vid(i, ny), vid(i + 1, ny)), "top"))

    mesh = Mesh(vertices, triangles, tuple(bedges), {}, (x0, x1, y0, y1))
    assert np.all(mesh.signed_areas() > 0)
    return mesh


def _match_faces(mesh: Mesh, coord: int) -> dict:
    """Map each vertex on the max-face to its translate on the min-face."""
    x0, x1, y0, y1 = mesh.domain_box
    lo, hi = (x0, x1) if coord == 0 else (y0, y1)
    span = hi - lo
    verts = mesh.vertices
    on_lo = np.where(np.abs(verts[:, coord] - lo) <= _MATCH_TOL * max(1.0, span))[0]
    on_hi = np.where(np.abs(verts[:, coord] - hi) <= _MATCH_TOL * max(1.0, span))[0]
    other = 1 - coord
    lo_by_key = {round(float(verts[v, other]), 10): int(v) for v in on_lo}
    pairs = {}
    for v in on_hi:
        key = round(float(verts[v, other]), 10)
        if key not in lo_by_key:
            raise MeshError(
                f"periodic mismatch: vertex {int(v)} at {verts[v]} has no partner "
                f"on the opposite face"
            )
        m = lo_by_key[key]
        if abs(verts[v, other] - verts[m, other]) > _MATCH_TOL * max(1.0, span):
            raise MeshError(f"periodic mismatch: vertex {int(v)} at {verts[v]}")
        pairs[int(v)] = m
    return pairs


def apply_periodic(mesh: Mesh, directions: str = "both") -> Mesh:
    """Return a copy of mesh with periodic_pairs populated.

    directions in {'x', 'y', 'both'}.  Corner chains are resolved so that every
    slave maps directly to its final master (the lexicographically smallest
    vertex of its equivalence class).
    """
    if directions not in ("x", "y", "both"):
        raise MeshError(f"unknown periodic directions {directions!r}")
    raw = {}
    if directions in ("x", "both"):
        raw.update(_match_faces(mesh, 0))
    if directions in ("y", "both"):
        raw.update(_match_faces(mesh, 1))

    # group all identified vertices by their wrapped coordinates; the smallest
    # vertex id of each class becomes the master (resolves corner chains)
    verts = mesh.vertices
    x0, x1, y0, y1 = mesh.domain_box

    def key_of(v):
        x, y = float(verts[v, 0]), float(verts[v, 1])
        if directions in ("x", "both"):
            x = x0 + (x - x0) % (x1 - x0)
        if directions in ("y", "both"):
            y = y0 + (y - y0) % (y1 - y0)
        return (round(x, 10), round(y, 10))

    classes = {}
    for v in set(raw.keys()) | set(raw.values()):
        classes.setdefault(key_of(v), []).append(int(v))
    pairs = {}
    for group in classes.values():
        master = min(group)
        for v in group:
            if v != master:
                pairs[v] = master

    for s, m in pairs.items():
        assert m not in pairs, "periodic map must be chain-free"
    return Mesh(
        mesh.vertices,
        mesh.triangles,
        mesh.boundary_edges,
        pairs,
        mesh.domain_box,
    )


def mesh_size_field_values(mesh: Mesh, k_u: int, k_rho: int) -> np.ndarray:
    """Vertex values of the nodal mesh-size field.

    At each vertex: min over incident triangles of (smallest edge of the
    triangle) / max(k_u, k_rho).  Returned as per-vertex values; the fem module
    wraps them into a continuous P1 field.
    """
    if k_u < 1 or k_rho < 1:
        raise MeshError("polynomial degrees must be >= 1")
    p = mesh.vertices[mesh.triangles]
    e0 = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    e1 = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    e2 = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    h_k = np.minimum(np.minimum(e0, e1), e2) / max(k_u, k_rho)
    h = np.full(mesh.num_vertices, np.inf)
    for loc in range(3):
        np.minimum.at(h, mesh.triangles[:, loc], h_k)
    # periodic slaves share the master's patch
    if mesh.periodic_pairs:
        for s, m in mesh.periodic_pairs.items():
            v = min(h[s], h[m])
            h[s] = h[m] = v
    return h


def write_mesh_text(mesh: Mesh, path) -> None:
    """Plain-text export: 'N_v N_K', then vertex lines 'x y', then 0-based triples."""
    with open(path, "w") as f:
        f.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
        for x, y in mesh.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")


def read_mesh_text(path) -> Mesh:
    """Read the plain-text format written by write_mesh_text."""
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) < 2:
        raise MeshError(f"{path}: truncated mesh file")
    n_v, n_k = int(tokens[0]), int(tokens[1])
    need = 2 + 2 * n_v + 3 * n_k
    if len(tokens) < need:
        raise MeshError(f"{path}: expected {need} tokens, found {len(tokens)}")
    coords = np.array(tokens[2 : 2 + 2 * n_v], dtype=float).reshape(n_v, 2)
    tris = np.array(tokens[2 + 2 * n_v : need], dtype=np.int64).reshape(n_k, 3)
    if tris.min() < 0 or tris.max() >= n_v:
        raise MeshError(f"{path}: triangle index out of range")
    x0, y0 = coords.min(axis=0)
    x1, y1 = coords.max(axis=0)
    mesh = Mesh(coords, tris, (), {}, (float(x0), float(x1), float(y0), float(y1)))
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        raise MeshError(f"{path}: triangle {int(np.argmin(areas))} is not CCW")
    return mesh
