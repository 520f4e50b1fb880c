"""Surface reconstruction: solve the Poisson equation on a regular voxel grid.

The oriented cloud's normals are splatted into a vector field V; the
indicator field chi solves laplacian(chi) = div(V) under zero Dirichlet
boundary (7-point stencil, conjugate gradient), and marching cubes extracts
the isosurface. A uniform grid of 2^depth cells per axis replaces the octree
of classic implementations so the solver stays checkable against analytic
fields at desk scale.
"""

import numpy as np
from dataclasses import dataclass

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .mesh import TriangleMesh

__all__ = [
    "VoxelGrid",
    "VectorField",
    "ScalarField",
    "PoissonParams",
    "CgDivergenceError",
    "grid_from_points",
    "splat_normals",
    "divergence",
    "solve_poisson",
    "trilinear_sample",
    "select_isovalue",
    "marching_cubes",
    "reconstruct",
]


class CgDivergenceError(RuntimeError):
    """Conjugate gradient failed to converge; carries solver diagnostics."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class VoxelGrid:
    """Cubic voxel grid: ``resolution`` cells per axis, node spacing ``cell_size``.

    Node (i, j, k) sits at origin + (i, j, k) * cell_size; there are
    resolution + 1 nodes per axis.
    """

    resolution: int
    origin: tuple
    cell_size: float

    def __post_init__(self):
        if self.resolution < 8:
            raise ValueError(f"grid resolution must be >= 8, got {self.resolution}")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))

    @property
    def node_shape(self):
        n = self.resolution + 1
        return (n, n, n)

    def to_cell_coords(self, points):
        """Continuous cell coordinates of points; in [0, resolution] when inside."""
        return (np.asarray(points, dtype=np.float64) - np.array(self.origin)) / self.cell_size

    def contains(self, points):
        c = self.to_cell_coords(points)
        return bool((c >= 0.0).all() and (c <= self.resolution).all())


@dataclass(frozen=True, eq=False)
class VectorField:
    """Per-node 3-vectors on a voxel grid."""

    grid: VoxelGrid
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.shape != self.grid.node_shape + (3,):
            raise ValueError(f"vectors shape {v.shape} does not match grid nodes")
        object.__setattr__(self, "vectors", v)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Per-node scalars on a voxel grid."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.node_shape:
            raise ValueError(f"values shape {v.shape} does not match grid nodes")
        if not np.isfinite(v).all():
            raise ValueError("scalar field contains non-finite values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PoissonParams:
    """Grid depth, padding, CG stopping rule, and isovalue strategy."""

    depth: int = 6
    pad_fraction: float = 0.15
    cg_tolerance: float = 1e-6
    cg_max_iters: int = 3000
    iso_strategy: str = "mean_at_samples"
    iso_value: float = 0.5

    def __post_init__(self):
        if not 4 <= self.depth <= 9:
            raise ValueError(f"depth must be in [4, 9], got {self.depth}")
        if not self.pad_fraction > 0:
            raise ValueError("pad_fraction must be positive")
        if not self.cg_tolerance > 0:
            raise ValueError("cg_tolerance must be positive")
        if self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be >= 1")
        if self.iso_strategy not in ("mean_at_samples", "fixed"):
            raise ValueError(f"unknown iso_strategy {self.iso_strategy!r}")


def grid_from_points(positions, depth, pad_fraction):
    """Cubic grid around the points' bounding box, padded on every side.

    The cube side is the largest bbox extent grown by 2 * pad_fraction, so
    every point lies strictly inside for any positive padding.
    """
    pts = np.asarray(positions, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("cannot build a grid around an empty point set")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ValueError("degenerate point set: bounding box has zero extent")
    side = extent * (1.0 + 2.0 * pad_fraction)
    center = 0.5 * (lo + hi)
    resolution = 2 ** depth
    return VoxelGrid(
        resolution=resolution,
        origin=tuple(center - 0.5 * side),
        cell_size=side / resolution,
    )


def splat_normals(pc, grid):
    """Distribute each point's normal to its 8 surrounding nodes.

    Trilinear weights partition unity, and the field is scaled by
    1 / cell_size so its magnitude does not depend on the grid resolution.
    """
    if pc.normals is None:
        raise ValueError("splatting requires a cloud with normals")
    coords = grid.to_cell_coords(pc.positions)
    res = grid.resolution
    if (coords < 0.0).any() or (coords > res).any():
        raise ValueError("point outside the voxel grid")
    base = np.minimum(np.floor(coords).astype(np.intp), res - 1)
    frac = coords - base

    vectors = np.zeros(grid.node_shape + (3,))
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                w = (wx * wy * wz)[:, None]
                np.add.at(
                    vectors,
                    (base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz),
                    w * pc.normals,
                )
    vectors /= grid.cell_size
    return VectorField(grid, vectors)


def divergence(v):
    """Divergence of a node vector field: central differences in the
    interior, first-order one-sided differences on the boundary."""
    h = v.grid.cell_size
    div = (
        np.gradient(v.vectors[..., 0], h, axis=0, edge_order=1)
        + np.gradient(v.vectors[..., 1], h, axis=1, edge_order=1)
        + np.gradient(v.vectors[..., 2], h, axis=2, edge_order=1)
    )
    return ScalarField(v.grid, div)


def _neg_laplacian(x, h2):
    # -laplacian with zero Dirichlet boundary; x holds interior nodes only.
    n = x.shape[0]
    xp = np.zeros((n + 2, n + 2, n + 2))
    xp[1:-1, 1:-1, 1:-1] = x
    y = 6.0 * x
    y -= xp[:-2, 1:-1, 1:-1]
    y -= xp[2:, 1:-1, 1:-1]
    y -= xp[1:-1, :-2, 1:-1]
    y -= xp[1:-1, 2:, 1:-1]
    y -= xp[1:-1, 1:-1, :-2]
    y -= xp[1:-1, 1:-1, 2:]
    return y / h2

def solve_poisson(rhs, params=PoissonParams(), diagnostics=None):
    """Solve laplacian(chi) = rhs with chi = 0 on the grid boundary.

    Plain conjugate gradient on the SPD negated 7-point Laplacian, run until
    the interior residual drops to cg_tolerance * ||rhs|| (2-norms over
    interior nodes) or cg_max_iters. Pass a dict as ``diagnostics`` to
    receive iterations, final relative residual, and the residual history.
    Raises CgDivergenceError after 50 consecutive residual increases.
    """
    grid = rhs.grid
    h2 = grid.cell_size ** 2
    b = -rhs.values[1:-1, 1:-1, 1:-1]
    b_norm = float(np.sqrt(np.dot(b.ravel(), b.ravel())))
    info = {"iterations": 0, "residual": 0.0, "relative_residual": 0.0, "residual_history": []}

    x = np.zeros_like(b)
    if b_norm > 0.0:
        r = b.copy()
        p = r.copy()
        rs = np.dot(r.ravel(), r.ravel())
        target = params.cg_tolerance * b_norm
        prev_norm = np.sqrt(rs)
        growth_streak = 0
        for it in range(1, params.cg_max_iters + 1):
            ap = _neg_laplacian(p, h2)
            alpha = rs / np.dot(p.ravel(), ap.ravel())
            x += alpha * p
            r -= alpha * ap
            rs_new = np.dot(r.ravel(), r.ravel())
            r_norm = np.sqrt(rs_new)
            info["iterations"] = it
            info["residual"] = float(r_norm)
            info["residual_history"].append(float(r_norm))
            if r_norm > prev_norm:
                growth_streak += 1
                if growth_streak >= 50:
                    info["relative_residual"] = float(r_norm / b_norm)
                    if diagnostics is not None:
                        diagnostics.update(info)
                    raise CgDivergenceError(
                        f"CG residual grew for {growth_streak} consecutive iterations", info
                    )
            else:
                growth_streak = 0
            prev_norm = r_norm
            if r_norm <= target:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        info["relative_residual"] = float(info["residual"] / b_norm)

    chi = np.zeros(grid.node_shape)
    chi[1:-1, 1:-1, 1:-1] = x
    if diagnostics is not None:
        diagnostics.update(info)
    return ScalarField(grid, chi)


def trilinear_sample(field, points):
    """Trilinearly interpolated field values at points inside the grid."""
    grid = field.grid
    coords = grid.to_cell_coords(points)
    res = grid.resolution
    if (coords < 0.0).any() or (coords > res).any():
        raise ValueError("point outside the voxel grid")
    base = np.minimum(np.floor(coords).astype(np.intp), res - 1)
    f = coords - base
    i, j, k = base[:, 0], base[:, 1], base[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    v = field.values
    out = np.zeros(len(coords))
    for dx in (0, 1):
        wx = fx if dx else 1.0 - fx
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dz in (0, 1):
                wz = fz if dz else 1.0 - fz
                out += wx * wy * wz * v[i + dx, j + dy, k + dz]
    return out


def select_isovalue(chi, pc, params=PoissonParams()):
    """Isovalue for extraction: mean of chi at the input samples, or fixed."""
    if params.iso_strategy == "fixed":
        return float(params.iso_value)
    if len(pc) == 0:
        raise ValueError("mean_at_samples isovalue needs a non-empty cloud")
    return float(trilinear_sample(chi, pc.positions).mean())


# Cube corner offsets in Bourke's numbering (x, y, z).
_CORNERS = [
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
]
# Each cube edge as (axis, offset of its lower node within the cell); the
# global key (axis, node) dedups vertices shared between neighboring cells.
_EDGES = [
    (0, (0, 0, 0)), (1, (1, 0, 0)), (0, (0, 1, 0)), (1, (0, 0, 0)),
    (0, (0, 0, 1)), (1, (1, 0, 1)), (0, (0, 1, 1)), (1, (0, 0, 1)),
    (2, (0, 0, 0)), (2, (1, 0, 0)), (2, (1, 1, 0)), (2, (0, 1, 0)),
]


def marching_cubes(chi, isovalue, diagnostics=None):
    """Extract the isovalue surface of a scalar field as a triangle mesh.

    Standard 256-case tables; edge vertices by linear interpolation, merged
    so neighboring cells share them. Triangles are wound so their geometric
    normals point along -grad(chi), i.e. outward when chi is larger inside.
    An isovalue outside the field's range yields an empty mesh.
    """
    values = chi.values
    grid = chi.grid
    if diagnostics is not None:
        diagnostics["empty_isosurface"] = False
    if isovalue < values.min() or isovalue > values.max():
        if diagnostics is not None:
            diagnostics["empty_isosurface"] = True
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))

    below = values < isovalue
    case = np.zeros(tuple(n - 1 for n in values.shape), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(_CORNERS):
        nx, ny, nz = case.shape
        case |= below[dx : dx + nx, dy : dy + ny, dz : dz + nz].astype(np.uint16) << bit

    edge_flags = np.asarray(EDGE_TABLE, dtype=np.uint16)[case]
    active = np.argwhere(edge_flags != 0)

    h = grid.cell_size
    origin = np.array(grid.origin)
    vert_ids = {}
    vertices = []
    triangles = []

    def edge_vertex(cell, edge):
        axis, off = _EDGES[edge]
        node = (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2])
        key = (axis, node)
        vid = vert_ids.get(key)
        if vid is not None:
            return vid
        upper = list(node)
        upper[axis] += 1
        v0 = values[node]
        v1 = values[tuple(upper)]
        t = 0.5 if v1 == v0 else (isovalue - v0) / (v1 - v0)
        pos = origin + np.array(node, dtype=np.float64) * h
        pos[axis] += t * h
        vid = len(vertices)
        vert_ids[key] = vid
        vertices.append(pos)
        return vid

    for cell in map(tuple, active):
        for row_at in range(0, len(TRI_TABLE[case[cell]]), 3):
            e0, e1, e2 = TRI_TABLE[case[cell]][row_at : row_at + 3]
            a = edge_vertex(cell, e0)
            b = edge_vertex(cell, e1)
            c = edge_vertex(cell, e2)
            if a != b and b != c and a != c:
                triangles.append((a, b, c))

    if not vertices:
        if diagnostics is not None:
            diagnostics["empty_isosurface"] = True
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.intp))

    verts = np.array(vertices)
    tris = np.array(triangles, dtype=np.intp).reshape(-1, 3)

    # Drop degenerate slivers created when the surface grazes a grid node.
    e1 = verts[tris[:, 1]] - verts[tris[:, 0]]
    e2 = verts[tris[:, 2]] - verts[tris[:, 0]]
    areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
    tris = tris[areas > 1e-12 * h * h]

    used = np.zeros(len(verts), dtype=bool)
    used[tris.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriangleMesh(verts[used], remap[tris])


def reconstruct(pc, params=PoissonParams(), diagnostics=None):
    """Full reconstruction: grid, splat, divergence, solve, extract.

    Returns (mesh, diagnostics). Camera-facing normals point out of the
    solid, while the indicator grows toward the inside, so the solver's
    right-hand side is the negated divergence of the splatted field.
    """
    if len(pc) == 0:
        raise ValueError("cannot reconstruct from an empty cloud")
    if pc.normals is None:
        raise ValueError("reconstruction requires oriented normals")
    diag = {} if diagnostics is None else diagnostics
    grid = grid_from_points(pc.positions, params.depth, params.pad_fraction)
    vec = splat_normals(pc, grid)
    div = divergence(vec)
    rhs = ScalarField(grid, -div.values)
    chi = solve_poisson(rhs, params, diagnostics=diag)
    isovalue = select_isovalue(chi, pc, params)
    mesh = marching_cubes(chi, isovalue, diagnostics=diag)
    diag.update(
        {
            "grid_resolution": grid.resolution,
            "cell_size": grid.cell_size,
            "isovalue": isovalue,
            "vertices": len(mesh.vertices),
            "triangles": len(mesh.triangles),
        }
    )
    return mesh, diag
