"""Triangle meshes: cleanup, vertex colors, statistics, and PLY export.

The trimming step replaces manual background removal: reconstruction closes
the open single-view surface with a bubble that has no supporting points, so
vertices without nearby cloud samples are cut away and only the largest
connected component survives.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import _fmt_f32, knn_indices

__all__ = [
    "TriangleMesh",
    "MeshStats",
    "transfer_colors",
    "trim_low_support",
    "write_ply",
    "read_ply",
    "mesh_stats",
]


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle set with optional per-vertex colors in [0, 1]."""

    vertices: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray = None

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        tris = np.array(self.triangles, dtype=np.intp, copy=True).reshape(-1, 3)
        if not np.isfinite(verts).all():
            raise ValueError("mesh vertices contain non-finite values")
        if tris.size:
            if tris.min() < 0 or tris.max() >= len(verts):
                raise ValueError("triangle index out of range")
            if (
                (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
            ).any():
                raise ValueError("triangle repeats a vertex")
        verts.flags.writeable = False
        tris.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if self.colors is not None:
            cols = np.array(self.colors, dtype=np.float64, copy=True).reshape(-1, 3)
            if cols.shape != verts.shape:
                raise ValueError("colors must parallel vertices")
            if cols.size and (cols.min() < 0.0 or cols.max() > 1.0):
                raise ValueError("colors must lie in [0, 1]")
            cols.flags.writeable = False
            object.__setattr__(self, "colors", cols)


@dataclass(frozen=True)
class MeshStats:
    vertex_count: int
    triangle_count: int
    boundary_edge_count: int
    component_count: int
    bbox_min: tuple
    bbox_max: tuple

    @property
    def watertight(self):
        return self.boundary_edge_count == 0


def transfer_colors(mesh, pc):
    """Color each vertex from its nearest cloud point (ties by lower index).

    Nearest-neighbor lookup rather than blending: paintings have hard color
    edges and averaging would bleed across them.
    """
    if pc.colors is None:
        raise ValueError("color transfer requires a cloud with colors")
    if len(mesh.vertices) == 0:
        return TriangleMesh(mesh.vertices, mesh.triangles, np.zeros((0, 3)))
    nearest = knn_indices(pc.positions, 1, queries=mesh.vertices)[:, 0]
    return TriangleMesh(mesh.vertices, mesh.triangles, pc.colors[nearest])


def _vertex_components(n_vertices, triangles):
    # Union-find over vertices connected by triangle edges.
    parent = np.arange(n_vertices, dtype=np.intp)

    def find(a):
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for a, b, c in triangles:
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[rc] = find(ra)
    return np.array([find(i) for i in range(n_vertices)], dtype=np.intp)


def trim_low_support(mesh, pc, radius, min_count):
    """Remove vertices with fewer than min_count cloud points within radius,
    then keep only the largest connected component.

    Component size is counted in vertices; ties go to the component holding
    the smallest vertex index. Raises when nothing survives.
    """
    if not radius > 0:
        raise ValueError("trim radius must be positive")
    n = len(mesh.vertices)
    if n == 0:
        raise ValueError("trimming removed everything: mesh was already empty")
    if min_count > 0:
        counts = cKDTree(pc.positions).query_ball_point(
            mesh.vertices, r=radius, return_length=True
        )
        keep_vertex = counts >= min_count
    else:
        keep_vertex = np.ones(n, dtype=bool)

    tris = mesh.triangles
    keep_tri = keep_vertex[tris].all(axis=1)
    survivors = tris[keep_tri]
    if len(survivors) == 0:
        raise ValueError(
            f"trimming removed everything: {int(keep_vertex.sum())}/{n} vertices supported, "
            f"0/{len(tris)} triangles survived"
        )

    roots = _vertex_components(n, survivors)
    referenced = np.zeros(n, dtype=bool)
    referenced[survivors.ravel()] = True
    ref_idx = np.flatnonzero(referenced)
    sizes = np.bincount(roots[ref_idx], minlength=n)
    best = sizes.max()
    # Ties resolved by the component containing the smallest vertex index:
    # ref_idx ascends, so the first hit wins.
    best_root = roots[ref_idx[sizes[roots[ref_idx]] == best][0]]

    keep_final = referenced & (roots == best_root)
    remap = np.cumsum(keep_final) - 1
    kept_tris = survivors[keep_final[survivors].all(axis=1)]
    return TriangleMesh(
        mesh.vertices[keep_final],
        remap[kept_tris],
        None if mesh.colors is None else mesh.colors[keep_final],
    )


_HEADER_ASCII = "format ascii 1.0"
_HEADER_BINARY = "format binary_little_endian 1.0"


def _color_bytes(mesh):
    if mesh.colors is None:
        return np.full((len(mesh.vertices), 3), 255, dtype=np.uint8)
    return np.clip(np.rint(mesh.colors * 255.0), 0, 255).astype(np.uint8)


def write_ply(mesh, path, format="binary_le"):
    """Write the mesh as PLY: vertices (float32 xyz + uchar rgb) then faces.

    The writer is canonical: identical meshes produce byte-identical files.
    Colorless meshes are written white.
    """
    if format not in ("ascii", "binary_le"):
        raise ValueError(f"unknown PLY format {format!r}")
    n_v = len(mesh.vertices)
    n_f = len(mesh.triangles)
    header = [
        "ply",
        _HEADER_ASCII if format == "ascii" else _HEADER_BINARY,
        f"element vertex {n_v}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {n_f}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    rgb = _color_bytes(mesh)
    verts32 = mesh.vertices.astype(np.float32)
    with open(str(path), "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if format == "ascii":
            lines = []
            for i in range(n_v):
                x, y, z = verts32[i]
                lines.append(
                    f"{_fmt_f32(x)} {_fmt_f32(y)} {_fmt_f32(z)} "
                    f"{rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]}"
                )
            for tri in mesh.triangles:
                lines.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
            if lines:
                f.write(("\n".join(lines) + "\n").encode("ascii"))
        else:
            vdt = np.dtype([("xyz", "<f4", 3), ("rgb", "u1", 3)])
            vbuf = np.empty(n_v, dtype=vdt)
            vbuf["xyz"] = verts32
            vbuf["rgb"] = rgb
            f.write(vbuf.tobytes())
            fdt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
            fbuf = np.empty(n_f, dtype=fdt)
            fbuf["n"] = 3
            fbuf["idx"] = mesh.triangles.astype(np.int32)
            f.write(fbuf.tobytes())


_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}


def _parse_ply_header(f, path):
    if f.readline().strip() != b"ply":
        raise ValueError(f"not a PLY file: {path}")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) or ('list', count_dt, item_dt, name)])
    while True:
        line = f.readline()
        if not line:
            raise ValueError(f"PLY header without end_header: {path}")
        tokens = line.decode("ascii", "replace").strip().split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] == "ascii":
                fmt = "ascii"
            elif tokens[1] == "binary_little_endian":
                fmt = "binary_le"
            else:
                raise ValueError(f"unsupported PLY format {tokens[1]!r}: {path}")
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ValueError(f"property before any element: {path}")
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                elements[-1][2].append((tokens[2], tokens[1]))
        elif tokens[0] == "end_header":
            break
    if fmt is None:
        raise ValueError(f"PLY header missing format line: {path}")
    return fmt, elements


def _read_vertices(f, fmt, count, props, path):
    names = [p[0] for p in props]
    if any(p[0] == "list" for p in props):
        raise ValueError(f"list property on vertex element not supported: {path}")
    for need in ("x", "y", "z"):
        if need not in names:
            raise ValueError(f"vertex element missing property {need!r}: {path}")
    has_color = all(c in names for c in ("red", "green", "blue"))
    if fmt == "ascii":
        rows = []
        for i in range(count):
            line = f.readline()
            if not line:
                raise ValueError(f"truncated PLY body in element vertex: {path}")
            parts = line.decode("ascii").split()
            if len(parts) != len(props):
                raise ValueError(f"vertex row {i} has {len(parts)} fields: {path}")
            rows.append([float(p) for p in parts])
        table = np.array(rows, dtype=np.float64).reshape(count, len(props))
        get = lambda name: table[:, names.index(name)]
    else:
        dt = np.dtype([(f"p{i}", _PLY_SCALARS[t]) for i, (_, t) in enumerate(props)])
        buf = f.read(dt.itemsize * count)
        if len(buf) != dt.itemsize * count:
            raise ValueError(f"truncated PLY body in element vertex: {path}")
        table = np.frombuffer(buf, dtype=dt)
        get = lambda name: table[f"p{names.index(name)}"].astype(np.float64)
    verts = np.stack([get("x"), get("y"), get("z")], axis=1)
    colors = None
    if has_color:
        colors = np.stack([get("red"), get("green"), get("blue")], axis=1) / 255.0
    return verts, colors


def _read_faces(f, fmt, count, props, path):
    if len(props) != 1 or props[0][0] != "list":
        raise ValueError(f"face element must have a single list property: {path}")
    _, count_t, item_t, _name = props[0]
    count_dt = np.dtype(_PLY_SCALARS[count_t])
    item_dt = np.dtype(_PLY_SCALARS[item_t])
    if fmt == "ascii":
        tris = np.empty((count, 3), dtype=np.int64)
        for i in range(count):
            line = f.readline()
            if not line:
                raise ValueError(f"truncated PLY body in element face: {path}")
            parts = line.decode("ascii").split()
            if int(parts[0]) != 3:
                raise ValueError(f"only triangular faces supported, face {i} has {parts[0]}")
            tris[i] = [int(p) for p in parts[1:4]]
        return tris
    row = count_dt.itemsize + 3 * item_dt.itemsize
    buf = f.read()
    if len(buf) < row * count:
        raise ValueError(f"truncated PLY body in element face: {path}")
    dt = np.dtype([("n", count_dt), ("idx", item_dt, 3)])
    table = np.frombuffer(buf[: row * count], dtype=dt)
    if not (table["n"] == 3).all():
        # Reparse sequentially to name the offender (counts may be variable).
        off = 0
        for i in range(count):
            k = int(np.frombuffer(buf[off : off + count_dt.itemsize], dtype=count_dt)[0])
            if k != 3:
                raise ValueError(f"only triangular faces supported, face {i} has {k}")
            off += count_dt.itemsize + k * item_dt.itemsize
    return table["idx"].astype(np.int64)


def read_ply(path):
    """Read ascii or binary_little_endian PLY; unknown vertex scalar
    properties are skipped, colors are picked up when present."""
    with open(str(path), "rb") as f:
        fmt, elements = _parse_ply_header(f, path)
        verts = np.zeros((0, 3))
        colors = None
        tris = np.zeros((0, 3), dtype=np.int64)
        for name, count, props in elements:
            if name == "vertex":
                verts, colors = _read_vertices(f, fmt, count, props, path)
            elif name == "face":
                tris = _read_faces(f, fmt, count, props, path)
            else:
                raise ValueError(f"unsupported PLY element {name!r}: {path}")
    return TriangleMesh(verts, tris, colors)


def mesh_stats(mesh):
    """Counts, boundary edges, connected components, and bounding box.

    The mesh is watertight exactly when no edge belongs to a single triangle.
    Components are counted over vertices referenced by triangles.
    """
    n_v = len(mesh.vertices)
    tris = mesh.triangles
    if len(tris):
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        boundary = int((counts == 1).sum())
        roots = _vertex_components(n_v, tris)
        referenced = np.zeros(n_v, dtype=bool)
        referenced[tris.ravel()] = True
        components = len(np.unique(roots[referenced]))
    else:
        boundary = 0
        components = 0
    if n_v:
        bbox_min = tuple(mesh.vertices.min(axis=0))
        bbox_max = tuple(mesh.vertices.max(axis=0))
    else:
        bbox_min = bbox_max = (0.0, 0.0, 0.0)
    return MeshStats(
        vertex_count=n_v,
        triangle_count=len(tris),
        boundary_edge_count=boundary,
        component_count=components,
        bbox_min=bbox_min,
        bbox_max=bbox_max,
    )
