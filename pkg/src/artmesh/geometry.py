"""Depth-map back-projection and point-cloud processing.

A pinhole camera lifts each pixel of the normalized depth map to a colored
3D point; statistical outlier removal and PCA normal estimation then prepare
the cloud for surface reconstruction. All neighbor queries run through one
k-NN routine whose results are exact and deterministic: ties are broken by
lower point index, matching a brute-force scan.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "CameraIntrinsics",
    "PointCloud",
    "OutlierParams",
    "default_intrinsics",
    "back_project",
    "project",
    "knn_indices",
    "remove_statistical_outliers",
    "estimate_normals",
    "write_point_cloud_ply",
]

_NORMAL_TOL = 1e-4
_QUERY_BLOCK = 65536


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")


def default_intrinsics(width, height):
    """Unknown-camera convention: fx = fy = max(W, H), principal point at the center."""
    f = float(max(width, height))
    return CameraIntrinsics(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points with optional per-point colors in [0, 1] and unit normals."""

    positions: np.ndarray
    colors: np.ndarray = None
    normals: np.ndarray = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64, copy=True)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must be an (N, 3) array")
        if not np.isfinite(pos).all():
            raise ValueError("positions contain non-finite values")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        for name in ("colors", "normals"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=np.float64, copy=True)
            if arr.shape != pos.shape:
                raise ValueError(f"{name} must parallel positions, got {arr.shape}")
            if name == "colors" and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ValueError("colors must lie in [0, 1]")
            if name == "normals":
                norms = np.linalg.norm(arr, axis=1)
                if np.abs(norms - 1.0).max() > _NORMAL_TOL:
                    raise ValueError("normals must have unit length within 1e-4")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class OutlierParams:
    """Neighborhood size and cutoff width for statistical outlier removal."""

    k_neighbors: int = 20
    std_ratio: float = 2.0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not self.std_ratio > 0:
            raise ValueError("std_ratio must be positive")


def back_project(d, img, cam):
    """Lift every pixel (u, v) with depth D to (X, Y, Z) via the pinhole model.

    X = (u - cx) * D / fx, Y = (v - cy) * D / fy, Z = D; the point takes the
    pixel's color. Points are emitted in row-major pixel order.
    """
    if (d.width, d.height) != (img.width, img.height):
        raise ValueError(
            f"depth {d.width}x{d.height} and image {img.width}x{img.height} differ in size"
        )
    depth = d.values
    u = np.arange(d.width, dtype=np.float64)[None, :]
    v = np.arange(d.height, dtype=np.float64)[:, None]
    x = (u - cam.cx) * depth / cam.fx
    y = (v - cam.cy) * depth / cam.fy
    positions = np.stack([x.ravel(), y.ravel(), depth.ravel()], axis=1)
    colors = img.pixels.reshape(-1, 3)
    return PointCloud(positions, colors=colors)


def project(p, cam):
    """Map 3D points back to (u, v, depth); the inverse of back_project.

    Accepts a single 3-vector or an (N, 3) array. Z must be positive.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise ValueError("cannot project points with non-positive Z")
    u = cam.fx * pts[:, 0] / z + cam.cx
    v = cam.fy * pts[:, 1] / z + cam.cy
    if single:
        return u[0], v[0], z[0]
    return u, v, z.copy()


def _squared_dists(a, b):
    # Fixed evaluation order (x + y) + z so results are reproducible and
    # comparable against a scalar reference.
    d = a - b
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def knn_indices(points, k, queries=None, tree=None):
    """Indices of the k nearest points for each query, ties by lower index.

    With queries=None each point queries the cloud it belongs to and its own
    index is excluded. The kd-tree accelerates the search; candidates are
    re-ranked by (squared distance, index) and the candidate window grows
    until the k-th neighbor provably precedes every unseen point, so the
    result matches an exhaustive scan exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    self_query = queries is None
    if self_query:
        queries = points
        if k >= n:
            raise ValueError(f"k={k} needs more than k points, have {n}")
    elif k > n:
        raise ValueError(f"k={k} exceeds cloud size {n}")
    queries = np.asarray(queries, dtype=np.float64)
    if tree is None:
        tree = cKDTree(points)

    out = np.empty((queries.shape[0], k), dtype=np.intp)
    for start in range(0, queries.shape[0], _QUERY_BLOCK):
        block = queries[start : start + _QUERY_BLOCK]
        out[start : start + _QUERY_BLOCK] = _knn_block(
            tree, points, block, k, start if self_query else None
        )
    return out


def _knn_block(tree, points, queries, k, self_offset):
    n = points.shape[0]
    nq = queries.shape[0]
    m = min(n, k + (1 if self_offset is not None else 0) + 16)
    pending = np.arange(nq)
    result = np.empty((nq, k), dtype=np.intp)
    while True:
        q = queries[pending]
        _, idx = tree.query(q, k=m, workers=-1)
        idx = idx.reshape(len(pending), m)
        d2 = _squared_dists(points[idx], q[:, None, :])
        # Any point absent from the candidate window is at least this far.
        horizon = d2.max(axis=1)
        if self_offset is not None:
            self_idx = (self_offset + pending)[:, None]
            mask = idx == self_idx
            d2 = np.where(mask, np.inf, d2)
            idx = np.where(mask, n, idx)
        order = np.lexsort((idx, d2), axis=1)[:, :k]
        rows = np.arange(len(pending))[:, None]
        sel_idx = idx[rows, order]
        sel_d2 = d2[rows, order]
        done = (sel_d2[:, -1] < horizon) | (m >= n)
        result[pending[done]] = sel_idx[done]
        if done.all():
            return result
        pending = pending[~done]
        m = min(n, 2 * m)


def remove_statistical_outliers(pc, params=OutlierParams()):
    """Drop points whose mean k-NN distance exceeds mean + std_ratio * std.

    The mean/std are taken over all per-point mean distances (population
    std). Returns the filtered cloud and the removed indices; survivor order
    is preserved and colors/normals are filtered along.
    """
    n = len(pc)
    if n <= params.k_neighbors:
        raise ValueError(f"need more than k_neighbors={params.k_neighbors} points, have {n}")
    idx = knn_indices(pc.positions, params.k_neighbors)
    d2 = _squared_dists(pc.positions[idx], pc.positions[:, None, :])
    mean_dists = np.sqrt(d2).mean(axis=1)
    mu = mean_dists.mean()
    sigma = mean_dists.std()
    keep = mean_dists <= mu + params.std_ratio * sigma
    removed = np.flatnonzero(~keep)
    filtered = PointCloud(
        pc.positions[keep],
        colors=None if pc.colors is None else pc.colors[keep],
        normals=None if pc.normals is None else pc.normals[keep],
    )
    return filtered, removed


def estimate_normals(pc, k_neighbors, diagnostics=None):
    """Attach unit normals from a PCA plane fit of each point's neighborhood.

    The neighborhood is the point plus its k nearest neighbors; the normal is
    the eigenvector of the covariance's smallest eigenvalue, flipped to face
    the camera at the origin (n . p <= 0). Collinear neighborhoods have no
    plane: those points fall back to the unit vector toward the origin and
    are counted in diagnostics['degenerate_normals'] when a dict is passed.
    """
    n = len(pc)
    if k_neighbors < 3:
        raise ValueError("normal estimation needs k_neighbors >= 3")
    if n <= k_neighbors:
        raise ValueError(f"need more than k_neighbors={k_neighbors} points, have {n}")
    idx = knn_indices(pc.positions, k_neighbors)
    hoods = np.concatenate([pc.positions[:, None, :], pc.positions[idx]], axis=1)
    centered = hoods - hoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]

    # Rank < 2 covariance (collinear or coincident neighborhood) leaves the
    # plane normal undefined.
    degenerate = eigvals[:, 1] <= 1e-12 * np.maximum(eigvals[:, 2], 1e-300)
    if degenerate.any():
        p = pc.positions[degenerate]
        lengths = np.linalg.norm(p, axis=1, keepdims=True)
        fallback = np.where(lengths > 0.0, -p / np.maximum(lengths, 1e-300), [[0.0, 0.0, -1.0]])
        normals[degenerate] = fallback
    if diagnostics is not None:
        diagnostics["degenerate_normals"] = int(degenerate.sum())

    dots = np.einsum("ij,ij->i", normals, pc.positions)
    flip = (dots > 0.0) | ((dots == 0.0) & (normals[:, 2] > 0.0))
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pc.positions, colors=pc.colors, normals=normals)


def _fmt_f32(x):
    # Shortest decimal string that round-trips the float32 value.
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


def write_point_cloud_ply(pc, path):
    """Debug dump: ASCII PLY with positions, uchar colors, and normals.

    Missing colors default to white, missing normals to the zero vector.
    """
    n = len(pc)
    colors = pc.colors if pc.colors is not None else np.ones((n, 3))
    rgb = np.clip(np.rint(colors * 255.0), 0, 255).astype(np.uint8)
    normals = pc.normals if pc.normals is not None else np.zeros((n, 3))
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property float nx",
        "property float ny",
        "property float nz",
        "end_header",
    ]
    for i in range(n):
        p = pc.positions[i]
        nn = normals[i]
        lines.append(
            f"{_fmt_f32(p[0])} {_fmt_f32(p[1])} {_fmt_f32(p[2])} "
            f"{rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]} "
            f"{_fmt_f32(nn[0])} {_fmt_f32(nn[1])} {_fmt_f32(nn[2])}"
        )
    with open(str(path), "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
