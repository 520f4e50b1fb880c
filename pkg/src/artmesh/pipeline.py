"""End-to-end orchestration: depth fusion through mesh export, and the
similarity evaluation report.

Each reconstruction writes four artifacts into the output directory:
fused_depth.pfm, point_cloud.ply (debug dump with normals), mesh.ply, and
diagnostics.jsonl (one structured record per stage).
"""

import json
import logging
import time

import numpy as np

from . import fusion as fusion_mod
from . import geometry, mesh as mesh_mod, poisson as poisson_mod
from .config import InputError
from .evaluate import load_embeddings, mean_similarity
from .raster import RgbImage, _resize2d, load_depth, load_rgb, write_pfm

__all__ = ["StageError", "run_reconstruct", "run_eval", "format_similarity_table"]

log = logging.getLogger("artmesh")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it for the CLI message."""

    def __init__(self, stage, cause):
        super().__init__(str(cause))
        self.stage = stage

FUSED_DEPTH_NAME = "fused_depth.pfm"
POINT_CLOUD_NAME = "point_cloud.ply"
MESH_NAME = "mesh.ply"
DIAGNOSTICS_NAME = "diagnostics.jsonl"


class _StageRecorder:
    """Collects one JSON record per pipeline stage, with wall time."""

    def __init__(self):
        self.records = []

    def add(self, stage, seconds, **extra):
        record = {"record": "stage", "stage": stage, "seconds": round(seconds, 6), **extra}
        self.records.append(record)
        log.info("stage %-14s %7.3fs %s", stage, seconds, extra if extra else "")

    def dump(self, path, **summary):
        self.records.append({"record": "summary", **summary})
        with open(str(path), "w", encoding="utf-8") as f:
            for record in self.records:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def _resize_rgb(img, width, height):
    if (img.width, img.height) == (width, height):
        return img
    channels = [_resize2d(img.pixels[:, :, c], width, height) for c in range(3)]
    return RgbImage(np.clip(np.stack(channels, axis=2), 0.0, 1.0))


def run_reconstruct(config):
    """Run the full pipeline described by a PipelineConfig.

    Stage order: load, fuse+normalize, back-project, outlier removal,
    normal estimation, Poisson reconstruction, color transfer, trim,
    export. Returns the path of the final mesh.
    """
    config.validate_inputs()
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rec = _StageRecorder()
    t_run = time.perf_counter()
    stage_holder = ["load"]
    try:
        return _run_stages(config, out, rec, t_run, stage_holder)
    except InputError:
        raise
    except Exception as exc:
        raise StageError(stage_holder[0], exc) from exc


def _run_stages(config, out, rec, t_run, stage_holder):
    stage_holder[0] = "load"
    t = time.perf_counter()
    img = load_rgb(config.image)
    d_glpn = load_depth(config.depth_glpn)
    d_da = load_depth(config.depth_da)
    rec.add(
        "load",
        time.perf_counter() - t,
        image=f"{img.width}x{img.height}",
        depth_glpn=f"{d_glpn.width}x{d_glpn.height}",
        depth_da=f"{d_da.width}x{d_da.height}",
    )

    stage_holder[0] = "fusion"
    t = time.perf_counter()
    fused = fusion_mod.fuse_and_normalize(d_glpn, d_da, config.fusion)
    write_pfm(out / FUSED_DEPTH_NAME, fused.values)
    rec.add("fusion", time.perf_counter() - t, size=f"{fused.width}x{fused.height}")

    stage_holder[0] = "back_project"
    t = time.perf_counter()
    img_matched = _resize_rgb(img, fused.width, fused.height)
    camera = config.camera or geometry.default_intrinsics(fused.width, fused.height)
    cloud = geometry.back_project(fused, img_matched, camera)
    rec.add("back_project", time.perf_counter() - t, points=len(cloud))

    stage_holder[0] = "outliers"
    t = time.perf_counter()
    cloud, removed = geometry.remove_statistical_outliers(cloud, config.outliers)
    rec.add("outliers", time.perf_counter() - t, removed=len(removed), points=len(cloud))

    stage_holder[0] = "normals"
    t = time.perf_counter()
    diag_normals = {}
    cloud = geometry.estimate_normals(cloud, config.normals_k, diagnostics=diag_normals)
    geometry.write_point_cloud_ply(cloud, out / POINT_CLOUD_NAME)
    rec.add("normals", time.perf_counter() - t, **diag_normals)

    stage_holder[0] = "poisson"
    t = time.perf_counter()
    diag_poisson = {}
    raw_mesh, _ = poisson_mod.reconstruct(cloud, config.poisson, diagnostics=diag_poisson)
    stats_before = mesh_mod.mesh_stats(raw_mesh)
    rec.add(
        "poisson",
        time.perf_counter() - t,
        cg_iterations=diag_poisson["iterations"],
        cg_relative_residual=diag_poisson["relative_residual"],
        isovalue=diag_poisson["isovalue"],
        vertices=stats_before.vertex_count,
        triangles=stats_before.triangle_count,
        boundary_edges=stats_before.boundary_edge_count,
    )

    stage_holder[0] = "colors"
    t = time.perf_counter()
    colored = mesh_mod.transfer_colors(raw_mesh, cloud)
    rec.add("colors", time.perf_counter() - t)

    stage_holder[0] = "trim"
    t = time.perf_counter()
    radius = config.trim_radius_cells * diag_poisson["cell_size"]
    trimmed = mesh_mod.trim_low_support(colored, cloud, radius, config.trim_min_count)
    rec.add(
        "trim",
        time.perf_counter() - t,
        radius=radius,
        vertices_removed=stats_before.vertex_count - len(trimmed.vertices),
        vertices=len(trimmed.vertices),
        triangles=len(trimmed.triangles),
    )

    stage_holder[0] = "export"
    t = time.perf_counter()
    mesh_path = out / MESH_NAME
    mesh_mod.write_ply(trimmed, mesh_path, format=config.export_format)
    rec.add("export", time.perf_counter() - t, path=str(mesh_path), format=config.export_format)

    rec.dump(
        out / DIAGNOSTICS_NAME,
        seconds=round(time.perf_counter() - t_run, 6),
        watertight_before_trim=stats_before.watertight,
        mesh=str(mesh_path),
    )
    return mesh_path


def _pair_by_label(artworks, renders, method):
    art_by_label = {e.label: e for e in artworks}
    ren_by_label = {e.label: e for e in renders}
    if len(art_by_label) != len(artworks):
        raise InputError("duplicate labels in artwork embeddings")
    missing = [l for l in art_by_label if l not in ren_by_label]
    extra = [l for l in ren_by_label if l not in art_by_label]
    if missing or extra:
        raise InputError(
            f"label mismatch for method {method!r}: "
            f"missing renders for {missing or 'none'}, unmatched renders {extra or 'none'}"
        )
    return [(e, ren_by_label[e.label]) for e in artworks]


def run_eval(config):
    """Score every artwork/render pair per method and write the report table.

    Returns {method: SimilarityReport}, ordered as configured.
    """
    config.validate_inputs()
    artworks = load_embeddings(config.artworks)
    reports = {}
    for method, path in config.renders:
        renders = load_embeddings(path)
        pairs = _pair_by_label(artworks, renders, method)
        reports[method] = mean_similarity(pairs)
    table = format_similarity_table(reports)
    config.report.parent.mkdir(parents=True, exist_ok=True)
    config.report.write_text(table, encoding="utf-8")
    return reports


def format_similarity_table(reports):
    """Artwork x method score table with a trailing mean row."""
    methods = list(reports)
    if not methods:
        raise ValueError("no similarity reports to format")
    labels = reports[methods[0]].labels
    for method in methods[1:]:
        if reports[method].labels != labels:
            raise InputError("reports disagree on artwork labels")
    name_w = max(len("Artwork"), len("Mean"), *(len(l) for l in labels))
    col_ws = [max(len(m), 6) for m in methods]
    header = "  ".join(["Artwork".ljust(name_w)] + [m.rjust(w) for m, w in zip(methods, col_ws)])
    rows = [header]
    for i, label in enumerate(labels):
        cells = [f"{reports[m].scores[i]:.4f}".rjust(w) for m, w in zip(methods, col_ws)]
        rows.append("  ".join([label.ljust(name_w)] + cells))
    mean_cells = [f"{reports[m].mean:.4f}".rjust(w) for m, w in zip(methods, col_ws)]
    rows.append("  ".join(["Mean".ljust(name_w)] + mean_cells))
    return "\n".join(rows) + "\n"
