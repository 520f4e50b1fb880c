"""Pipeline configuration: a flat plain-text file of dotted keys.

Syntax: one ``key = value`` per line, ``#`` comments, blank lines ignored.
Every key can be overridden from the command line. Relative paths are
resolved against the run's working directory.
"""

from dataclasses import dataclass
from pathlib import Path

from .fusion import FusionParams
from .geometry import CameraIntrinsics, OutlierParams
from .poisson import PoissonParams

__all__ = [
    "InputError",
    "PipelineConfig",
    "EvalConfig",
    "parse_config_text",
    "build_pipeline_config",
    "build_eval_config",
    "DEFAULTS",
]


class InputError(ValueError):
    """Bad configuration or missing input files; maps to the 'input error' exit."""


DEFAULTS = {
    "fusion.alpha": "0.97",
    "fusion.d_min": "0.6",
    "fusion.d_max": "1.0",
    "outliers.k": "20",
    "outliers.std_ratio": "2.0",
    "normals.k": "20",
    "poisson.depth": "6",
    "poisson.pad_fraction": "0.15",
    "poisson.cg_tolerance": "1e-6",
    "poisson.cg_max_iters": "3000",
    "poisson.iso_strategy": "mean_at_samples",
    "poisson.iso_value": "0.5",
    "trim.radius_cells": "2.0",
    "trim.min_count": "1",
    "export.format": "binary_le",
}

_RECONSTRUCT_KEYS = set(DEFAULTS) | {
    "input.image",
    "input.depth_glpn",
    "input.depth_da",
    "output.dir",
    "camera.fx",
    "camera.fy",
    "camera.cx",
    "camera.cy",
}


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a flat dict of strings."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise InputError(f"{source}:{lineno}: empty key or value")
        values[key] = value
    return values


def _coerce(values, key, kind):
    raw = values[key]
    try:
        return kind(raw)
    except ValueError:
        raise InputError(f"config key {key} = {raw!r} is not a valid {kind.__name__}") from None


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved, validated parameters for one reconstruction run."""

    image: Path
    depth_glpn: Path
    depth_da: Path
    output_dir: Path
    fusion: FusionParams
    camera: CameraIntrinsics  # None selects the unknown-camera default
    outliers: OutlierParams
    normals_k: int
    poisson: PoissonParams
    trim_radius_cells: float
    trim_min_count: int
    export_format: str

    def validate_inputs(self):
        missing = [str(p) for p in (self.image, self.depth_glpn, self.depth_da) if not p.is_file()]
        if missing:
            raise InputError("missing input files: " + ", ".join(missing))


@dataclass(frozen=True)
class EvalConfig:
    """Embedding files for the artworks and for each method's renders."""

    artworks: Path
    renders: tuple  # ((method_name, Path), ...) in declaration order
    report: Path

    def validate_inputs(self):
        missing = [str(p) for p in [self.artworks] + [p for _, p in self.renders] if not p.is_file()]
        if missing:
            raise InputError("missing embedding files: " + ", ".join(missing))


def _resolve(workdir, raw):
    p = Path(raw)
    return p if p.is_absolute() else Path(workdir) / p


def build_pipeline_config(values, workdir="."):
    """Build a PipelineConfig from a flat key dict, applying defaults.

    Unknown keys are rejected so typos cannot silently fall back to
    defaults. Camera intrinsics must be given in full or not at all.
    """
    values = {**DEFAULTS, **values}
    unknown = set(values) - _RECONSTRUCT_KEYS
    if unknown:
        raise InputError("unknown config keys: " + ", ".join(sorted(unknown)))
    for required in ("input.image", "input.depth_glpn", "input.depth_da", "output.dir"):
        if required not in values:
            raise InputError(f"config key {required} is required")

    camera_keys = [k for k in ("camera.fx", "camera.fy", "camera.cx", "camera.cy") if k in values]
    if camera_keys and len(camera_keys) != 4:
        raise InputError("camera intrinsics need all of camera.fx/fy/cx/cy or none")
    try:
        camera = (
            CameraIntrinsics(
                fx=_coerce(values, "camera.fx", float),
                fy=_coerce(values, "camera.fy", float),
                cx=_coerce(values, "camera.cx", float),
                cy=_coerce(values, "camera.cy", float),
            )
            if camera_keys
            else None
        )
        fusion = FusionParams(
            alpha=_coerce(values, "fusion.alpha", float),
            d_min=_coerce(values, "fusion.d_min", float),
            d_max=_coerce(values, "fusion.d_max", float),
        )
        outliers = OutlierParams(
            k_neighbors=_coerce(values, "outliers.k", int),
            std_ratio=_coerce(values, "outliers.std_ratio", float),
        )
        poisson = PoissonParams(
            depth=_coerce(values, "poisson.depth", int),
            pad_fraction=_coerce(values, "poisson.pad_fraction", float),
            cg_tolerance=_coerce(values, "poisson.cg_tolerance", float),
            cg_max_iters=_coerce(values, "poisson.cg_max_iters", int),
            iso_strategy=values["poisson.iso_strategy"],
            iso_value=_coerce(values, "poisson.iso_value", float),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None

    normals_k = _coerce(values, "normals.k", int)
    trim_radius = _coerce(values, "trim.radius_cells", float)
    trim_min_count = _coerce(values, "trim.min_count", int)
    export_format = values["export.format"]
    if export_format not in ("binary_le", "ascii"):
        raise InputError(f"export.format must be binary_le or ascii, got {export_format!r}")
    if normals_k < 3:
        raise InputError("normals.k must be >= 3")
    if trim_radius <= 0:
        raise InputError("trim.radius_cells must be positive")
    if trim_min_count < 0:
        raise InputError("trim.min_count must be >= 0")

    return PipelineConfig(
        image=_resolve(workdir, values["input.image"]),
        depth_glpn=_resolve(workdir, values["input.depth_glpn"]),
        depth_da=_resolve(workdir, values["input.depth_da"]),
        output_dir=_resolve(workdir, values["output.dir"]),
        fusion=fusion,
        camera=camera,
        outliers=outliers,
        normals_k=normals_k,
        poisson=poisson,
        trim_radius_cells=trim_radius,
        trim_min_count=trim_min_count,
        export_format=export_format,
    )


def build_eval_config(values, workdir="."):
    """Build an EvalConfig from keys eval.artworks, eval.render.<method>,
    and eval.report."""
    if "eval.artworks" not in values:
        raise InputError("config key eval.artworks is required")
    renders = []
    for key, raw in values.items():
        if key.startswith("eval.render."):
            method = key[len("eval.render.") :]
            if not method:
                raise InputError("eval.render. key is missing a method name")
            renders.append((method, _resolve(workdir, raw)))
        elif key not in ("eval.artworks", "eval.report"):
            raise InputError(f"unknown eval config key: {key}")
    if not renders:
        raise InputError("at least one eval.render.<method> key is required")
    return EvalConfig(
        artworks=_resolve(workdir, values["eval.artworks"]),
        renders=tuple(renders),
        report=_resolve(workdir, values.get("eval.report", "similarity_report.txt")),
    )


def config_echo(config):
    """Render a config back to stable 'key = value' lines (for --dry-run)."""
    if isinstance(config, EvalConfig):
        lines = [f"eval.artworks = {config.artworks}"]
        lines += [f"eval.render.{m} = {p}" for m, p in config.renders]
        lines.append(f"eval.report = {config.report}")
        return "\n".join(lines)
    c = config
    lines = [
        f"input.image = {c.image}",
        f"input.depth_glpn = {c.depth_glpn}",
        f"input.depth_da = {c.depth_da}",
        f"output.dir = {c.output_dir}",
        f"fusion.alpha = {c.fusion.alpha}",
        f"fusion.d_min = {c.fusion.d_min}",
        f"fusion.d_max = {c.fusion.d_max}",
    ]
    if c.camera is not None:
        lines += [
            f"camera.fx = {c.camera.fx}",
            f"camera.fy = {c.camera.fy}",
            f"camera.cx = {c.camera.cx}",
            f"camera.cy = {c.camera.cy}",
        ]
    lines += [
        f"outliers.k = {c.outliers.k_neighbors}",
        f"outliers.std_ratio = {c.outliers.std_ratio}",
        f"normals.k = {c.normals_k}",
        f"poisson.depth = {c.poisson.depth}",
        f"poisson.pad_fraction = {c.poisson.pad_fraction}",
        f"poisson.cg_tolerance = {c.poisson.cg_tolerance}",
        f"poisson.cg_max_iters = {c.poisson.cg_max_iters}",
        f"poisson.iso_strategy = {c.poisson.iso_strategy}",
        f"poisson.iso_value = {c.poisson.iso_value}",
        f"trim.radius_cells = {c.trim_radius_cells}",
        f"trim.min_count = {c.trim_min_count}",
        f"export.format = {c.export_format}",
    ]
    return "\n".join(lines)
