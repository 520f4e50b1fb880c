"""Command-line entry point.

Subcommands: reconstruct (image + two depth maps -> colored mesh), eval
(similarity report from embedding files), inspect (mesh statistics),
version. Every config key has a mirroring --key flag that overrides the
config file; all relative paths resolve against --workdir.

Exit codes: 0 success, 2 input/config error, 1 stage failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import (
    DEFAULTS,
    InputError,
    build_eval_config,
    build_pipeline_config,
    config_echo,
    parse_config_text,
)
from .mesh import mesh_stats, read_ply
from .pipeline import format_similarity_table, run_eval, run_reconstruct

EXIT_OK = 0
EXIT_STAGE_ERROR = 1
EXIT_INPUT_ERROR = 2

_RECONSTRUCT_FLAG_KEYS = sorted(DEFAULTS) + [
    "input.image",
    "input.depth_glpn",
    "input.depth_da",
    "output.dir",
    "camera.fx",
    "camera.fy",
    "camera.cx",
    "camera.cy",
]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="artmesh",
        description="Reconstruct a colored 3D mesh of an artwork from one "
        "image and two relative depth maps, and evaluate semantic consistency.",
    )
    parser.add_argument(
        "--workdir", default=".", help="base directory for all relative paths (default: .)"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    rec = sub.add_parser("reconstruct", help="run the full reconstruction pipeline")
    rec.add_argument("--config", help="config file of 'key = value' lines")
    rec.add_argument(
        "--dry-run", action="store_true", help="validate and echo the config, run nothing"
    )
    for key in _RECONSTRUCT_FLAG_KEYS:
        rec.add_argument(f"--{key}", dest=key, metavar="VALUE", help=argparse.SUPPRESS)

    ev = sub.add_parser("eval", help="similarity report from embedding files")
    ev.add_argument("--config", help="config file holding eval.* keys")
    ev.add_argument("--artworks", help="override eval.artworks")
    ev.add_argument(
        "--render",
        action="append",
        default=[],
        metavar="METHOD=PATH",
        help="render embeddings for one method (repeatable); overrides eval.render.*",
    )
    ev.add_argument("--report", help="override eval.report output path")

    ins = sub.add_parser("inspect", help="print statistics of a PLY mesh")
    ins.add_argument("mesh", help="PLY file to inspect")

    sub.add_parser("version", help="print the package version")
    return parser


def _load_config_values(args):
    if args.config:
        path = Path(args.config)
        if not path.is_absolute():
            path = Path(args.workdir) / path
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        return parse_config_text(path.read_text(encoding="utf-8"), source=str(path))
    return {}


def _cmd_reconstruct(args):
    values = _load_config_values(args)
    for key in _RECONSTRUCT_FLAG_KEYS:
        override = vars(args).get(key)
        if override is not None:
            values[key] = override
    config = build_pipeline_config(values, workdir=args.workdir)
    if args.dry_run:
        config.validate_inputs()
        print(config_echo(config))
        return EXIT_OK
    mesh_path = run_reconstruct(config)
    print(f"mesh written to {mesh_path}")
    return EXIT_OK


def _cmd_eval(args):
    values = _load_config_values(args)
    if args.artworks:
        values["eval.artworks"] = args.artworks
    for item in args.render:
        method, sep, path = item.partition("=")
        if not sep or not method or not path:
            raise InputError(f"--render expects METHOD=PATH, got {item!r}")
        values[f"eval.render.{method}"] = path
    if args.report:
        values["eval.report"] = args.report
    config = build_eval_config(values, workdir=args.workdir)
    reports = run_eval(config)
    print(format_similarity_table(reports), end="")
    print(f"report written to {config.report}")
    return EXIT_OK


def _cmd_inspect(args):
    path = Path(args.mesh)
    if not path.is_absolute():
        path = Path(args.workdir) / path
    if not path.is_file():
        raise InputError(f"mesh file not found: {path}")
    stats = mesh_stats(read_ply(path))
    print(f"vertices        {stats.vertex_count}")
    print(f"triangles       {stats.triangle_count}")
    print(f"boundary edges  {stats.boundary_edge_count}")
    print(f"components      {stats.component_count}")
    print(f"watertight      {'yes' if stats.watertight else 'no'}")
    print(f"bbox min        {stats.bbox_min}")
    print(f"bbox max        {stats.bbox_max}")
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        if args.command == "reconstruct":
            return _cmd_reconstruct(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        if args.command == "version":
            print(__version__)
            return EXIT_OK
        raise AssertionError(f"unreachable command {args.command}")
    except InputError as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except FileNotFoundError as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except Exception as exc:  # noqa: BLE001 - boundary: report stage + fail
        stage = getattr(exc, "stage", type(exc).__name__)
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_STAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
