"""Command-line interface.

Subcommands: gen-holes, complete, descriptors, denoise, eval. Every
command takes --seed and is bit-reproducible under it; --threads (or the
KAPLAN_THREADS environment variable) caps the worker pool without
changing any output. Exit codes: 0 success, 2 usage or configuration
error, 3 runtime error. Each run writes a JSON manifest recording the
configuration, seeds, input/output hashes and stage timings.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backends import BackendError, ExternalBackend, GtOracleBackend, IdentityBackend
from .completion import PipelineConfig, complete, denoise, select_query_points
from .datagen import HoleSpec, build_level_hierarchy, synthesize_hole
from .descriptor import KaplanConfig, build_kaplan
from .geometry import PointCloud, estimate_normals
from .io import load_cloud, read_xyz, save_cloud
from .kpln import write_kpln
from .metrics import f1_score, hole_region_report

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


class UsageError(ValueError):
    """Bad arguments or configuration; maps to exit code 2."""


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_config_dict(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {path}")
    blob = p.read_bytes()
    if p.suffix.lower() == ".json":
        return json.loads(blob.decode())
    try:
        return tomllib.loads(blob.decode())
    except tomllib.TOMLDecodeError:
        try:
            return json.loads(blob.decode())
        except json.JSONDecodeError:
            raise UsageError(f"config file is neither valid TOML nor JSON: {path}")


def _kaplan_config(data: dict, seed: int) -> KaplanConfig:
    table = dict(data.get("kaplan", data))
    table.setdefault("rng_seed", seed)
    try:
        return KaplanConfig(**table)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid descriptor config: {exc}")


def _pipeline_config(data: dict, seed: int) -> PipelineConfig:
    data = dict(data)
    data["seed"] = seed
    try:
        return PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid pipeline config: {exc}")


def _make_backend(spec: str, threads_hint: int):
    if spec == "identity":
        return IdentityBackend(), None
    if spec.startswith("gt-oracle:"):
        path = spec.split(":", 1)[1]
        if not Path(path).exists():
            raise UsageError(f"oracle cloud not found: {path}")
        return ("gt-oracle", path), path
    if spec.startswith("external:"):
        command = spec.split(":", 1)[1]
        if not command.strip():
            raise UsageError("external backend needs a command")
        return ExternalBackend(command), None
    raise UsageError(
        f"unknown backend {spec!r}; use identity, gt-oracle:<cloud>, external:<command>"
    )


def _threads(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        env = os.environ.get("KAPLAN_THREADS")
        value = int(env) if env else (os.cpu_count() or 1)
    if value < 1:
        raise UsageError("--threads must be >= 1")
    return value


def _write_manifest(path: str, manifest: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _base_manifest(command: str, args, seed: int) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "argv": sys.argv[1:],
        "threads": getattr(args, "threads", None),
        "timings": {},
        "inputs": {},
        "outputs": {},
    }


def cmd_gen_holes(args) -> int:
    manifest = _base_manifest("gen-holes", args, args.seed)
    t0 = time.perf_counter()
    cloud = load_cloud(args.input)
    manifest["inputs"][args.input] = _sha256(args.input)
    spec = HoleSpec(fraction=args.fraction, center_index=args.center_index, seed=args.seed)
    incomplete, missing = synthesize_hole(cloud, spec)
    levels = build_level_hierarchy(incomplete, missing, args.ratios, seed=args.seed)
    manifest["timings"]["generate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for level in levels:
        for name, part in (
            ("incomplete", level.incomplete),
            ("missing", level.missing),
            ("complete", level.complete),
        ):
            path = out_dir / f"level{level.level_id}_{name}.ply"
            save_cloud(str(path), part)
            manifest["outputs"][str(path)] = _sha256(str(path))
    manifest["timings"]["write"] = time.perf_counter() - t0
    manifest["hole"] = {
        "fraction": args.fraction,
        "center_index": spec.center_index,
        "removed": len(missing),
        "kept": len(incomplete),
        "ratios": list(args.ratios),
    }
    _write_manifest(str(out_dir / "manifest.json"), manifest)
    print(f"wrote {3 * len(levels)} clouds to {out_dir}")
    return 0


def _resolve_backend(spec, config_for_oracle):
    backend, oracle_path = spec
    if backend == "gt-oracle":
        oracle_cloud = load_cloud(oracle_path)
        return GtOracleBackend(oracle_cloud, config_for_oracle), oracle_cloud
    raise AssertionError


def cmd_complete(args) -> int:
    manifest = _base_manifest("complete", args, args.seed)
    config = _pipeline_config(_load_config_dict(args.config), args.seed)
    manifest["config"] = config.to_dict()
    threads = _threads(args)

    cloud = load_cloud(args.input)
    manifest["inputs"][args.input] = _sha256(args.input)

    backend_spec = _make_backend(args.backend, threads)
    oracle_cloud = None
    if isinstance(backend_spec[0], tuple):
        kaplan_defaults = config.levels[0].kaplan if config.levels else KaplanConfig()
        backend, oracle_cloud = _resolve_backend(backend_spec[0], kaplan_defaults)
        manifest["inputs"][backend_spec[1]] = _sha256(backend_spec[1])
    else:
        backend = backend_spec[0]

    t0 = time.perf_counter()
    result = complete(cloud, backend, config, threads=threads)
    manifest["timings"]["complete"] = time.perf_counter() - t0

    save_cloud(args.output, result)
    manifest["outputs"][args.output] = _sha256(args.output)
    manifest["points"] = {"input": len(cloud), "output": len(result)}

    if oracle_cloud is not None:
        # with a reference cloud the hole is recoverable exactly: the
        # missing points are the reference points absent from the input
        input_keys = {row.tobytes() for row in cloud.points}
        missing_rows = np.array(
            [row for row in oracle_cloud.points if row.tobytes() not in input_keys]
        )
        if missing_rows.size:
            missing = PointCloud(missing_rows)
            report = hole_region_report(result, oracle_cloud, missing, args.eval_threshold)
            manifest["evaluation"] = {
                "global": f1_score(result, oracle_cloud, args.eval_threshold).to_dict(),
                "hole_only": report.to_dict(),
            }
    _write_manifest(args.output + ".manifest.json", manifest)
    print(f"completed {len(cloud)} -> {len(result)} points -> {args.output}")
    return 0


def cmd_descriptors(args) -> int:
    manifest = _base_manifest("descriptors", args, args.seed)
    config = _kaplan_config(_load_config_dict(args.config), args.seed)
    cloud = load_cloud(args.input)
    manifest["inputs"][args.input] = _sha256(args.input)
    if config.side_length is None:
        config = config.with_side(cloud.bounding_box().largest_edge)

    if args.queries is not None:
        queries = read_xyz(args.queries).points
        manifest["inputs"][args.queries] = _sha256(args.queries)
    elif args.count is not None:
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        queries = select_query_points(cloud, args.count, args.seed)
    else:
        raise UsageError("pass --count N or --queries FILE")

    if config.orientation_mode == "tangential" and not cloud.has_normals:
        cloud = estimate_normals(cloud, k=min(16, len(cloud)))

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    for qi, query in enumerate(queries):
        desc = build_kaplan(cloud, query, config, query_index=qi)
        path = out_dir / f"q{qi:04d}.kpln"
        write_kpln(str(path), desc)
        manifest["outputs"][str(path)] = _sha256(str(path))
    manifest["timings"]["build"] = time.perf_counter() - t0
    manifest["descriptor"] = {
        "num_planes": config.num_planes,
        "resolution": config.resolution,
        "side_length": config.side_length,
        "orientation_mode": config.orientation_mode,
        "count": len(queries),
    }
    _write_manifest(str(out_dir / "manifest.json"), manifest)
    print(f"wrote {len(queries)} descriptors to {out_dir}")
    return 0


def cmd_denoise(args) -> int:
    manifest = _base_manifest("denoise", args, args.seed)
    config = _kaplan_config(_load_config_dict(args.config), args.seed)
    threads = _threads(args)
    cloud = load_cloud(args.input)
    manifest["inputs"][args.input] = _sha256(args.input)
    if config.side_length is None:
        config = config.with_side(cloud.bounding_box().largest_edge)
    if config.orientation_mode == "tangential" and not cloud.has_normals:
        cloud = estimate_normals(cloud, k=min(16, len(cloud)))

    backend_spec = _make_backend(args.backend, threads)
    if isinstance(backend_spec[0], tuple):
        backend, _ = _resolve_backend(backend_spec[0], config)
        manifest["inputs"][backend_spec[1]] = _sha256(backend_spec[1])
    else:
        backend = backend_spec[0]

    t0 = time.perf_counter()
    result = denoise(cloud, backend, config, args.valid_threshold, threads=threads)
    manifest["timings"]["denoise"] = time.perf_counter() - t0
    save_cloud(args.output, result)
    manifest["outputs"][args.output] = _sha256(args.output)
    manifest["points"] = {"input": len(cloud), "output": len(result)}
    _write_manifest(args.output + ".manifest.json", manifest)
    print(f"denoised {len(cloud)} points -> {args.output}")
    return 0


def cmd_eval(args) -> int:
    pred = load_cloud(args.pred)
    gt = load_cloud(args.gt)
    reports = [f1_score(pred, gt, args.threshold)]
    if args.missing is not None:
        missing = load_cloud(args.missing)
        reports.append(hole_region_report(pred, gt, missing, args.threshold))

    rows = [(r.region, 1e3 * r.chamfer, r.f1, r.accuracy, r.completeness) for r in reports]
    width = max(len(r[0]) for r in rows)
    print(f"{'region'.ljust(width)}  {'10^3*CD':>9} | {'F1':>6}  {'acc':>6}  {'comp':>6}")
    for region, cd, f1, acc, comp in rows:
        print(f"{region.ljust(width)}  {cd:9.3f} | {f1:6.2f}  {acc:6.2f}  {comp:6.2f}")

    payload = {r.region: r.to_dict() for r in reports}
    if args.json:
        with open(args.json, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kaplan",
        description="Multi-plane descriptors and coarse-to-fine point-cloud completion",
    )
    parser.add_argument("--version", action="version", version=f"kaplan {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: KAPLAN_THREADS or CPU count)")

    p = sub.add_parser("gen-holes", help="cut a hole and build the level pyramid")
    p.add_argument("input")
    p.add_argument("output_dir")
    p.add_argument("--fraction", type=float, required=True,
                   help="fraction of points to remove, in (0, 1)")
    p.add_argument("--center-index", type=int, default=None,
                   help="hole center point index (default: seeded random)")
    p.add_argument("--ratios", type=float, nargs="+", default=[0.25, 0.5, 1.0],
                   help="per-level keep ratios, ascending, last must be 1")
    common(p)
    p.set_defaults(func=cmd_gen_holes)

    p = sub.add_parser("complete", help="run the coarse-to-fine completion pipeline")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--backend", default="identity",
                   help="identity | gt-oracle:<cloud> | external:<command>")
    p.add_argument("--config", default=None, help="pipeline config (TOML or JSON)")
    p.add_argument("--eval-threshold", type=float, default=0.01,
                   help="F1 threshold for the oracle-backed evaluation block")
    common(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("descriptors", help="export descriptors as .kpln files")
    p.add_argument("input")
    p.add_argument("output_dir")
    p.add_argument("--count", type=int, default=None,
                   help="number of query points (farthest-point sampled)")
    p.add_argument("--queries", default=None, help="XYZ file of explicit query points")
    p.add_argument("--config", default=None, help="descriptor config (TOML or JSON)")
    common(p)
    p.set_defaults(func=cmd_descriptors)

    p = sub.add_parser("denoise", help="move each point to its corrected depth")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--backend", default="identity",
                   help="identity | gt-oracle:<cloud> | external:<command>")
    p.add_argument("--config", default=None, help="descriptor config (TOML or JSON)")
    p.add_argument("--valid-threshold", type=float, default=0.5)
    common(p)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="Chamfer distance and threshold F1 report")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--missing", default=None,
                   help="missing-region cloud for the hole-only block")
    p.add_argument("--threshold", type=float, default=0.01)
    p.add_argument("--json", default=None, help="also write the report as JSON")
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BackendError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
