"""Generate trainer test fixtures with the core toolkit.

Writes, under test/fixtures/:
  pairs/   20 fuzzed descriptor pairs plus expected.json with the loss
           breakdown the core library computes for each pair
  overfit/ a holed-sphere training set: in/ holds observed descriptors,
           gt/ the oracle-completed targets, clouds/ the sphere PLYs, and
           meta.json the hole geometry for the end-to-end check

Deterministic; safe to re-run (skips work when the marker matches).
"""

import json
import sys
from pathlib import Path

import numpy as np

import kaplan as K
from kaplan.backends import apply_backend

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "test" / "fixtures"
MARKER = FIXTURES / ".complete"
STAMP = "fixtures-v1"


def make_sphere(n, seed, radius=0.5):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return K.PointCloud(radius * v, v)


def fuzz_descriptor(rng, planes=None):
    k = len(planes) if planes else int(rng.integers(1, 4))
    r = int(rng.choice([3, 5, 7]))
    if planes is None:
        cfg = K.KaplanConfig(
            num_planes=9, resolution=r, side_length=float(rng.uniform(0.4, 1.2))
        )
        planes = K.make_planes(rng.uniform(-0.3, 0.3, size=3), cfg)[:k]
        planes = [
            K.PlaneFrame(
                origin=p.origin, u_axis=p.u_axis, v_axis=p.v_axis, w_axis=p.w_axis,
                side_length=p.side_length, resolution=r,
            )
            for p in planes
        ]
    r = planes[0].resolution
    valid = (rng.uniform(size=(k, r, r)) < 0.5).astype(np.float32).astype(np.float64)
    depth = (rng.normal(0, 0.1, size=(k, r, r)) * valid).astype(np.float32).astype(np.float64)
    normal = rng.normal(size=(k, r, r, 3))
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = (normal * valid[..., None]).astype(np.float32).astype(np.float64)
    return K.KaplanDescriptor(list(planes), depth, valid, normal, planes[0].origin)


def write_pairs():
    out = FIXTURES / "pairs"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(2024)
    expected = []
    for t in range(20):
        gt = fuzz_descriptor(rng)
        pred = fuzz_descriptor(rng, planes=gt.planes)
        pred_name, gt_name = f"pair{t:02d}.pred.kpln", f"pair{t:02d}.gt.kpln"
        K.write_kpln(str(out / pred_name), pred)
        K.write_kpln(str(out / gt_name), gt)
        loss = K.compute_losses(pred, gt)
        expected.append(
            {
                "pred": pred_name,
                "gt": gt_name,
                "valid_loss": loss.valid_loss,
                "depth_loss": loss.depth_loss,
                "normal_loss": loss.normal_loss,
                "total": loss.total,
            }
        )
    (out / "expected.json").write_text(json.dumps(expected, indent=2))


def write_overfit():
    out = FIXTURES / "overfit"
    (out / "in").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "clouds").mkdir(parents=True, exist_ok=True)

    full = make_sphere(3000, seed=77)
    holed, missing = K.synthesize_hole(full, K.HoleSpec(fraction=0.10, seed=5))
    K.write_ply(str(out / "clouds" / "full.ply"), full)
    K.write_ply(str(out / "clouds" / "holed.ply"), holed)
    K.write_ply(str(out / "clouds" / "missing.ply"), missing)

    cfg = K.KaplanConfig(num_planes=3, resolution=7, side_length=1.0)
    backend = K.GtOracleBackend(full, cfg)
    queries = K.select_query_points(holed, 8, seed=1)
    for qi, query in enumerate(queries):
        k0 = K.build_kaplan(holed, query, cfg, query_index=qi)
        completed = apply_backend(backend, k0)
        K.write_kpln(str(out / "in" / f"q{qi:03d}.kpln"), k0)
        K.write_kpln(str(out / "gt" / f"q{qi:03d}.kpln"), completed)

    center = missing.points.mean(axis=0)
    radius = float(np.linalg.norm(missing.points - center, axis=1).max())
    meta = {
        "hole_center": center.tolist(),
        "hole_radius": radius,
        "kaplan": {"num_planes": 3, "resolution": 7, "side_length": 1.0},
        "num_pairs": len(queries),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))


def main():
    if MARKER.exists() and MARKER.read_text() == STAMP:
        print("fixtures up to date")
        return 0
    write_pairs()
    write_overfit()
    MARKER.write_text(STAMP)
    print(f"fixtures written to {FIXTURES}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
