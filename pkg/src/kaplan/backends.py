"""Completion backends: map an observed descriptor to a completed one.

Every backend honors the same contract: the output keeps the input's
planes and resolution, its valid channel stays in [0, 1], and cells that
were valid in the input keep their input depth and normals exactly.
The last rule is enforced centrally by apply_backend, so even a buggy
external model cannot violate it.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import uuid
from pathlib import Path

import numpy as np

from .descriptor import KaplanConfig, KaplanDescriptor, build_on_planes
from .geometry import PointCloud
from .kpln import KplnFormatError, read_kpln, write_kpln

__all__ = [
    "BackendError",
    "ExternalProcessError",
    "ExternalTimeoutError",
    "DescriptorMismatchError",
    "IdentityBackend",
    "GtOracleBackend",
    "ExternalBackend",
    "apply_backend",
]


class BackendError(RuntimeError):
    """A completion backend failed."""


class ExternalProcessError(BackendError):
    """External command exited nonzero or produced no output file."""


class ExternalTimeoutError(BackendError):
    """External command exceeded its time budget."""


class DescriptorMismatchError(BackendError):
    """Backend output violates the descriptor interface contract."""


class IdentityBackend:
    """Returns the input unchanged; the null backend for pipeline tests."""

    supports_normals = True
    max_concurrency: int | None = None

    def __call__(self, k0: KaplanDescriptor) -> KaplanDescriptor:
        return k0


class GtOracleBackend:
    """Fill descriptors from a complete reference cloud.

    Rebuilds the channel images on the reference cloud using the input
    descriptor's own plane frames, which makes it the network-free upper
    bound: every cell the reference supports becomes valid with the true
    depth and normal. Aggregation parameters (depth clustering threshold,
    center radius) come from the config given at construction.
    """

    max_concurrency: int | None = None

    def __init__(self, complete_cloud: PointCloud, config: KaplanConfig | None = None):
        if len(complete_cloud) == 0:
            raise ValueError("empty input")
        self.cloud = complete_cloud
        self.config = config if config is not None else KaplanConfig()
        self.supports_normals = complete_cloud.has_normals

    def __call__(self, k0: KaplanDescriptor) -> KaplanDescriptor:
        return build_on_planes(
            self.cloud, k0.planes, self.config, query_index=k0.query_index
        )


class ExternalBackend:
    """Bridge to an external process speaking the .kpln file protocol.

    The descriptor is written to ``<io_dir>/in_<uuid>.kpln``; the command
    is invoked with the input path and the expected output path
    ``<io_dir>/out_<uuid>.kpln`` appended as its two final arguments.
    """

    supports_normals = True
    max_concurrency = 1

    def __init__(self, command: str | list[str], io_dir: str | None = None,
                 timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("empty external command")
        self.io_dir = io_dir
        self.timeout = timeout

    def __call__(self, k0: KaplanDescriptor) -> KaplanDescriptor:
        io_dir = Path(self.io_dir) if self.io_dir else Path(tempfile.mkdtemp(prefix="kpln_"))
        io_dir.mkdir(parents=True, exist_ok=True)
        tag = uuid.uuid4().hex
        in_path = io_dir / f"in_{tag}.kpln"
        out_path = io_dir / f"out_{tag}.kpln"
        write_kpln(str(in_path), k0)
        try:
            result = subprocess.run(
                self.command + [str(in_path), str(out_path)],
                capture_output=True,
                text=True,
                timeout=self.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            raise ExternalTimeoutError(
                f"external backend timed out after {self.timeout}s"
            ) from exc
        if result.returncode != 0:
            raise ExternalProcessError(
                f"external backend exited {result.returncode}: {result.stderr.strip()}"
            )
        if not out_path.exists():
            raise ExternalProcessError(f"external backend wrote no file at {out_path}")
        try:
            out = read_kpln(str(out_path), query_index=k0.query_index)
        except KplnFormatError as exc:
            raise DescriptorMismatchError(f"malformed backend output: {exc}") from exc
        _check_output(k0, out, skip_tolerance=1e-5)
        return out


def _check_output(k0: KaplanDescriptor, out: KaplanDescriptor,
                  skip_tolerance: float | None = None) -> None:
    if not k0.same_layout(out):
        raise DescriptorMismatchError("backend changed plane frames or resolution")
    if float(out.valid.min()) < -1e-6 or float(out.valid.max()) > 1.0 + 1e-6:
        raise DescriptorMismatchError("backend valid channel outside [0, 1]")
    if skip_tolerance is not None:
        mask = k0.valid >= 0.5
        if mask.any():
            depth_drift = float(np.max(np.abs(out.depth[mask] - k0.depth[mask])))
            normal_drift = float(np.max(np.abs(out.normal[mask] - k0.normal[mask])))
            if max(depth_drift, normal_drift) > skip_tolerance:
                raise DescriptorMismatchError(
                    "backend altered input-valid cells beyond "
                    f"{skip_tolerance} (drift {max(depth_drift, normal_drift):.3g})"
                )


def apply_backend(backend, k0: KaplanDescriptor) -> KaplanDescriptor:
    """Run a backend and impose the interface contract on its output.

    Input-valid cells are restored to the input's exact depth, normal and
    flag. Cells invalid on both sides get zero depth and normals.
    """
    out = backend(k0)
    if out is k0:
        return k0
    _check_output(k0, out, skip_tolerance=None)

    depth = out.depth.copy()
    valid = np.clip(out.valid, 0.0, 1.0)
    normal = out.normal.copy()

    keep = k0.valid >= 0.5
    depth[keep] = k0.depth[keep]
    valid[keep] = k0.valid[keep]
    normal[keep] = k0.normal[keep]

    dead = ~keep & (valid < 0.5)
    depth[dead] = 0.0
    normal[dead] = 0.0

    return KaplanDescriptor(
        planes=list(k0.planes),
        depth=depth,
        valid=valid,
        normal=normal,
        query=k0.query.copy(),
        query_index=k0.query_index,
    )
