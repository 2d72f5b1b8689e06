"""Output writers: CSV, JSON, binary rasters, and run manifests.

All text outputs are UTF-8 with ``\n`` line endings and ``.`` decimal
separators.  The raster format is little-endian binary: magic ``TSRASTER1``,
two uint32 dimensions, one float64 grid spacing (um), then float64 samples
in row-major order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
import time
from pathlib import Path

import numpy as np

RASTER_MAGIC = b"TSRASTER1"


def format_number(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".9g")


def write_csv(path, header, rows, comments=()) -> Path:
    """Write rows of numbers under a header; ``comments`` become # lines."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_number(v) for v in row])
    return path


def write_json(path, payload) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_raster(path, array: np.ndarray, spacing: float) -> Path:
    path = Path(path)
    array = np.ascontiguousarray(array, dtype="<f8")
    with path.open("wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<IId", array.shape[0], array.shape[1], spacing))
        fh.write(array.tobytes())
    return path


def read_raster(path):
    with Path(path).open("rb") as fh:
        magic = fh.read(len(RASTER_MAGIC))
        if magic != RASTER_MAGIC:
            raise ValueError(f"not a raster file: {path}")
        nx, nz, spacing = struct.unpack("<IId", fh.read(16))
        data = np.frombuffer(fh.read(nx * nz * 8), dtype="<f8").reshape(nx, nz)
    return data, spacing


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class ManifestBuilder:
    """Collects output files and stage timings into ``manifest.json``.

    The manifest lists every emitted file with its checksum; the config hash
    is stable across reruns of the same configuration.  Wall-clock timings
    are informational and excluded from determinism comparisons.
    """

    def __init__(self, out_dir, config_text: str, tool_version: str):
        self.out_dir = Path(out_dir)
        self.config_hash = hashlib.sha256(config_text.encode()).hexdigest()
        self.tool_version = tool_version
        self.files: list[Path] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.monotonic()

    def add(self, path) -> Path:
        self.files.append(Path(path))
        return Path(path)

    def time_stage(self, name: str):
        builder = self

        class _Stage:
            def __enter__(self):
                self.start = time.monotonic()

            def __exit__(self, *exc):
                builder.timings[name] = time.monotonic() - self.start

        return _Stage()

    def write(self, extra: dict | None = None) -> Path:
        payload = {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "outputs": [
                {"path": p.name, "sha256": sha256_file(p),
                 "bytes": p.stat().st_size}
                for p in sorted(self.files, key=lambda p: p.name)],
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
            "total_wall_s": round(time.monotonic() - self._t0, 3),
        }
        if extra:
            payload.update(extra)
        return write_json(self.out_dir / "manifest.json", payload)
