"""Run manifests: wall time, best-effort energy, peak memory, provenance.

Energy is read from platform power counters (powercap energy files) when
they are readable, sampled at 10 Hz; on platforms without counters it is
reported as unavailable, never fabricated.
"""

from __future__ import annotations

import glob
import hashlib
import json
import os
import resource
import threading
import time
from dataclasses import dataclass, field

from .exceptions import ProvenanceError

MANIFEST_NAME = "run_manifest.json"
_ENERGY_SAMPLE_INTERVAL = 0.1  # 10 Hz


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    input_hashes: dict = field(default_factory=dict)
    started_at: float = 0.0
    finished_at: float = 0.0
    wall_time: float = 0.0
    energy_joules: float | None = None
    peak_memory_bytes: int = 0
    backend_deterministic: bool = True

    def to_dict(self):
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "input_hashes": self.input_hashes,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "wall_time": self.wall_time,
            "energy_joules": self.energy_joules,
            "energy": ("unavailable" if self.energy_joules is None
                       else self.energy_joules),
            "peak_memory_bytes": self.peak_memory_bytes,
            "backend_deterministic": self.backend_deterministic,
        }

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


def hash_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def _energy_counter_paths():
    paths = []
    for path in glob.glob("/sys/class/powercap/*/energy_uj"):
        try:
            with open(path) as fh:
                fh.read()
            paths.append(path)
        except OSError:
            continue
    return paths


class _EnergyMeter:
    """Accumulates energy from cumulative microjoule counters."""

    def __init__(self):
        self.paths = _energy_counter_paths()
        self.available = bool(self.paths)
        self._total_uj = 0.0
        self._stop = threading.Event()
        self._thread = None

    def _read(self):
        out = {}
        for path in self.paths:
            try:
                with open(path) as fh:
                    out[path] = int(fh.read().strip())
            except (OSError, ValueError):
                pass
        return out

    def start(self):
        if not self.available:
            return
        self._last = self._read()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while not self._stop.wait(_ENERGY_SAMPLE_INTERVAL):
            self._accumulate()

    def _accumulate(self):
        current = self._read()
        for path, value in current.items():
            prev = self._last.get(path)
            if prev is not None and value >= prev:
                self._total_uj += value - prev
        self._last = current

    def stop(self):
        if not self.available or self._thread is None:
            return None
        self._stop.set()
        self._thread.join()
        self._accumulate()
        return self._total_uj / 1e6


def track_run(task, command: str = "", config: dict | None = None,
              seeds=None, input_paths=None):
    """Run ``task()`` and return (result, RunManifest)."""
    manifest = RunManifest(command=command, config=config or {},
                           seeds=list(seeds or []))
    for path in input_paths or []:
        if os.path.isfile(path):
            manifest.input_hashes[path] = hash_file(path)
        elif os.path.isdir(path):
            mp = os.path.join(path, "manifest.json")
            if os.path.isfile(mp):
                manifest.input_hashes[path] = hash_file(mp)
    meter = _EnergyMeter()
    manifest.started_at = time.time()
    t0 = time.perf_counter()
    meter.start()
    result = task()
    manifest.energy_joules = meter.stop()
    manifest.wall_time = time.perf_counter() - t0
    manifest.finished_at = time.time()
    manifest.peak_memory_bytes = (
        resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024)
    return result, manifest


def verify_provenance(root) -> list:
    """Every artifact directory under root must carry a run manifest.

    Returns the offending paths; raises ProvenanceError if any are found.
    """
    missing = []
    for dirpath, dirnames, filenames in os.walk(root):
        if "manifest.json" in filenames and MANIFEST_NAME not in filenames:
            missing.append(dirpath)
    if missing:
        raise ProvenanceError(
            "artifacts without run manifests: " + ", ".join(sorted(missing)))
    return missing
