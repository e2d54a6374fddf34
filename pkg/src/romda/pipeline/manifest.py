"""Run manifest: config hash, per-stage artifacts, library versions and wall-clock time."""
from __future__ import annotations

import json
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

import romda

MANIFEST = "run_manifest.json"


def versions() -> dict:
    return {"romda": romda.__version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass
class RunManifest:
    config_hash: str
    stages: dict = field(default_factory=dict)
    versions: dict = field(default_factory=versions)

    def record(self, stage: str, artifacts, seconds: float, run_dir: Path) -> None:
        run_dir = Path(run_dir)
        rel = []
        for p in artifacts:
            p = Path(p)
            if not p.exists():
                raise FileNotFoundError(f"stage {stage} declared missing artifact {p}")
            rel.append(str(p.relative_to(run_dir)) if p.is_relative_to(run_dir) else str(p))
        self.stages[stage] = {"artifacts": rel, "seconds": round(float(seconds), 3)}

    def missing(self, run_dir) -> list[str]:
        run_dir = Path(run_dir)
        return [a for s in self.stages.values() for a in s["artifacts"] if not (run_dir / a).exists()]

    def to_dict(self) -> dict:
        return {"config_hash": self.config_hash, "versions": self.versions, "stages": self.stages}

    def save(self, run_dir) -> Path:
        path = Path(run_dir) / MANIFEST
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2))
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, run_dir) -> "RunManifest":
        doc = json.loads((Path(run_dir) / MANIFEST).read_text())
        return cls(doc["config_hash"], doc.get("stages", {}), doc.get("versions", {}))

    @classmethod
    def open(cls, run_dir, config_hash: str) -> "RunManifest":
        """Existing manifest for the same config, otherwise a fresh one."""
        path = Path(run_dir) / MANIFEST
        if path.exists():
            old = cls.load(run_dir)
            if old.config_hash == config_hash:
                old.versions = versions()
                return old
        return cls(config_hash)
