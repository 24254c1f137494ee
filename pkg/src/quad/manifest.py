"""Append-only run manifests.

Each command appends one JSON line to ``manifest.jsonl`` in its output
directory: the command, the full config snapshot, seeds, the dataset content
hash and a SHA-256 for every artifact it wrote. Nothing time- or
host-dependent is recorded, so identical reruns append identical lines.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

MANIFEST_NAME = "manifest.jsonl"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    dataset_fingerprint: str
    output_dir: str
    artifacts: dict = field(default_factory=dict)   # relative path -> sha256

    def add(self, path) -> None:
        path = Path(path)
        rel = path.relative_to(self.output_dir) if path.is_absolute() else path
        self.artifacts[str(rel)] = sha256_file(Path(self.output_dir) / rel)

    def add_all(self, paths) -> None:
        for p in paths:
            self.add(p)

    def to_json(self) -> str:
        data = asdict(self)
        data["artifacts"] = dict(sorted(self.artifacts.items()))
        return json.dumps(data, sort_keys=True)

    def append(self) -> Path:
        out = Path(self.output_dir) / MANIFEST_NAME
        with open(out, "a", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")
        return out


def read_manifests(out_dir) -> list:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def verify(entry: dict) -> list:
    """Artifacts whose current checksum differs from the recorded one."""
    root = Path(entry["output_dir"])
    return [rel for rel, digest in entry["artifacts"].items()
            if not (root / rel).exists() or sha256_file(root / rel) != digest]
