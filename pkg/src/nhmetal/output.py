"""Run directories, manifests and deterministic serialisation."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__

OUT_ENV = "NHMETAL_OUT"
MANIFEST_NAME = "manifest.json"


def _finite(obj):
    # JSON has no NaN/Infinity; map them to null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps(doc) -> str:
    """Deterministic JSON: insertion order kept, shortest round-trip floats, trailing newline."""
    return json.dumps(_finite(doc), indent=1, allow_nan=False) + "\n"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "nhmetal_out"))


def load_schema(name: str) -> dict:
    return json.loads(resources.files("nhmetal.schemas").joinpath(f"{name}.schema.json").read_text())


def validate(doc, name: str) -> None:
    import jsonschema

    jsonschema.validate(_finite(doc), load_schema(name))


@dataclass
class RunManifest:
    command: list[str]
    model: dict | None
    grid: dict | None
    seed: int
    version: str = __version__
    timestamp: str = ""
    outputs: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": "RunManifest", "command": self.command, "model": self.model, "grid": self.grid,
                "seed": self.seed, "version": self.version, "timestamp": self.timestamp,
                "outputs": dict(sorted(self.outputs.items()))}


class RunDir:
    """Output directory that records a SHA-256 digest for every file it writes."""

    def __init__(self, path, manifest: RunManifest):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest

    def write_text(self, name: str, text: str) -> Path:
        p = self.path / name
        data = text.encode("utf-8")
        p.write_bytes(data)
        self.manifest.outputs[name] = hashlib.sha256(data).hexdigest()
        return p

    def write_json(self, name: str, doc, schema: str | None = None) -> Path:
        if schema is not None:
            validate(doc, schema)
        return self.write_text(name, dumps(doc))

    def finish(self) -> Path:
        self.manifest.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        doc = self.manifest.to_dict()
        validate(doc, "manifest")
        p = self.path / MANIFEST_NAME
        p.write_text(dumps(doc))
        return p
