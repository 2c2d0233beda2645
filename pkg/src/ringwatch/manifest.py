"""Run manifests: a small JSON record written next to every command's
primary output, enough to reproduce the run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class RunManifest:
    command: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    parameters: dict = field(default_factory=dict)
    seed: int | None = None
    preset: str | None = None
    tool_version: str = ""
    duration_seconds: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": dict(self.inputs),
            "outputs": list(self.outputs),
            "parameters": dict(self.parameters),
            "seed": self.seed,
            "preset": self.preset,
            "tool_version": self.tool_version,
            "duration_seconds": self.duration_seconds,
        }


def manifest_path_for(primary_output: str | Path) -> Path:
    return Path(str(primary_output) + ".manifest.json")


def write_manifest(manifest: RunManifest, primary_output: str | Path) -> Path:
    """Write the manifest alongside the primary output; returns its path."""
    path = manifest_path_for(primary_output)
    path.write_text(
        json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def read_manifest(path: str | Path) -> RunManifest:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunManifest(
        command=data["command"],
        inputs=dict(data.get("inputs", {})),
        outputs=list(data.get("outputs", [])),
        parameters=dict(data.get("parameters", {})),
        seed=data.get("seed"),
        preset=data.get("preset"),
        tool_version=data.get("tool_version", ""),
        duration_seconds=float(data.get("duration_seconds", 0.0)),
    )
