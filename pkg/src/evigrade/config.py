"""Flat key = value run configuration and the run manifest."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

__all__ = ["read_kv_config", "write_kv_config", "RunManifest", "write_manifest"]


def read_kv_config(path: str) -> dict[str, str]:
    """Parse a flat `key = value` file; '#' starts a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value.strip()
    return out


def write_kv_config(path: str, mapping: dict) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in mapping.items():
            fh.write(f"{k} = {v}\n")


@dataclass
class RunManifest:
    seed: int
    config: dict
    dataset_fingerprint: str
    out_dir: str
    package_version: str
    created_utc: str = field(default_factory=lambda: time.strftime(
        "%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
    # the manifest freezes when training starts, so the end stamp stays
    # blank in the file; completion time lives in the history/checkpoint
    ended_utc: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed,
            "config": self.config,
            "dataset_fingerprint": self.dataset_fingerprint,
            "out_dir": self.out_dir,
            "package_version": self.package_version,
            "created_utc": self.created_utc,
            "ended_utc": self.ended_utc,
        }, indent=2)


def write_manifest(path: str, manifest: RunManifest) -> None:
    """Write once; an existing manifest marks the directory as used."""
    if os.path.exists(path):
        raise FileExistsError(f"manifest already present at {path}; refusing to overwrite")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json() + "\n")
