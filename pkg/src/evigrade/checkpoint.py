"""Self-describing named-tensor checkpoints.

Checkpoints are numpy .npz archives: every tensor is stored under a
grouped name ("param/<name>", "adam_m/<name>", "adam_v/<name>",
"ema/<name>") as 64-bit little-endian floats, plus a JSON "meta" entry.
The archive is self-describing — names, shapes and dtype live in the
container, so loading needs no side channel.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint"]

_GROUPS = ("param", "adam_m", "adam_v", "ema")


def save_checkpoint(path: str, groups: dict[str, dict[str, np.ndarray]],
                    meta: dict) -> None:
    """groups maps group name -> {tensor name -> array}."""
    payload = {}
    for gname, tensors in groups.items():
        if gname not in _GROUPS:
            raise ValueError(f"unknown checkpoint group {gname!r}")
        for name, arr in tensors.items():
            payload[f"{gname}/{name}"] = np.asarray(arr).astype("<f8")
    payload["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path: str) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    with np.load(path) as npz:
        groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
        meta = {}
        for key in npz.files:
            if key == "meta":
                meta = json.loads(bytes(npz[key]).decode())
                continue
            gname, name = key.split("/", 1)
            if gname not in groups:
                raise ValueError(f"unexpected checkpoint entry {key!r}")
            groups[gname][name] = np.asarray(npz[key], dtype=np.float64)
    return groups, meta
