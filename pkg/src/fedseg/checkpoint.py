"""Checkpoints: a raw little-endian float32 blob plus a key=value text header."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .nncore import Network, load_params, save_params


def spec_hash(spec_dict: dict) -> str:
    blob = json.dumps(spec_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, net: Network, kind: str, spec_dict: dict, steps: int = 0) -> Path:
    """Write ``<path>.bin`` and ``<path>.hdr``; returns the blob path."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    blob_path.write_bytes(save_params(net))
    header = {
        "kind": kind,
        "spec_hash": spec_hash(spec_dict),
        "steps": str(steps),
        "n_params": str(net.n_params),
        "spec": json.dumps(spec_dict, sort_keys=True, separators=(",", ":")),
    }
    path.with_suffix(".hdr").write_text("".join(f"{k}={v}\n" for k, v in header.items()))
    return blob_path


def read_header(path) -> dict:
    out = {}
    for line in Path(path).with_suffix(".hdr").read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k] = v
    return out


def load_checkpoint(path, net: Network, kind: str, spec_dict: dict) -> dict:
    header = read_header(path)
    if header.get("kind") != kind:
        raise ValueError(f"checkpoint kind {header.get('kind')!r}, expected {kind!r}")
    if header.get("spec_hash") != spec_hash(spec_dict):
        raise ValueError("checkpoint was written for a different network spec")
    load_params(net, Path(path).with_suffix(".bin").read_bytes())
    return header
