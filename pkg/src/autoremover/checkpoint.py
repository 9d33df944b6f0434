"""Self-describing checkpoint container: named tensors plus a metadata record."""

import os

import torch

FORMAT_VERSION = 1


def save_checkpoint(path, kind, config, tensors, extra=None):
    """``tensors`` maps group names to state dicts; ``config`` rebuilds the architecture."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        "meta": {"kind": kind, "version": FORMAT_VERSION, "config": dict(config)},
        "tensors": tensors,
        "extra": extra or {},
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path, kind=None):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    meta = payload.get("meta", {})
    if kind is not None and meta.get("kind") != kind:
        raise ValueError(f"{path} holds a {meta.get('kind')!r} checkpoint, expected {kind!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return payload
