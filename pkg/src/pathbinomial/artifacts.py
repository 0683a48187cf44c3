"""Run artifacts: atomic writes, CSV emission, config hashing and manifests."""
import copy
import csv
import hashlib
import io
import json
import os
from pathlib import Path
import tempfile

import numpy as np
import yaml

from . import __version__

__all__ = [
    "canonical_json",
    "config_hash",
    "atomic_write",
    "csv_text",
    "write_manifest",
    "load_config",
    "apply_overrides",
    "to_plain",
]

MANIFEST_VERSION = 1


def to_plain(obj):
    """Convert numpy scalars, arrays and dates to JSON-ready Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.datetime64):
        return str(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def canonical_json(obj):
    return json.dumps(to_plain(obj), sort_keys=True, indent=2, allow_nan=True, default=str) + "\n"


def config_hash(config):
    """SHA-256 of the canonical JSON form of ``config``."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def atomic_write(path, text):
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(v.item())
    return str(v)


def csv_text(header, rows):
    """CSV text with floats written by ``repr`` so values round-trip exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(outdir, command, config, seed, outputs, status="ok", message=None):
    """Write ``config.json`` and ``manifest.json`` describing one run."""
    outdir = Path(outdir)
    atomic_write(outdir / "config.json", canonical_json(config))
    files = {}
    for name in sorted(outputs):
        files[name] = _sha256_file(outdir / name)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config_hash": config_hash(config),
        "version": __version__,
        "seed": seed,
        "status": status,
        "outputs": files,
    }
    if message is not None:
        manifest["message"] = message
    atomic_write(outdir / "manifest.json", canonical_json(manifest))
    return manifest


def load_config(path):
    """Read a YAML (or JSON) mapping."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data


def apply_overrides(config, overrides):
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    out = copy.deepcopy(config)
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise ValueError(f"override {item!r} has an empty key")
        node = out
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ValueError(f"override {item!r}: {p!r} is not a mapping")
            node = nxt
        node[parts[-1]] = yaml.safe_load(raw)
    return out
