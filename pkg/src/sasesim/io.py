"""CSV with ``#``-prefixed provenance header lines, and JSON reports."""
from __future__ import annotations

import datetime as _dt
import json
import subprocess
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = ["version_tag", "header_lines", "write_csv", "read_csv", "write_json", "data_payload"]


def version_tag() -> str:
    from . import __version__

    try:
        sha = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def header_lines(config: Mapping | None = None, master_seed=None, **extra) -> list[str]:
    lines = [
        f"sasesim {version_tag()}",
        f"created: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
    ]
    if config is not None:
        lines.append("config: " + json.dumps(_jsonable(dict(config)), sort_keys=True))
    if master_seed is not None:
        lines.append(f"master_seed: {int(master_seed)}")
    for k, v in extra.items():
        lines.append(f"{k}: " + json.dumps(_jsonable(v), sort_keys=True))
    return lines


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path, columns: Mapping[str, Sequence], header: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("all CSV columns must have the same length")
    with open(path, "w", newline="\n") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(_fmt(c[i]) for c in cols) + "\n")
    return path


def read_csv(path) -> tuple[dict[str, np.ndarray], list[str]]:
    """Return ``(columns, header_lines)``; header lines are stripped of ``# ``."""
    header, rows, names = [], [], None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                header.append(line[1:].strip())
            elif names is None:
                names = line.split(",")
            elif line:
                rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, len(names or []))
    return {k: arr[:, i] for i, k in enumerate(names or [])}, header


def data_payload(path) -> bytes:
    """File content without provenance; used for determinism checks.

    CSV files lose their ``#`` header lines, JSON files their ``provenance`` key.
    """
    path = Path(path)
    if path.suffix == ".json":
        obj = json.loads(path.read_text())
        obj.pop("provenance", None)
        return json.dumps(obj, sort_keys=True).encode()
    with open(path, "rb") as fh:
        return b"".join(line for line in fh if not line.startswith(b"#"))


def write_json(path, obj, header: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _jsonable(dict(obj))
    if header:
        payload = {"provenance": list(header), **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
