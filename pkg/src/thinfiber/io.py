"""Deterministic CSV output.

Every table starts with a ``# config_sha256=...`` comment and a header row.
Floats are written with ``repr`` so a rerun with the same configuration
reproduces the file byte for byte.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(x: Any):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return str(x)


def _cell(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (complex, np.complexfloating)):
        raise TypeError("split complex values into re/im columns before writing")
    s = str(x)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]], config_sha: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_sha256={config_sha}", ",".join(header)]
    width = len(header)
    for row in rows:
        if len(row) != width:
            raise ValueError(f"row has {len(row)} cells, header has {width}")
        lines.append(",".join(_cell(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path: str | Path) -> tuple[str, list[str], list[list[str]]]:
    """``(config_sha, header, rows)`` of a file written by :func:`write_csv`."""
    text = Path(path).read_text(encoding="utf-8").splitlines()
    sha = text[0].split("=", 1)[1] if text and text[0].startswith("# config_sha256=") else ""
    body = [ln for ln in text if not ln.startswith("#")]
    import csv

    rows = list(csv.reader(body))
    return sha, rows[0], rows[1:]
