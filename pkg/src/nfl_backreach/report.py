"""JSON run reports and the flat CSV set dump used for plotting."""

from __future__ import annotations

import csv
import json
import subprocess
from importlib import metadata
from pathlib import Path
from typing import Iterable

from .geometry import HyperRectangle, RectUnion

SET_KINDS = ("target", "bp", "bp-refined", "forward", "truth-hull", "init")


def version_string() -> str:
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0.0.0"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def csv_rows(kind: str, sets: Iterable[RectUnion | HyperRectangle | None]):
    """Yield (step, kind, rect_index, rect) for each box of each step."""
    if kind not in SET_KINDS:
        raise ValueError(f"unknown set kind {kind!r}")
    for step, s in enumerate(sets):
        if s is None:
            continue
        members = s.members if isinstance(s, RectUnion) else (s,)
        for i, m in enumerate(members):
            yield step, kind, i, m


def write_csv(path, rows) -> None:
    rows = list(rows)
    n = rows[0][3].dim if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "set_kind", "rect_index"] + [f"lo_{k}" for k in range(n)] + [f"hi_{k}" for k in range(n)])
        for step, kind, i, rect in rows:
            w.writerow([step, kind, i] + [repr(float(v)) for v in rect.lo] + [repr(float(v)) for v in rect.hi])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
