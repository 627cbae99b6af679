"""Report documents and their serialization."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

SIG_DIGITS = 12


def fmt_float(x: float) -> str:
    return f"{x:.{SIG_DIGITS}g}"


def normalize(obj):
    """Recursively convert numpy values and round floats to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [normalize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(fmt_float(x)) if math.isfinite(x) else x
    return obj


@dataclass
class ReportDocument:
    """Metadata plus named sections; ``table`` holds the CSV view when there is one."""

    command: str
    config: dict
    seed: int | None = None
    sections: dict = field(default_factory=dict)
    table: tuple[list[str], list[list]] | None = None

    def metadata(self) -> dict:
        from . import __version__
        # wall-clock time would break byte-for-byte reproducibility, so the
        # timestamp comes from SOURCE_DATE_EPOCH when the caller pins one
        stamp = os.environ.get("SOURCE_DATE_EPOCH")
        return {
            "tool": "multihop",
            "version": __version__,
            "command": self.command,
            "seed": self.seed,
            "timestamp": int(stamp) if stamp else None,
            "config": self.config,
        }

    def to_dict(self) -> dict:
        return normalize({"metadata": self.metadata(), **self.sections})


def dumps_json(doc: ReportDocument) -> str:
    return json.dumps(doc.to_dict(), indent=2) + "\n"


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else
                    ("" if v is None else v) for v in row])
    return buf.getvalue()


def emit_report(doc: ReportDocument, path=None, fmt: str = "json") -> str:
    """Serialize ``doc`` and write it to ``path`` when given; returns the text."""
    if fmt == "json":
        text = dumps_json(doc)
    elif fmt == "csv":
        if doc.table is None:
            raise ValueError(f"report of {doc.command!r} has no CSV view")
        text = dumps_csv(*doc.table)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
