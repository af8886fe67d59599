"""CSV and JSON-lines persistence for run records."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, fields
from pathlib import Path

from .runner import CSV_FIELDS, RunRecord

FORMATS = ("csv", "jsonl")


class OutputError(OSError):
    pass


def emit_results(records, path, fmt: str = "csv") -> Path:
    """Write ``records``; CSV keeps the fixed columns, JSONL adds metrics and errors."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            if fmt == "csv":
                w = csv.writer(fh)  # RFC 4180 quoting for names with commas
                w.writerow(CSV_FIELDS)
                for r in records:
                    w.writerow([getattr(r, f) for f in CSV_FIELDS])
            else:
                for r in records:
                    fh.write(json.dumps(asdict(r), sort_keys=False) + "\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def read_jsonl(path) -> list:
    names = {f.name for f in fields(RunRecord)}
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(RunRecord(**{k: v for k, v in d.items() if k in names}))
    return out


def read_csv(path) -> list:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
