"""Matrix files (CSV/TSV) and the JSON run manifest."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParseError, RaggedRows

FORMATS = ("csv", "tsv")
TIMING_FIELDS = ("timings",)


def guess_format(path):
    return "tsv" if str(path).lower().endswith((".tsv", ".tab")) else "csv"


def _delimiter(fmt):
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    return "," if fmt == "csv" else "\t"


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_matrix(text, fmt="csv"):
    """Parse a rectangular numeric grid; a first row with any non-numeric cell is a header."""
    delim = _delimiter(fmt)
    lines = [ln for ln in text.splitlines()]
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        rows.append((lineno, next(csv.reader([line], delimiter=delim))))
    if rows and not all(_is_number(c.strip()) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise ParseError("no numeric rows found")

    width = len(rows[0][1])
    out = np.empty((len(rows), width))
    for k, (lineno, cells) in enumerate(rows):
        if len(cells) != width:
            raise RaggedRows(f"expected {width} fields, found {len(cells)}", row=lineno)
        for j, cell in enumerate(cells):
            try:
                out[k, j] = float(cell.strip())
            except ValueError:
                raise ParseError(f"not a number: {cell!r}", row=lineno, column=j + 1) from None
    return out


def read_matrix(path, fmt=None):
    with open(path, newline="") as fh:
        return parse_matrix(fh.read(), fmt or guess_format(path))


def format_number(x):
    x = float(x)
    if x == 0.0 and np.signbit(x):
        return "-0"
    if np.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".17g")


def write_matrix(M, path, fmt=None):
    """Write ``M`` with 17 significant digits (integers without a decimal point)."""
    M = np.asarray(M)
    if M.ndim == 1:
        M = M[:, None]
    delim = _delimiter(fmt or guess_format(path))
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(delim.join(format_number(x) for x in row) + "\n")


@dataclass
class RunManifest:
    command: str
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_json(self, mask_timings=False):
        data = asdict(self)
        if mask_timings:
            for key in TIMING_FIELDS:
                data[key] = {}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
