"""EasyCore — Table and document I/O (CSV, YAML).

CSV is the interchange contract between subcommands; floats are written with
`repr` so a reload reproduces every value exactly.
"""

import csv
import hashlib
import logging
import os

import yaml

from ..errors import ValidationError

logger = logging.getLogger(__name__)


def format_cell(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    if hasattr(value, "item"):
        return format_cell(value.item())
    return str(value)


def write_rows(filepath, header, rows):
    """Write a CSV table with a header row. Returns the path."""
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filepath, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if header:
            writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    logger.debug("wrote %s", filepath)
    return filepath


def read_rows(filepath, header=True):
    """Read a CSV table.

    Returns:
        (header, rows) where header is None when `header` is False.
    """
    if not os.path.exists(filepath):
        raise ValidationError(f"file not found: {filepath}")
    with open(filepath, "r", newline="", encoding="utf-8") as f:
        rows = [row for row in csv.reader(f) if row and any(cell.strip() for cell in row)]
    if header:
        if not rows:
            raise ValidationError(f"{filepath}: empty file")
        return [cell.strip() for cell in rows[0]], rows[1:]
    return None, rows


def read_table(filepath, required):
    """Read a headed CSV and return {column: [values]} for the required columns."""
    header, rows = read_rows(filepath)
    missing = [c for c in required if c not in header]
    if missing:
        raise ValidationError(f"{filepath}: missing column(s) {', '.join(missing)}")
    columns = {name: [] for name in header}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValidationError(f"{filepath}:{lineno}: expected {len(header)} fields, got {len(row)}")
        for name, cell in zip(header, row):
            columns[name].append(cell.strip())
    return columns


def write_yaml(filepath, data):
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(filepath, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, default_flow_style=False, allow_unicode=True, sort_keys=False)
    return filepath


def read_yaml(filepath):
    if not os.path.exists(filepath):
        raise ValidationError(f"file not found: {filepath}")
    with open(filepath, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def file_digest(filepath):
    """SHA-256 of a file's bytes."""
    sha = hashlib.sha256()
    with open(filepath, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()
