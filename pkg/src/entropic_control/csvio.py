"""Small CSV helpers shared by the exporters.

Floats are written with 17 significant digits so that a round trip through
the file reproduces the binary value.
"""

import csv
import io
import os

import numpy as np


def fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def write_table(path, columns, rows, comments=()):
    """Write ``rows`` under a header row; ``comments`` become leading ``# `` lines.

    Output uses ``\\n`` line endings regardless of platform.
    """
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    if path is None:
        return buf.getvalue()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
    return path


def read_table(path):
    """Return (columns, rows) ignoring ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = next(reader)
    return columns, [row for row in reader]
