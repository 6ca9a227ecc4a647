"""CSV helpers shared by the pipeline stages."""

import numpy as np


def fmt(x):
    """Round-trip float text (repr of a Python float)."""
    return repr(float(x))


def write_csv(path, columns, rows, config_hash=None):
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else (str(v) if isinstance(v, (int, np.integer)) else fmt(v))
                              for v in row) + "\n")
    return path


def read_csv_rows(path):
    """Numeric rows of a CSV written by this package (comment lines and the column header skipped)."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if len(lines) < 2:
        return np.empty((0, 0))
    return np.loadtxt(lines[1:], delimiter=",", ndmin=2)


def read_config_hash(path):
    with open(path) as fh:
        first = fh.readline().strip()
    return first.split("=", 1)[1] if first.startswith("# config_hash=") else None
