"""File formats: pulse/config JSON, profile and trace CSVs, CSV matrices with sidecars.

Floats are written with 17 significant digits so every value round-trips
exactly and repeated runs produce byte-identical files.
"""

import contextlib
import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import TWO_PI
from .bloch import ControlPulse, check_grid, grid_from_hz
from .fieldmodel import FieldMap, ScanGrid
from .imaging import Anchor, FringeImage

MATRIX_HEADER = "# nx,ny,x_range_m,y_range_m,lift_m"


def fmt(x):
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.17g}"


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, frozenset, set)):
        return [_plain(v) for v in (sorted(obj) if isinstance(obj, (set, frozenset)) else obj)]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _opened(path):
    """File handle for a path, or the object itself if it is already writable."""
    if hasattr(path, "write"):
        return contextlib.nullcontext(path)
    return open(path, "w", newline="")


def write_json(path, obj):
    with _opened(path) as fh:
        fh.write(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def save_pulse(path, pulse):
    write_json(path, pulse.to_dict())


def load_pulse(path):
    return ControlPulse.from_dict(read_json(path))


def grid_from_dict(d):
    """Detuning grid (rad/s) from ``{min_hz, max_hz, n}`` or ``{detuning_hz: [...]}``."""
    if "detuning_hz" in d:
        return check_grid(TWO_PI * np.asarray(d["detuning_hz"], dtype=float))
    return grid_from_hz(float(d["min_hz"]), float(d["max_hz"]), int(d["n"]))


def write_rows(path, header, rows, comments=(), trailer=()):
    """Delimited file with optional leading and trailing ``#`` comment lines."""
    with _opened(path) as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
        for c in trailer:
            fh.write(f"# {c}\n")


def read_rows(path):
    """Header and float columns of a delimited file, skipping ``#`` comment lines."""
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return header, data.reshape(-1, len(header))


def write_profile(path, profile):
    write_rows(path, ["detuning_hz", "mz"], zip(profile.detuning_hz, profile.mz))


def write_trace(path, trace):
    write_rows(path, ["iter", "infidelity", "grad_norm", "step"], trace.rows())


def sidecar(path):
    return Path(str(path) + ".json")


def write_matrix(path, grid, values, meta=None):
    """Row-major matrix (rows along y) with a grid header and a JSON sidecar."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError("matrix shape does not match the scan grid")
    with open(path, "w") as fh:
        fh.write(MATRIX_HEADER + "\n")
        fh.write("# " + ",".join(fmt(v) if isinstance(v, float) else str(v) for v in
                                 (grid.nx, grid.ny, grid.x_range, grid.y_range,
                                  grid.lift_height)) + "\n")
        for row in values:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    side = {"grid": grid.to_dict()}
    side.update(meta or {})
    write_json(sidecar(path), side)


def read_matrix(path):
    """Grid, values and sidecar metadata of a matrix file.

    The sidecar, when present, supplies the full grid (including the window
    centre); otherwise the header line is used.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != MATRIX_HEADER:
        raise ValueError(f"{path}: missing matrix header {MATRIX_HEADER!r}")
    nx, ny, xr, yr, lift = lines[1].lstrip("# ").split(",")
    rows = [ln for ln in lines[2:] if ln.strip() and not ln.startswith("#")]
    values = np.array([[float(v) for v in ln.split(",")] for ln in rows], dtype=float)
    side = read_json(sidecar(path)) if sidecar(path).exists() else {}
    grid = (ScanGrid.from_dict(side["grid"]) if "grid" in side
            else ScanGrid(float(xr), float(yr), int(nx), int(ny), float(lift)))
    if values.shape != grid.shape:
        raise ValueError(f"{path}: matrix is {values.shape}, header says {grid.shape}")
    return grid, values, side


def write_field_map(path, field_map, meta=None):
    b = np.where(field_map.mask, field_map.b_parallel, np.nan)
    m = {"quantity": "b_parallel", "unit": "T"}
    m.update(meta or {})
    write_matrix(path, field_map.grid, b, m)


def read_field_map(path):
    grid, values, side = read_matrix(path)
    return FieldMap(grid, values, np.isfinite(values)), side


def write_image(path, image, meta=None):
    f = np.where(image.mask, image.fluorescence, np.nan)
    m = {"quantity": "fluorescence", "unit": "normalised"}
    m.update(meta or {})
    write_matrix(path, image.grid, f, m)


def read_image(path):
    grid, values, side = read_matrix(path)
    return FringeImage(grid, values, np.isfinite(values)), side


def read_anchors(path):
    data = read_json(path)
    if not isinstance(data, list):
        raise ValueError("anchor file must hold a JSON list")
    return [Anchor(int(a["px"]), int(a["py"]), float(a["b_tesla"])) for a in data]


def write_diagnostics(path, field_map):
    info = field_map.info
    low, res = info["low_information"], info["residual"]
    rows = [(i, j, float(res[j, i]), int(low[j, i]))
            for j, i in zip(*np.nonzero(field_map.mask))]
    write_rows(path, ["px", "py", "residual", "low_information"], rows,
               comments=[f"converged={info['converged']} iterations={info['iterations']}"])
