"""Files written by experiments: CSV tables, legacy VTK, sparse matrices and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy.io
from scipy import sparse

from .mesh import TriMesh

MANIFEST_VERSION = 1


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    """CSV with floats written by ``repr`` so identical runs give identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_loss_history(path, history: dict) -> Path:
    keys = [k for k in ("iteration", "data", "pde", "boundary", "total") if k in history]
    cols = [np.asarray(history[k]) for k in keys]
    return write_csv(path, keys, zip(*cols))


def write_field_csv(path, mesh: TriMesh, fields: dict) -> Path:
    names = list(fields)
    coords = ["x", "y", "z"][: mesh.dimension]
    rows = (
        [i, *mesh.vertices[i], *(fields[k][i] for k in names)]
        for i in range(mesh.n_vertices)
    )
    return write_csv(path, ["vertex", *coords, *names], rows)


def write_vtk(path, mesh: TriMesh, point_data: dict | None = None, title: str = "dpinn field") -> Path:
    """Legacy ASCII VTK polydata with per-vertex scalars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    P = mesh.vertices
    if P.shape[1] == 2:
        P = np.column_stack([P, np.zeros(len(P))])
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET POLYDATA", f"POINTS {len(P)} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in P]
    T = mesh.triangles
    lines.append(f"POLYGONS {len(T)} {4 * len(T)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in T]
    if point_data:
        lines.append(f"POINT_DATA {len(P)}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (len(P),):
                raise ValueError(f"field {name!r} has shape {values.shape}, expected ({len(P)},)")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_polyline_vtk(path, polylines, title: str = "dpinn paths") -> Path:
    """Legacy ASCII VTK with one polyline cell per path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    polylines = [np.asarray(p, dtype=np.float64) for p in polylines]
    pts = np.concatenate(polylines) if polylines else np.zeros((0, 3))
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET POLYDATA", f"POINTS {len(pts)} double"]
    lines += [" ".join(repr(float(c)) for c in p) for p in pts]
    size = sum(len(p) + 1 for p in polylines)
    lines.append(f"LINES {len(polylines)} {size}")
    start = 0
    for p in polylines:
        lines.append(" ".join(map(str, [len(p), *range(start, start + len(p))])))
        start += len(p)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_matrix(path, A) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), sparse.coo_matrix(A), precision=17)
    return path


def read_matrix(path) -> sparse.csr_matrix:
    return sparse.csr_matrix(scipy.io.mmread(str(path)))


def content_hash(*items) -> str:
    """SHA-256 over JSON-serializable items and numpy arrays, in order."""
    h = hashlib.sha256()
    for item in items:
        if isinstance(item, TriMesh):
            for arr in (item.vertices, item.triangles):
                h.update(str(arr.dtype).encode())
                h.update(str(arr.shape).encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        elif isinstance(item, np.ndarray):
            h.update(str(item.dtype).encode())
            h.update(str(item.shape).encode())
            h.update(np.ascontiguousarray(item).tobytes())
        else:
            h.update(json.dumps(item, sort_keys=True, default=str).encode())
    return h.hexdigest()


def write_manifest(path, config: dict, seed: int, inputs_hash: str, extra: dict | None = None) -> Path:
    """JSON manifest with everything needed to repeat a run."""
    import jax
    import scipy

    doc = {
        "version": MANIFEST_VERSION,
        "config": config,
        "seed": seed,
        "inputs_sha256": inputs_hash,
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "jax": jax.__version__,
        },
        "nmse_convention": "sum (pred - truth)^2 / sum (truth - mean(truth))^2",
    }
    if extra:
        doc.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
    return path
