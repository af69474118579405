"""Mesh text format and legacy VTK export.

Text format, version 1 (whitespace separated, one record per line)::

    anisofem-mesh 1
    level <n>
    vertices <N>
    x y z                      N lines, %.17g (round-trips float64 exactly)
    tets <M>
    v0 v1 v2 v3 type           M lines, type is 0=O 1=V 2=VE 3=E 4=EV
    entities <M>
    vert_ent edge_ent          M lines, -1 where unused
    provenance <N>
    a b t                      N lines, p = (1-t) P[a] + t P[b]; -1 -1 0 for original vertices
    facets <N>
    mask                       N lines, bitmask of boundary facets
    end

Sections appear in this order.  Blank lines and lines starting with ``#``
are ignored.  The hierarchy (``Mesh.parent``) is not stored.
"""

from __future__ import annotations

import os

import numpy as np

from .mesh import Mesh

__all__ = ["MeshFormatError", "FORMAT_VERSION", "save_mesh", "load_mesh", "dumps_mesh", "loads_mesh", "export_vtk"]

FORMAT_VERSION = 1
_MAGIC = "anisofem-mesh"
VTK_TETRA = 10


class MeshFormatError(ValueError):
    pass


def _rows(arr, fmt):
    if len(arr) == 0:
        return ""
    return "\n".join(fmt % tuple(r) for r in arr.tolist()) + "\n"


def dumps_mesh(mesh: Mesh) -> str:
    n, m = mesh.n_points, mesh.n_tets
    parts = [f"{_MAGIC} {FORMAT_VERSION}\n", f"level {mesh.level}\n", f"vertices {n}\n",
             _rows(mesh.points, "%.17g %.17g %.17g"),
             f"tets {m}\n",
             _rows(np.column_stack([mesh.tets, mesh.ttype]), "%d %d %d %d %d"),
             f"entities {m}\n",
             _rows(np.column_stack([mesh.vert_ent, mesh.edge_ent]), "%d %d"),
             f"provenance {n}\n"]
    prov = [f"{a} {b} {t!r}\n" for (a, b), t in zip(mesh.prov_parents.tolist(), mesh.prov_t.tolist())]
    parts.append("".join(prov))
    parts += [f"facets {n}\n", _rows(mesh.facets[:, None], "%d"), "end\n"]
    return "".join(parts)


def loads_mesh(text: str) -> Mesh:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    pos = 0

    def header(key):
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"unexpected end of file, expected '{key}'")
        tok = lines[pos].split()
        if tok[0] != key or len(tok) != 2:
            raise MeshFormatError(f"line {pos + 1}: expected '{key} <int>', got {lines[pos]!r}")
        pos += 1
        return int(tok[1])

    def block(count, ncol, dtype):
        nonlocal pos
        chunk = lines[pos:pos + count]
        if len(chunk) != count:
            raise MeshFormatError("file truncated inside a data block")
        pos += count
        if count == 0:
            return np.zeros((0, ncol), dtype=dtype)
        try:
            arr = np.array(" ".join(chunk).split(), dtype=dtype)
        except ValueError as exc:
            raise MeshFormatError(f"bad number near line {pos}: {exc}") from None
        if arr.size != count * ncol:
            raise MeshFormatError(f"expected {ncol} columns in block ending at line {pos}")
        return arr.reshape(count, ncol)

    if not lines or lines[0].split()[0] != _MAGIC:
        raise MeshFormatError("missing header line")
    version = header(_MAGIC)
    if version != FORMAT_VERSION:
        raise MeshFormatError(f"unsupported format version {version}")
    level = header("level")
    n = header("vertices")
    points = block(n, 3, float)
    m = header("tets")
    tt = block(m, 5, np.int64)
    if header("entities") != m:
        raise MeshFormatError("entity count differs from tet count")
    ent = block(m, 2, np.int64)
    if header("provenance") != n:
        raise MeshFormatError("provenance count differs from vertex count")
    prov = block(n, 3, float)
    if header("facets") != n:
        raise MeshFormatError("facet count differs from vertex count")
    facets = block(n, 1, np.int64)[:, 0]
    if pos >= len(lines) or lines[pos] != "end":
        raise MeshFormatError("missing 'end'")
    if m and (tt[:, :4].min() < 0 or tt[:, :4].max() >= n):
        raise MeshFormatError("tet references a vertex out of range")
    return Mesh(points, tt[:, :4], tt[:, 4], ent[:, 0], ent[:, 1],
                prov_parents=prov[:, :2].astype(np.int64), prov_t=prov[:, 2], facets=facets, level=level)


def save_mesh(mesh: Mesh, path) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(dumps_mesh(mesh))
    except OSError as exc:
        raise OSError(f"cannot write mesh to {os.fspath(path)!r}: {exc.strerror}") from exc


def load_mesh(path) -> Mesh:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read mesh from {os.fspath(path)!r}: {exc.strerror}") from exc
    try:
        return loads_mesh(text)
    except MeshFormatError as exc:
        raise MeshFormatError(f"{os.fspath(path)}: {exc}") from None


def export_vtk(mesh: Mesh, path, solution=None, *, name: str = "u", title: str = "anisofem mesh",
               cell_types: bool = True) -> None:
    """Write a legacy ASCII (3.0) unstructured grid.

    ``solution`` may be an array of nodal values or anything with a
    ``coefficients`` attribute.  Tet types are written as CELL_DATA when
    ``cell_types`` is true.
    """
    n, m = mesh.n_points, mesh.n_tets
    parts = ["# vtk DataFile Version 3.0\n", title.replace("\n", " ")[:255] + "\n", "ASCII\n",
             "DATASET UNSTRUCTURED_GRID\n", f"POINTS {n} double\n",
             _rows(mesh.points, "%.17g %.17g %.17g"),
             f"CELLS {m} {5 * m}\n",
             _rows(np.column_stack([np.full(m, 4), mesh.tets]), "%d %d %d %d %d"),
             f"CELL_TYPES {m}\n", f"{VTK_TETRA}\n" * m]
    if cell_types:
        parts += [f"CELL_DATA {m}\n", "SCALARS tet_type int 1\n", "LOOKUP_TABLE default\n",
                  _rows(mesh.ttype[:, None], "%d")]
    if solution is not None:
        vals = np.asarray(getattr(solution, "coefficients", solution), dtype=float).reshape(-1)
        if len(vals) != n:
            raise ValueError(f"{len(vals)} nodal values for {n} points")
        parts += [f"POINT_DATA {n}\n", f"SCALARS {name} double 1\n", "LOOKUP_TABLE default\n",
                  _rows(vals[:, None], "%.17g")]
    try:
        with open(path, "w") as fh:
            fh.write("".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write VTK file {os.fspath(path)!r}: {exc.strerror}") from exc
