"""OBJ and PLY mesh I/O, polyline export, and the rainbow colormap.

OBJ is ASCII `v`/`f` records only. PLY supports ASCII and
binary_little_endian, vertex positions required; per-vertex and per-face
uchar colors are honored on write and ignored-if-absent on read.
"""

import struct

import numpy as np

from .errors import ParseError
from .mesh import TriMesh


def rainbow_colormap(values):
    """Map values in [0, 1] to uint8 RGB: saturated blue at 0, red at 1."""
    x = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    # hue sweep blue -> cyan -> green -> yellow -> red
    r = np.clip(4 * x - 2.0, 0, 1)
    g = np.clip(np.minimum(4 * x, 4.0 - 4 * x), 0, 1)
    b = np.clip(2.0 - 4 * x, 0, 1)
    return (np.stack([r, g, b], axis=-1) * 255).round().astype(np.uint8)


# ---- OBJ --------------------------------------------------------------------

def read_obj(path):
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(p) for p in parts[1:4]])
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad vertex: {exc}") from exc
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ParseError(f"{path}:{lineno}: only triangle faces supported")
                try:
                    idx = [int(p.split("/")[0]) for p in parts[1:4]]
                except ValueError as exc:
                    raise ParseError(f"{path}:{lineno}: bad face: {exc}") from exc
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise ParseError(f"{path}: face references vertex index out of range")
    return v, f


def write_obj(path, vertices, faces):
    with open(path, "w", encoding="utf-8") as fh:
        for p in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        for t in np.asarray(faces, dtype=np.int64):
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---- PLY --------------------------------------------------------------------

_PLY_TYPES = {
    "char": "b", "uchar": "B", "int8": "b", "uint8": "B",
    "short": "h", "ushort": "H", "int16": "h", "uint16": "H",
    "int": "i", "uint": "I", "int32": "i", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _parse_ply_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise ParseError("not a PLY file")
    fmt = None
    elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
    while True:
        line = fh.readline()
        if not line:
            raise ParseError("unexpected end of PLY header")
        tokens = line.decode("ascii", "replace").split()
        if not tokens:
            continue
        if tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before element in PLY header")
            if tokens[1] == "list":
                elements[-1][2].append((tokens[4], tokens[3], tokens[2]))
            else:
                elements[-1][2].append((tokens[2], tokens[1], None))
        elif tokens[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Read a PLY mesh; returns (vertices, faces)."""
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        verts = None
        faces = []
        for name, count, props in elements:
            if fmt == "ascii":
                rows = []
                for _ in range(count):
                    line = fh.readline()
                    if not line:
                        raise ParseError(f"{path}: truncated PLY data")
                    rows.append(line.split())
                if name == "vertex":
                    names = [p[0] for p in props]
                    try:
                        ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
                    except ValueError as exc:
                        raise ParseError("PLY vertex element lacks x/y/z") from exc
                    verts = np.array(
                        [[float(r[ix]), float(r[iy]), float(r[iz])] for r in rows]
                    )
                elif name == "face":
                    for r in rows:
                        k = int(r[0])
                        if k != 3:
                            raise ParseError("only triangle PLY faces supported")
                        faces.append([int(r[1]), int(r[2]), int(r[3])])
            else:
                if name == "vertex":
                    if any(p[2] is not None for p in props):
                        raise ParseError("list property on PLY vertex unsupported")
                    fmt_str = "<" + "".join(_PLY_TYPES[p[1]] for p in props)
                    size = struct.calcsize(fmt_str)
                    raw = fh.read(size * count)
                    if len(raw) != size * count:
                        raise ParseError(f"{path}: truncated PLY vertex data")
                    names = [p[0] for p in props]
                    cols = {n: i for i, n in enumerate(names)}
                    arr = np.array(list(struct.iter_unpack(fmt_str, raw)))
                    verts = arr[:, [cols["x"], cols["y"], cols["z"]]].astype(np.float64)
                elif name == "face":
                    for _ in range(count):
                        got = None
                        for pname, ptype, ltype in props:
                            if ltype is not None:
                                cnt_t = _PLY_TYPES[ltype]
                                idx_t = _PLY_TYPES[ptype]
                                (k,) = struct.unpack(
                                    "<" + cnt_t,
                                    fh.read(struct.calcsize(cnt_t)))
                                if k != 3:
                                    raise ParseError(
                                        "only triangle PLY faces supported")
                                got = struct.unpack(
                                    "<" + idx_t * 3,
                                    fh.read(struct.calcsize(idx_t) * 3))
                            else:
                                fh.read(struct.calcsize(_PLY_TYPES[ptype]))
                        if got is None:
                            raise ParseError(
                                "PLY face element lacks a list property")
                        faces.append(list(got))
        if verts is None:
            raise ParseError(f"{path}: PLY file has no vertex element")
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and (f.min() < 0 or f.max() >= len(verts)):
        raise ParseError(f"{path}: face references vertex index out of range")
    return verts, f


def write_ply(path, vertices, faces, vertex_colors=None, face_colors=None,
              binary=True):
    """Write a PLY mesh, optionally with uchar vertex and/or face colors."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    header = ["ply"]
    header.append(
        "format binary_little_endian 1.0" if binary else "format ascii 1.0"
    )
    header.append(f"element vertex {len(v)}")
    header += ["property double x", "property double y", "property double z"]
    if vertex_colors is not None:
        vertex_colors = np.asarray(vertex_colors, dtype=np.uint8)
        header += [
            "property uchar red", "property uchar green", "property uchar blue"
        ]
    header.append(f"element face {len(f)}")
    header.append("property list uchar int vertex_indices")
    if face_colors is not None:
        face_colors = np.asarray(face_colors, dtype=np.uint8)
        header += [
            "property uchar red", "property uchar green", "property uchar blue"
        ]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            for i in range(len(v)):
                fh.write(struct.pack("<3d", *v[i]))
                if vertex_colors is not None:
                    fh.write(struct.pack("<3B", *vertex_colors[i]))
            for i in range(len(f)):
                fh.write(struct.pack("<B3i", 3, *f[i]))
                if face_colors is not None:
                    fh.write(struct.pack("<3B", *face_colors[i]))
        else:
            for i in range(len(v)):
                row = f"{v[i, 0]:.17g} {v[i, 1]:.17g} {v[i, 2]:.17g}"
                if vertex_colors is not None:
                    c = vertex_colors[i]
                    row += f" {c[0]} {c[1]} {c[2]}"
                fh.write((row + "\n").encode("ascii"))
            for i in range(len(f)):
                row = f"3 {f[i, 0]} {f[i, 1]} {f[i, 2]}"
                if face_colors is not None:
                    c = face_colors[i]
                    row += f" {c[0]} {c[1]} {c[2]}"
                fh.write((row + "\n").encode("ascii"))


def load_mesh(path, format=None):
    """Load a TriMesh from an OBJ or PLY file.

    The format is inferred from the extension unless given explicitly.
    Vertex order is preserved from the file.
    """
    path = str(path)
    if format is None:
        format = "ply" if path.lower().endswith(".ply") else "obj"
    if format == "obj":
        v, f = read_obj(path)
    elif format == "ply":
        v, f = read_ply(path)
    else:
        raise ValueError(f"unknown mesh format {format!r}")
    return TriMesh(v, f)


def save_mesh(path, mesh, format=None, **kw):
    path = str(path)
    if format is None:
        format = "ply" if path.lower().endswith(".ply") else "obj"
    if format == "obj":
        write_obj(path, mesh.vertices, mesh.faces)
    elif format == "ply":
        write_ply(path, mesh.vertices, mesh.faces, **kw)
    else:
        raise ValueError(f"unknown mesh format {format!r}")


def write_polyline_obj(path, polylines):
    """Write 3D polylines as OBJ `v`/`l` records."""
    with open(path, "w", encoding="utf-8") as fh:
        offset = 1
        for pts in polylines:
            pts = np.asarray(pts, dtype=np.float64)
            for p in pts:
                fh.write(f"v {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            idx = " ".join(str(offset + i) for i in range(len(pts)))
            fh.write(f"l {idx}\n")
            offset += len(pts)
