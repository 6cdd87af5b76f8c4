"""Point cloud file IO: PLY (ascii / binary little-endian) and XYZ text.

PLY support is deliberately small: a vertex element with scalar
properties, of which float/double x, y, z are read and everything else
is skipped. XYZ is one whitespace-separated "x y z" line per point with
'#' comments allowed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import ParseError

FORMATS = ("ply_ascii", "ply_binary_le", "xyz_text")

_PLY_SCALAR_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


def sniff_format(path) -> str:
    """Guess the on-disk format from the extension and PLY header."""
    p = Path(path)
    if p.suffix.lower() == ".ply":
        with open(p, "rb") as fh:
            head = fh.read(512)
        if b"binary_little_endian" in head:
            return "ply_binary_le"
        return "ply_ascii"
    return "xyz_text"


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    """Load a cloud, preserving file order. fmt=None sniffs the format."""
    if fmt is None:
        fmt = sniff_format(path)
    if fmt == "xyz_text":
        return _load_xyz(path)
    if fmt in ("ply_ascii", "ply_binary_le"):
        return _load_ply(path, fmt)
    raise ValueError(f"unknown cloud format {fmt!r}")


def save_cloud(cloud: PointCloud, path, fmt: str = "ply_binary_le") -> None:
    """Write coordinates to disk. Features are not persisted.

    Binary PLY stores float64, so load(save(c)) is bit-exact; XYZ uses
    shortest round-trip decimal representation.
    """
    if fmt == "xyz_text":
        with open(path, "w") as fh:
            for x, y, z in cloud.points:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        return
    if fmt == "ply_ascii":
        with open(path, "w") as fh:
            fh.write(_ply_header(len(cloud), "ascii", "float"))
            for x, y, z in cloud.points:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        return
    if fmt == "ply_binary_le":
        with open(path, "wb") as fh:
            fh.write(_ply_header(len(cloud), "binary_little_endian", "double").encode("ascii"))
            fh.write(np.ascontiguousarray(cloud.points, dtype="<f8").tobytes())
        return
    raise ValueError(f"unknown cloud format {fmt!r}")


def _ply_header(n: int, fmt_word: str, coord_type: str) -> str:
    props = "".join(f"property {coord_type} {axis}\n" for axis in "xyz")
    return f"ply\nformat {fmt_word} 1.0\nelement vertex {n}\n{props}end_header\n"


def _load_xyz(path) -> PointCloud:
    rows = []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise ParseError(path, f"expected 3 coordinates, got {len(tokens)}", line=lineno)
            try:
                xyz = [float(tok) for tok in tokens]
            except ValueError:
                raise ParseError(path, f"non-numeric coordinate in {line!r}", line=lineno) from None
            if not all(np.isfinite(xyz)):
                raise ParseError(path, f"non-finite coordinate in {line!r}", line=lineno)
            rows.append(xyz)
    if not rows:
        raise ParseError(path, "file contains no points")
    return PointCloud(np.array(rows, dtype=np.float64))


def _parse_ply_header(path, data: bytes):
    """Returns (vertex_count, properties, body_offset, header_lines).

    properties is a list of (name, numpy dtype string) for the vertex
    element, in declaration order.
    """
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError(path, "not a PLY file (missing 'ply'/'end_header')", offset=0)
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError(path, "header not terminated by newline", offset=end)
    body_offset = nl + 1
    try:
        header_text = data[:end].decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError(path, "header is not ascii", offset=exc.start) from None

    fmt = None
    vertex_count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    seen_other_element = False
    for lineno, line in enumerate(header_text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0] == "ply" or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if len(tokens) != 3 or tokens[2] != "1.0":
                raise ParseError(path, f"unsupported format line {line!r}", line=lineno)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError(path, f"malformed element line {line!r}", line=lineno)
            if tokens[1] == "vertex":
                if seen_other_element:
                    raise ParseError(
                        path, "vertex element must come first in this reader", line=lineno
                    )
                try:
                    vertex_count = int(tokens[2])
                except ValueError:
                    raise ParseError(path, f"bad vertex count {tokens[2]!r}", line=lineno) from None
                in_vertex = True
            else:
                in_vertex = False
                seen_other_element = True
        elif tokens[0] == "property":
            if not in_vertex:
                continue
            if tokens[1] == "list":
                raise ParseError(path, "list properties on vertices are unsupported", line=lineno)
            if len(tokens) != 3:
                raise ParseError(path, f"malformed property line {line!r}", line=lineno)
            dtype = _PLY_SCALAR_TYPES.get(tokens[1])
            if dtype is None:
                raise ParseError(path, f"unknown property type {tokens[1]!r}", line=lineno)
            props.append((tokens[2], dtype))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(path, f"unsupported PLY format {fmt!r}")
    if vertex_count is None:
        raise ParseError(path, "header has no vertex element")
    for axis in "xyz":
        names = [n for n, _ in props]
        if axis not in names:
            raise ParseError(path, f"vertex element lacks property {axis!r}")
    return fmt, vertex_count, props, body_offset


def _load_ply(path, declared_fmt: str) -> PointCloud:
    data = Path(path).read_bytes()
    fmt, count, props, body = _parse_ply_header(path, data)
    declared = "ascii" if declared_fmt == "ply_ascii" else "binary_little_endian"
    if fmt != declared:
        raise ParseError(path, f"file is PLY {fmt}, expected {declared}")
    names = [n for n, _ in props]
    ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
    if fmt == "ascii":
        return _read_ply_ascii_body(path, data, body, count, len(props), ix, iy, iz)
    return _read_ply_binary_body(path, data, body, count, props, ix, iy, iz)


def _read_ply_ascii_body(path, data, body, count, nprops, ix, iy, iz) -> PointCloud:
    header_lines = data[:body].count(b"\n")
    text = data[body:].decode("ascii", errors="replace")
    pts = np.empty((count, 3), dtype=np.float64)
    got = 0
    for k, raw in enumerate(text.splitlines()):
        if got == count:
            break  # trailing elements are ignored
        lineno = header_lines + 1 + k
        line = raw.strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < nprops:
            raise ParseError(
                path, f"vertex row has {len(tokens)} values, expected {nprops}", line=lineno
            )
        try:
            row = (float(tokens[ix]), float(tokens[iy]), float(tokens[iz]))
        except ValueError:
            raise ParseError(path, f"non-numeric coordinate in {line!r}", line=lineno) from None
        if not all(np.isfinite(row)):
            raise ParseError(path, f"non-finite coordinate in {line!r}", line=lineno)
        pts[got] = row
        got += 1
    if got != count:
        raise ParseError(path, f"expected {count} vertices, found {got}")
    if count == 0:
        raise ParseError(path, "file contains no points")
    return PointCloud(pts)


def _read_ply_binary_body(path, data, body, count, props, ix, iy, iz) -> PointCloud:
    dtype = np.dtype([(f"p{k}", "<" + t) for k, (_, t) in enumerate(props)])
    need = count * dtype.itemsize
    if len(data) - body < need:
        raise ParseError(
            path,
            f"truncated vertex data: need {need} bytes, have {len(data) - body}",
            offset=len(data),
        )
    if count == 0:
        raise ParseError(path, "file contains no points")
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=body)
    pts = np.stack(
        [rec[f"p{ix}"], rec[f"p{iy}"], rec[f"p{iz}"]], axis=1
    ).astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        first = int(np.argmax(bad))
        raise ParseError(
            path, f"non-finite coordinate in vertex {first}", offset=body + first * dtype.itemsize
        )
    return PointCloud(pts)
