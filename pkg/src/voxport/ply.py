"""PLY reader/writer for colored point clouds.

Accepted layout: a single ``vertex`` element with float properties
``x, y, z`` followed by uchar properties ``red, green, blue``, in
``ascii`` or ``binary_little_endian`` format. Binary records are
3 x float32 then 3 x uint8, 15 bytes per point.
"""

from pathlib import Path

import numpy as np

from .errors import CorruptFileError, ParseError, UnsupportedFormatError
from .frames import PointCloudFrame

_EXPECTED_PROPS = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
]

_POINT_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("r", "u1"), ("g", "u1"), ("b", "u1")]
)


def _parse_header(f):
    line = f.readline().strip()
    if line != b"ply":
        raise ParseError(f"not a PLY file, first line is {line!r}")
    fmt = None
    count = None
    props = []
    in_vertex = False
    while True:
        raw = f.readline()
        if not raw:
            raise ParseError("header ended before end_header")
        line = raw.strip().decode("ascii", errors="replace")
        if not line or line.startswith("comment"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormatError(f"unsupported format line: {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line: {line!r}")
            if parts[1] == "vertex":
                try:
                    count = int(parts[2])
                except ValueError:
                    raise ParseError(f"malformed vertex count: {line!r}") from None
                in_vertex = True
            else:
                raise UnsupportedFormatError(f"unsupported element: {line!r}")
        elif parts[0] == "property":
            if not in_vertex:
                raise ParseError(f"property before any element: {line!r}")
            if len(parts) != 3:
                raise UnsupportedFormatError(f"unsupported property: {line!r}")
            props.append((parts[1], parts[2]))
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise ParseError("header has no format line")
    if count is None:
        raise ParseError("header has no vertex element")
    if props != _EXPECTED_PROPS:
        raise UnsupportedFormatError(
            f"property layout {props} is not float x,y,z + uchar red,green,blue"
        )
    return fmt, count


def load_ply(path, frame_index: int = 0) -> PointCloudFrame:
    """Load a colored point cloud, preserving file point order."""
    path = Path(path)
    with open(path, "rb") as f:
        fmt, count = _parse_header(f)
        if fmt == "binary_little_endian":
            raw = f.read(count * _POINT_DTYPE.itemsize)
            if len(raw) != count * _POINT_DTYPE.itemsize:
                raise CorruptFileError(
                    f"{path.name}: header declares {count} points but body holds "
                    f"{len(raw) // _POINT_DTYPE.itemsize}"
                )
            rec = np.frombuffer(raw, dtype=_POINT_DTYPE)
            positions = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(
                np.float64
            )
            colors = np.column_stack([rec["r"], rec["g"], rec["b"]])
        else:
            positions = np.empty((count, 3), dtype=np.float64)
            colors = np.empty((count, 3), dtype=np.uint8)
            for i in range(count):
                line = f.readline()
                if not line:
                    raise CorruptFileError(
                        f"{path.name}: header declares {count} points but body holds {i}"
                    )
                parts = line.split()
                if len(parts) != 6:
                    raise CorruptFileError(
                        f"{path.name}: vertex line {i} has {len(parts)} fields, "
                        "expected 6"
                    )
                positions[i] = [np.float32(p) for p in parts[:3]]
                colors[i] = [int(p) for p in parts[3:]]
    return PointCloudFrame(frame_index, positions, colors)


def save_ply(frame: PointCloudFrame, path, binary: bool = True) -> None:
    """Write a frame; binary little-endian by default."""
    path = Path(path)
    n = len(frame)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            rec = np.empty(n, dtype=_POINT_DTYPE)
            pos32 = frame.positions.astype(np.float32)
            rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
            rec["r"], rec["g"], rec["b"] = (
                frame.colors[:, 0],
                frame.colors[:, 1],
                frame.colors[:, 2],
            )
            f.write(rec.tobytes())
        else:
            pos32 = frame.positions.astype(np.float32)
            for i in range(n):
                x, y, z = (repr(float(v)) for v in pos32[i])
                r, g, b = (int(c) for c in frame.colors[i])
                f.write(f"{x} {y} {z} {r} {g} {b}\n".encode("ascii"))
