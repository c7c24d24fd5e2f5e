"""Parameter checkpoint container.

Byte layout (all integers little-endian):

    magic   4 bytes  b"VXPT"
    version u16      currently 1
    count   u32      number of records
    record  repeated:
        name_len u16
        name     name_len bytes, UTF-8
        ndim     u8
        dims     ndim x u64
        data     prod(dims) x f64, little-endian, row-major

Records preserve insertion order, so save/load round trips are byte-stable.
"""

import struct
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .errors import CorruptFileError, UnsupportedFormatError

MAGIC = b"VXPT"
VERSION = 1


def save_params(store: ParamStore, path) -> None:
    with open(path, "wb") as f:
        names = store.names()
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(names)))
        for name in names:
            shape = store[name].data.shape
            data = np.ascontiguousarray(store[name].data, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", len(shape)))
            f.write(struct.pack(f"<{len(shape)}Q", *shape))
            f.write(data.tobytes())


def load_params(path) -> ParamStore:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise UnsupportedFormatError(f"{path.name}: not a parameter checkpoint")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise UnsupportedFormatError(f"{path.name}: unsupported version {version}")
    store = ParamStore()
    off = 10
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}Q", blob, off)
            off += 8 * ndim
            n = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off)
            off += 8 * n
            store.add(name, data.reshape(dims).copy())
    except (struct.error, ValueError) as e:
        raise CorruptFileError(f"{path.name}: truncated checkpoint ({e})") from None
    if off != len(blob):
        raise CorruptFileError(
            f"{path.name}: {len(blob) - off} trailing bytes after {count} records"
        )
    return store
