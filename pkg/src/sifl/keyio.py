"""Binary key container.

Layout (all little-endian): magic ``SIFL``, format version u16, then n,
n_tilde, p as u32, followed by row-major IEEE-754 f64 matrices in fixed
order: pi1 (n_tilde x n), pi1_left (n x n_tilde), n1 (n_tilde x (n_tilde-n)),
pi2 (1 x p), pi2_right (p x 1), n2 ((p-1) x p).

Only dense server keys can be serialised; the structured representation for
large models has no row-major dense form of practical size. Loading
revalidates every key invariant and refuses files that fail.
"""

import struct

import numpy as np

from .coding import AggregatorKeys, DenseServerKeys, validate_keys
from .errors import KeyFormatError

MAGIC = b"SIFL"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sHIII")


def save_keys(path, server: DenseServerKeys, agg: AggregatorKeys) -> None:
    if not isinstance(server, DenseServerKeys):
        raise KeyFormatError("only dense server keys can be serialised")
    n, nt, p = server.n, server.n_tilde, agg.p
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, nt, p))
        for mat in (server.pi1, server.pi1_left, server.n1,
                    agg.pi2, agg.pi2_right, agg.n2):
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load_keys(path):
    """Load and revalidate keys; returns (DenseServerKeys, AggregatorKeys)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise KeyFormatError("truncated key file (no header)")
    magic, version, n, nt, p = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise KeyFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise KeyFormatError(f"unsupported format version {version}")
    if not (nt > n >= 1 and p >= 2):
        raise KeyFormatError(f"inconsistent header dims n={n}, n_tilde={nt}, p={p}")

    shapes = [(nt, n), (n, nt), (nt, nt - n), (1, p), (p, 1), (p - 1, p)]
    need = _HEADER.size + 8 * sum(r * c for r, c in shapes)
    if len(blob) != need:
        raise KeyFormatError(f"key file has {len(blob)} bytes, expected {need}")

    mats = []
    off = _HEADER.size
    for rows, cols in shapes:
        count = rows * cols
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(rows, cols)
        mats.append(arr.astype(np.float64))
        off += 8 * count

    pi1, pi1_left, n1, pi2, pi2_right, n2 = mats
    for a in mats:
        a.flags.writeable = False
    server = DenseServerKeys(pi1=pi1, pi1_left=pi1_left, n1=n1)
    agg = AggregatorKeys(pi2=pi2.ravel(), pi2_right=pi2_right.ravel(), n2=n2)

    report = validate_keys(server, agg)
    if not report.passed:
        failed = ", ".join(c.name for c in report.failures())
        raise KeyFormatError(f"loaded keys fail revalidation: {failed}")
    return server, agg
