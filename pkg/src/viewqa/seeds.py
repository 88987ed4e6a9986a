"""Stable sub-seed derivation.

Every random stage of the pipeline draws its seed from a single root seed
plus a path of names, so any stage can be re-run in isolation and still
reproduce. Python's built-in hash() is salted per process and must not be
used here.
"""

import hashlib

_MASK = (1 << 63) - 1


def derive_seed(root: int, *names) -> int:
    """Derive a deterministic 63-bit sub-seed from a root seed and name path.

    The same (root, names) always yields the same value, independent of
    platform and PYTHONHASHSEED.
    """
    h = hashlib.blake2s(digest_size=8)
    h.update(str(int(root)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little") & _MASK
