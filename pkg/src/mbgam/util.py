"""Small shared helpers: ordered thread maps, hashing, float formatting."""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path


def pmap(fn, items, threads: int = 1) -> list:
    """Map preserving input order; threaded when ``threads`` > 1.

    Results are collected in submission order, so reductions over the output
    are identical for any thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt_float(v) -> str:
    """Shortest decimal string that round-trips the float exactly."""
    return repr(float(v))
