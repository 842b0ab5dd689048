"""Small shared helpers: canonical JSON, config fingerprints, worker pools."""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable, Sequence


def canonical_json(obj: Any) -> str:
    """Serialize to JSON with sorted keys and no whitespace, for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def fingerprint(obj: Any) -> str:
    """Short stable hash of a JSON-serializable configuration."""
    digest = hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
    return digest[:12]


def write_json(path, obj: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def thread_count() -> int:
    """Worker cap from the MBLR_THREADS environment variable (default 1)."""
    raw = os.environ.get("MBLR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def parallel_map(fn: Callable, items: Sequence) -> list:
    """Ordered map over items, using worker processes when MBLR_THREADS > 1.

    Results are identical to the serial path regardless of worker count:
    every item is processed by the same pure function and results are
    collected in input order. Nested calls from worker processes always
    run serially.
    """
    items = list(items)
    workers = thread_count()
    if multiprocessing.parent_process() is not None:
        workers = 1
    workers = min(workers, len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
