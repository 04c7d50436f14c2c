"""Row-chunked evaluation with a fixed chunk layout.

Chunk boundaries depend only on the row count, never on the worker count,
so results are identical for any ``n_jobs``.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_ROWS = 4096


def chunk_slices(n_rows, chunk_rows=CHUNK_ROWS):
    return [slice(i, min(i + chunk_rows, n_rows)) for i in range(0, n_rows, chunk_rows)]


def map_chunks(func, n_rows, n_jobs=1, chunk_rows=CHUNK_ROWS):
    """Apply ``func(slice_index, slice)`` to each chunk and concatenate in order."""
    slices = chunk_slices(n_rows, chunk_rows)
    if not slices:
        return []
    jobs = 1 if n_jobs is None else int(n_jobs)
    if jobs <= 1 or len(slices) == 1:
        return [func(i, s) for i, s in enumerate(slices)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda args: func(*args), enumerate(slices)))


def concat_rows(parts, empty_shape):
    if not parts:
        return np.empty(empty_shape)
    return np.concatenate(parts, axis=0)
