"""
Hot inner loops: rectangular Hungarian solver and 8-connected labelling.

Each kernel is written once as plain Python over numpy arrays.  When numba is
importable and ``VISTRACK_NUMBA`` is not ``"0"`` the public names are bound to
``njit``-compiled versions; otherwise the interpreted functions are used as-is.
Both variants stay importable (``*_py`` / ``*_jit``) for benchmarking.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "hungarian",
    "label_components",
    "hungarian_py",
    "label_components_py",
    "hungarian_jit",
    "label_components_jit",
]


def hungarian_py(cost):
    """Minimum-cost assignment of every row of an n x m matrix (n <= m).

    Shortest augmenting path with row/column potentials, O(n^2 m).
    Returns ``col_of_row`` (length n).  All entries must be finite.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    # row_of_col[j] is the 1-based row matched to 1-based column j; 0 = free
    row_of_col = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    minv = np.empty(m + 1)
    used = np.zeros(m + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = np.inf
            used[j] = False
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[row_of_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while True:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if row_of_col[j] != 0:
            col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def label_components_py(grid):
    """Label 8-connected foreground components of a boolean grid.

    Labels are 1..n assigned in raster order of each component's first pixel;
    background is 0.  Iterative flood fill with an explicit stack.
    """
    h, w = grid.shape
    labels = np.zeros((h, w), dtype=np.int64)
    stack = np.empty(h * w, dtype=np.int64)
    n = 0
    for y in range(h):
        for x in range(w):
            if not grid[y, x] or labels[y, x] != 0:
                continue
            n += 1
            labels[y, x] = n
            top = 0
            stack[top] = y * w + x
            top += 1
            while top > 0:
                top -= 1
                cy = stack[top] // w
                cx = stack[top] % w
                for dy in range(-1, 2):
                    ny = cy + dy
                    if ny < 0 or ny >= h:
                        continue
                    for dx in range(-1, 2):
                        nx = cx + dx
                        if nx < 0 or nx >= w:
                            continue
                        if grid[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = n
                            stack[top] = ny * w + nx
                            top += 1
    return labels, n


def _env_enabled():
    return os.environ.get("VISTRACK_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

if njit is not None:
    hungarian_jit = njit(cache=True)(hungarian_py)
    label_components_jit = njit(cache=True)(label_components_py)
else:  # pragma: no cover
    hungarian_jit = hungarian_py
    label_components_jit = label_components_py

NUMBA_ENABLED = njit is not None and _env_enabled()

if NUMBA_ENABLED:
    hungarian = hungarian_jit
    label_components = label_components_jit
else:
    hungarian = hungarian_py
    label_components = label_components_py
