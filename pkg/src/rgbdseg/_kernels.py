"""Compiled union-find loops. Everything here works on flat integer/float arrays."""

import numpy as np
from numba import njit


@njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(cache=True)
def _join(parent, rank, size, x, y):
    if rank[x] < rank[y]:
        x, y = y, x
    parent[y] = x
    size[x] += size[y]
    if rank[x] == rank[y]:
        rank[x] += 1
    return x


@njit(cache=True)
def fh_union(a, b, w, order, n, k, min_size):
    """Felzenszwalb-Huttenlocher merging over edges visited in ``order``.

    Returns the root of every node. ``order`` must already exclude
    non-finite weights and be sorted by (weight, a, b).
    """
    parent = np.arange(n)
    rank = np.zeros(n, np.int64)
    size = np.ones(n, np.int64)
    thresh = np.full(n, k)
    for idx in range(order.shape[0]):
        e = order[idx]
        x = _find(parent, a[e])
        y = _find(parent, b[e])
        if x != y:
            we = w[e]
            if we <= thresh[x] and we <= thresh[y]:
                r = _join(parent, rank, size, x, y)
                thresh[r] = we + k / size[r]
    if min_size > 1:
        for idx in range(order.shape[0]):
            e = order[idx]
            x = _find(parent, a[e])
            y = _find(parent, b[e])
            if x != y and (size[x] < min_size or size[y] < min_size):
                _join(parent, rank, size, x, y)
    roots = np.empty(n, np.int64)
    for i in range(n):
        roots[i] = _find(parent, i)
    return roots


@njit(cache=True)
def relabel_first_seen(roots, valid):
    """Map roots to labels 1..R in order of first appearance; invalid nodes get 0."""
    n = roots.shape[0]
    lut = np.zeros(n, np.int64)
    labels = np.zeros(n, np.int32)
    nxt = 0
    for i in range(n):
        if not valid[i]:
            continue
        r = roots[i]
        if lut[r] == 0:
            nxt += 1
            lut[r] = nxt
        labels[i] = lut[r]
    return labels, nxt
