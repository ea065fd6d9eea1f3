"""Region adjacency graph, Kruskal dendrogram and percentage cuts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import FeatureTable
from .graph_seg import LATTICE_OFFSETS, Segmentation
from .temporal_match import MatchParams, edge_terms

DEFAULT_ZETA = 0.65

# The size term compares raw toxel counts; inside one window it would rank
# merges by size similarity rather than appearance, so it is off by default.
DEFAULT_S_WEIGHTS = MatchParams.ungated(beta=1.0, gamma=10.0, epsilon=0.0)


@dataclass(frozen=True)
class RegionEdges:
    """Undirected region pairs (1-based labels, ``a < b``) with weights."""

    a: np.ndarray
    b: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return self.a.shape[0]


def adjacent_pairs(labels_volume: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Label pairs ``(a < b)`` with at least one 26-adjacent toxel pair; label 0 ignored."""
    vol = labels_volume.astype(np.int64)
    t, h, w = vol.shape
    n = int(vol.max()) + 1
    keys = []
    for dt, dj, di in LATTICE_OFFSETS:
        src = vol[: t - dt, max(0, -dj) : h - max(0, dj), max(0, -di) : w - max(0, di)]
        dst = vol[dt:, max(0, dj) : h + min(0, dj), max(0, di) : w + min(0, di)]
        m = (src != dst) & (src > 0) & (dst > 0)
        lo = np.minimum(src[m], dst[m])
        hi = np.maximum(src[m], dst[m])
        keys.append(np.unique(lo * n + hi))
    if not keys:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    key = np.unique(np.concatenate(keys))
    return key // n, key % n


def build_s_graph(seg: Segmentation, feats: FeatureTable, shape, params: MatchParams | None = None) -> RegionEdges:
    """One edge per pair of touching regions, weighted by the region distance.

    Only ``beta``, ``gamma`` and ``epsilon`` of ``params`` are used.
    """
    p = params or DEFAULT_S_WEIGHTS
    a, b = adjacent_pairs(seg.volume(shape))
    dh, dd, dn = edge_terms(feats, a - 1, b - 1)
    weight = p.beta * dh + p.gamma * dd + p.epsilon * dn
    return RegionEdges(a, b, weight)


@dataclass(frozen=True, eq=False)
class Dendrogram:
    """Binary merge tree over ``n_leaves`` regions.

    Leaf ``r`` (0-based) is region label ``r + 1``; merge ``m`` creates node
    ``n_leaves + m`` from ``children[m]``. ``leaf_pairs[m]`` is the region
    pair whose adjacency edge triggered the merge.
    """

    n_leaves: int
    children: np.ndarray
    weights: np.ndarray
    leaf_pairs: np.ndarray

    @property
    def n_merges(self) -> int:
        return self.weights.shape[0]

    @property
    def n_components(self) -> int:
        return self.n_leaves - self.n_merges

    def to_text(self) -> str:
        lines = [f"leaves {self.n_leaves}"]
        for m in range(self.n_merges):
            a, b = self.children[m]
            lines.append(f"merge {m} {a} {b} {float(self.weights[m])!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "Dendrogram":
        n_leaves = None
        children, weights = [], []
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "leaves":
                n_leaves = int(parts[1])
            elif parts[0] == "merge":
                children.append((int(parts[2]), int(parts[3])))
                weights.append(float(parts[4]))
        if n_leaves is None:
            n_leaves = len(children) + 1 if children else 1
        children_arr = np.array(children, np.int64).reshape(-1, 2)
        return cls(n_leaves, children_arr, np.array(weights), _leaf_pairs(n_leaves, children_arr))

    @classmethod
    def load(cls, path) -> "Dendrogram":
        return cls.from_text(Path(path).read_text())


def _leaf_pairs(n_leaves: int, children: np.ndarray) -> np.ndarray:
    # any leaf of each child identifies the merge for cutting purposes
    rep = list(range(n_leaves))
    out = np.zeros_like(children)
    for m, (a, b) in enumerate(children):
        out[m] = (rep[a], rep[b])
        rep.append(min(rep[a], rep[b]))
    return out


def kruskal_dendrogram(edges: RegionEdges, n_regions: int) -> Dendrogram:
    """Minimum spanning forest by Kruskal; every accepted edge becomes a merge node.

    Edges are taken by ascending ``(weight, a, b)``.
    """
    parent = list(range(n_regions))
    node = list(range(n_regions))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    order = np.lexsort((edges.b, edges.a, edges.weight))
    children, weights, pairs = [], [], []
    for e in order:
        la, lb = int(edges.a[e]) - 1, int(edges.b[e]) - 1
        ra, rb = find(la), find(lb)
        if ra == rb:
            continue
        children.append((node[ra], node[rb]))
        weights.append(float(edges.weight[e]))
        pairs.append((la, lb))
        parent[rb] = ra
        node[ra] = n_regions + len(children) - 1
        if len(children) == n_regions - 1:
            break
    return Dendrogram(
        n_regions,
        np.array(children, np.int64).reshape(-1, 2),
        np.array(weights, np.float64),
        np.array(pairs, np.int64).reshape(-1, 2),
    )


def merges_for(d: Dendrogram, zeta: float) -> int:
    """Number of Kruskal merges applied at fraction ``zeta`` (floor semantics)."""
    if not 0.0 <= zeta <= 1.0:
        raise ValueError(f"zeta must lie in [0, 1], got {zeta}")
    # the epsilon keeps e.g. 0.29 * 100 from flooring to 28
    return min(d.n_merges, int(math.floor(zeta * d.n_merges + 1e-9)))


def cut_dendrogram(d: Dendrogram, zeta: float) -> np.ndarray:
    """Label lookup table after applying the first ``floor(zeta * merges)`` merges.

    Returns ``lut`` of length ``n_leaves + 1`` with ``lut[0] == 0``; new labels
    are numbered in order of their smallest member leaf.
    """
    count = merges_for(d, zeta)
    parent = np.arange(d.n_leaves)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in d.leaf_pairs[:count]:
        ra, rb = find(a), find(b)
        parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(x) for x in range(d.n_leaves)], np.int64)
    _, first = np.unique(roots, return_index=True)
    order = np.argsort(first)
    new_label = np.zeros(d.n_leaves, np.int64)
    new_label[first[order]] = np.arange(1, order.shape[0] + 1)
    lut = np.zeros(d.n_leaves + 1, np.int64)
    lut[1:] = new_label[roots]
    return lut


def apply_cut(seg: Segmentation, lut: np.ndarray) -> Segmentation:
    return Segmentation(lut[seg.labels].astype(np.int32), int(lut.max()))
