"""Region distances and identity tracking across overlapping windows.

Regions are compared by the L1 distance of their normalised LABXYZUVW
histograms, the displacement of their centroids relative to region size, and
their size difference. Two regions of consecutive windows are linked when
each is the other's closest admissible candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .features import FeatureTable, RegionFeatures

logger = logging.getLogger(__name__)


@dataclass
class MatchParams:
    beta: float = 1.0
    gamma: float = 10.0
    epsilon: float = 0.001
    max_dh: float = 9.0
    max_dd: float = 0.05
    # size gate is relative: |R_N - S_N| <= max_dn_ratio * max(R_N, S_N)
    max_dn_ratio: float = 0.5
    restrict_candidates: bool = True
    bbox_margin: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")

    @classmethod
    def ungated(cls, **kw) -> "MatchParams":
        return cls(max_dh=np.inf, max_dd=np.inf, max_dn_ratio=np.inf, restrict_candidates=False, **kw)


def _normalized(hist: np.ndarray, count) -> np.ndarray:
    count = np.asarray(count, dtype=np.float64)
    # a histogram with no contributors (no flow) normalises to all zeros
    return hist / np.where(count > 0, count, 1.0)[..., None]


def histogram_distance(r: RegionFeatures, s: RegionFeatures) -> float:
    """Sum over the nine histograms of the L1 distance between normalised counts."""
    total = 0.0
    for hr, hs, cr, cs in zip(r.hists, s.hists, r.hist_counts, s.hist_counts):
        if hr.shape != hs.shape:
            raise ValueError("histogram bin configurations differ")
        total += float(np.abs(_normalized(hr, cr) - _normalized(hs, cs)).sum())
    return total


def centroid_distance(r: RegionFeatures, s: RegionFeatures, steps: float = 0.0) -> float:
    """Sum of absolute centroid offsets divided by ``r``'s size.

    ``s`` is first moved forward ``steps`` frames along its mean scene flow.
    """
    moved = s.centroid + steps * s.mean_flow
    return float(np.abs(r.centroid - moved).sum() / r.size)


def size_distance(r: RegionFeatures, s: RegionFeatures) -> float:
    return float(abs(int(r.size) - int(s.size)))


@dataclass(frozen=True)
class RegionDistance:
    h: float
    dh: float
    dd: float
    dn: float
    gates: tuple[bool, bool, bool]

    @property
    def admissible(self) -> bool:
        return not any(self.gates)


def region_distance(r: RegionFeatures, s: RegionFeatures, p: Optional[MatchParams] = None,
                    steps: float = 0.0) -> RegionDistance:
    """Weighted distance ``beta*dH + gamma*dd + epsilon*dN`` plus per-term gate violations."""
    p = p or MatchParams()
    dh = histogram_distance(r, s)
    dd = centroid_distance(r, s, steps)
    dn = size_distance(r, s)
    h = p.beta * dh + p.gamma * dd + p.epsilon * dn
    gates = (dh > p.max_dh, dd > p.max_dd, dn > p.max_dn_ratio * max(r.size, s.size))
    return RegionDistance(h, dh, dd, dn, gates)


# ---------------------------------------------------------------------------
# vectorised forms over feature tables


def pairwise_terms(cur: FeatureTable, prev: FeatureTable, steps: float = 0.0):
    """``(dH, dd, dN)`` matrices of shape ``(len(cur), len(prev))``."""
    dh = np.zeros((len(cur), len(prev)))
    for k in range(len(cur.hists)):
        a = _normalized(cur.hists[k], cur.hist_counts[:, k])
        b = _normalized(prev.hists[k], prev.hist_counts[:, k])
        dh += np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
    moved = prev.centroid + steps * prev.mean_flow
    dd = np.abs(cur.centroid[:, None, :] - moved[None, :, :]).sum(axis=2) / cur.sizes[:, None]
    dn = np.abs(cur.sizes[:, None].astype(np.float64) - prev.sizes[None, :])
    return dh, dd, dn


def edge_terms(table: FeatureTable, a: np.ndarray, b: np.ndarray):
    """``(dH, dd, dN)`` for region pairs ``(a[e], b[e])`` of one table (0-based).

    Within one window neither region comes first, so the centroid term averages
    the two directed normalisations to stay symmetric.
    """
    dh = np.zeros(a.shape[0])
    for k in range(len(table.hists)):
        n = _normalized(table.hists[k], table.hist_counts[:, k])
        dh += np.abs(n[a] - n[b]).sum(axis=1)
    sad = np.abs(table.centroid[a] - table.centroid[b]).sum(axis=1)
    dd = 0.5 * (sad / table.sizes[a] + sad / table.sizes[b])
    dn = np.abs(table.sizes[a].astype(np.float64) - table.sizes[b])
    return dh, dd, dn


def _bbox_overlap(cur: FeatureTable, prev: FeatureTable, steps: int, margin: float) -> np.ndarray:
    """Candidate mask: boxes overlap (within ``margin``) in the frames both windows share.

    Frame ``t`` of ``prev`` is frame ``t - steps`` of ``cur``. Both boxes
    then describe the same time instants, so no motion compensation is
    needed. Without shared frames the whole-window boxes are compared after
    moving ``prev`` along its mean flow.
    """
    steps = int(round(steps))
    shared = min(prev.n_frames - steps, cur.n_frames)
    if steps >= 0 and shared > 0:
        plo, phi = prev.bbox(slice(steps, steps + shared))
        clo, chi = cur.bbox(slice(0, shared))
    else:
        shift = steps * prev.mean_flow
        plo, phi = prev.bbox()
        plo, phi = plo + shift, phi + shift
        clo, chi = cur.bbox()
    plo, phi = plo - margin, phi + margin
    return np.all((clo[:, None, :] <= phi[None, :, :]) & (plo[None, :, :] <= chi[:, None, :]), axis=2)


def distance_matrix(cur: FeatureTable, prev: FeatureTable, p: MatchParams, steps: float = 0.0):
    """Return ``(h, admissible, terms)``; ``h`` is ``inf`` wherever a gate fails."""
    dh, dd, dn = pairwise_terms(cur, prev, steps)
    h = p.beta * dh + p.gamma * dd + p.epsilon * dn
    bigger = np.maximum(cur.sizes[:, None], prev.sizes[None, :])
    ok = (dh <= p.max_dh) & (dd <= p.max_dd) & (dn <= p.max_dn_ratio * bigger)
    if p.restrict_candidates:
        ok &= _bbox_overlap(cur, prev, steps, p.bbox_margin)
    return np.where(ok, h, np.inf), ok, (dh, dd, dn)


def mutual_best_matching(h: np.ndarray) -> list[tuple[int, int]]:
    """Iteratively fix every pair that is each side's best finite choice.

    ``h[r, s]`` is the distance of row ``r`` to column ``s`` (``inf`` =
    inadmissible). Ties are broken by the lower index. The loop stops when
    no finite entry remains among unmatched rows and columns.
    """
    h = np.array(h, dtype=np.float64, copy=True)
    pairs: list[tuple[int, int]] = []
    if h.size == 0:
        return pairs
    rows = np.arange(h.shape[0])
    while True:
        finite = np.isfinite(h)
        if not finite.any():
            break
        live_r = finite.any(axis=1)
        live_c = finite.any(axis=0)
        row_best = np.argmin(h, axis=1)  # argmin returns the first (lowest) index on ties
        col_best = np.argmin(h, axis=0)
        found = []
        for r in rows[live_r]:
            s = row_best[r]
            if live_c[s] and col_best[s] == r:
                found.append((int(r), int(s)))
        for r, s in found:
            h[r, :] = np.inf
            h[:, s] = np.inf
        pairs.extend(found)
    pairs.sort()
    return pairs


def blocking_pairs(h: np.ndarray, pairs) -> list[tuple[int, int]]:
    """Admissible pairs that both strictly prefer each other to their assignment."""
    h = np.asarray(h, dtype=np.float64)
    row_cost = np.full(h.shape[0], np.inf)
    col_cost = np.full(h.shape[1], np.inf)
    for r, s in pairs:
        row_cost[r] = h[r, s]
        col_cost[s] = h[r, s]
    out = []
    for r in range(h.shape[0]):
        for s in range(h.shape[1]):
            if np.isfinite(h[r, s]) and h[r, s] < row_cost[r] and h[r, s] < col_cost[s]:
                out.append((r, s))
    return out


@dataclass
class Track:
    features: RegionFeatures
    last_window: int


@dataclass
class TrackState:
    """Global identities of the regions of the most recent window."""

    next_global_id: int = 1
    tracks: dict[int, Track] = field(default_factory=dict)
    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    table: Optional[FeatureTable] = None
    window: int = -1

    def fresh(self) -> int:
        gid = self.next_global_id
        self.next_global_id += 1
        return gid


@dataclass
class MatchResult:
    global_ids: np.ndarray
    pairs: list[tuple[int, int]]
    h: np.ndarray
    terms: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None

    @property
    def n_new(self) -> int:
        return len(self.global_ids) - len(self.pairs)


def match_windows(
    prev_regions: Optional[FeatureTable],
    cur_regions: FeatureTable,
    p: MatchParams,
    state: TrackState,
    steps: float = 0.0,
) -> MatchResult:
    """Assign global IDs to ``cur_regions`` and advance ``state``.

    ``prev_regions`` must be the table whose IDs ``state`` currently holds
    (``None`` for the first window). ``steps`` is the frame offset between the
    windows, used to move previous centroids along their flow.
    """
    n_cur = len(cur_regions)
    gids = np.zeros(n_cur, np.int64)
    if prev_regions is None or len(prev_regions) == 0:
        h = np.full((n_cur, 0), np.inf)
        pairs: list[tuple[int, int]] = []
        terms = None
    else:
        if len(state.ids) != len(prev_regions):
            raise ValueError("track state does not describe the previous window's regions")
        h, _, terms = distance_matrix(cur_regions, prev_regions, p, steps)
        pairs = mutual_best_matching(h)
    matched = np.zeros(n_cur, bool)
    for r, s in pairs:
        gids[r] = state.ids[s]
        matched[r] = True
    for r in range(n_cur):
        if not matched[r]:
            gids[r] = state.fresh()
    window = state.window + 1
    state.tracks = {int(g): Track(cur_regions[r], window) for r, g in enumerate(gids)}
    state.ids = gids
    state.table = cur_regions
    state.window = window
    logger.debug("window %d: %d regions, %d matched", window, n_cur, len(pairs))
    return MatchResult(gids, pairs, h, terms)


def calibrate_gates(term_samples, sigmas: float = 3.0) -> dict[str, float]:
    """Gate thresholds as mean + ``sigmas`` std of matched-pair terms.

    ``term_samples`` is an iterable of ``(dh, dd, dn_ratio)`` tuples, where
    ``dn_ratio`` is ``|R_N - S_N| / max(R_N, S_N)``.
    """
    arr = np.asarray(list(term_samples), dtype=np.float64).reshape(-1, 3)
    if arr.shape[0] == 0:
        raise ValueError("no matched pairs to calibrate from")
    gate = arr.mean(axis=0) + sigmas * arr.std(axis=0)
    return {"max_dh": float(gate[0]), "max_dd": float(gate[1]), "max_dn_ratio": float(gate[2])}
