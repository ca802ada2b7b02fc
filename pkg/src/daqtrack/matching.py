"""Bipartite matching between predictions and ground truth.

Three layers: an O(n^3) Hungarian solver with lexicographic tie-breaking,
the persistent prediction-to-ground-truth bookkeeping (matches formed for
a track are kept while the track lives, and matched ground truth leaves
the pool), and the per-frame residual matching that hands the remaining
ground truth to emergence anchors through their candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InternalStateError
from .segmenter import FrameObservation

_TIE_TOL = 1e-9


def _hungarian_core(cost: np.ndarray) -> list[tuple[int, int]]:
    """Optimal assignment via shortest augmenting paths with potentials.

    Requires rows <= cols; returns one pair per row.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    way = np.zeros(m + 1, dtype=np.int64)
    p = np.full(m + 1, n, dtype=np.int64)  # p[j] = row matched to column j

    for i in range(n):
        p[m] = i
        j0 = m
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = -1
            for j in range(m):
                if not used[j]:
                    cur = cost[i0, j] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == n:
                break
        while j0 != m:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = [(int(p[j]), j) for j in range(m) if p[j] != n]
    return pairs


def _min_cost(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    if cost.shape[0] <= cost.shape[1]:
        pairs = _hungarian_core(cost)
    else:
        pairs = [(c, r) for r, c in _hungarian_core(cost.T)]
    return float(sum(cost[r, c] for r, c in pairs))


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimal-cost matching of min(rows, cols) pairs.

    Among equal-cost optima, returns the one whose sorted pair list is
    lexicographically smallest (float ties compared within 1e-9).  An empty
    matrix yields an empty matching.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got ndim={cost.ndim}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []

    size = min(n, m)
    opt = _min_cost(cost)
    tol = _TIE_TOL * max(1.0, float(np.abs(cost).max()))

    pairs: list[tuple[int, int]] = []
    fixed_cost = 0.0
    rows_left = list(range(n))
    cols_left = list(range(m))
    while len(pairs) < size:
        row = rows_left[0]
        chosen = None
        for col in cols_left:
            rs = [r for r in rows_left if r != row]
            cs = [c for c in cols_left if c != col]
            need = size - len(pairs) - 1
            rest = 0.0
            if need > 0:
                sub = cost[np.ix_(rs, cs)]
                rest = _min_cost(sub) if min(sub.shape) >= need else np.inf
                # when fewer rows than needed remain, this row must be skipped
                if min(len(rs), len(cs)) < need:
                    rest = np.inf
            total = fixed_cost + cost[row, col] + rest
            if total <= opt + tol:
                chosen = col
                break
        if chosen is None:
            # row stays unmatched (only possible when rows > cols)
            rows_left.remove(row)
            continue
        pairs.append((row, chosen))
        fixed_cost += cost[row, chosen]
        rows_left.remove(row)
        cols_left.remove(chosen)
    return pairs


def matching_cost(pairs: list[tuple[int, int]], cost: np.ndarray) -> float:
    return float(sum(cost[r, c] for r, c in pairs))


# ---------------------------------------------------------------------------
# historical matching


@dataclass
class Assignment:
    """Persistent track-to-ground-truth pairs plus this frame's residuals."""

    track_to_gt: dict[int, int] = field(default_factory=dict)
    anchor_pairs: list[tuple[int, int]] = field(default_factory=list)  # (anchor idx, gt id)
    background_tracks: list[int] = field(default_factory=list)  # tracks whose gt is gone
    residual_gt: list[int] = field(default_factory=list)


def historical_match(active_track_ids: list[int], alive_gt_ids: list[int],
                     prior: dict[int, int]) -> Assignment:
    """Keep history for living pairs; release the rest.

    A track whose ground truth is no longer alive goes to
    ``background_tracks`` (it must learn to vanish); ground truth not
    claimed by any kept pair lands in the residual pool for the anchors.
    """
    active = set(active_track_ids)
    for tid in prior:
        if tid not in active:
            raise InternalStateError(
                f"assignment history references track {tid} which is not active")
    alive = set(alive_gt_ids)
    out = Assignment()
    for tid in active_track_ids:
        gt = prior.get(tid)
        if gt is None:
            out.background_tracks.append(tid)
        elif gt in alive:
            out.track_to_gt[tid] = gt
        else:
            out.background_tracks.append(tid)
    claimed = set(out.track_to_gt.values())
    out.residual_gt = [g for g in alive_gt_ids if g not in claimed]
    return out


def candidate_gt_cost(obs: FrameObservation, slot: int, gt_mask: np.ndarray,
                      gt_class: int, weights: tuple[float, float, float]) -> float:
    """Matching cost between a segmenter candidate and one ground truth.

    Class negative log-likelihood plus soft-mask dice and binary
    cross-entropy costs, weighted like the loss terms.
    """
    w_cls, w_dice, w_bce = weights
    z = obs.class_logits.data[slot]
    m = z.max()
    logp = z - (m + np.log(np.exp(z - m).sum()))
    nll = -logp[gt_class]

    p = obs.masks.data[slot]
    g = gt_mask.astype(np.float64)
    inter = float((p * g).sum())
    dice = 1.0 - (2.0 * inter + 1.0) / (p.sum() + g.sum() + 1.0)

    eps = 1e-9
    pc = np.clip(p, eps, 1.0 - eps)
    bce = float(-(g * np.log(pc) + (1.0 - g) * np.log(1.0 - pc)).mean())
    return float(w_cls * nll + w_dice * dice + w_bce * bce)


def assign_residual_to_anchors(residual_gt: list[int], candidate_slots: list[int],
                               obs: FrameObservation, gt_masks: dict[int, np.ndarray],
                               gt_classes: dict[int, int],
                               weights: tuple[float, float, float]) -> list[tuple[int, int]]:
    """Hungarian over (candidate, remaining gt); returns (anchor idx, gt id)."""
    if not residual_gt or not candidate_slots:
        return []
    cost = np.zeros((len(candidate_slots), len(residual_gt)))
    for i, slot in enumerate(candidate_slots):
        for j, gid in enumerate(residual_gt):
            cost[i, j] = candidate_gt_cost(obs, slot, gt_masks[gid],
                                           gt_classes[gid], weights)
    return [(i, residual_gt[j]) for i, j in hungarian(cost)]
