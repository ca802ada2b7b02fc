"""Anchor-query construction and per-track appearance state.

Emergence anchors are built from the segmenter's highest-scoring
candidates: a learnable embedding (shared round-robin) as the query
feature, the candidate's pooled appearance feature as the positional
embedding.  Disappearance anchors are built per tracked object: the
closest initial-query-bank row as the feature, the track's
momentum-weighted appearance as the positional embedding.  Continuing
tracks carry the same positional convention, so all three query families
enter the tracker in one format.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .autograd import (
    Tensor2,
    add,
    cosine_sim,
    gather_rows,
    mask_pool,
    mul,
    relu,
    scale,
    slice_rows,
    sub,
)
from .kernels import ParamStore, residual_mlp
from .segmenter import FrameObservation

EMG_FEATURE_SOURCES = ("appf", "segq", "segp")
EMG_USAGES = ("pos", "add")
DIS_FEATURE_SOURCES = ("bank", "learn")
DIS_POS_SOURCES = ("ctqp", "ctqf")


class AnchorKind(Enum):
    EMERGENCE = "emergence"
    DISAPPEARANCE = "disappearance"


class TrackStatus(Enum):
    ACTIVE = "active"
    DISAPPEARED = "disappeared"


@dataclass
class AnchorQuery:
    kind: AnchorKind
    feat: Tensor2   # 1 x C
    pos: Tensor2    # 1 x C
    source: int     # candidate slot (emergence) or track id (disappearance)


@dataclass
class Track:
    id: int
    ctq_feat: Tensor2                  # 1 x C, propagated query feature
    mom_feat: Tensor2                  # 1 x C, momentum-weighted appearance
    feat_history: list[Tensor2]        # per-frame appearance features since birth
    score: float                       # last classification confidence
    status: TrackStatus
    born_at: int
    last_seen: int
    gt_id: int | None = None           # training-time binding

    @classmethod
    def start(cls, tid: int, ctq_feat: Tensor2, first_appearance: Tensor2,
              score: float, frame: int, gt_id: int | None = None) -> "Track":
        # momentum state is seeded with the first appearance feature; the
        # blend recursion is only defined from the second frame on
        return cls(id=tid, ctq_feat=ctq_feat, mom_feat=first_appearance,
                   feat_history=[first_appearance], score=score,
                   status=TrackStatus.ACTIVE, born_at=frame, last_seen=frame,
                   gt_id=gt_id)

    def detach_state(self) -> None:
        self.ctq_feat = self.ctq_feat.detach()
        self.mom_feat = self.mom_feat.detach()
        self.feat_history = [f.detach() for f in self.feat_history]


@dataclass
class DaqConfig:
    top_k: int
    num_learnable: int
    init_query_bank: Tensor2           # N_seg x C
    emg_source: str = "appf"
    emg_usage: str = "pos"
    dis_feat: str = "bank"
    dis_pos: str = "ctqp"

    def __post_init__(self):
        if self.num_learnable < 1:
            raise ValueError("num_learnable must be >= 1")
        if self.top_k > self.init_query_bank.rows:
            raise ValueError(
                f"top_k {self.top_k} exceeds segmenter slots {self.init_query_bank.rows}")
        if self.top_k % self.num_learnable != 0:
            raise ValueError(
                f"top_k {self.top_k} not divisible by num_learnable {self.num_learnable}")
        if self.emg_source not in EMG_FEATURE_SOURCES:
            raise ValueError(f"emg_source must be one of {EMG_FEATURE_SOURCES}")
        if self.emg_usage not in EMG_USAGES:
            raise ValueError(f"emg_usage must be one of {EMG_USAGES}")
        if self.dis_feat not in DIS_FEATURE_SOURCES:
            raise ValueError(f"dis_feat must be one of {DIS_FEATURE_SOURCES}")
        if self.dis_pos not in DIS_POS_SOURCES:
            raise ValueError(f"dis_pos must be one of {DIS_POS_SOURCES}")


# ---------------------------------------------------------------------------
# appearance features


def appearance_features(obs: FrameObservation, indices, store: ParamStore) -> Tensor2:
    """Pooled-and-mapped appearance features for the given query slots."""
    masks = gather_rows(obs.masks, indices)
    pooled = mask_pool(obs.pixel_features, masks)
    return residual_mlp(pooled, store, "app")


def appearance_feature(obs: FrameObservation, query_index: int,
                       store: ParamStore) -> Tensor2:
    if not 0 <= query_index < obs.n_queries:
        raise IndexError(f"query index {query_index} out of range")
    return appearance_features(obs, [query_index], store)


def appearance_from_mask(mask_row: Tensor2, pixel_features: Tensor2,
                         store: ParamStore) -> Tensor2:
    """Appearance feature of an arbitrary soft mask (used for track masks)."""
    return residual_mlp(mask_pool(pixel_features, mask_row), store, "app")


# ---------------------------------------------------------------------------
# momentum-weighted appearance


def momentum_update(track: Track, f_new: Tensor2) -> Tensor2:
    """Blend a new appearance feature into the track's momentum state.

    The blend weight is the clamped mean cosine between the new feature and
    every feature seen so far, divided by the new sequence length (note the
    sum has one fewer term than the divisor; kept exactly as specified, so
    the weight stays below 1 for sequences longer than two).  Returns the
    1x1 weight node.
    """
    if track.status is not TrackStatus.ACTIVE:
        raise ValueError(f"track {track.id} is not active")
    if not track.feat_history:
        raise ValueError("momentum_update needs a seeded history")
    t_len = len(track.feat_history) + 1
    acc = cosine_sim(track.feat_history[0], f_new)
    for prev in track.feat_history[1:]:
        acc = add(acc, cosine_sim(prev, f_new))
    beta = relu(scale(acc, 1.0 / t_len))
    one = Tensor2(np.ones((1, 1)))
    track.mom_feat = add(mul(sub(one, beta), track.mom_feat), mul(beta, f_new))
    track.feat_history.append(f_new)
    return beta


def ctq_positional(track: Track) -> Tensor2:
    """Positional embedding of a continuing track (its momentum feature)."""
    if track.status is not TrackStatus.ACTIVE:
        raise ValueError(f"track {track.id} is not active")
    return track.mom_feat


# ---------------------------------------------------------------------------
# anchor construction


def top_candidates(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest scores, ties broken by lower index."""
    order = np.lexsort((np.arange(scores.size), -scores))
    return order[:k]


def build_emergence_daqs(obs: FrameObservation, cfg: DaqConfig,
                         store: ParamStore) -> list[AnchorQuery]:
    """One anchor per top-k candidate, highest score first."""
    if obs.n_queries < cfg.top_k:
        raise ValueError(
            f"observation has {obs.n_queries} queries, need >= top_k {cfg.top_k}")
    cand = top_candidates(obs.scores, cfg.top_k)
    if cfg.emg_source == "appf":
        selected = appearance_features(obs, cand, store)
    elif cfg.emg_source == "segq":
        selected = gather_rows(obs.queries, cand)
    else:  # segp: the candidate slots' initial-query rows
        selected = gather_rows(cfg.init_query_bank, cand)
    embed = store["daq.emg_embed"]
    anchors = []
    for i, slot in enumerate(cand):
        s = i % cfg.num_learnable
        shared = slice_rows(embed, s, s + 1)
        picked = slice_rows(selected, i, i + 1)
        if cfg.emg_usage == "pos":
            feat, pos = shared, picked
        else:  # add: fold the candidate feature into the query feature
            feat = add(shared, picked)
            pos = Tensor2(np.zeros((1, embed.cols)))
        anchors.append(AnchorQuery(kind=AnchorKind.EMERGENCE, feat=feat,
                                   pos=pos, source=int(slot)))
    return anchors


def closest_bank_row(bank: Tensor2, feat: Tensor2) -> int:
    """Bank row with maximal cosine similarity; ties pick the lowest index."""
    f = feat.data[0]
    nf = np.linalg.norm(f)
    if nf < 1e-12:
        return 0
    norms = np.linalg.norm(bank.data, axis=1)
    sims = bank.data @ f / np.maximum(norms * nf, 1e-12)
    return int(np.argmax(sims))  # argmax returns the first maximal index


def build_disappearance_daqs(tracks: list[Track], cfg: DaqConfig,
                             store: ParamStore | None = None) -> list[AnchorQuery]:
    """One anchor per active track (empty list for no tracks)."""
    anchors = []
    for track in tracks:
        if track.status is not TrackStatus.ACTIVE:
            raise ValueError(f"track {track.id} is not active")
        if cfg.dis_feat == "bank":
            row = closest_bank_row(cfg.init_query_bank, track.ctq_feat)
            feat = slice_rows(cfg.init_query_bank, row, row + 1)
        else:  # learn: a dedicated learnable embedding
            if store is None:
                raise ValueError("dis_feat='learn' needs the parameter store")
            feat = slice_rows(store["daq.dis_embed"], 0, 1)
        pos = track.mom_feat if cfg.dis_pos == "ctqp" else track.ctq_feat
        anchors.append(AnchorQuery(kind=AnchorKind.DISAPPEARANCE, feat=feat,
                                   pos=pos, source=track.id))
    return anchors
