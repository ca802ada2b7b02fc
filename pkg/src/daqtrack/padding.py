"""Spatio-temporal padding of tracked outputs for a downstream refiner.

The tracker emits one variable-length feature sequence per video object;
a temporal refiner wants a fixed N x T x C grid.  Temporal padding fills
the frames outside a track's life with its momentum-weighted appearance
feature held at the nearest boundary; spatial padding then tops the set up
to N sequences with naively-associated query chains ranked by
classification score.  Features inside each track's life are never
altered.  (The refiner network itself is out of scope; this module's
output is its input contract.)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .matching import hungarian
from .segmenter import FrameObservation


@dataclass
class VideoObjectSeq:
    track_id: int
    start: int                      # first active frame, 1-indexed
    end: int                        # last active frame
    features: list[np.ndarray]      # (C,) per active frame
    mom_features: list[np.ndarray]  # (C,) per active frame
    score: float

    def __post_init__(self):
        span = self.end - self.start + 1
        if len(self.features) != span or len(self.mom_features) != span:
            raise ValueError(
                f"track {self.track_id}: {len(self.features)} features for a "
                f"[{self.start}, {self.end}] interval")


def temporal_pad(seqs: list[VideoObjectSeq], total_frames: int) -> np.ndarray:
    """Stack sequences into len(seqs) x T x C with boundary-held padding.

    Slots before the first active frame take the momentum feature at the
    first frame; slots after the last take the one at the last frame.
    """
    if not seqs:
        raise ValueError("temporal_pad: no sequences")
    dim = seqs[0].features[0].shape[0]
    out = np.zeros((len(seqs), total_frames, dim))
    for i, seq in enumerate(seqs):
        if not 1 <= seq.start <= seq.end <= total_frames:
            raise ValueError(
                f"track {seq.track_id}: interval [{seq.start}, {seq.end}] "
                f"outside [1, {total_frames}]")
        for t in range(1, total_frames + 1):
            if t < seq.start:
                out[i, t - 1] = seq.mom_features[0]
            elif t > seq.end:
                out[i, t - 1] = seq.mom_features[-1]
            else:
                out[i, t - 1] = seq.features[t - seq.start]
    return out


@dataclass
class NaiveSeq:
    features: np.ndarray   # T x C
    score: float           # mean classification score along the chain


def naive_associate(obs_list: list[FrameObservation]) -> list[NaiveSeq]:
    """Chain per-frame queries across frames by feature similarity.

    Frame-to-frame Hungarian on negative cosine similarity, the usual
    naive association: slot i of the result follows whatever chain began
    at query i of the first frame.
    """
    if len(obs_list) < 2:
        raise ValueError("naive association needs at least 2 frames")
    n = obs_list[0].n_queries
    chains = [[obs_list[0].queries.data[i]] for i in range(n)]
    scores = [[float(obs_list[0].scores[i])] for i in range(n)]
    current = obs_list[0].queries.data.copy()
    for obs in obs_list[1:]:
        nxt = obs.queries.data
        a = current / np.maximum(np.linalg.norm(current, axis=1, keepdims=True), 1e-12)
        b = nxt / np.maximum(np.linalg.norm(nxt, axis=1, keepdims=True), 1e-12)
        pairs = hungarian(-(a @ b.T))
        for i, j in pairs:
            chains[i].append(nxt[j])
            scores[i].append(float(obs.scores[j]))
            current[i] = nxt[j]
    return [NaiveSeq(features=np.stack(chains[i]), score=float(np.mean(scores[i])))
            for i in range(n)]


@dataclass
class PaddedGrid:
    grid: np.ndarray            # N x T x C
    track_ids: list[int]        # -1 for non-tracked slots
    padded_flags: list[str]     # "tracked" | "naive" | "zero"


def spatial_pad(tracked: np.ndarray, tracked_ids: list[int],
                naive: list[NaiveSeq], total_slots: int) -> PaddedGrid:
    """Top the tracked grid up to exactly ``total_slots`` sequences.

    Tracked sequences come first, then the best-scoring naive chains
    (ties broken by chain index), then zero-feature background rows if the
    naive pool runs dry (flagged).
    """
    n_trc, total_frames, dim = tracked.shape
    if total_slots < 1:
        raise ValueError("need at least one output slot")
    if total_slots < n_trc:
        raise ValueError(f"cannot fit {n_trc} tracked sequences into {total_slots} slots")
    rows = [tracked[i] for i in range(n_trc)]
    ids = list(tracked_ids)
    flags = ["tracked"] * n_trc
    order = sorted(range(len(naive)), key=lambda i: (-naive[i].score, i))
    for i in order[:total_slots - n_trc]:
        rows.append(naive[i].features)
        ids.append(-1)
        flags.append("naive")
    while len(rows) < total_slots:
        rows.append(np.zeros((total_frames, dim)))
        ids.append(-1)
        flags.append("zero")
    return PaddedGrid(grid=np.stack(rows), track_ids=ids, padded_flags=flags)


def extract_sequences(scn, engine, noise, seed: int):
    """Run the tracker and harvest per-track feature/momentum sequences.

    Returns (sequences, observations); the observations feed
    :func:`naive_associate` for spatial padding.
    """
    from .engine import TrackSet
    from .segmenter import frame_rng, synth_segment

    ts = TrackSet()
    feats: dict[int, list[np.ndarray]] = {}
    moms: dict[int, list[np.ndarray]] = {}
    scores: dict[int, list[float]] = {}
    first: dict[int, int] = {}
    last: dict[int, int] = {}
    obs_list = []
    for t in range(1, scn.frames + 1):
        obs = synth_segment(scn, t, noise, frame_rng(seed, t))
        obs_list.append(obs)
        owners, outs = engine.step(ts, obs, t)
        for tr in owners:
            out = outs[tr.id]
            feats.setdefault(tr.id, []).append(out.feature.data[0].copy())
            moms.setdefault(tr.id, []).append(tr.mom_feat.data[0].copy())
            scores.setdefault(tr.id, []).append(out.fg_score())
            first.setdefault(tr.id, t)
            last[tr.id] = t
        for tr in ts.active:
            tr.detach_state()
    seqs = [VideoObjectSeq(track_id=tid, start=first[tid], end=last[tid],
                           features=feats[tid], mom_features=moms[tid],
                           score=float(np.mean(scores[tid])))
            for tid in sorted(feats)]
    return seqs, obs_list


def save_padded_grid(grid: PaddedGrid, blob_path, manifest_path) -> None:
    """Binary blob (same tensor encoding as checkpoints) + JSON manifest."""
    n, t, c = grid.grid.shape
    with open(blob_path, "wb") as fh:
        fh.write(b"DAQP")
        fh.write(struct.pack("<III", n, t, c))
        fh.write(np.ascontiguousarray(grid.grid, dtype="<f8").tobytes())
    manifest = {"N": n, "T": t, "C": c, "track_ids": grid.track_ids,
                "padded_flags": grid.padded_flags}
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
