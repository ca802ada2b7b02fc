"""Training-time emergence and disappearance simulation.

Both simulations act purely on query-level records.  Emergence cases are
fabricated by dropping low-confidence entries from the propagated track
set, so their objects have to be re-acquired through emergence anchors.
Disappearance cases are fabricated by replacing an object's bound
segmenter slots with synthesized background slots on selected frames, so
the disappearance tracker has to learn to retire tracks whose object
vanished from the observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import Track
from .autograd import Tensor2
from .segmenter import FrameObservation, background_slot, initial_query_bank, scores_from_logits

DS_MODES = ("one", "continuous", "random")
ES_MODES = ("threshold", "uniform_drop")


@dataclass(frozen=True)
class EdsConfig:
    es_threshold: float = 0.1
    ds_mode: str = "random"
    ds_rate: float = 0.3
    es_mode: str = "threshold"
    es_drop_p: float = 0.2        # only for es_mode="uniform_drop"

    def __post_init__(self):
        if not 0.0 <= self.es_threshold <= 1.0:
            raise ValueError(f"es_threshold must be in [0, 1], got {self.es_threshold}")
        if not 0.0 <= self.ds_rate <= 1.0:
            raise ValueError(f"ds_rate must be in [0, 1], got {self.ds_rate}")
        if self.ds_mode not in DS_MODES:
            raise ValueError(f"ds_mode must be one of {DS_MODES}")
        if self.es_mode not in ES_MODES:
            raise ValueError(f"es_mode must be one of {ES_MODES}")
        if not 0.0 <= self.es_drop_p <= 1.0:
            raise ValueError(f"es_drop_p must be in [0, 1], got {self.es_drop_p}")


def emergence_sim(tracks: list[Track], cfg: EdsConfig,
                  rng: np.random.Generator) -> tuple[list[Track], list[int]]:
    """Filter the propagated track set; removed ids go into the record.

    Threshold mode drops every track whose last confidence fell below the
    threshold (strictly below, so a zero threshold drops nothing).  The
    uniform-drop alternative removes each track independently.
    """
    kept: list[Track] = []
    removed: list[int] = []
    for tr in tracks:
        if cfg.es_mode == "threshold":
            drop = tr.score < cfg.es_threshold
        else:
            drop = rng.random() < cfg.es_drop_p
        if drop:
            removed.append(tr.id)
        else:
            kept.append(tr)
    return kept, removed


@dataclass(frozen=True)
class DsEdit:
    gt_id: int
    frame_index: int   # position within the clip
    slot: int


def _pick_frames(bound_frames: list[int], mode: str,
                 rng: np.random.Generator) -> list[int]:
    if mode == "one":
        return [int(rng.choice(bound_frames))]
    if mode == "continuous":
        start = int(rng.choice(bound_frames))
        return [f for f in bound_frames if f >= start]
    # random: each frame independently with p=0.5, rejected until nonempty,
    # which is exactly the uniform distribution over nonempty subsets
    while True:
        chosen = [f for f in bound_frames if rng.random() < 0.5]
        if chosen:
            return chosen


def _replace_with_background(obs: FrameObservation, slot: int) -> FrameObservation:
    dim = obs.queries.cols
    n_pix = obs.pixel_features.rows
    bank = initial_query_bank(obs.n_queries, dim).data
    feat, mask, logits = background_slot(slot, bank, obs.num_classes, n_pix)
    queries = obs.queries.data.copy()
    masks = obs.masks.data.copy()
    class_logits = obs.class_logits.data.copy()
    queries[slot] = feat
    masks[slot] = mask
    class_logits[slot] = logits
    binding = list(obs.gt_binding)
    binding[slot] = None
    return FrameObservation(
        queries=Tensor2(queries),
        pixel_features=obs.pixel_features,
        masks=Tensor2(masks),
        class_logits=Tensor2(class_logits),
        scores=scores_from_logits(class_logits),
        gt_binding=binding,
    )


def disappearance_sim(clip_obs: list[FrameObservation], cfg: EdsConfig,
                      rng: np.random.Generator) -> tuple[list[FrameObservation], list[DsEdit]]:
    """Delete selected objects' bound queries on mode-chosen frames.

    Requires ground-truth bindings on the observations (training only).
    Returns edited copies; untouched rows, pixel features, and the input
    observations themselves are left bit-unchanged.
    """
    if len(clip_obs) < 2:
        raise ValueError("disappearance simulation needs a clip of >= 2 frames")
    for obs in clip_obs:
        if obs.gt_binding is None:
            raise ValueError("disappearance simulation needs gt bindings")

    bound_frames: dict[int, list[int]] = {}
    for f, obs in enumerate(clip_obs):
        for b in obs.gt_binding:
            if b is not None:
                bound_frames.setdefault(b, []).append(f)

    edited = list(clip_obs)
    records: list[DsEdit] = []
    for gt_id in sorted(bound_frames):
        if rng.random() >= cfg.ds_rate:
            continue
        for f in _pick_frames(bound_frames[gt_id], cfg.ds_mode, rng):
            slot = edited[f].gt_binding.index(gt_id)
            edited[f] = _replace_with_background(edited[f], slot)
            records.append(DsEdit(gt_id=gt_id, frame_index=f, slot=slot))
    return edited, records
