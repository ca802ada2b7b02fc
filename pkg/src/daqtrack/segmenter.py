"""Synthetic per-frame segmenter.

Plays the role of the single-frame segmentation network: for each frame it
emits a fixed number of query slots, each carrying a feature vector, a soft
mask over the pixel grid, class logits, and a foreground score.  Slots bound
to a live object carry its (noisy) prototype; the rest are background slots
built from a fixed initial-query bank.  Pixel features place each object's
prototype on the pixels it covers, so mask pooling recovers appearance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor2
from .scenario import Scenario

LOGIT_MARGIN = 5.0
_BANK_SEED = 90817043


@dataclass(frozen=True)
class NoiseSpec:
    n_queries: int = 20
    num_classes: int = 3           # foreground classes the segmenter can name
    feature_sigma: float = 0.0     # gaussian noise on query/pixel features
    mask_jitter: float = 0.0       # soft-mask perturbation amplitude
    label_flip: float = 0.0        # probability the dominant class is wrong
    miss_rate: float = 0.0         # probability a live object is dropped
    clutter_rate: float = 0.0      # probability a free slot turns into clutter

    def validate(self) -> None:
        if self.n_queries < 1:
            raise ValueError("need at least one query slot")
        if self.num_classes < 1:
            raise ValueError("need at least one foreground class")
        for name in ("feature_sigma", "mask_jitter", "label_flip", "miss_rate",
                     "clutter_rate"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


@dataclass
class FrameObservation:
    queries: Tensor2                 # N x C
    pixel_features: Tensor2          # (H*W) x C
    masks: Tensor2                   # N x (H*W), soft, in [0, 1]
    class_logits: Tensor2            # N x (num_classes + 1); last column = background
    scores: np.ndarray               # (N,) max foreground softmax probability
    gt_binding: list[int | None]     # per-slot ground-truth object id

    @property
    def n_queries(self) -> int:
        return self.queries.rows

    @property
    def num_classes(self) -> int:
        return self.class_logits.cols - 1


def initial_query_bank(n_queries: int, dim: int) -> Tensor2:
    """Fixed unit-norm bank shared by the segmenter's background slots."""
    rng = np.random.default_rng(_BANK_SEED)
    bank = rng.normal(size=(n_queries, dim))
    bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    return Tensor2(bank)


def scores_from_logits(logits: np.ndarray) -> np.ndarray:
    """Max foreground softmax probability per row; background is last."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs[:, :-1].max(axis=1)


def background_slot(slot: int, bank: np.ndarray, num_classes: int,
                    n_pixels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature, mask and logits of an empty (background) query slot."""
    logits = np.zeros(num_classes + 1)
    logits[num_classes] = LOGIT_MARGIN
    return bank[slot].copy(), np.zeros(n_pixels), logits


def synth_segment(scn: Scenario, t: int, noise: NoiseSpec,
                  rng: np.random.Generator) -> FrameObservation:
    """Observe frame ``t`` (1-indexed) through the synthetic segmenter."""
    if not 1 <= t <= scn.frames:
        raise ValueError(f"frame {t} outside [1, {scn.frames}]")
    noise.validate()
    dim = scn.feature_dim
    n_pix = scn.height * scn.width
    num_classes = noise.num_classes
    if any(o.class_id >= num_classes for o in scn.objects):
        raise ValueError("scenario uses class ids beyond the segmenter vocabulary")
    bank = initial_query_bank(noise.n_queries, dim).data

    visible = [o for o in scn.objects
               if o.alive_at(t) and not scn.hidden_at(o.id, t)]
    kept = [o for o in visible if not (noise.miss_rate > 0 and rng.random() < noise.miss_rate)]
    kept = kept[:noise.n_queries]

    slot_order = rng.permutation(noise.n_queries)
    features = np.empty((noise.n_queries, dim))
    masks = np.empty((noise.n_queries, n_pix))
    logits = np.empty((noise.n_queries, num_classes + 1))
    binding: list[int | None] = [None] * noise.n_queries

    # pixel features: topmost covering object's prototype, noise elsewhere
    pixel_features = np.zeros((n_pix, dim))
    for o in scn.objects:
        if o.alive_at(t):
            flat = o.mask_at(t).reshape(-1)
            pixel_features[flat] = o.prototype[0]
    if noise.feature_sigma > 0:
        pixel_features = pixel_features + rng.normal(
            scale=noise.feature_sigma * 0.5, size=pixel_features.shape)

    for k, slot in enumerate(slot_order):
        if k < len(kept):
            obj = kept[k]
            feat = obj.prototype[0].copy()
            if noise.feature_sigma > 0:
                feat = feat + rng.normal(scale=noise.feature_sigma, size=dim)
            soft = obj.mask_at(t).reshape(-1).astype(np.float64)
            if noise.mask_jitter > 0:
                soft = np.clip(soft + rng.normal(scale=0.25 * noise.mask_jitter,
                                                 size=n_pix), 0.0, 1.0)
            cls = obj.class_id
            if noise.label_flip > 0 and rng.random() < noise.label_flip:
                cls = int((cls + 1 + rng.integers(num_classes - 1)) % num_classes) \
                    if num_classes > 1 else cls
            row = np.zeros(num_classes + 1)
            row[cls] = LOGIT_MARGIN
            features[slot], masks[slot], logits[slot] = feat, soft, row
            binding[slot] = obj.id
        elif noise.clutter_rate > 0 and rng.random() < noise.clutter_rate:
            proto = rng.normal(size=dim)
            proto /= np.linalg.norm(proto)
            cy = rng.uniform(1, scn.height - 1)
            cx = rng.uniform(1, scn.width - 1)
            blob = np.zeros((scn.height, scn.width))
            r0, c0 = int(cy), int(cx)
            blob[max(r0 - 1, 0):r0 + 1, max(c0 - 1, 0):c0 + 1] = 1.0
            row = np.zeros(num_classes + 1)
            row[int(rng.integers(num_classes))] = LOGIT_MARGIN
            features[slot], masks[slot], logits[slot] = proto, blob.reshape(-1), row
        else:
            feat, mask, row = background_slot(slot, bank, num_classes, n_pix)
            if noise.feature_sigma > 0:
                feat = feat + rng.normal(scale=noise.feature_sigma, size=dim)
            features[slot], masks[slot], logits[slot] = feat, mask, row

    return FrameObservation(
        queries=Tensor2(features),
        pixel_features=Tensor2(pixel_features),
        masks=Tensor2(masks),
        class_logits=Tensor2(logits),
        scores=scores_from_logits(logits),
        gt_binding=binding,
    )


def frame_rng(video_seed: int, t: int) -> np.random.Generator:
    """Per-frame generator so observations are order-independent."""
    return np.random.default_rng([video_seed, t])
