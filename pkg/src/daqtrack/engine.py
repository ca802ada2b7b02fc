"""Association engine: two-tracker pipeline plus the static-anchor baseline.

Tracker 1 advances continuing tracks and turns emergence anchors into new
tracks; Tracker 2 reads disappearance anchors (together with learnable
background embeddings) through query-axis-normalized cross-attention and
decides which tracks to retire.  The baseline engine shares the exact
block code path but feeds fixed learnable anchor queries and retires a
track when its own class flips to background -- anchor construction is the
only difference between the two engines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import (
    AnchorKind,
    AnchorQuery,
    DaqConfig,
    Track,
    TrackStatus,
    appearance_from_mask,
    build_disappearance_daqs,
    build_emergence_daqs,
    momentum_update,
)
from .autograd import (
    Axis,
    Tensor2,
    add,
    concat_rows,
    matmul,
    mul,
    sigmoid,
    slice_rows,
    transpose,
)
from .errors import InternalStateError
from .kernels import (
    AttentionConfig,
    ParamStore,
    attention,
    init_attention_params,
    init_layer_norm_params,
    init_linear_params,
    init_mlp_params,
    layer_norm,
    linear,
    mlp,
)
from .scenario import Scenario, mask_to_runs, runs_to_mask
from .segmenter import (
    FrameObservation,
    NoiseSpec,
    frame_rng,
    initial_query_bank,
    scores_from_logits,
    synth_segment,
)

DAQ_ENGINE = "daq"
STATIC_ENGINE = "static"


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    heads: int = 4
    layers: int = 3
    num_classes: int = 3
    n_queries: int = 20
    top_k: int = 10
    num_learnable: int = 2
    accept_threshold: float = 0.5
    dup_iou: float = 0.7
    grace_frames: int = 0
    num_static: int | None = None  # None = use top_k
    emg_source: str = "appf"
    emg_usage: str = "pos"
    dis_feat: str = "bank"
    dis_pos: str = "ctqp"

    def __post_init__(self):
        if self.dim < self.heads or self.heads < 1 or self.dim % self.heads:
            raise ValueError(f"dim {self.dim} incompatible with {self.heads} heads")
        if self.layers < 1:
            raise ValueError("need at least one decoder layer")
        if not 1 <= self.top_k <= self.n_queries:
            raise ValueError(f"top_k {self.top_k} outside [1, {self.n_queries}]")
        if self.num_learnable < 1 or self.top_k % self.num_learnable:
            raise ValueError(
                f"top_k {self.top_k} not divisible by num_learnable {self.num_learnable}")
        if not 0.0 <= self.accept_threshold <= 1.01:
            raise ValueError(f"accept_threshold {self.accept_threshold} out of range")
        if not 0.0 <= self.dup_iou <= 1.0:
            raise ValueError(f"dup_iou {self.dup_iou} out of range")
        if self.grace_frames < 0:
            raise ValueError("grace_frames must be >= 0")

    @property
    def static_anchors(self) -> int:
        return self.top_k if self.num_static is None else self.num_static

    @property
    def background_class(self) -> int:
        return self.num_classes


@dataclass(frozen=True)
class Provenance:
    kind: str   # "ctq" | "emg_anchor" | "static_anchor" | "dis_anchor" | "bg_embed"
    ref: int


@dataclass
class FrameOutput:
    provenance: Provenance
    feature: Tensor2                 # 1 x C
    class_logits: Tensor2            # 1 x (num_classes + 1)
    mask_embed: Tensor2 | None = None
    mask_logits: Tensor2 | None = None  # 1 x P

    def fg_score(self) -> float:
        return float(scores_from_logits(self.class_logits.data)[0])

    def pred_class(self) -> int:
        return int(np.argmax(self.class_logits.data[0]))

    def fg_class(self) -> int:
        return int(np.argmax(self.class_logits.data[0, :-1]))

    def is_background(self) -> bool:
        return self.pred_class() == self.class_logits.cols - 1

    def mask_values(self) -> np.ndarray:
        z = self.mask_logits.data[0]
        return 1.0 / (1.0 + np.exp(-z))

    def binary_mask(self) -> np.ndarray:
        return self.mask_values() > 0.5


@dataclass
class TrackerOutputs:
    outputs: list[FrameOutput]
    features: Tensor2 | None = None
    class_logits: Tensor2 | None = None
    mask_logits: Tensor2 | None = None
    attn_weights: list[np.ndarray] = field(default_factory=list)


# ---------------------------------------------------------------------------
# parameters


def _init_decoder(store: ParamStore, prefix: str, cfg: ModelConfig,
                  rng: np.random.Generator) -> None:
    for l in range(cfg.layers):
        p = f"{prefix}.l{l}"
        init_attention_params(store, f"{p}.cross", cfg.dim, rng)
        init_attention_params(store, f"{p}.self", cfg.dim, rng)
        init_mlp_params(store, f"{p}.ffn", cfg.dim, 2 * cfg.dim, rng)
        for ln in ("ln1", "ln2", "ln3"):
            init_layer_norm_params(store, f"{p}.{ln}", cfg.dim)


def _init_shared(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator) -> None:
    # appearance map starts as a near-identity so pooled features pass through
    init_mlp_params(store, "app", cfg.dim, cfg.dim, rng, out_scale=0.05)
    _init_decoder(store, "t1", cfg, rng)
    init_linear_params(store, "t1.cls", cfg.dim, cfg.num_classes + 1, rng)
    init_mlp_params(store, "t1.mask", cfg.dim, cfg.dim, rng)
    # dot-product mask logits need a scale and offset: raw products live in
    # roughly [-1, 1] and background pixels sit at exactly zero
    store.add("t1.mask_gain", np.array([[4.0]]))
    store.add("t1.mask_bias", np.array([[-2.0]]))


def build_daq_params(cfg: ModelConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    _init_shared(store, cfg, rng)
    _init_decoder(store, "t2", cfg, rng)
    init_linear_params(store, "t2.cls", cfg.dim, cfg.num_classes + 1, rng)
    emb_scale = 1.0 / np.sqrt(cfg.dim)
    store.add("daq.emg_embed", rng.normal(scale=emb_scale,
                                          size=(cfg.num_learnable, cfg.dim)))
    store.add("t2.bg_feat", rng.normal(scale=emb_scale,
                                       size=(cfg.num_learnable, cfg.dim)))
    store.add("t2.bg_pos", rng.normal(scale=emb_scale,
                                      size=(cfg.num_learnable, cfg.dim)))
    if cfg.dis_feat == "learn":
        store.add("daq.dis_embed", rng.normal(scale=emb_scale, size=(1, cfg.dim)))
    return store


def build_static_params(cfg: ModelConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    _init_shared(store, cfg, rng)
    emb_scale = 1.0 / np.sqrt(cfg.dim)
    if cfg.static_anchors > 0:
        store.add("saq.feat", rng.normal(scale=emb_scale,
                                         size=(cfg.static_anchors, cfg.dim)))
        store.add("saq.pos", rng.normal(scale=emb_scale,
                                        size=(cfg.static_anchors, cfg.dim)))
    return store


def build_static_anchors(store: ParamStore, cfg: ModelConfig) -> list[AnchorQuery]:
    """Fixed learnable anchors: no candidate information at all."""
    anchors = []
    for i in range(cfg.static_anchors):
        anchors.append(AnchorQuery(
            kind=AnchorKind.EMERGENCE,
            feat=slice_rows(store["saq.feat"], i, i + 1),
            pos=slice_rows(store["saq.pos"], i, i + 1),
            source=i))
    return anchors


# ---------------------------------------------------------------------------
# tracker steps


def _decoder(x: Tensor2, pos: Tensor2, keys: Tensor2, store: ParamStore,
             prefix: str, cfg: ModelConfig, cross_axis: Axis,
             weights_sink: list | None = None) -> Tensor2:
    cross_cfg = AttentionConfig(cfg.dim, cfg.heads, cross_axis)
    self_cfg = AttentionConfig(cfg.dim, cfg.heads, Axis.COLS)
    for l in range(cfg.layers):
        p = f"{prefix}.l{l}"
        ca = attention(add(x, pos), keys, cross_cfg, store, f"{p}.cross",
                       v=keys, weights_out=weights_sink)
        x = layer_norm(add(x, ca), store[f"{p}.ln1.g"], store[f"{p}.ln1.b"])
        qk = add(x, pos)
        sa = attention(qk, qk, self_cfg, store, f"{p}.self", v=x)
        x = layer_norm(add(x, sa), store[f"{p}.ln2.g"], store[f"{p}.ln2.b"])
        x = layer_norm(add(x, mlp(x, store, f"{p}.ffn")),
                       store[f"{p}.ln3.g"], store[f"{p}.ln3.b"])
    return x


def _split_outputs(x: Tensor2, provenances: list[Provenance], store: ParamStore,
                   obs: FrameObservation, with_masks: bool,
                   head_prefix: str) -> TrackerOutputs:
    cls = linear(x, store[f"{head_prefix}.cls.w"], store[f"{head_prefix}.cls.b"])
    mask_embed = mask_logits = None
    if with_masks:
        mask_embed = mlp(x, store, f"{head_prefix}.mask")
        raw = matmul(mask_embed, transpose(obs.pixel_features))
        mask_logits = add(mul(store[f"{head_prefix}.mask_gain"], raw),
                          store[f"{head_prefix}.mask_bias"])
    outputs = []
    for i, prov in enumerate(provenances):
        outputs.append(FrameOutput(
            provenance=prov,
            feature=slice_rows(x, i, i + 1),
            class_logits=slice_rows(cls, i, i + 1),
            mask_embed=slice_rows(mask_embed, i, i + 1) if mask_embed is not None else None,
            mask_logits=slice_rows(mask_logits, i, i + 1) if mask_logits is not None else None,
        ))
    return TrackerOutputs(outputs=outputs, features=x, class_logits=cls,
                          mask_logits=mask_logits)


def tracker1_step(tracks: list[Track], anchors: list[AnchorQuery],
                  obs: FrameObservation, store: ParamStore, cfg: ModelConfig,
                  anchor_kind: str = "emg_anchor",
                  collect_weights: bool = False) -> TrackerOutputs:
    """Joint decode of continuing tracks and emergence-style anchors."""
    if not tracks and not anchors:
        return TrackerOutputs(outputs=[])
    feats = [tr.ctq_feat for tr in tracks] + [a.feat for a in anchors]
    poss = [tr.mom_feat for tr in tracks] + [a.pos for a in anchors]
    for f in feats:
        if f.cols != cfg.dim:
            raise ValueError(f"query dim {f.cols} != model dim {cfg.dim}")
    x = concat_rows(feats) if len(feats) > 1 else feats[0]
    pos = concat_rows(poss) if len(poss) > 1 else poss[0]
    sink = [] if collect_weights else None
    x = _decoder(x, pos, obs.queries, store, "t1", cfg, Axis.COLS, sink)
    provs = ([Provenance("ctq", tr.id) for tr in tracks]
             + [Provenance(anchor_kind, a.source) for a in anchors])
    res = _split_outputs(x, provs, store, obs, with_masks=True, head_prefix="t1")
    if sink:
        res.attn_weights = sink
    return res


def tracker2_step(dis_anchors: list[AnchorQuery], obs: FrameObservation,
                  store: ParamStore, cfg: ModelConfig,
                  collect_weights: bool = False) -> TrackerOutputs:
    """Disappearance verdicts via query-axis-normalized cross-attention."""
    if not dis_anchors:
        return TrackerOutputs(outputs=[])
    feats = [a.feat for a in dis_anchors]
    poss = [a.pos for a in dis_anchors]
    provs = [Provenance("dis_anchor", a.source) for a in dis_anchors]
    n_bg = store["t2.bg_feat"].rows
    for i in range(n_bg):
        feats.append(slice_rows(store["t2.bg_feat"], i, i + 1))
        poss.append(slice_rows(store["t2.bg_pos"], i, i + 1))
        provs.append(Provenance("bg_embed", i))
    x = concat_rows(feats)
    pos = concat_rows(poss)
    sink = [] if collect_weights else None
    x = _decoder(x, pos, obs.queries, store, "t2", cfg, Axis.ROWS, sink)
    res = _split_outputs(x, provs, store, obs, with_masks=False, head_prefix="t2")
    if sink:
        res.attn_weights = sink
    return res


def baseline_static_step(tracks: list[Track], obs: FrameObservation,
                         store: ParamStore, cfg: ModelConfig,
                         collect_weights: bool = False) -> TrackerOutputs:
    """Identical block mechanics, but anchors are fixed learnable queries."""
    anchors = build_static_anchors(store, cfg)
    return tracker1_step(tracks, anchors, obs, store, cfg,
                         anchor_kind="static_anchor", collect_weights=collect_weights)


# ---------------------------------------------------------------------------
# lifecycle


@dataclass(frozen=True)
class TrackEvent:
    kind: str      # "emerged" | "disappeared"
    track_id: int
    frame: int


class TrackSet:
    """Active tracks, id issue, and the append-only event log."""

    def __init__(self):
        self.active: list[Track] = []
        self.next_id = 0
        self.events: list[TrackEvent] = []
        self._bg_streak: dict[int, int] = {}

    def spawn(self, ctq_feat: Tensor2, first_app: Tensor2, score: float,
              frame: int, gt_id: int | None = None) -> Track:
        track = Track.start(self.next_id, ctq_feat, first_app, score, frame, gt_id)
        self.next_id += 1
        self.active.append(track)
        self.events.append(TrackEvent("emerged", track.id, frame))
        return track

    def retire(self, track: Track, frame: int) -> None:
        track.status = TrackStatus.DISAPPEARED
        self.active = [t for t in self.active if t.id != track.id]
        self._bg_streak.pop(track.id, None)
        self.events.append(TrackEvent("disappeared", track.id, frame))

    def drop_silently(self, track: Track) -> None:
        """Remove without an event (training-time simulation only)."""
        self.active = [t for t in self.active if t.id != track.id]
        self._bg_streak.pop(track.id, None)

    def bg_streak(self, track_id: int) -> int:
        return self._bg_streak.get(track_id, 0)

    def note_bg_verdict(self, track_id: int, hit: bool) -> int:
        streak = self._bg_streak.get(track_id, 0) + 1 if hit else 0
        self._bg_streak[track_id] = streak
        return streak

    def replay_active_ids(self) -> set[int]:
        ids: set[int] = set()
        for ev in self.events:
            if ev.kind == "emerged":
                ids.add(ev.track_id)
            else:
                ids.discard(ev.track_id)
        return ids


@dataclass
class GapSample:
    kind: str              # "emergence" | "disappearance"
    anchor_vec: np.ndarray
    target_vec: np.ndarray


def _bin_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def _resolve_background(output_feature: np.ndarray, bank: np.ndarray) -> np.ndarray:
    """The background embedding a retiring query resolved to (max cosine)."""
    nf = np.linalg.norm(output_feature)
    norms = np.linalg.norm(bank, axis=1)
    sims = bank @ output_feature / np.maximum(norms * nf, 1e-12)
    return bank[int(np.argmax(sims))].copy()


def lifecycle_update(ts: TrackSet, t1res: TrackerOutputs,
                     t2res: TrackerOutputs | None, emg_anchors: list[AnchorQuery],
                     dis_anchors: list[AnchorQuery], obs: FrameObservation,
                     store: ParamStore, cfg: ModelConfig, frame: int,
                     engine_kind: str = DAQ_ENGINE,
                     gap_sink: list | None = None) -> tuple[list[Track], dict[int, FrameOutput]]:
    """Apply one frame's verdicts: retire, continue, and spawn tracks.

    Returns the tracks that own an output at this frame (continuing plus
    newly spawned; a track retired at this frame is not among them) and
    their frame outputs keyed by track id.
    """
    prior = list(ts.active)
    n_t = len(prior)
    ctq_out = t1res.outputs[:n_t]
    anchor_out = t1res.outputs[n_t:]

    # -- disappearance verdicts
    retiring: list[Track] = []
    if engine_kind == DAQ_ENGINE:
        verdicts: dict[int, tuple[bool, FrameOutput]] = {}
        if t2res is not None:
            for out in t2res.outputs:
                if out.provenance.kind == "dis_anchor":
                    verdicts[out.provenance.ref] = (out.is_background(), out)
        if set(verdicts) != {tr.id for tr in prior}:
            raise InternalStateError(
                f"verdicts cover tracks {sorted(verdicts)} but active set is "
                f"{sorted(tr.id for tr in prior)}")
        for tr in prior:
            gone, out = verdicts[tr.id]
            streak = ts.note_bg_verdict(tr.id, gone)
            if gone and streak > cfg.grace_frames:
                retiring.append(tr)
                if gap_sink is not None:
                    anc = next(a for a in dis_anchors if a.source == tr.id)
                    gap_sink.append(GapSample(
                        "disappearance",
                        anchor_vec=anc.feat.data[0] + anc.pos.data[0],
                        target_vec=_resolve_background(out.feature.data[0],
                                                       store["t2.bg_feat"].data)))
    else:
        # the criticized formulation: a track vanishes when its own class
        # prediction flips to background
        for tr, out in zip(prior, ctq_out):
            gone = out.is_background()
            streak = ts.note_bg_verdict(tr.id, gone)
            if gone and streak > cfg.grace_frames:
                retiring.append(tr)
                if gap_sink is not None:
                    gap_sink.append(GapSample(
                        "disappearance",
                        anchor_vec=tr.ctq_feat.data[0] + tr.mom_feat.data[0],
                        target_vec=_resolve_background(out.feature.data[0],
                                                       store["saq.feat"].data)))
    retire_ids = {tr.id for tr in retiring}

    # -- continue surviving tracks
    survivors: list[Track] = []
    current_masks: list[np.ndarray] = []
    for tr, out in zip(prior, ctq_out):
        if tr.id in retire_ids:
            continue
        tr.ctq_feat = out.feature
        f_new = appearance_from_mask(sigmoid(out.mask_logits), obs.pixel_features, store)
        momentum_update(tr, f_new)
        tr.score = out.fg_score()
        tr.last_seen = frame
        survivors.append(tr)
        current_masks.append(out.binary_mask())

    for tr in retiring:
        ts.retire(tr, frame)

    # -- accept emergence anchors (dedup: higher score wins, then lower source)
    accepted: list[tuple[Track, FrameOutput]] = []
    order = sorted(range(len(anchor_out)),
                   key=lambda i: (-anchor_out[i].fg_score(),
                                  anchor_out[i].provenance.ref))
    for i in order:
        out = anchor_out[i]
        if out.fg_score() < cfg.accept_threshold:
            continue
        mask = out.binary_mask()
        if any(_bin_iou(mask, m) >= cfg.dup_iou for m in current_masks):
            continue
        f_first = appearance_from_mask(sigmoid(out.mask_logits),
                                       obs.pixel_features, store)
        track = ts.spawn(out.feature, f_first, out.fg_score(), frame)
        accepted.append((track, out))
        current_masks.append(mask)
        if gap_sink is not None:
            anc = emg_anchors[i]
            gap_sink.append(GapSample(
                "emergence", anchor_vec=anc.feat.data[0] + anc.pos.data[0],
                target_vec=out.feature.data[0]))

    owners = survivors + [tr for tr, _ in accepted]
    outputs = {tr.id: out for tr, out in zip(prior, ctq_out) if tr.id not in retire_ids}
    outputs.update({tr.id: out for tr, out in accepted})
    return owners, outputs


# ---------------------------------------------------------------------------
# engine + video runner


@dataclass
class PredFrame:
    t: int
    mask: np.ndarray      # bool (H, W)
    score: float
    class_id: int


@dataclass
class PredTrack:
    id: int
    frames: list[PredFrame]

    @property
    def class_id(self) -> int:
        votes = np.bincount([f.class_id for f in self.frames])
        return int(np.argmax(votes))

    @property
    def first_frame(self) -> int:
        return self.frames[0].t

    @property
    def last_frame(self) -> int:
        return self.frames[-1].t

    def mask_at(self, t: int) -> np.ndarray | None:
        for f in self.frames:
            if f.t == t:
                return f.mask
        return None


@dataclass
class VideoPrediction:
    frames: int
    height: int
    width: int
    tracks: list[PredTrack]
    events: list[TrackEvent]
    gap_samples: list[GapSample] = field(default_factory=list)


class Engine:
    """One trained (or freshly initialized) tracker instance."""

    def __init__(self, kind: str, cfg: ModelConfig, store: ParamStore):
        if kind not in (DAQ_ENGINE, STATIC_ENGINE):
            raise ValueError(f"unknown engine kind {kind!r}")
        self.kind = kind
        self.cfg = cfg
        self.store = store
        self.bank = initial_query_bank(cfg.n_queries, cfg.dim)

    @classmethod
    def fresh(cls, kind: str, cfg: ModelConfig, seed: int) -> "Engine":
        build = build_daq_params if kind == DAQ_ENGINE else build_static_params
        return cls(kind, cfg, build(cfg, seed))

    def daq_config(self) -> DaqConfig:
        return DaqConfig(top_k=self.cfg.top_k, num_learnable=self.cfg.num_learnable,
                         init_query_bank=self.bank, emg_source=self.cfg.emg_source,
                         emg_usage=self.cfg.emg_usage, dis_feat=self.cfg.dis_feat,
                         dis_pos=self.cfg.dis_pos)

    def frame_anchors(self, tracks: list[Track],
                      obs: FrameObservation) -> tuple[list[AnchorQuery], list[AnchorQuery]]:
        if self.kind == STATIC_ENGINE:
            return build_static_anchors(self.store, self.cfg), []
        dcfg = self.daq_config()
        emg = build_emergence_daqs(obs, dcfg, self.store)
        dis = build_disappearance_daqs(tracks, dcfg, self.store)
        return emg, dis

    def step(self, ts: TrackSet, obs: FrameObservation, frame: int,
             gap_sink: list | None = None):
        """Advance one frame at inference time; returns tracks with outputs."""
        emg, dis = self.frame_anchors(ts.active, obs)
        kind = "emg_anchor" if self.kind == DAQ_ENGINE else "static_anchor"
        t1res = tracker1_step(ts.active, emg, obs, self.store, self.cfg,
                              anchor_kind=kind)
        t2res = None
        if self.kind == DAQ_ENGINE:
            t2res = tracker2_step(dis, obs, self.store, self.cfg)
        return lifecycle_update(ts, t1res, t2res, emg, dis, obs, self.store,
                                self.cfg, frame, engine_kind=self.kind,
                                gap_sink=gap_sink)


def run_video(scn: Scenario, engine: Engine, noise: NoiseSpec,
              seed: int, collect_gaps: bool = True) -> VideoPrediction:
    """Frame loop over one scenario; deterministic for a fixed seed."""
    ts = TrackSet()
    rows: dict[int, list[PredFrame]] = {}
    gaps: list[GapSample] = []
    for t in range(1, scn.frames + 1):
        obs = synth_segment(scn, t, noise, frame_rng(seed, t))
        owners, outs = engine.step(ts, obs, t, gap_sink=gaps if collect_gaps else None)
        for tr in owners:
            out = outs[tr.id]
            rows.setdefault(tr.id, []).append(PredFrame(
                t=t, mask=out.binary_mask().reshape(scn.height, scn.width),
                score=out.fg_score(), class_id=out.fg_class()))
        for tr in ts.active:
            tr.detach_state()
    tracks = [PredTrack(id=tid, frames=frames) for tid, frames in sorted(rows.items())]
    return VideoPrediction(frames=scn.frames, height=scn.height, width=scn.width,
                           tracks=tracks, events=list(ts.events), gap_samples=gaps)


# ---------------------------------------------------------------------------
# prediction serialization (the evaluator's input format)


def prediction_to_dict(pred: VideoPrediction) -> dict:
    return {
        "version": 1,
        "T": pred.frames,
        "H": pred.height,
        "W": pred.width,
        "tracks": [
            {
                "id": tr.id,
                "class": tr.class_id,
                "frames": [
                    {"t": f.t, "mask": mask_to_runs(f.mask), "score": float(f.score)}
                    for f in tr.frames
                ],
            }
            for tr in pred.tracks
        ],
        "events": [{"type": ev.kind, "id": ev.track_id, "t": ev.frame}
                   for ev in pred.events],
    }


def prediction_from_dict(doc: dict) -> VideoPrediction:
    T, H, W = int(doc["T"]), int(doc["H"]), int(doc["W"])
    tracks = []
    for rt in doc["tracks"]:
        frames = [PredFrame(t=int(rf["t"]),
                            mask=runs_to_mask(rf["mask"], H, W),
                            score=float(rf["score"]),
                            class_id=int(rt["class"]))
                  for rf in rt["frames"]]
        tracks.append(PredTrack(id=int(rt["id"]), frames=frames))
    events = [TrackEvent(ev["type"], int(ev["id"]), int(ev["t"]))
              for ev in doc.get("events", [])]
    return VideoPrediction(frames=T, height=H, width=W, tracks=tracks, events=events)
