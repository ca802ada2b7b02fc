"""Clip-based training with historical matching and simulated events.

Each step samples a clip window, runs the engine teacher-forced (matched
anchors become tracks, tracks whose object is gone are supervised toward
background and dropped), applies the emergence/disappearance simulation,
and takes one decoupled-weight-decay adaptive-moment step.  Everything is
driven by one seeded generator so the loss trace is reproducible.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .anchors import (
    appearance_from_mask,
    build_disappearance_daqs,
    build_emergence_daqs,
    momentum_update,
)
from .autograd import Tensor2, backward, sigmoid
from .eds import EdsConfig, disappearance_sim, emergence_sim
from .engine import (
    DAQ_ENGINE,
    STATIC_ENGINE,
    Engine,
    ModelConfig,
    TrackSet,
    baseline_static_step,
    tracker1_step,
    tracker2_step,
)
from .errors import ScenarioFormatError, TrainingDiverged
from .kernels import ParamStore
from .losses import FrameLossParts, LossConfig, combine_losses, frame_loss_parts
from .matching import assign_residual_to_anchors, historical_match, hungarian
from .scenario import Scenario
from .segmenter import NoiseSpec, synth_segment

CHECKPOINT_MAGIC = b"DAQT"
CHECKPOINT_VERSION = 1
_ENGINE_CODES = {DAQ_ENGINE: 0, STATIC_ENGINE: 1}
_ENGINE_NAMES = {v: k for k, v in _ENGINE_CODES.items()}


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 800
    lr: float = 1e-4
    weight_decay: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_len: int = 5
    batch: int = 1             # clips accumulated per optimizer step
    grad_clip: float = 1.0     # global grad-norm ceiling; 0 disables
    eds_enabled: bool = True

    def __post_init__(self):
        if self.steps < 0 or self.clip_len < 2 or self.batch < 1:
            raise ValueError("need steps >= 0, clip_len >= 2 and batch >= 1")


class AdamW:
    """Adaptive moments with decoupled weight decay, built on ParamStore."""

    def __init__(self, store: ParamStore, lr: float, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, p in self.store.items():
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / bias1
            vhat = self.v[name] / bias2
            p.data = p.data - self.lr * self.weight_decay * p.data \
                - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    total = 0.0
    for _, p in store.items():
        total += float((p.grad**2).sum())
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in store.items():
            p.grad *= factor
    return float(norm)


# ---------------------------------------------------------------------------
# teacher-forced clip


def run_training_clip(engine: Engine, scn: Scenario, frames: list[int],
                      noise: NoiseSpec, eds_cfg: EdsConfig, loss_cfg: LossConfig,
                      rng: np.random.Generator):
    """Forward a clip with supervision-driven lifecycle; returns loss parts.

    Matching follows the persistent-pair rule: a pair formed for a track is
    kept while both sides live; fresh ground truth goes to the anchors via
    their candidates; everything unmatched is pushed to background.
    """
    cfg = engine.cfg
    store = engine.store
    bg = cfg.background_class

    obs_list = [synth_segment(scn, t, noise,
                              np.random.default_rng(int(rng.integers(2**63))))
                for t in frames]
    ds_absent: set[tuple[int, int]] = set()
    if eds_cfg is not None:
        obs_list, ds_records = disappearance_sim(obs_list, eds_cfg, rng)
        ds_absent = {(r.frame_index, r.gt_id) for r in ds_records}

    ts = TrackSet()
    prior: dict[int, int] = {}
    parts: list[FrameLossParts] = []

    for f, (t, obs) in enumerate(zip(frames, obs_list)):
        if eds_cfg is not None and f > 0 and ts.active:
            kept, removed = emergence_sim(ts.active, eds_cfg, rng)
            for tid in removed:
                prior.pop(tid, None)
            for tr in list(ts.active):
                if tr.id in removed:
                    ts.drop_silently(tr)

        alive_eff = [oid for oid in scn.alive_ids(t) if (f, oid) not in ds_absent]
        assignment = historical_match([tr.id for tr in ts.active], alive_eff, prior)

        gt_masks = {oid: scn.object_by_id(oid).mask_at(t).reshape(-1)
                    for oid in alive_eff}
        gt_classes = {oid: scn.object_by_id(oid).class_id for oid in alive_eff}

        if engine.kind == DAQ_ENGINE:
            emg = build_emergence_daqs(obs, engine.daq_config(), store)
            t1res = tracker1_step(ts.active, emg, obs, store, cfg)
            candidates = [a.source for a in emg]
        else:
            t1res = baseline_static_step(ts.active, obs, store, cfg)
            emg = None
            candidates = None

        n_t = len(ts.active)
        anchor_out = t1res.outputs[n_t:]

        if engine.kind == DAQ_ENGINE:
            pairs = assign_residual_to_anchors(
                assignment.residual_gt, candidates, obs, gt_masks, gt_classes,
                loss_cfg.cost_weights)
        else:
            # no candidate provenance: match residual gt against the static
            # anchors' own predictions
            pairs = _match_outputs_to_gt(anchor_out, assignment.residual_gt,
                                         gt_masks, gt_classes, loss_cfg)

        # -- tracker-1 targets
        cls_targets = np.full(len(t1res.outputs), bg, dtype=np.int64)
        mask_rows: list[int] = []
        mask_targets: list[np.ndarray] = []
        for i, tr in enumerate(ts.active):
            gt = assignment.track_to_gt.get(tr.id)
            if gt is not None:
                cls_targets[i] = gt_classes[gt]
                mask_rows.append(i)
                mask_targets.append(gt_masks[gt].astype(np.float64))
            else:
                # object is gone: background class and an empty mask target
                mask_rows.append(i)
                mask_targets.append(np.zeros(obs.pixel_features.rows))
        matched_anchor: dict[int, int] = {}
        for anchor_idx, gt in pairs:
            row = n_t + anchor_idx
            cls_targets[row] = gt_classes[gt]
            mask_rows.append(row)
            mask_targets.append(gt_masks[gt].astype(np.float64))
            matched_anchor[anchor_idx] = gt
        parts.append(frame_loss_parts(
            t1res.class_logits, t1res.mask_logits, cls_targets, mask_rows,
            np.stack(mask_targets) if mask_rows else None,
            bg_weight=loss_cfg.bg_weight))

        # -- tracker-2 targets (disappearance verdicts)
        if engine.kind == DAQ_ENGINE and ts.active:
            dis = build_disappearance_daqs(ts.active, engine.daq_config(), store)
            t2res = tracker2_step(dis, obs, store, cfg)
            t2_targets = []
            for out in t2res.outputs:
                if out.provenance.kind == "dis_anchor":
                    gt = assignment.track_to_gt.get(out.provenance.ref)
                    t2_targets.append(gt_classes[gt] if gt is not None else bg)
                else:
                    t2_targets.append(bg)
            parts.append(frame_loss_parts(
                t2res.class_logits, None, np.asarray(t2_targets), [], None))

        # -- supervision-driven lifecycle for the next frame
        survivors = []
        for i, tr in enumerate(list(ts.active)):
            out = t1res.outputs[i]
            if assignment.track_to_gt.get(tr.id) is None:
                ts.drop_silently(tr)
                prior.pop(tr.id, None)
                continue
            tr.ctq_feat = out.feature
            f_new = appearance_from_mask(sigmoid(out.mask_logits),
                                         obs.pixel_features, store)
            momentum_update(tr, f_new)
            tr.score = out.fg_score()
            tr.last_seen = t
            survivors.append(tr)
        for anchor_idx, gt in matched_anchor.items():
            out = anchor_out[anchor_idx]
            f_first = appearance_from_mask(sigmoid(out.mask_logits),
                                           obs.pixel_features, store)
            track = ts.spawn(out.feature, f_first, out.fg_score(), t, gt_id=gt)
            prior[track.id] = gt
        prior = {tr.id: prior[tr.id] for tr in ts.active if tr.id in prior}

    return combine_losses(parts, loss_cfg)


def _match_outputs_to_gt(anchor_out, residual_gt, gt_masks, gt_classes,
                         loss_cfg: LossConfig):
    """Prediction-based residual matching for the static baseline."""
    if not residual_gt or not anchor_out:
        return []
    w_cls, w_dice, w_bce = loss_cfg.cost_weights
    cost = np.zeros((len(anchor_out), len(residual_gt)))
    for i, out in enumerate(anchor_out):
        z = out.class_logits.data[0]
        m = z.max()
        logp = z - (m + np.log(np.exp(z - m).sum()))
        p = out.mask_values()
        for j, gid in enumerate(residual_gt):
            g = gt_masks[gid].astype(np.float64)
            inter = float((p * g).sum())
            dice = 1.0 - (2 * inter + 1.0) / (p.sum() + g.sum() + 1.0)
            eps = 1e-9
            pc = np.clip(p, eps, 1 - eps)
            bce = float(-(g * np.log(pc) + (1 - g) * np.log(1 - pc)).mean())
            cost[i, j] = w_cls * (-logp[gt_classes[gid]]) + w_dice * dice + w_bce * bce
    return [(i, residual_gt[j]) for i, j in hungarian(cost)]


# ---------------------------------------------------------------------------
# training loop


def train(engine: Engine, scenarios: list[Scenario], train_cfg: TrainConfig,
          noise: NoiseSpec, eds_cfg: EdsConfig | None, loss_cfg: LossConfig,
          seed: int) -> list[tuple[int, float, float, float, float]]:
    """Optimize the engine in place; returns the (step, losses...) trace."""
    if not scenarios:
        raise ValueError("need at least one training scenario")
    rng = np.random.default_rng(seed)
    opt = AdamW(engine.store, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay,
                beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    trace = []
    for step in range(train_cfg.steps):
        scn = scenarios[int(rng.integers(len(scenarios)))]
        span = max(scn.frames - train_cfg.clip_len, 0)
        start = 1 + int(rng.integers(span + 1))
        frames = list(range(start, min(start + train_cfg.clip_len, scn.frames + 1)))
        engine.store.zero_grads()
        total, breakdown = run_training_clip(
            engine, scn, frames, noise,
            eds_cfg if train_cfg.eds_enabled else None, loss_cfg, rng)
        loss_val = total.item()
        if not np.isfinite(loss_val):
            raise TrainingDiverged(
                f"loss became non-finite at step {step}",
                dump={"step": step, "scenario_seed": scn.seed, "frames": frames,
                      "breakdown": breakdown})
        backward(total)
        clip_gradients(engine.store, train_cfg.grad_clip)
        opt.step()
        trace.append((step, loss_val, breakdown["cls"], breakdown["dice"],
                      breakdown["bce"]))
    return trace


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "total", "cls", "dice", "bce"])
        for row in trace:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, engine: Engine) -> None:
    """Versioned binary: header, then length-prefixed named float64 blobs."""
    cfg = engine.cfg
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IIIIIB", CHECKPOINT_VERSION, cfg.dim, cfg.layers,
                             cfg.heads, cfg.num_classes,
                             _ENGINE_CODES[engine.kind]))
        names = sorted(n for n, _ in engine.store.items())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            data = engine.store[name].data
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
            fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_checkpoint(path, cfg: ModelConfig) -> Engine:
    """Rebuild an engine from a checkpoint; shapes must match the config."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ScenarioFormatError("checkpoint: bad magic")
    off = 4
    version, dim, layers, heads, num_classes, kind_code = struct.unpack_from(
        "<IIIIIB", raw, off)
    off += struct.calcsize("<IIIIIB")
    if version != CHECKPOINT_VERSION:
        raise ScenarioFormatError(f"checkpoint: unsupported version {version}")
    if (dim, layers, heads, num_classes) != (cfg.dim, cfg.layers, cfg.heads,
                                             cfg.num_classes):
        raise ScenarioFormatError(
            f"checkpoint built for dim={dim}/layers={layers}/heads={heads}/"
            f"classes={num_classes}, config says {cfg.dim}/{cfg.layers}/"
            f"{cfg.heads}/{cfg.num_classes}")
    kind = _ENGINE_NAMES.get(kind_code)
    if kind is None:
        raise ScenarioFormatError(f"checkpoint: unknown engine code {kind_code}")
    (n_params,) = struct.unpack_from("<I", raw, off)
    off += 4
    store = ParamStore()
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + name_len].decode()
        off += name_len
        rows, cols = struct.unpack_from("<II", raw, off)
        off += 8
        count = rows * cols
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(
            rows, cols).copy()
        off += count * 8
        store.add(name, data)
    if off != len(raw):
        raise ScenarioFormatError("checkpoint: trailing bytes")
    return Engine(kind, cfg, store)
