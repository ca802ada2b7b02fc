"""Event-level metrics: emergence/disappearance recall, association
accuracy on the event subset, and anchor-to-target transition gaps.

The recall protocol is this artifact's own definition (documented in the
README): an emergence is recalled when a predicted track starts within the
frame tolerance of the object's first frame and overlaps it; a
disappearance is recalled when the object's own track does not go on to
overlap some other object after the death (drifting onto a lookalike
counts as a miss).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import Engine, GapSample, PredTrack, VideoPrediction, run_video
from .errors import EmptyReportError
from .scenario import Scenario
from .segmenter import NoiseSpec

REPORT_VERSION = 1


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def video_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_003 + index


# ---------------------------------------------------------------------------
# recall


@dataclass
class ScenarioRecall:
    scenario_seed: int
    emergence_events: int = 0
    emergence_hits: int = 0
    disappearance_events: int = 0
    disappearance_hits: int = 0


@dataclass
class EdRecallReport:
    iou_thresh: float
    frame_tol: int
    per_scenario: list[ScenarioRecall] = field(default_factory=list)

    @property
    def emergence_events(self) -> int:
        return sum(s.emergence_events for s in self.per_scenario)

    @property
    def emergence_hits(self) -> int:
        return sum(s.emergence_hits for s in self.per_scenario)

    @property
    def disappearance_events(self) -> int:
        return sum(s.disappearance_events for s in self.per_scenario)

    @property
    def disappearance_hits(self) -> int:
        return sum(s.disappearance_hits for s in self.per_scenario)

    @property
    def emergence_recall(self) -> float | None:
        n = self.emergence_events
        return self.emergence_hits / n if n else None

    @property
    def disappearance_recall(self) -> float | None:
        n = self.disappearance_events
        return self.disappearance_hits / n if n else None

    def combined(self) -> float | None:
        """Mean of the two recalls (the scalar the ablations compare)."""
        parts = [r for r in (self.emergence_recall, self.disappearance_recall)
                 if r is not None]
        return float(np.mean(parts)) if parts else None

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "kind": "ed_recall",
            "iou_thresh": self.iou_thresh,
            "frame_tol": self.frame_tol,
            "emergence": {"events": self.emergence_events,
                          "hits": self.emergence_hits,
                          "recall": self.emergence_recall},
            "disappearance": {"events": self.disappearance_events,
                              "hits": self.disappearance_hits,
                              "recall": self.disappearance_recall},
            "per_scenario": [
                {"seed": s.scenario_seed,
                 "emergence_events": s.emergence_events,
                 "emergence_hits": s.emergence_hits,
                 "disappearance_events": s.disappearance_events,
                 "disappearance_hits": s.disappearance_hits}
                for s in self.per_scenario
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EdRecallReport":
        rep = cls(iou_thresh=float(doc["iou_thresh"]),
                  frame_tol=int(doc["frame_tol"]))
        for s in doc["per_scenario"]:
            rep.per_scenario.append(ScenarioRecall(
                scenario_seed=int(s["seed"]),
                emergence_events=int(s["emergence_events"]),
                emergence_hits=int(s["emergence_hits"]),
                disappearance_events=int(s["disappearance_events"]),
                disappearance_hits=int(s["disappearance_hits"])))
        return rep


def _matched_track(pred: VideoPrediction, obj, iou_thresh: float) -> PredTrack | None:
    """The track that covers the object the most (ties: lower id)."""
    best: PredTrack | None = None
    best_cov = 0
    for tr in pred.tracks:
        cov = 0
        for t in range(obj.birth, obj.death + 1):
            m = tr.mask_at(t)
            if m is not None and _iou(m, obj.mask_at(t)) >= iou_thresh:
                cov += 1
        if cov > best_cov:
            best, best_cov = tr, cov
    return best


def ed_recall(pred: VideoPrediction, scn: Scenario, iou_thresh: float = 0.5,
              frame_tol: int = 1) -> ScenarioRecall:
    """Per-scenario emergence/disappearance recall counts."""
    if (pred.frames, pred.height, pred.width) != (scn.frames, scn.height, scn.width):
        raise ValueError(
            f"prediction grid {pred.frames}x{pred.height}x{pred.width} does not "
            f"match scenario {scn.frames}x{scn.height}x{scn.width}")
    rec = ScenarioRecall(scenario_seed=scn.seed)
    for obj in scn.objects:
        if obj.birth > 1:
            rec.emergence_events += 1
            for tr in pred.tracks:
                if abs(tr.first_frame - obj.birth) > frame_tol:
                    continue
                f_star = max(obj.birth, tr.first_frame)
                if f_star > obj.death:
                    continue
                m = tr.mask_at(f_star)
                if m is not None and _iou(m, obj.mask_at(f_star)) >= iou_thresh:
                    rec.emergence_hits += 1
                    break
        if obj.death < scn.frames:
            rec.disappearance_events += 1
            tr = _matched_track(pred, obj, iou_thresh)
            mistracked = False
            if tr is not None:
                for t in range(obj.death + frame_tol + 1, scn.frames + 1):
                    m = tr.mask_at(t)
                    if m is None:
                        continue
                    for other in scn.objects:
                        if other.id != obj.id and other.alive_at(t) \
                                and _iou(m, other.mask_at(t)) >= iou_thresh:
                            mistracked = True
                            break
                    if mistracked:
                        break
            if not mistracked:
                rec.disappearance_hits += 1
    return rec


# ---------------------------------------------------------------------------
# association accuracy on the event subset


@dataclass
class SubsetScoreReport:
    iou_thresh: float
    all_score: float | None
    ed_score: float | None
    per_object: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "kind": "ed_subset",
                "iou_thresh": self.iou_thresh, "all": self.all_score,
                "ed": self.ed_score, "per_object": self.per_object}


def ed_subset_score(pred: VideoPrediction, scn: Scenario,
                    iou_thresh: float = 0.5) -> SubsetScoreReport:
    """Fraction of ground-truth frames covered by the identified track."""
    if (pred.frames, pred.height, pred.width) != (scn.frames, scn.height, scn.width):
        raise ValueError("prediction grid does not match scenario")
    rows = []
    for obj in scn.objects:
        tr = _matched_track(pred, obj, iou_thresh)
        life = obj.death - obj.birth + 1
        covered = 0
        if tr is not None:
            for t in range(obj.birth, obj.death + 1):
                m = tr.mask_at(t)
                if m is not None and _iou(m, obj.mask_at(t)) >= iou_thresh:
                    covered += 1
        rows.append({"object": obj.id, "is_event": obj.birth > 1 or obj.death < scn.frames,
                     "covered": covered, "frames": life,
                     "accuracy": covered / life})
    all_scores = [r["accuracy"] for r in rows]
    ed_scores = [r["accuracy"] for r in rows if r["is_event"]]
    return SubsetScoreReport(
        iou_thresh=iou_thresh,
        all_score=float(np.mean(all_scores)) if all_scores else None,
        ed_score=float(np.mean(ed_scores)) if ed_scores else None,
        per_object=rows)


# ---------------------------------------------------------------------------
# transition gap


@dataclass
class GapReport:
    cs_mean: float
    cs_std: float
    ned_mean: float
    ned_std: float
    count: int
    per_event: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "kind": "transition_gap",
                "cs": {"mean": self.cs_mean, "std": self.cs_std},
                "ned": {"mean": self.ned_mean, "std": self.ned_std},
                "count": self.count, "per_event": self.per_event}


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else np.zeros_like(v)


def gap_of_sample(sample: GapSample) -> tuple[float, float]:
    """(cosine similarity, normalized Euclidean distance) of one event.

    NED is the Euclidean distance between the L2-normalized vectors,
    divided by 2, so it lives in [0, 1].
    """
    a, b = sample.anchor_vec, sample.target_vec
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cs = float(a @ b / (na * nb)) if na > 1e-12 and nb > 1e-12 else 0.0
    ned = float(np.linalg.norm(_unit(a) - _unit(b)) / 2.0)
    return cs, ned


def gap_report(samples: list[GapSample]) -> GapReport:
    if not samples:
        raise EmptyReportError(
            "no emergence/disappearance events were realized; evaluate on an "
            "event-dense scenario set (e.g. the dense-ed preset)")
    rows = []
    cs_vals, ned_vals = [], []
    for s in samples:
        cs, ned = gap_of_sample(s)
        rows.append({"kind": s.kind, "cs": cs, "ned": ned})
        cs_vals.append(cs)
        ned_vals.append(ned)
    return GapReport(cs_mean=float(np.mean(cs_vals)), cs_std=float(np.std(cs_vals)),
                     ned_mean=float(np.mean(ned_vals)), ned_std=float(np.std(ned_vals)),
                     count=len(rows), per_event=rows)


def transition_gap(engine: Engine, scenarios: list[Scenario], noise: NoiseSpec,
                   seed: int) -> GapReport:
    """Run the engine over the scenarios and aggregate realized gaps."""
    samples: list[GapSample] = []
    for idx, scn in enumerate(scenarios):
        pred = run_video(scn, engine, noise, video_seed(seed, idx))
        samples.extend(pred.gap_samples)
    return gap_report(samples)


# ---------------------------------------------------------------------------
# evaluation driver + serialization


def evaluate(engine: Engine, scenarios: list[Scenario], noise: NoiseSpec,
             seed: int, iou_thresh: float = 0.5, frame_tol: int = 1):
    """Recall + subset reports over a scenario set (ordered, deterministic)."""
    recall = EdRecallReport(iou_thresh=iou_thresh, frame_tol=frame_tol)
    subset_rows = []
    predictions = []
    for idx, scn in enumerate(scenarios):
        pred = run_video(scn, engine, noise, video_seed(seed, idx))
        predictions.append(pred)
        recall.per_scenario.append(ed_recall(pred, scn, iou_thresh, frame_tol))
        subset_rows.append(ed_subset_score(pred, scn, iou_thresh))
    alls = [r.all_score for r in subset_rows if r.all_score is not None]
    eds = [r.ed_score for r in subset_rows if r.ed_score is not None]
    subset = SubsetScoreReport(
        iou_thresh=iou_thresh,
        all_score=float(np.mean(alls)) if alls else None,
        ed_score=float(np.mean(eds)) if eds else None,
        per_object=[row for r in subset_rows for row in r.per_object])
    return recall, subset, predictions


def report_json_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode()


def recall_csv_rows(report: EdRecallReport) -> list[list]:
    rows = [["scenario_seed", "emergence_events", "emergence_hits",
             "disappearance_events", "disappearance_hits"]]
    for s in report.per_scenario:
        rows.append([s.scenario_seed, s.emergence_events, s.emergence_hits,
                     s.disappearance_events, s.disappearance_hits])
    rows.append(["total", report.emergence_events, report.emergence_hits,
                 report.disappearance_events, report.disappearance_hits])
    return rows
