import numpy as np
import pytest

from daqtrack.anchors import Track
from daqtrack.autograd import Tensor2
from daqtrack.eds import DsEdit, EdsConfig, disappearance_sim, emergence_sim
from daqtrack.scenario import ScenarioSpec, generate_scenario
from daqtrack.segmenter import NoiseSpec, frame_rng, synth_segment


def tracks_with_scores(scores):
    out = []
    for i, s in enumerate(scores):
        tr = Track.start(i, Tensor2(np.ones((1, 4))), Tensor2(np.ones((1, 4))),
                         score=s, frame=1)
        out.append(tr)
    return out


def make_clip(frames=5, seed=0, num_objects=3):
    scn = generate_scenario(
        ScenarioSpec(frames=frames, height=12, width=12, num_objects=num_objects,
                     feature_dim=8),
        seed=seed)
    noise = NoiseSpec(n_queries=6)
    return scn, [synth_segment(scn, t, noise, frame_rng(seed, t))
                 for t in range(1, frames + 1)]


# ---------------------------------------------------------------------------
# emergence simulation


def test_zero_threshold_removes_nothing(rng):
    tracks = tracks_with_scores([0.0, 0.3, 0.9])
    kept, removed = emergence_sim(tracks, EdsConfig(es_threshold=0.0), rng)
    assert len(kept) == 3 and removed == []


def test_threshold_one_removes_everything_below_one(rng):
    tracks = tracks_with_scores([0.0, 0.3, 0.999])
    kept, removed = emergence_sim(tracks, EdsConfig(es_threshold=1.0), rng)
    assert kept == [] and removed == [0, 1, 2]


def test_threshold_filters_low_scoring_tracks(rng):
    tracks = tracks_with_scores([0.05, 0.5, 0.09])
    kept, removed = emergence_sim(tracks, EdsConfig(es_threshold=0.1), rng)
    assert removed == [0, 2]
    assert [t.id for t in kept] == [1]


def test_uniform_drop_mode(rng):
    tracks = tracks_with_scores([0.9] * 10)
    cfg = EdsConfig(es_mode="uniform_drop", es_drop_p=0.5)
    removed_total = 0
    for k in range(200):
        _, removed = emergence_sim(tracks, cfg, np.random.default_rng(k))
        removed_total += len(removed)
    assert 0.4 < removed_total / 2000 < 0.6


# ---------------------------------------------------------------------------
# disappearance simulation


def test_zero_rate_leaves_observations_untouched(rng):
    _, clip = make_clip()
    edited, records = disappearance_sim(clip, EdsConfig(ds_rate=0.0), rng)
    assert records == []
    for a, b in zip(clip, edited):
        assert a is b


def test_mode_one_edits_exactly_one_frame_per_object(rng):
    _, clip = make_clip()
    cfg = EdsConfig(ds_mode="one", ds_rate=1.0)
    edited, records = disappearance_sim(clip, cfg, rng)
    by_obj = {}
    for r in records:
        by_obj.setdefault(r.gt_id, []).append(r.frame_index)
    assert by_obj
    for frames in by_obj.values():
        assert len(frames) == 1
    _ = edited


def test_mode_continuous_runs_to_clip_end(rng):
    scn, clip = make_clip(num_objects=1)
    cfg = EdsConfig(ds_mode="continuous", ds_rate=1.0)
    _, records = disappearance_sim(clip, cfg, rng)
    frames = sorted(r.frame_index for r in records)
    bound = [f for f, obs in enumerate(clip)
             if scn.objects[0].id in obs.gt_binding]
    assert frames == [f for f in bound if f >= frames[0]]


def test_mode_random_frequency_matches_enumeration():
    """Per-frame edit frequency conditioned on >= 1 equals 2^(k-1)/(2^k - 1)."""
    scn, clip = make_clip(num_objects=1, frames=5)
    oid = scn.objects[0].id
    bound = [f for f, obs in enumerate(clip) if oid in obs.gt_binding]
    k = len(bound)
    cfg = EdsConfig(ds_mode="random", ds_rate=1.0)
    counts = np.zeros(len(clip))
    trials = 1000
    for s in range(trials):
        _, records = disappearance_sim(clip, cfg, np.random.default_rng(s))
        for r in records:
            counts[r.frame_index] += 1
    expected = 2 ** (k - 1) / (2 ** k - 1)
    for f in bound:
        assert counts[f] / trials == pytest.approx(expected, abs=0.06)


def test_edit_replaces_slot_with_background(rng):
    _, clip = make_clip()
    cfg = EdsConfig(ds_mode="one", ds_rate=1.0)
    edited, records = disappearance_sim(clip, cfg, rng)
    assert records
    r = records[0]
    obs = edited[r.frame_index]
    assert obs.gt_binding[r.slot] is None
    assert obs.scores[r.slot] <= 0.1
    assert obs.masks.data[r.slot].sum() == 0.0


def test_untouched_rows_bit_unchanged(rng):
    _, clip = make_clip()
    originals = [(o.queries.data.copy(), o.masks.data.copy(),
                  o.class_logits.data.copy()) for o in clip]
    cfg = EdsConfig(ds_mode="random", ds_rate=0.7)
    edited, records = disappearance_sim(clip, cfg, rng)
    edited_slots = {(r.frame_index, r.slot) for r in records}
    for f, obs in enumerate(edited):
        q0, m0, c0 = originals[f]
        assert edited[f].pixel_features is clip[f].pixel_features
        for slot in range(obs.n_queries):
            if (f, slot) in edited_slots:
                continue
            assert np.array_equal(obs.queries.data[slot], q0[slot])
            assert np.array_equal(obs.masks.data[slot], m0[slot])
            assert np.array_equal(obs.class_logits.data[slot], c0[slot])
    # inputs themselves untouched
    for f, obs in enumerate(clip):
        assert np.array_equal(obs.queries.data, originals[f][0])


def test_records_complete_and_unique(rng):
    _, clip = make_clip()
    cfg = EdsConfig(ds_mode="random", ds_rate=1.0)
    edited, records = disappearance_sim(clip, cfg, rng)
    assert len({(r.frame_index, r.slot) for r in records}) == len(records)
    # every edited slot appears in exactly one record
    for f, (before, after) in enumerate(zip(clip, edited)):
        for slot in range(before.n_queries):
            changed = not np.array_equal(before.queries.data[slot],
                                         after.queries.data[slot])
            recorded = any(r.frame_index == f and r.slot == slot for r in records)
            assert changed == recorded


def test_determinism_under_fixed_seed():
    _, clip = make_clip()
    cfg = EdsConfig(ds_mode="random", ds_rate=0.8)
    _, r1 = disappearance_sim(clip, cfg, np.random.default_rng(5))
    _, r2 = disappearance_sim(clip, cfg, np.random.default_rng(5))
    assert r1 == r2


def test_short_clip_rejected(rng):
    _, clip = make_clip(frames=2)
    with pytest.raises(ValueError):
        disappearance_sim(clip[:1], EdsConfig(), rng)


def test_config_validation():
    with pytest.raises(ValueError):
        EdsConfig(es_threshold=1.5)
    with pytest.raises(ValueError):
        EdsConfig(ds_mode="sometimes")
    assert DsEdit(1, 2, 3).gt_id == 1
