import numpy as np
import pytest

from daqtrack.errors import ConfigError, ScenarioFormatError
from daqtrack.scenario import (
    Scenario,
    ScenarioSpec,
    generate_scenario,
    mask_to_runs,
    runs_to_mask,
    scenario_digest,
    scenario_from_bytes,
    scenario_to_bytes,
)
from daqtrack.segmenter import NoiseSpec, frame_rng, synth_segment


def spec(**kw):
    base = dict(frames=8, height=16, width=16, num_objects=3, feature_dim=16)
    base.update(kw)
    return ScenarioSpec(**base)


# ---------------------------------------------------------------------------
# generation


def test_single_persistent_object():
    scn = generate_scenario(spec(frames=5, num_objects=1), seed=0)
    obj = scn.objects[0]
    assert (obj.birth, obj.death) == (1, 5)
    for t in range(1, 6):
        assert obj.mask_at(t).any()


def test_emergence_rate_saturation():
    scn = generate_scenario(spec(num_objects=6, emergence_rate=1.0), seed=3)
    assert all(o.birth > 1 for o in scn.objects)


def test_event_rates_match_spec_monte_carlo():
    s = spec(frames=20, num_objects=12, emergence_rate=0.4, disappearance_rate=0.4)
    births = deaths = total = 0
    for seed in range(200):
        scn = generate_scenario(s, seed)
        for o in scn.objects:
            births += o.birth > 1
            deaths += o.death < scn.frames
            total += 1
    assert abs(births / total - 0.4) < 0.05
    assert abs(deaths / total - 0.4) < 0.05


def test_generation_deterministic():
    a = scenario_to_bytes(generate_scenario(spec(emergence_rate=0.5), seed=11))
    b = scenario_to_bytes(generate_scenario(spec(emergence_rate=0.5), seed=11))
    assert a == b


def test_infeasible_spec_rejected():
    with pytest.raises(ConfigError):
        generate_scenario(ScenarioSpec(frames=5, height=8, width=8,
                                       num_objects=100, feature_dim=8), seed=0)
    with pytest.raises(ConfigError):
        generate_scenario(spec(emergence_rate=1.5), seed=0)
    with pytest.raises(ConfigError):
        generate_scenario(spec(height=4), seed=0)


def test_mask_sanity_invariant():
    scn = generate_scenario(spec(emergence_rate=0.6, disappearance_rate=0.6,
                                 num_objects=5), seed=21)
    for o in scn.objects:
        for t in range(1, scn.frames + 1):
            if o.alive_at(t):
                assert o.mask_at(t).any()
            else:
                with pytest.raises(ValueError):
                    o.mask_at(t)


def test_reentry_creates_fresh_ids():
    s = spec(frames=12, num_objects=4, disappearance_rate=1.0, reentry_rate=1.0)
    scn = generate_scenario(s, seed=5)
    assert len(scn.objects) > 4
    ids = [o.id for o in scn.objects]
    assert len(ids) == len(set(ids))


# ---------------------------------------------------------------------------
# serialization


def test_round_trip_structural_equality():
    scn = generate_scenario(spec(emergence_rate=0.5, disappearance_rate=0.5,
                                 occlusion_rate=0.5, num_objects=4), seed=9)
    back = scenario_from_bytes(scenario_to_bytes(scn))
    assert scenario_to_bytes(back) == scenario_to_bytes(scn)
    assert scenario_digest(back) == scenario_digest(scn)
    assert back.occlusions == scn.occlusions
    for a, b in zip(scn.objects, back.objects):
        assert (a.id, a.class_id, a.birth, a.death) == (b.id, b.class_id, b.birth, b.death)
        np.testing.assert_array_equal(a.prototype, b.prototype)
        for ma, mb in zip(a.masks, b.masks):
            np.testing.assert_array_equal(ma, mb)


def test_empty_object_list_rejected():
    scn = generate_scenario(spec(num_objects=1), seed=0)
    payload = scenario_to_bytes(scn).decode().replace(
        '"objects": [', '"objects_xx": [', 1)
    import json
    doc = json.loads(scenario_to_bytes(scn))
    doc["objects"] = []
    with pytest.raises(ScenarioFormatError, match="empty object list"):
        scenario_from_bytes(json.dumps(doc).encode())
    _ = payload


def test_wrong_version_rejected():
    import json
    doc = json.loads(scenario_to_bytes(generate_scenario(spec(num_objects=1), 0)))
    doc["version"] = 99
    with pytest.raises(ScenarioFormatError, match="version"):
        scenario_from_bytes(json.dumps(doc).encode())


def test_malformed_payload_reports_field():
    import json
    doc = json.loads(scenario_to_bytes(generate_scenario(spec(num_objects=2), 0)))
    del doc["objects"][1]["birth"]
    with pytest.raises(ScenarioFormatError, match=r"objects\[1\]"):
        scenario_from_bytes(json.dumps(doc).encode())


def test_rle_round_trip_random_masks(rng):
    for _ in range(50):
        mask = rng.random((6, 7)) > 0.6
        if not mask.any():
            mask[0, 0] = True
        runs = mask_to_runs(mask)
        back = runs_to_mask(runs, 6, 7)
        np.testing.assert_array_equal(mask, back)


# ---------------------------------------------------------------------------
# synthetic segmenter


def test_noiseless_segmenter_matches_gt():
    scn = generate_scenario(spec(frames=5, num_objects=2, feature_dim=16), seed=2)
    noise = NoiseSpec(n_queries=5, num_classes=3)
    obs = synth_segment(scn, 3, noise, frame_rng(7, 3))
    fg = [i for i in range(5) if obs.scores[i] >= 0.9]
    bg = [i for i in range(5) if obs.scores[i] <= 0.1]
    assert len(fg) == 2 and len(bg) == 3
    for i in fg:
        oid = obs.gt_binding[i]
        assert oid is not None
        gt_mask = scn.object_by_id(oid).mask_at(3).reshape(-1).astype(float)
        np.testing.assert_array_equal(obs.masks.data[i], gt_mask)
        np.testing.assert_array_equal(obs.queries.data[i],
                                      scn.object_by_id(oid).prototype[0])
    for i in bg:
        assert obs.gt_binding[i] is None


def test_dead_object_never_bound():
    s = spec(frames=8, num_objects=4, disappearance_rate=1.0)
    scn = generate_scenario(s, seed=13)
    dead_now = [o.id for o in scn.objects if o.death < 8]
    assert dead_now
    obs = synth_segment(scn, 8, NoiseSpec(n_queries=8), frame_rng(1, 8))
    assert not set(dead_now) & {b for b in obs.gt_binding if b is not None}


def test_query_noise_matches_sampling_oracle():
    scn = generate_scenario(spec(frames=5, num_objects=1, feature_dim=32), seed=4)
    proto = scn.objects[0].prototype[0]
    noise = NoiseSpec(n_queries=4, feature_sigma=0.1)

    sims = []
    for k in range(500):
        obs = synth_segment(scn, 2, noise, frame_rng(k, 2))
        slot = obs.gt_binding.index(scn.objects[0].id)
        q = obs.queries.data[slot]
        sims.append(q @ proto / (np.linalg.norm(q) * np.linalg.norm(proto)))

    oracle_rng = np.random.default_rng(777)
    oracle = []
    for _ in range(500):
        q = proto + oracle_rng.normal(scale=0.1, size=32)
        oracle.append(q @ proto / (np.linalg.norm(q) * np.linalg.norm(proto)))
    assert abs(np.mean(sims) - np.mean(oracle)) < 0.02


def test_observation_determinism():
    scn = generate_scenario(spec(num_objects=3), seed=6)
    noise = NoiseSpec(n_queries=6, feature_sigma=0.2, mask_jitter=0.3)
    a = synth_segment(scn, 4, noise, frame_rng(42, 4))
    b = synth_segment(scn, 4, noise, frame_rng(42, 4))
    assert np.array_equal(a.queries.data, b.queries.data)
    assert np.array_equal(a.masks.data, b.masks.data)
    assert np.array_equal(a.class_logits.data, b.class_logits.data)
    assert a.gt_binding == b.gt_binding


def test_gt_consistency_zero_noise():
    scn = generate_scenario(spec(frames=6, num_objects=4, emergence_rate=0.5,
                                 disappearance_rate=0.5), seed=17)
    for t in range(1, 7):
        obs = synth_segment(scn, t, NoiseSpec(n_queries=8), frame_rng(3, t))
        confident = {obs.gt_binding[i] for i in range(8) if obs.scores[i] > 0.5}
        assert confident == set(scn.alive_ids(t))


def test_scores_are_max_foreground_softmax():
    scn = generate_scenario(spec(num_objects=2), seed=1)
    obs = synth_segment(scn, 1, NoiseSpec(n_queries=5), frame_rng(0, 1))
    z = obs.class_logits.data
    e = np.exp(z - z.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(obs.scores, probs[:, :-1].max(axis=1), atol=1e-12)


def test_miss_and_clutter_rates():
    scn = generate_scenario(spec(frames=4, num_objects=2), seed=8)
    dropped = clutter_hits = 0
    for k in range(300):
        obs = synth_segment(scn, 2, NoiseSpec(n_queries=6, miss_rate=0.5),
                            frame_rng(k, 2))
        bound = [b for b in obs.gt_binding if b is not None]
        dropped += 2 - len(bound)
        obs2 = synth_segment(scn, 2, NoiseSpec(n_queries=6, clutter_rate=0.5),
                             frame_rng(k + 1000, 2))
        clutter_hits += sum(1 for i in range(6)
                            if obs2.gt_binding[i] is None and obs2.scores[i] > 0.5)
    assert 0.35 < dropped / 600 < 0.65
    assert clutter_hits > 0
