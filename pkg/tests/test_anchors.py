import numpy as np
import pytest

from daqtrack.anchors import (
    AnchorKind,
    DaqConfig,
    Track,
    appearance_feature,
    appearance_features,
    build_disappearance_daqs,
    build_emergence_daqs,
    closest_bank_row,
    ctq_positional,
    momentum_update,
    top_candidates,
)
from daqtrack.autograd import Tensor2
from daqtrack.kernels import ParamStore, init_mlp_params
from daqtrack.scenario import ScenarioSpec, generate_scenario
from daqtrack.segmenter import NoiseSpec, frame_rng, initial_query_bank, synth_segment


def unit(v):
    v = np.asarray(v, dtype=np.float64).reshape(1, -1)
    return v / np.linalg.norm(v)


def identity_app_store(dim, rng, hidden=None):
    """Appearance map whose correction term is exactly zero."""
    store = ParamStore()
    hidden = hidden or dim
    store.add("app.l1.w", rng.normal(size=(dim, hidden)))
    store.add("app.l1.b", np.zeros((1, hidden)))
    store.add("app.l2.w", np.zeros((hidden, dim)))
    store.add("app.l2.b", np.zeros((1, dim)))
    return store


def random_app_store(dim, rng):
    store = ParamStore()
    init_mlp_params(store, "app", dim, dim, rng, out_scale=1.0)
    for name in ("app.l1.b", "app.l2.b"):
        store[name].data = rng.normal(scale=0.1, size=(1, dim))
    return store


def make_obs(n_queries=6, dim=16, seed=0, num_objects=2):
    scn = generate_scenario(
        ScenarioSpec(frames=5, height=16, width=16, num_objects=num_objects,
                     feature_dim=dim),
        seed=seed)
    return scn, synth_segment(scn, 2, NoiseSpec(n_queries=n_queries), frame_rng(seed, 2))


def make_track(tid, feat, first_app, frame=1):
    return Track.start(tid, Tensor2(feat), Tensor2(first_app), score=0.9, frame=frame)


# ---------------------------------------------------------------------------
# appearance features


def test_identity_mlp_one_hot_mask_returns_pixel_feature(rng):
    _, obs = make_obs()
    store = identity_app_store(16, rng)
    p = 37
    masks = obs.masks.data.copy()
    masks[0] = 0.0
    masks[0, p] = 1.0
    obs.masks = Tensor2(masks)
    out = appearance_feature(obs, 0, store)
    np.testing.assert_allclose(out.data, obs.pixel_features.data[p:p + 1], atol=1e-12)


def test_all_zero_mask_goes_through_mlp_of_zero(rng):
    _, obs = make_obs()
    store = random_app_store(16, rng)
    masks = obs.masks.data.copy()
    masks[1] = 0.0
    obs.masks = Tensor2(masks)
    out = appearance_feature(obs, 1, store)
    # oracle: residual MLP applied to the zero vector
    z = np.zeros((1, 16))
    h = z @ store["app.l1.w"].data + store["app.l1.b"].data
    g = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h**3)))
    expected = z + g @ store["app.l2.w"].data + store["app.l2.b"].data
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_appearance_matches_pool_plus_mlp_oracle(rng):
    _, obs = make_obs(seed=3)
    store = random_app_store(16, rng)
    idx = 2
    mask = obs.masks.data[idx]
    pooled = mask @ obs.pixel_features.data / max(mask.sum(), 1e-8)
    h = pooled @ store["app.l1.w"].data + store["app.l1.b"].data
    g = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h**3)))
    expected = pooled + g @ store["app.l2.w"].data + store["app.l2.b"].data
    out = appearance_feature(obs, idx, store)
    np.testing.assert_allclose(out.data, expected, atol=1e-10)


# ---------------------------------------------------------------------------
# momentum updates


def test_momentum_repeat_vector_gives_half_blend():
    v = unit([1.0, 2.0, -1.0, 0.5])
    track = make_track(0, v, v)
    old_mom = track.mom_feat.data.copy()
    beta = momentum_update(track, Tensor2(v))
    assert beta.item() == pytest.approx(0.5)
    np.testing.assert_allclose(track.mom_feat.data, 0.5 * old_mom + 0.5 * v, atol=1e-12)
    assert len(track.feat_history) == 2


def test_momentum_opposed_feature_clamps_to_zero():
    v = unit([1.0, 0.0, 0.0])
    track = make_track(0, v, v)
    old = track.mom_feat.data.copy()
    beta = momentum_update(track, Tensor2(-v))
    assert beta.item() == 0.0
    assert np.array_equal(track.mom_feat.data, old)  # bit-identical

    w = unit([0.0, 1.0, 0.0])
    track2 = make_track(1, v, v)
    old2 = track2.mom_feat.data.copy()
    beta2 = momentum_update(track2, Tensor2(w))
    assert beta2.item() == 0.0
    assert np.array_equal(track2.mom_feat.data, old2)


def momentum_oracle(history, mom, f_new):
    t_len = len(history) + 1
    s = 0.0
    for h in history:
        na, nb = np.linalg.norm(h), np.linalg.norm(f_new)
        s += float(np.dot(h[0], f_new[0])) / (na * nb) if na > 1e-12 and nb > 1e-12 else 0.0
    beta = max(0.0, s / t_len)
    return (1 - beta) * mom + beta * f_new, beta


def test_momentum_matches_scripted_oracle(rng):
    dim = 8
    first = rng.normal(size=(1, dim))
    track = make_track(0, first, first)
    mom = first.copy()
    history = [first.copy()]
    for _ in range(10):
        f = rng.normal(size=(1, dim))
        beta = momentum_update(track, Tensor2(f))
        mom, beta_expected = momentum_oracle(history, mom, f)
        history.append(f.copy())
        assert beta.item() == pytest.approx(beta_expected, abs=1e-12)
        np.testing.assert_allclose(track.mom_feat.data, mom, atol=1e-10)


def test_beta_clamp_and_convexity(rng):
    for _ in range(300):
        dim = int(rng.integers(2, 6))
        first = rng.normal(size=(1, dim))
        track = make_track(0, first, first)
        for _ in range(int(rng.integers(1, 5))):
            prev = track.mom_feat.data.copy()
            f = rng.normal(scale=rng.uniform(0.1, 3.0), size=(1, dim))
            beta = momentum_update(track, Tensor2(f)).item()
            assert 0.0 <= beta <= 1.0
            lo = np.minimum(prev, f) - 1e-12
            hi = np.maximum(prev, f) + 1e-12
            assert np.all(track.mom_feat.data >= lo)
            assert np.all(track.mom_feat.data <= hi)


def test_ctq_positional_is_momentum_feature(rng):
    first = rng.normal(size=(1, 6))
    track = make_track(0, first, first)
    assert ctq_positional(track) is track.mom_feat
    momentum_update(track, Tensor2(-first))  # beta = 0 path
    np.testing.assert_array_equal(ctq_positional(track).data, first)


# ---------------------------------------------------------------------------
# emergence anchors


def test_emergence_shared_feat_and_distinct_pos(rng):
    _, obs = make_obs(n_queries=8, num_objects=4)
    store = random_app_store(16, rng)
    store.add("daq.emg_embed", rng.normal(size=(1, 16)))
    bank = initial_query_bank(8, 16)
    cfg = DaqConfig(top_k=4, num_learnable=1, init_query_bank=bank)
    anchors = build_emergence_daqs(obs, cfg, store)
    assert len(anchors) == 4
    for a in anchors:
        assert a.kind is AnchorKind.EMERGENCE
        assert np.array_equal(a.feat.data, anchors[0].feat.data)
    pos = np.concatenate([a.pos.data for a in anchors])
    assert len({tuple(p) for p in pos}) == 4


def test_emergence_round_robin_slots(rng):
    _, obs = make_obs(n_queries=8)
    store = random_app_store(16, rng)
    store.add("daq.emg_embed", rng.normal(size=(2, 16)))
    cfg = DaqConfig(top_k=4, num_learnable=2,
                    init_query_bank=initial_query_bank(8, 16))
    anchors = build_emergence_daqs(obs, cfg, store)
    embed = store["daq.emg_embed"].data
    for i, a in enumerate(anchors):
        np.testing.assert_array_equal(a.feat.data, embed[i % 2:i % 2 + 1])


def test_emergence_sources_are_top_scores(rng):
    _, obs = make_obs(n_queries=8)
    store = random_app_store(16, rng)
    store.add("daq.emg_embed", rng.normal(size=(1, 16)))
    cfg = DaqConfig(top_k=4, num_learnable=1,
                    init_query_bank=initial_query_bank(8, 16))
    anchors = build_emergence_daqs(obs, cfg, store)
    # sort oracle: stable sort by descending score
    expected = sorted(range(8), key=lambda i: (-obs.scores[i], i))[:4]
    assert [a.source for a in anchors] == expected


def test_top_candidates_tie_breaks_by_index():
    scores = np.array([0.5, 0.9, 0.9, 0.1])
    np.testing.assert_array_equal(top_candidates(scores, 3), [1, 2, 0])


# ---------------------------------------------------------------------------
# disappearance anchors


def test_bank_self_match(rng):
    bank_data = rng.normal(size=(6, 8))
    bank = Tensor2(bank_data)
    cfg = DaqConfig(top_k=2, num_learnable=1, init_query_bank=bank)
    track = make_track(3, bank_data[4:5], rng.normal(size=(1, 8)))
    anchors = build_disappearance_daqs([track], cfg)
    assert len(anchors) == 1
    assert anchors[0].kind is AnchorKind.DISAPPEARANCE
    assert anchors[0].source == 3
    np.testing.assert_array_equal(anchors[0].feat.data, bank_data[4:5])
    assert anchors[0].pos is track.mom_feat


def test_single_row_bank(rng):
    bank = Tensor2(rng.normal(size=(1, 8)))
    cfg = DaqConfig(top_k=1, num_learnable=1, init_query_bank=bank)
    tracks = [make_track(i, rng.normal(size=(1, 8)), rng.normal(size=(1, 8)))
              for i in range(3)]
    anchors = build_disappearance_daqs(tracks, cfg)
    for a in anchors:
        np.testing.assert_array_equal(a.feat.data, bank.data)


def test_bank_argmax_matches_exhaustive_scan(rng):
    for _ in range(30):
        bank = rng.normal(size=(7, 5))
        feat = rng.normal(size=(1, 5))
        best, best_sim = 0, -np.inf
        for i in range(7):
            sim = bank[i] @ feat[0] / (np.linalg.norm(bank[i]) * np.linalg.norm(feat))
            if sim > best_sim + 1e-15:
                best, best_sim = i, sim
        assert closest_bank_row(Tensor2(bank), Tensor2(feat)) == best


def test_empty_track_list_gives_empty_anchors(rng):
    cfg = DaqConfig(top_k=2, num_learnable=1,
                    init_query_bank=Tensor2(rng.normal(size=(4, 8))))
    assert build_disappearance_daqs([], cfg) == []


def test_bank_membership_invariant(rng):
    bank = Tensor2(rng.normal(size=(9, 6)))
    cfg = DaqConfig(top_k=3, num_learnable=1, init_query_bank=bank)
    tracks = [make_track(i, rng.normal(size=(1, 6)), rng.normal(size=(1, 6)))
              for i in range(5)]
    for a in build_disappearance_daqs(tracks, cfg):
        assert any(np.array_equal(a.feat.data[0], row) for row in bank.data)


def test_daq_config_validation(rng):
    bank = Tensor2(rng.normal(size=(8, 4)))
    with pytest.raises(ValueError):
        DaqConfig(top_k=3, num_learnable=2, init_query_bank=bank)
    with pytest.raises(ValueError):
        DaqConfig(top_k=9, num_learnable=1, init_query_bank=bank)
    with pytest.raises(ValueError):
        DaqConfig(top_k=2, num_learnable=1, init_query_bank=bank, emg_source="bogus")


def test_batched_appearance_matches_single(rng):
    _, obs = make_obs(seed=5)
    store = random_app_store(16, rng)
    batch = appearance_features(obs, [0, 3, 5], store)
    for row, idx in enumerate([0, 3, 5]):
        single = appearance_feature(obs, idx, store)
        np.testing.assert_allclose(batch.data[row:row + 1], single.data, atol=1e-12)
