import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatkit.adc import (
    ScoreTable,
    accumulate_scores,
    apply_densify,
    build_error_maps,
    minmax_normalize,
    sample_views,
    scores_from_counts,
    select_densify,
    select_prune,
)
from splatkit.config import TrainConfig
from splatkit.render import render
from splatkit.scene import Scene, logit

from conftest import make_camera, make_scene

EXTENT = 1.0


def flat_scene(n, scale=0.005, opacity=0.5):
    return Scene(mu=np.zeros((n, 3)), rot=np.tile([1.0, 0, 0, 0], (n, 1)),
                 log_scale=np.full((n, 3), np.log(scale)), opacity_logit=np.full(n, logit(opacity)),
                 sh=np.zeros((n, 1, 3)), sh_degree=0)


def table_with(n, grad=0.0, s_d=0.0, s_p=0.0):
    t = ScoreTable.zeros(n)
    t.views_seen[:] = 1
    t.grad_norm_acc[:] = grad
    t.abs_grad_acc[:] = grad
    t.s_d[:] = s_d
    t.s_p[:] = s_p
    return t


# error maps

def test_error_maps_identical():
    img = np.full((4, 4, 3), 0.3)
    m = build_error_maps(img, img)
    assert not m.raw.any() and not m.normalized.any() and not m.mask.any()
    assert m.photometric == pytest.approx(0.0, abs=1e-12)


def test_error_map_channel_mean():
    r = np.array([[[0.5, 0.3, 0.1]]])
    g = np.array([[[0.1, 0.3, 0.5]]])
    assert build_error_maps(r, g).raw[0, 0] == pytest.approx(0.8 / 3, abs=1e-12)
    assert round(build_error_maps(r, g).raw[0, 0], 4) == 0.2667


def test_error_map_normalization_and_strict_mask():
    gt = np.zeros((1, 3, 3))
    r = np.repeat(np.array([0.2, 0.4, 0.6])[None, :, None], 3, axis=2)
    m = build_error_maps(r, gt, tau=0.5)
    np.testing.assert_allclose(m.normalized[0], [0, 0.5, 1.0], atol=1e-12)
    assert m.mask[0].tolist() == [False, False, True]


def test_minmax_degenerate_is_zero():
    assert not minmax_normalize(np.full(5, 3.0)).any()
    assert minmax_normalize(np.zeros(0)).size == 0


def test_error_maps_validate():
    with pytest.raises(ValueError):
        build_error_maps(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
    with pytest.raises(ValueError):
        build_error_maps(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), tau=1.0)


# scores

def test_densify_score_is_mean_count():
    s_d, _, _ = scores_from_counts([[3], [5]], [0.1, 0.2])
    assert s_d[0] == 4


def test_prune_score_example():
    _, raw, s_p = scores_from_counts([[4, 0]], [0.25])
    np.testing.assert_allclose(raw, [1.0, 0.0])
    np.testing.assert_allclose(s_p, [1.0, 0.0])


def test_scores_need_views():
    with pytest.raises(ValueError):
        scores_from_counts(np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(ValueError):
        accumulate_scores([], flat_scene(2), TrainConfig())
    with pytest.raises(ValueError):
        sample_views([], 10, np.random.default_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1000))
def test_prune_score_rescale_invariant(seed, k):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 50, (3, 12))
    photo = rng.uniform(0.01, 1, 3)
    _, raw, s_p = scores_from_counts(counts, photo)
    _, raw_k, s_p_k = scores_from_counts(counts, photo * k)
    np.testing.assert_allclose(raw_k, raw * k, rtol=1e-12)
    np.testing.assert_allclose(s_p_k, s_p, atol=1e-12)
    assert s_p.min() >= 0 and s_p.max() <= 1


def test_invisible_gaussian_scores_zero_and_never_densified(rng):
    scene = make_scene(rng, 8, sh_degree=0)
    scene.mu[-1] = [0.0, -50.0, 0.0]  # behind every camera below
    cams = [make_camera(24, 24, 30, eye=e) for e in [(0.3, -3, 0.5), (-2.5, -2, 0.2)]]
    gts = [np.random.default_rng(i).random((24, 24, 3)) for i in range(2)]
    assert all(7 not in render(scene, c).proj.source_index for c in cams)
    table = accumulate_scores(list(zip(cams, gts)), scene, TrainConfig())
    assert table.s_d[-1] == 0 and table.s_p_raw[-1] == 0
    assert table.s_d[:-1].sum() > 0
    table.views_seen[:] = 1
    table.grad_norm_acc[:] = table.abs_grad_acc[:] = 1.0
    clone, split = select_densify(table, scene, TrainConfig(tau_d=0.0), EXTENT)
    assert 7 not in clone and 7 not in split


def test_accumulate_scores_counts_match_masked_render(rng):
    scene = make_scene(rng, 10, sh_degree=0)
    cam = make_camera(24, 24, 30)
    gt = np.random.default_rng(3).random((24, 24, 3))
    table = accumulate_scores([(cam, gt)], scene, TrainConfig())
    plain = render(scene, cam)
    mask = build_error_maps(plain.image, gt).mask
    counted = render(scene, cam, mask=mask)
    expected = np.zeros(10)
    expected[counted.proj.source_index] = counted.outputs.footprint
    np.testing.assert_array_equal(table.s_d, expected)


# densify selection

def test_low_densify_score_blocks_selection():
    clone, split = select_densify(table_with(1, grad=1.0, s_d=3), flat_scene(1), TrainConfig(), EXTENT)
    assert clone.size == 0 and split.size == 0


def test_low_gradient_blocks_selection():
    clone, split = select_densify(table_with(1, grad=1e-6, s_d=100), flat_scene(1), TrainConfig(), EXTENT)
    assert clone.size == 0 and split.size == 0


def test_small_strong_gaussian_is_cloned():
    cfg = TrainConfig()
    clone, split = select_densify(table_with(1, grad=2 * cfg.grad_threshold, s_d=6), flat_scene(1), cfg, EXTENT)
    assert clone.tolist() == [0] and split.size == 0


def test_large_gaussian_split_uses_absolute_gradient():
    cfg = TrainConfig()
    t = table_with(1, grad=0.0, s_d=6)
    t.abs_grad_acc[:] = 2 * cfg.grad_threshold
    clone, split = select_densify(t, flat_scene(1, scale=0.5), cfg, EXTENT)
    assert clone.size == 0 and split.tolist() == [0]
    _, split = select_densify(t, flat_scene(1, scale=0.5), cfg.replace(abs_grad_split=False), EXTENT)
    assert split.size == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_consistent_selection_is_subset_of_gradient_only(seed):
    rng = np.random.default_rng(seed)
    n = 30
    scene = flat_scene(n)
    scene.log_scale = np.log(rng.uniform(0.001, 0.05, (n, 3)))
    t = ScoreTable.zeros(n)
    t.views_seen[:] = rng.integers(0, 5, n)
    t.grad_norm_acc[:] = rng.uniform(0, 1e-3, n)
    t.abs_grad_acc[:] = rng.uniform(0, 1e-3, n)
    t.s_d[:] = rng.uniform(0, 10, n)
    c1, s1 = select_densify(t, scene, TrainConfig(use_vcd=True), EXTENT)
    c0, s0 = select_densify(t, scene, TrainConfig(use_vcd=False), EXTENT)
    assert set(c1) <= set(c0) and set(s1) <= set(s0)
    assert not set(c1) & set(s1)


# densify mechanics

def test_apply_densify_empty_is_identity():
    scene = flat_scene(3)
    out, origin = apply_densify(scene, [], [], np.random.default_rng(0))
    assert origin.tolist() == [0, 1, 2]
    for k, v in scene.params().items():
        assert np.array_equal(out.params()[k], v)


def test_apply_densify_split_cardinality_and_scale():
    scene = flat_scene(4, scale=1.6)
    scene.mu[:] = np.arange(4)[:, None]
    out, origin = apply_densify(scene, [], [2], np.random.default_rng(0))
    assert len(out) == 5
    assert origin.tolist() == [0, 1, 3, 2, 2]
    assert not np.any(np.all(out.mu == 2.0, axis=1))
    np.testing.assert_allclose(np.exp(out.log_scale[3:]), 1.0, rtol=1e-12)


def test_apply_densify_clone_copies():
    scene = flat_scene(2)
    out, origin = apply_densify(scene, [1], [], np.random.default_rng(0))
    assert len(out) == 3 and origin.tolist() == [0, 1, 1]
    assert np.array_equal(out.mu[2], scene.mu[1])


def test_apply_densify_rejects_overlap():
    with pytest.raises(ValueError):
        apply_densify(flat_scene(2), [1], [1], np.random.default_rng(0))


# pruning

def test_late_low_opacity_pruned():
    cfg = TrainConfig()
    mask = select_prune(table_with(2, s_p=0.2), flat_scene(2, opacity=0.05), 16000, cfg, EXTENT)
    assert mask.tolist() == [False, True]  # never prunes everything; keeps the lowest-score row
    scene = flat_scene(2, opacity=0.05)
    scene.opacity_logit[1] = logit(0.5)
    assert select_prune(table_with(2, s_p=0.2), scene, 16000, cfg, EXTENT).tolist() == [True, False]


def test_late_high_score_pruned():
    t = table_with(2)
    t.s_p[:] = [0.95, 0.5]
    assert select_prune(t, flat_scene(2, opacity=0.5), 16000, TrainConfig(), EXTENT).tolist() == [True, False]


def test_early_top_half_of_candidates():
    scene = flat_scene(6, opacity=0.5)
    scene.opacity_logit[:4] = logit(0.001)
    t = table_with(6)
    t.s_p[:] = [0.1, 0.8, 0.2, 0.9, 1.0, 1.0]
    mask = select_prune(t, scene, 1000, TrainConfig(), EXTENT)
    assert np.nonzero(mask)[0].tolist() == [1, 3]


def test_vcp_disabled_uses_vanilla_candidates():
    scene = flat_scene(3, opacity=0.5)
    scene.opacity_logit[0] = logit(0.001)
    t = table_with(3, s_p=0.99)
    mask = select_prune(t, scene, 1000, TrainConfig(use_vcp=False), EXTENT)
    assert mask.tolist() == [True, False, False]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 100))
def test_late_prune_set_invariant_to_raw_score_scaling(seed, k):
    rng = np.random.default_rng(seed)
    n = 15
    scene = flat_scene(n)
    scene.opacity_logit = logit(rng.uniform(0.01, 0.9, n))
    counts, photo = rng.integers(0, 30, (2, n)), rng.uniform(0.05, 0.5, 2)
    masks = []
    for scale in (1.0, k):
        t = ScoreTable.zeros(n)
        t.s_d, t.s_p_raw, t.s_p = scores_from_counts(counts, photo * scale)
        masks.append(select_prune(t, scene, 20000, TrainConfig(), EXTENT))
    assert np.array_equal(*masks)


def test_score_table_take_and_csv(tmp_path):
    t = table_with(3, grad=2.0, s_d=1.5)
    t.views_seen[:] = [1, 2, 4]
    t2 = t.take(np.array([2, 0, 0]))
    assert t2.views_seen.tolist() == [4, 1, 1]
    path = tmp_path / "scores.csv"
    t.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 3 and float(rows[1]["mean_grad"]) == 1.0 and float(rows[0]["s_d"]) == 1.5
