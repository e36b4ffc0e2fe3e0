"""Acceptance criteria 1-9, one test each.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary ends with
one ``criterion N: PASS|FAIL`` line per criterion.
"""

from __future__ import annotations

import random

import pytest

import oracles
from accelscale.arch_ir import build_breakdown_variants, build_efficientnet_x_b0
from accelscale.cost_model import (conv_flops, conv_intensity, dwsep_flops, dwsep_intensity,
                                   attainable, cost_from_work, get_profile, model_cost,
                                   model_flops, ridge_point, Work)
from accelscale.lacs import (REFERENCE_COEFFS, GridSpec, PhiSchedule, RewardConfig,
                             SyntheticAccuracy, get_schedule, grid_search_coeffs,
                             reference_dimensions, reward, scale_family,
                             single_objective_coeffs)
from accelscale.nas_lite import (Candidate, ParetoArchive, SearchSpace, StageChoice,
                                 default_reward_config, dominates, evolutionary_search,
                                 exhaustive_search)


@pytest.mark.criterion(1)
def test_criterion_1_closed_forms_match_loop_nest():
    mismatches = []
    for n, h, w, c, k in oracles.closed_form_grid():
        macs, traffic = oracles.loop_conv(n, h, w, c, k)
        dmacs, dtraffic = oracles.loop_dwsep(n, h, w, c, k)
        got = (conv_flops(n, h, w, c, k), conv_intensity(n, h, w, c, k),
               dwsep_flops(n, h, w, c, k), dwsep_intensity(n, h, w, c, k))
        want = (macs, macs / traffic, dmacs, dmacs / dtraffic)
        if got != want:
            mismatches.append(((n, h, w, c, k), got, want))
    assert not mismatches, mismatches[:5]


@pytest.mark.criterion(2)
def test_criterion_2_flops_anchors():
    b0, s2d, _fused, xb0 = build_breakdown_variants()
    assert model_flops(b0) == pytest.approx(0.39e9, rel=0.03)
    assert model_flops(xb0) == pytest.approx(0.91e9, rel=0.05)
    assert model_flops(s2d) == pytest.approx(0.47e9, rel=0.05)


@pytest.mark.criterion(3)
def test_criterion_3_intensity_ordering(tpu):
    b0, s2d, fused, xb0 = (model_cost(m, tpu).aggregate_intensity
                           for m in build_breakdown_variants())
    assert b0 < s2d < fused <= xb0
    assert 2.2 <= xb0 / b0 <= 4.2


@pytest.mark.criterion(4)
def test_criterion_4_reward_values():
    cfg = RewardConfig(target_latency=0.01, w=-0.09)
    assert reward(0.77, 0.02, cfg) == pytest.approx(0.72339, abs=1e-4)
    for a in (0.5, 0.77, 0.8123, 1.0):
        assert reward(a, 0.01, cfg) == a


@pytest.mark.criterion(5)
def test_criterion_5_family_reproduction():
    """Every (depth, resolution) within 2 layers and 8 px, GPU and TPU."""
    misses = []
    for key, target, profile in (("lacs_gpu", "gpu", "gpu_v100_like"),
                                 ("lacs_tpu", "tpu", "tpu_v3_like")):
        base = build_efficientnet_x_b0(target)
        family = scale_family(base, REFERENCE_COEFFS[key], get_schedule(key),
                              get_profile(profile))
        got = {m.level: (m.depth, m.resolution) for m in family}
        for level, depth, res in reference_dimensions()[key]:
            d, r = got[level]
            if abs(d - depth) > 2 or abs(r - res) > 8:
                misses.append(f"{key} {level}: got ({d}, {r}), want ({depth}, {res})")
    assert not misses, "; ".join(misses)


@pytest.mark.criterion(6)
def test_criterion_6_grid_phase1_matches_exhaustive(xb0_tpu, tpu):
    surrogate = SyntheticAccuracy(xb0_tpu)
    target = 2 * model_cost(xb0_tpu, tpu).total_latency
    grid = GridSpec((1.0, 1.4, 0.1), (1.0, 1.4, 0.1), (1.0, 1.4, 0.1), refinement_rounds=0)
    assert len(grid.points()) == 125
    result = grid_search_coeffs(xb0_tpu, tpu, surrogate, RewardConfig(target), grid)
    best, _ = oracles.grid_oracle(xb0_tpu, tpu, surrogate, target, grid.points(), 128)
    assert result.phase1_best.as_tuple() == tuple(best)


@pytest.mark.criterion(7)
def test_criterion_7_depth_outgrows_resolution(xb0_tpu, tpu):
    surrogate = SyntheticAccuracy(xb0_tpu)
    base_latency = model_cost(xb0_tpu, tpu).total_latency
    lacs = grid_search_coeffs(xb0_tpu, tpu, surrogate, RewardConfig(2 * base_latency))
    alpha, _beta, gamma = lacs.best.as_tuple()
    assert alpha > gamma
    single = single_objective_coeffs(xb0_tpu, surrogate)
    # Both families are scaled to the same doubling latency targets.
    schedule = PhiSchedule.from_latency_targets(
        [(f"B{k}", base_latency * 2 ** k) for k in range(8)])
    top_lacs = scale_family(xb0_tpu, lacs, schedule, tpu)[-1]
    top_single = scale_family(xb0_tpu, single, schedule, tpu)[-1]
    assert top_lacs.cost.aggregate_intensity > top_single.cost.aggregate_intensity


@pytest.mark.criterion(8)
def test_criterion_8_roofline_properties(tpu, gpu, cpu):
    assert ridge_point(tpu) > ridge_point(cpu)
    assert ridge_point(gpu) > ridge_point(cpu)
    for p in (tpu, gpu, cpu):
        assert attainable(p, ridge_point(p)) == p.peak_matrix_ops
    # A dense op with more work but high reuse beats a smaller, streaming one.
    heavy = Work(matrix_macs=10**9, mem_elems=10**6)
    light = Work(depthwise_macs=10**8, mem_elems=10**8)
    w1, w2 = light.flops, heavy.flops
    lat1 = cost_from_work(light, tpu).latency
    lat2 = cost_from_work(heavy, tpu).latency
    assert w1 < w2 and lat1 > lat2


def _criterion9_space():
    n = 7
    choices = {
        "conv_type": [["mbconv"]] * n,
        "kernel": [[3, 5]] * 3 + [[5]] * 4,
        "expansion": [[6]] * n,
        "se_ratio": [[0.25]] * n,
        "activation": [["relu", "swish"]] * n,
    }
    return SearchSpace(choices=tuple(choices.items()), s2d_positions=(None,))


@pytest.mark.criterion(9)
def test_criterion_9_nas_oracle_and_archive_fuzz(tpu):
    space = _criterion9_space()
    assert space.size <= 1024
    surrogate = SyntheticAccuracy(build_efficientnet_x_b0())
    cfg = default_reward_config(space, tpu)
    oracle_best, _, count = oracles.nas_oracle(space, surrogate, tpu, cfg.target_latency, 128)
    assert count == space.size
    assert exhaustive_search(space, surrogate, tpu, cfg).candidate == oracle_best
    found = evolutionary_search(space, surrogate, tpu, cfg, budget=space.size, seed=0)
    assert found.best.candidate == oracle_best

    rng = random.Random(1234)
    archive = ParetoArchive()
    pool = [Candidate((StageChoice(),), i) for i in range(200)]
    for step in range(10_000):
        acc = round(rng.uniform(0.5, 0.9), 3)
        lat = round(rng.uniform(1e-3, 1e-2), 5)
        archive.insert(rng.choice(pool), acc, lat)
        entries = list(archive)
        assert not any(dominates(a, b) for a in entries for b in entries), step
