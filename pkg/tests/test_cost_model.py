from __future__ import annotations

import json
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from accelscale.arch_ir import (Activation, ModelSpec, OpType, Stage, TensorShape,
                                build_breakdown_variants)
from accelscale.cost_model import (COST_CSV_COLUMNS, HardwareProfile, Work, attainable,
                                   builtin_profile_names, conv_flops, conv_intensity,
                                   cost_from_work, cost_to_csv, dwsep_flops, dwsep_intensity,
                                   get_profile, load_profile, model_cost, model_flops, op_cost,
                                   op_work, ridge_point, roofline_curve)
from accelscale.errors import BadRange, ParseError, UnsupportedOp

EFF_HALF = {"dense": 0.5, "depthwise": 0.5, "elementwise": 0.5}


def _toy_profile(bandwidth):
    return HardwareProfile("toy", 100.0, 100.0, bandwidth, bytes_per_element=1,
                           efficiency=EFF_HALF)


# -- closed forms ---------------------------------------------------------------------

def test_conv_flops_examples():
    assert conv_flops(1, 1, 1, 1, 1) == 1
    assert conv_flops(1, 7, 7, 8, 3) == 28224
    assert conv_flops(2, 4, 4, 16, 1) == 8192


def test_conv_intensity_examples():
    assert conv_intensity(1, 1, 1, 1, 1) == pytest.approx(1 / 3)
    assert Fraction(conv_intensity(1, 7, 7, 8, 3)) == Fraction(28224 / 1360)


def test_dwsep_examples():
    assert dwsep_flops(1, 1, 1, 1, 1) == 2
    assert dwsep_flops(1, 7, 7, 8, 3) == 6664
    assert dwsep_intensity(1, 7, 7, 8, 3) == pytest.approx(3.911, abs=1e-3)
    assert dwsep_intensity(1, 1, 1, 1, 1) == pytest.approx(1 / 3)


@pytest.mark.parametrize("dims", [(1, 7, 7, 8, 3), (2, 4, 4, 16, 1), (4, 1, 7, 2, 5)])
def test_closed_forms_match_loop_nest_samples(dims):
    macs, q = oracles.loop_conv(*dims)
    assert (conv_flops(*dims), conv_intensity(*dims)) == (macs, macs / q)
    macs, q = oracles.loop_dwsep(*dims)
    assert (dwsep_flops(*dims), dwsep_intensity(*dims)) == (macs, macs / q)


def test_closed_forms_reject_zero_dims():
    with pytest.raises(ValueError):
        conv_flops(0, 1, 1, 1, 1)


@given(st.integers(1, 64), st.integers(1, 32), st.integers(1, 32), st.integers(1, 256),
       st.sampled_from([1, 3, 5, 7]))
@settings(max_examples=60, deadline=None)
def test_dwsep_to_conv_ratio_and_width_monotonicity(n, h, w, c, k):
    assert Fraction(dwsep_flops(n, h, w, c, k), conv_flops(n, h, w, c, k)) == \
        Fraction(c + k * k, c * k * k)
    assert conv_intensity(n, h, w, c + 1, k) > conv_intensity(n, h, w, c, k)
    assert dwsep_intensity(n, h, w, c + 1, k) > dwsep_intensity(n, h, w, c, k)


# -- roofline -------------------------------------------------------------------------

def test_ridge_point_division():
    p = HardwareProfile("r", 1e12, 1e12, 1e10)
    assert ridge_point(p) == 100


def test_attainable_at_and_below_ridge(tpu):
    r = ridge_point(tpu)
    assert attainable(tpu, r) == tpu.peak_matrix_ops
    assert attainable(tpu, r / 2) == pytest.approx(tpu.peak_matrix_ops / 2)
    assert attainable(tpu, 10 * r) == tpu.peak_matrix_ops


def test_roofline_curve_bad_range(tpu):
    with pytest.raises(BadRange):
        roofline_curve(tpu, 10, 1)
    curve = roofline_curve(tpu, 1, 1000, 16)
    assert len(curve) == 16
    assert all(b <= tpu.peak_matrix_ops for _, b in curve)


def test_memory_bound_example():
    c = cost_from_work(Work(matrix_macs=1000, mem_elems=500), _toy_profile(10.0))
    assert c.intensity == 2
    assert (c.matrix_time, c.mem_time, c.latency) == (20.0, 50.0, 50.0)
    assert c.regime == "memory_bound"


def test_compute_bound_example():
    c = cost_from_work(Work(matrix_macs=1000, mem_elems=500), _toy_profile(1000.0))
    assert (c.mem_time, c.latency) == (0.5, 20.0)
    assert c.regime == "compute_bound"


def test_fused_activation_adds_no_traffic(gpu):
    stage = Stage(OpType.CONV, out_c=64, kernel=3, activation="relu")
    x = TensorShape(8, 28, 28, 64)
    fused, _ = op_work(stage, x, gpu)
    unfused_profile = HardwareProfile("nofuse", gpu.peak_matrix_ops, gpu.peak_vector_ops,
                                      gpu.mem_bandwidth)
    unfused, _ = op_work(stage, x, unfused_profile)
    elems = 8 * 28 * 28 * 64
    plain = Work()
    plain.conv(8, 28, 28, 28, 28, 64, 64, 3)
    assert fused.mem_elems == plain.mem_elems
    assert unfused.mem_elems == plain.mem_elems + 2 * elems
    assert cost_from_work(fused, gpu).latency == cost_from_work(plain, gpu).latency


def test_swish_costs_more_vector_work_than_relu(tpu):
    x = TensorShape(8, 28, 28, 64)
    relu = op_cost(Stage(OpType.CONV, out_c=64, kernel=3, activation="relu"), x, tpu)
    swish = op_cost(Stage(OpType.CONV, out_c=64, kernel=3, activation="swish"), x, tpu)
    assert swish.vector_ops > relu.vector_ops
    assert swish.flops == relu.flops


def test_fused_block_more_flops_but_faster_exists(tpu):
    """At high resolution a fused block does more MACs yet finishes first."""
    x = TensorShape(128, 56, 56, 24)
    mb = op_cost(Stage(OpType.MBCONV, out_c=24, kernel=3, expansion=6, se_ratio=0.25), x, tpu)
    fu = op_cost(Stage(OpType.FUSED_MBCONV, out_c=24, kernel=3, expansion=6, se_ratio=0.25),
                 x, tpu)
    assert fu.flops > mb.flops
    assert fu.latency < mb.latency


def test_op_cost_rejects_non_stage(tpu):
    with pytest.raises(UnsupportedOp):
        op_cost("conv", TensorShape(1, 4, 4, 4), tpu)


# -- model cost -----------------------------------------------------------------------

def test_b0_flops_anchor_at_batch_128(b0, tpu):
    c = model_cost(b0, tpu, 128)
    assert c.total_flops == pytest.approx(128 * 0.39e9, rel=0.03)
    assert c.flops_per_image == pytest.approx(model_flops(b0))


def test_breakdown_flops_anchors():
    got = [model_flops(m) for m in build_breakdown_variants()]
    for value, want, tol in zip(got, (0.39e9, 0.47e9, 0.91e9, 0.91e9),
                                (0.03, 0.05, 0.05, 0.05)):
        assert value == pytest.approx(want, rel=tol)


def test_empty_model_costs_nothing(tpu):
    c = model_cost(ModelSpec("empty", 224, ()), tpu)
    assert (c.total_flops, c.total_bytes, c.total_latency) == (0, 0, 0)


def test_stage_costs_sum_to_total(xb0_tpu, tpu):
    c = model_cost(xb0_tpu, tpu)
    assert sum(s.latency for s in c.stages) == pytest.approx(c.total_latency)
    assert sum(s.flops for s in c.stages) == pytest.approx(c.total_flops)
    mix = c.regime_mix()
    assert mix["compute_bound"] + mix["memory_bound"] == pytest.approx(1.0)


def test_flops_do_not_depend_on_profile(xb0_tpu, tpu, gpu, cpu):
    totals = {model_cost(xb0_tpu, p).total_flops for p in (tpu, gpu, cpu)}
    assert len(totals) == 1


def test_cost_csv(xb0_tpu, tpu):
    text = cost_to_csv(model_cost(xb0_tpu, tpu))
    lines = text.splitlines()
    assert lines[0] == ",".join(COST_CSV_COLUMNS)
    assert len(lines) == 1 + len(xb0_tpu.stages)


# -- profiles -------------------------------------------------------------------------

def test_builtin_profiles():
    assert builtin_profile_names() == ["cpu_like", "gpu_v100_like", "tpu_v3_like"]


def test_ridge_ordering(tpu, gpu, cpu):
    assert ridge_point(cpu) < min(ridge_point(tpu), ridge_point(gpu))


def test_profile_env_dir(tmp_path, monkeypatch, tpu):
    doc = tpu.to_dict()
    doc["name"] = "custom"
    doc["mem_bandwidth_bytes"] = 1e9
    (tmp_path / "custom.json").write_text(json.dumps(doc))
    monkeypatch.setenv("ACCELSCALE_PROFILE_DIR", str(tmp_path))
    p = get_profile("custom")
    assert p.mem_bandwidth == 1e9


def test_profile_round_trip(tmp_path, gpu):
    path = tmp_path / "gpu.json"
    path.write_text(json.dumps(gpu.to_dict()))
    assert load_profile(path) == gpu


def test_missing_profile_names_path(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(ParseError) as info:
        get_profile(missing)
    assert str(missing) in str(info.value)


def test_profile_unknown_field(tmp_path, tpu):
    doc = tpu.to_dict()
    doc["clock_hz"] = 1
    path = tmp_path / "p.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ParseError) as info:
        load_profile(path)
    assert info.value.field == "clock_hz"


def test_profile_rejects_bad_efficiency():
    with pytest.raises(ValueError):
        HardwareProfile("bad", 1, 1, 1, efficiency={"dense": 0, "depthwise": 1,
                                                    "elementwise": 1})


def test_activation_enum_round_trip():
    assert Activation("swish") is Activation.SWISH
