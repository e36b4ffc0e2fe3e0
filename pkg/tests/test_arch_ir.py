from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accelscale.arch_ir import (Activation, ModelSpec, OpType, RoundingPolicy, ScalingCoeffs,
                                Stage, apply_compound_scaling, build_breakdown_variants,
                                build_efficientnet_x_b0, count_total_depth, dump_model,
                                load_model, model_from_dict, model_to_dict, validate_model)
from accelscale.errors import (EmptyModel, InputError, InvalidPhi, NonDivisibleStride,
                               ParseError, SpecError)

DISABLED = RoundingPolicy.disabled()


def _chain(repeats, scalable=True):
    stages = [Stage(OpType.STEM, out_c=32, kernel=3, stride=2)]
    stages += [Stage(OpType.MBCONV, out_c=32, kernel=3, expansion=6, repeats=r,
                     scalable=scalable) for r in repeats]
    stages.append(Stage(OpType.HEAD, out_c=1280))
    return ModelSpec("chain", 64, tuple(stages))


# -- validation and shapes ----------------------------------------------------------

def test_xb0_validates_to_ten_annotated_stages(xb0_tpu):
    v = validate_model(xb0_tpu)
    assert len(v.shapes) == 10
    for (_, a), (_, b) in zip(list(v), list(v)[1:]):
        assert a.out_shape == b.in_shape


def test_identity_conv_shape():
    spec = ModelSpec("c", 4, (Stage(OpType.CONV, out_c=8, kernel=3, stride=1),),
                     input_channels=8)
    out = validate_model(spec).output_shape
    assert (out.h, out.w, out.c) == (4, 4, 8)


def test_space_to_depth_on_odd_input_rejected():
    spec = ModelSpec("s2d", 14, (
        Stage(OpType.STEM, out_c=8, kernel=3, stride=2),
        Stage(OpType.SPACE_TO_DEPTH, out_c=32, kernel=2, stride=2),
    ))
    with pytest.raises(NonDivisibleStride):
        validate_model(spec)


def test_space_to_depth_preserves_volume(xb0_tpu):
    v = validate_model(xb0_tpu)
    _, s2d = list(v)[1]
    assert (s2d.in_shape.h, s2d.out_shape.h, s2d.out_shape.c) == (112, 56, 128)
    x, y = s2d.in_shape, s2d.out_shape
    assert x.h * x.w * x.c == y.h * y.w * y.c


def test_empty_model_rejected():
    with pytest.raises(EmptyModel):
        validate_model(ModelSpec("empty", 224, ()))


def test_errors_are_value_errors():
    with pytest.raises(ValueError):
        validate_model(ModelSpec("empty", 224, ()))


# -- builtins ----------------------------------------------------------------------

def test_xb0_tpu_fused_stage(xb0_tpu):
    st4 = xb0_tpu.stages[3]
    assert st4.op is OpType.FUSED_MBCONV
    assert (st4.kernel, st4.expansion, st4.out_c, st4.repeats, st4.se_ratio) == (3, 6, 24, 2, 0.5)
    assert st4.activation is Activation.SWISH


def test_xb0_gpu_is_all_relu(xb0_gpu):
    assert all(s.activation is Activation.RELU for s in xb0_gpu.stages)


def test_xb0_tpu_swish_on_stem_and_fused_stages(xb0_tpu):
    swish = [i for i, s in enumerate(xb0_tpu.stages) if s.activation is Activation.SWISH]
    fused = [i for i, s in enumerate(xb0_tpu.stages) if s.op is OpType.FUSED_MBCONV]
    assert swish == [0] + fused


def test_breakdown_variants_differ_by_one_enhancement():
    b0, s2d, fused, xb0 = build_breakdown_variants()
    assert not any(s.op is OpType.SPACE_TO_DEPTH for s in b0.stages)
    assert any(s.op is OpType.SPACE_TO_DEPTH for s in s2d.stages)
    assert not any(s.op is OpType.FUSED_MBCONV for s in s2d.stages)
    assert [s.op for s in fused.stages] == [s.op for s in xb0.stages]
    assert [s.activation for s in fused.stages] != [s.activation for s in xb0.stages]


def test_unknown_target_rejected():
    with pytest.raises(SpecError):
        build_efficientnet_x_b0("npu")


# -- depth -------------------------------------------------------------------------

def test_xb0_depth_is_16(xb0_tpu):
    assert count_total_depth(xb0_tpu) == 16
    assert sum(s.repeats for s in xb0_tpu.stages if s.scalable) == 14


def test_single_stage_depth():
    spec = ModelSpec("one", 32, (Stage(OpType.CONV, out_c=8, kernel=3, repeats=5),))
    assert count_total_depth(spec) == 5


@given(st.floats(1.0, 1.5), st.floats(1.0, 1.5), st.floats(0, 6))
@settings(max_examples=30, deadline=None)
def test_depth_ignores_width_and_resolution(beta, gamma, phi):
    base = build_efficientnet_x_b0("tpu")
    scaled = apply_compound_scaling(base, ScalingCoeffs(1.0, beta, gamma), phi)
    assert count_total_depth(scaled) == count_total_depth(base)


# -- compound scaling ---------------------------------------------------------------

def test_phi_zero_is_identity(xb0_tpu):
    assert apply_compound_scaling(xb0_tpu, ScalingCoeffs(1.3, 1.2, 1.1), 0) == xb0_tpu


def test_phi_one_multipliers(xb0_tpu):
    c = ScalingCoeffs(1.2, 1.1, 1.15)
    out = apply_compound_scaling(xb0_tpu, c, 1.0, DISABLED)
    assert out.input_resolution == pytest.approx(224 * 1.15)
    for a, b in zip(out.stages, xb0_tpu.stages):
        if b.scalable:
            assert a.repeats == pytest.approx(b.repeats * 1.2)
        else:
            assert a.repeats == b.repeats
        if b.op is not OpType.SPACE_TO_DEPTH:
            assert a.out_c == pytest.approx(b.out_c * 1.1)


def test_ceil_rounding_example():
    base = _chain([2, 2, 3, 3, 4, 1])
    out = apply_compound_scaling(base, ScalingCoeffs(1.28, 1.0, 1.0), 7,
                                 RoundingPolicy(depth="ceil"))
    got = [s.repeats for s in out.stages[1:-1]]
    assert got == [math.ceil(r * 1.28 ** 7) for r in (2, 2, 3, 3, 4, 1)]
    assert got == [12, 12, 17, 17, 23, 6]


def test_negative_phi_rejected(xb0_tpu):
    with pytest.raises(InvalidPhi):
        apply_compound_scaling(xb0_tpu, ScalingCoeffs(1.2, 1.1, 1.1), -0.5)


def test_coeffs_below_one_rejected():
    with pytest.raises(SpecError):
        ScalingCoeffs(0.9, 1.0, 1.0)


def test_default_rounding_snaps_to_multiples_of_eight(xb0_tpu):
    out = apply_compound_scaling(xb0_tpu, ScalingCoeffs(1.28, 1.17, 1.07), 3.3)
    assert out.input_resolution % 8 == 0
    assert all(s.out_c % 8 == 0 for s in out.stages if s.out_c is not None)
    assert all(isinstance(s.repeats, int) for s in out.stages)


@given(st.floats(1.0, 1.4), st.floats(1.0, 1.4), st.floats(1.0, 1.4),
       st.floats(0, 4), st.floats(0, 4))
@settings(max_examples=40, deadline=None)
def test_scaling_is_multiplicative_in_phi(a, b, g, p1, p2):
    base = build_efficientnet_x_b0("tpu")
    c = ScalingCoeffs(a, b, g)
    twice = apply_compound_scaling(apply_compound_scaling(base, c, p1, DISABLED), c, p2, DISABLED)
    once = apply_compound_scaling(base, c, p1 + p2, DISABLED)
    assert twice.input_resolution == pytest.approx(once.input_resolution, rel=1e-9)
    for x, y in zip(twice.stages, once.stages):
        assert x.repeats == pytest.approx(y.repeats, rel=1e-9)
        if x.out_c is not None:
            assert x.out_c == pytest.approx(y.out_c, rel=1e-9)


@given(st.floats(0, 20))
@settings(max_examples=20, deadline=None)
def test_unit_coeffs_are_identity(phi):
    base = build_efficientnet_x_b0("gpu")
    assert apply_compound_scaling(base, ScalingCoeffs(1, 1, 1), phi) == base


# -- JSON ---------------------------------------------------------------------------

@pytest.mark.parametrize("target", ["tpu", "gpu"])
def test_json_round_trip(tmp_path, target):
    spec = build_efficientnet_x_b0(target)
    path = tmp_path / "m.json"
    dump_model(spec, path)
    assert load_model(path) == spec
    assert model_from_dict(json.loads(json.dumps(model_to_dict(spec)))) == spec


def test_json_field_names(xb0_tpu):
    doc = model_to_dict(xb0_tpu)
    assert set(doc) == {"name", "input_resolution", "stages"}
    assert set(doc["stages"][0]) == {"op", "kernel", "stride", "out_c", "expansion", "se_ratio",
                                     "repeats", "activation", "scalable"}


def test_unknown_stage_field_rejected(xb0_tpu):
    doc = model_to_dict(xb0_tpu)
    doc["stages"][0]["dilation"] = 2
    with pytest.raises(ParseError):
        model_from_dict(doc)


def test_unknown_op_rejected(xb0_tpu):
    doc = model_to_dict(xb0_tpu)
    doc["stages"][0]["op"] = "attention"
    with pytest.raises(InputError):
        model_from_dict(doc)


def test_malformed_file_reports_path_and_line(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x",\n "stages": [,]}')
    with pytest.raises(ParseError) as info:
        load_model(bad)
    assert str(bad) in str(info.value)
    assert info.value.line == 2
