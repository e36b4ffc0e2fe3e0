"""Architecture IR: staged CNN skeletons, shape propagation and compound scaling.

A :class:`ModelSpec` is an immutable list of :class:`Stage` rows, each one a
repeated operator with its own activation.  Dimensions are ``int`` for real
architectures; :func:`apply_compound_scaling` with rounding disabled produces
``float`` dimensions, which the cost model evaluates as a continuous
relaxation (used to bisect on the scaling exponent).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Sequence

from .errors import EmptyModel, InvalidPhi, NonDivisibleStride, ParseError, SpecError

Number = int | float

NUM_CLASSES = 1000
VALID_KERNELS = (1, 2, 3, 5)
VALID_EXPANSIONS = (1, 6)


class OpType(str, Enum):
    STEM = "stem"
    CONV = "conv"
    DWSEP = "dwsep"
    MBCONV = "mbconv"
    FUSED_MBCONV = "fused_mbconv"
    SPACE_TO_DEPTH = "space_to_depth"
    POOL = "pool"
    FC = "fc"
    HEAD = "head"  # conv1x1 + global pool + FC classifier


class Activation(str, Enum):
    RELU = "relu"
    SWISH = "swish"


# Ops that never repeat and never take part in depth scaling.
FIXED_OPS = frozenset({OpType.STEM, OpType.SPACE_TO_DEPTH, OpType.HEAD, OpType.POOL, OpType.FC})
KERNEL_OPS = frozenset({OpType.STEM, OpType.CONV, OpType.DWSEP, OpType.MBCONV,
                        OpType.FUSED_MBCONV, OpType.SPACE_TO_DEPTH})
BLOCK_OPS = frozenset({OpType.MBCONV, OpType.FUSED_MBCONV})


@dataclass(frozen=True)
class TensorShape:
    n: Number
    h: Number
    w: Number
    c: Number

    @property
    def elements(self) -> Number:
        return self.n * self.h * self.w * self.c


@dataclass(frozen=True)
class Stage:
    """One row of a staged architecture table.

    ``expand_in`` sizes the expanded hidden layer of the first repeat of an
    (fused) MBConv stage as ``expansion * expand_in`` instead of
    ``expansion * input_channels``; later repeats always expand their actual
    input.  ``out_c`` may be ``None`` for space-to-depth and pooling stages,
    whose width is implied by their input.
    """

    op: OpType
    out_c: Number | None = None
    kernel: int = 1
    stride: int = 1
    expansion: int = 1
    se_ratio: float = 0.0
    repeats: Number = 1
    activation: Activation = Activation.RELU
    scalable: bool = False
    expand_in: Number | None = None

    def __post_init__(self):
        object.__setattr__(self, "op", OpType(self.op))
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_resolution: Number
    stages: tuple[Stage, ...]
    input_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def scalable_mask(self) -> tuple[bool, ...]:
        return tuple(s.scalable for s in self.stages)

    def with_activations(self, activations: Sequence[Activation | str]) -> "ModelSpec":
        if len(activations) != len(self.stages):
            raise SpecError("one activation per stage required")
        return replace(self, stages=tuple(replace(s, activation=Activation(a))
                                          for s, a in zip(self.stages, activations)))


@dataclass(frozen=True)
class ScalingCoeffs:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for label, v in (("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)):
            if not (v >= 1.0) or math.isinf(v):
                raise SpecError(f"{label} must be a finite value >= 1, got {v!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def dims(self, phi: float) -> "ScaledDims":
        return ScaledDims(self.alpha ** phi, self.beta ** phi, self.gamma ** phi)

    def __str__(self) -> str:
        return f"({self.alpha:g}, {self.beta:g}, {self.gamma:g})"


@dataclass(frozen=True)
class ScaledDims:
    d: float
    w_mult: float
    r: float


@dataclass(frozen=True)
class RoundingPolicy:
    """How scaled dimensions are snapped back to integers.

    ``depth`` is one of ``ceil``, ``round``, ``floor`` or ``none``; a divisor
    of ``None`` leaves widths or resolution unrounded (float).
    """

    depth: str = "round"
    width_divisor: int | None = 8
    resolution_divisor: int | None = 8

    def __post_init__(self):
        if self.depth not in ("ceil", "round", "floor", "none"):
            raise SpecError(f"unknown depth rounding {self.depth!r}")

    @classmethod
    def disabled(cls) -> "RoundingPolicy":
        return cls(depth="none", width_divisor=None, resolution_divisor=None)

    @property
    def is_disabled(self) -> bool:
        return self.depth == "none" and self.width_divisor is None and self.resolution_divisor is None

    def round_depth(self, x: float) -> Number:
        if self.depth == "none":
            return x
        # Absorb float noise such as 2 * 1.5**1 == 3.0000000000000004.
        x = round(x, 9)
        if self.depth == "ceil":
            return max(1, math.ceil(x))
        if self.depth == "floor":
            return max(1, math.floor(x))
        return max(1, math.floor(x + 0.5))

    def round_width(self, x: float) -> Number:
        return _round_multiple(x, self.width_divisor)

    def round_resolution(self, x: float) -> Number:
        return _round_multiple(x, self.resolution_divisor)


def _round_multiple(x: float, divisor: int | None) -> Number:
    if divisor is None:
        return x
    return max(divisor, int(math.floor(x / divisor + 0.5)) * divisor)


# -- validation and shape propagation -------------------------------------------

@dataclass(frozen=True)
class StageShapes:
    """Shapes seen by a stage: the first repeat maps ``in_shape`` to
    ``out_shape``; every later repeat maps ``out_shape`` to itself."""

    in_shape: TensorShape
    out_shape: TensorShape


@dataclass(frozen=True)
class ValidatedModel:
    spec: ModelSpec
    batch: int
    shapes: tuple[StageShapes, ...]

    def __iter__(self) -> Iterator[tuple[Stage, StageShapes]]:
        return iter(zip(self.spec.stages, self.shapes))

    def repeat_shapes(self, index: int) -> list[tuple[TensorShape, TensorShape]]:
        """Per-repeat (input, output) shapes of an integer-depth stage."""
        stage, sh = self.spec.stages[index], self.shapes[index]
        n = int(stage.repeats)
        return [(sh.in_shape, sh.out_shape)] + [(sh.out_shape, sh.out_shape)] * (n - 1)

    @property
    def output_shape(self) -> TensorShape | None:
        return self.shapes[-1].out_shape if self.shapes else None


def _downsample(x: Number, s: int) -> Number:
    if s == 1:
        return x
    if isinstance(x, int):
        return -(-x // s)  # SAME padding
    return x / s


def _check_stage_fields(i: int, st: Stage) -> None:
    where = f"stage {i} ({st.op.value})"
    if st.op in KERNEL_OPS and st.kernel not in VALID_KERNELS:
        raise SpecError(f"{where}: kernel must be one of {VALID_KERNELS}, got {st.kernel}")
    if st.op in BLOCK_OPS and st.expansion not in VALID_EXPANSIONS:
        raise SpecError(f"{where}: expansion must be one of {VALID_EXPANSIONS}, got {st.expansion}")
    if not 0.0 <= st.se_ratio <= 1.0:
        raise SpecError(f"{where}: se_ratio must lie in [0, 1], got {st.se_ratio}")
    if st.stride < 1:
        raise SpecError(f"{where}: stride must be >= 1")
    if not st.repeats >= 1:
        raise SpecError(f"{where}: repeats must be >= 1, got {st.repeats}")
    if st.op in FIXED_OPS and (st.repeats != 1 or st.scalable):
        raise SpecError(f"{where}: stem/reshaping/head stages have exactly one repeat and are not scalable")
    if st.out_c is None and st.op not in (OpType.SPACE_TO_DEPTH, OpType.POOL):
        raise SpecError(f"{where}: out_c is required")
    if st.out_c is not None and not st.out_c >= 1:
        raise SpecError(f"{where}: out_c must be >= 1")
    if st.expand_in is not None and not st.expand_in >= 1:
        raise SpecError(f"{where}: expand_in must be >= 1")


def _stage_output(i: int, st: Stage, x: TensorShape) -> TensorShape:
    op = st.op
    if op is OpType.SPACE_TO_DEPTH:
        n = st.kernel
        if n < 2 or st.stride != n:
            raise SpecError(f"stage {i}: space_to_depth needs block >= 2 with stride == kernel")
        for dim in (x.h, x.w):
            if isinstance(dim, int) and dim % n:
                raise NonDivisibleStride(
                    f"stage {i}: space_to_depth block {n} does not divide {x.h}x{x.w}")
        out_c = x.c * n * n
        if st.out_c is not None and not math.isclose(st.out_c, out_c, rel_tol=1e-9):
            raise SpecError(f"stage {i}: space_to_depth maps {x.c} channels to {out_c}, "
                            f"stage declares {st.out_c}")
        return TensorShape(x.n, x.h / n if not isinstance(x.h, int) else x.h // n,
                           x.w / n if not isinstance(x.w, int) else x.w // n, out_c)
    if op is OpType.POOL:
        return TensorShape(x.n, 1, 1, x.c)
    if op is OpType.FC:
        return TensorShape(x.n, 1, 1, st.out_c)
    if op is OpType.HEAD:
        return TensorShape(x.n, 1, 1, NUM_CLASSES)
    return TensorShape(x.n, _downsample(x.h, st.stride), _downsample(x.w, st.stride), st.out_c)


def validate_model(spec: ModelSpec, batch: int = 1, allow_empty: bool = False) -> ValidatedModel:
    """Propagate shapes through ``spec``; raise on any inconsistency."""
    if not spec.stages:
        if allow_empty:
            return ValidatedModel(spec, batch, ())
        raise EmptyModel(f"model {spec.name!r} has no stages")
    if batch < 1:
        raise SpecError("batch must be >= 1")
    if not spec.input_resolution >= 1:
        raise SpecError("input_resolution must be >= 1")
    if spec.stages[0].op not in (OpType.STEM, OpType.CONV):
        raise SpecError("the first stage must be a stem convolution")
    x = TensorShape(batch, spec.input_resolution, spec.input_resolution, spec.input_channels)
    shapes = []
    for i, st in enumerate(spec.stages):
        _check_stage_fields(i, st)
        if i and st.op in KERNEL_OPS and spec.stages[i - 1].op in (OpType.POOL, OpType.FC,
                                                                  OpType.HEAD):
            raise SpecError(f"stage {i}: spatial op after the classifier")
        y = _stage_output(i, st, x)
        shapes.append(StageShapes(x, y))
        x = y
    return ValidatedModel(spec, batch, tuple(shapes))


def count_total_depth(spec: ModelSpec) -> Number:
    """Layer count of the network body.

    Stem, space-to-depth reshaping, pooling and classifier stages are
    excluded: the tabulated depth of EfficientNet-style models (16 for the
    B0 skeleton) counts body blocks only.
    """
    return sum(s.repeats for s in spec.stages if s.op not in FIXED_OPS)


# -- compound scaling ----------------------------------------------------------

def apply_compound_scaling(spec: ModelSpec, coeffs: ScalingCoeffs, phi: float,
                           rounding: RoundingPolicy | None = None,
                           name: str | None = None) -> ModelSpec:
    """Scale depth by ``alpha**phi``, width by ``beta**phi`` and resolution by
    ``gamma**phi``.

    Only stages flagged ``scalable`` change their repeat count.  Kernel sizes,
    strides, SE ratios and activations are preserved.
    """
    if phi < 0 or math.isnan(phi):
        raise InvalidPhi(f"phi must be >= 0, got {phi}")
    rounding = rounding or RoundingPolicy()
    dims = coeffs.dims(phi)
    if phi == 0 or (dims.d == 1.0 and dims.w_mult == 1.0 and dims.r == 1.0):
        return spec if name is None else replace(spec, name=name)

    stages = []
    prev_c: Number = spec.input_channels
    for st in spec.stages:
        changes: dict[str, Any] = {}
        if st.scalable:
            changes["repeats"] = rounding.round_depth(st.repeats * dims.d)
        if st.op is OpType.SPACE_TO_DEPTH:
            out_c = prev_c * st.kernel * st.kernel
            changes["out_c"] = out_c if st.out_c is not None else None
        elif st.op is OpType.POOL:
            out_c = prev_c
        elif st.op is OpType.FC:
            out_c = st.out_c
        else:
            out_c = rounding.round_width(st.out_c * dims.w_mult)
            changes["out_c"] = out_c
        if st.expand_in is not None:
            changes["expand_in"] = rounding.round_width(st.expand_in * dims.w_mult)
        stages.append(replace(st, **changes))
        prev_c = out_c if st.op is not OpType.HEAD else NUM_CLASSES

    res = rounding.round_resolution(spec.input_resolution * dims.r)
    if name is None:
        name = f"{spec.name}@phi={phi:.4g}"
    return ModelSpec(name=name, input_resolution=res, stages=tuple(stages),
                     input_channels=spec.input_channels)


def width_multiplier(spec: ModelSpec, base: ModelSpec) -> float:
    """Geometric-mean channel ratio of ``spec`` over a same-skeleton ``base``."""
    logs = [math.log(a.out_c / b.out_c) for a, b in zip(spec.stages, base.stages)
            if a.out_c is not None and b.out_c is not None and a.op is not OpType.FC]
    return math.exp(sum(logs) / len(logs)) if logs else 1.0


# -- builtin architectures ------------------------------------------------------

def _mb(kernel, expansion, se, stride, out_c, repeats, act="swish", fused=False, expand_in=None,
        scalable=True):
    return Stage(OpType.FUSED_MBCONV if fused else OpType.MBCONV, out_c=out_c, kernel=kernel,
                 stride=stride, expansion=expansion, se_ratio=se, repeats=repeats,
                 activation=act, scalable=scalable, expand_in=expand_in)


def build_efficientnet_b0(activation: str = "swish") -> ModelSpec:
    """EfficientNet-B0 (all swish); the same 14 layers are depth-scalable as in X-B0."""
    a = activation
    return ModelSpec("efficientnet-b0", 224, (
        Stage(OpType.STEM, out_c=32, kernel=3, stride=2, activation=a),
        _mb(3, 1, 0.25, 1, 16, 1, a, scalable=False),
        _mb(3, 6, 0.25, 2, 24, 2, a),
        _mb(5, 6, 0.25, 2, 40, 2, a),
        _mb(3, 6, 0.25, 2, 80, 3, a),
        _mb(5, 6, 0.25, 1, 112, 3, a),
        _mb(5, 6, 0.25, 2, 192, 4, a),
        _mb(3, 6, 0.25, 1, 320, 1, a, scalable=False),
        Stage(OpType.HEAD, out_c=1280, kernel=1, activation=a),
    ))


# Per-stage activation columns of the X-B0 table.
_XB0_ACTIVATIONS = {
    "tpu": ("swish", "relu", "relu", "swish", "swish", "relu", "relu", "relu", "relu", "relu"),
    "gpu": ("relu",) * 10,
}


def _xb0_stages(fused: bool, acts: Sequence[str]) -> tuple[Stage, ...]:
    # Depth scaling touches the 14 layers between the first and last block
    # stages; the single-layer stages at either end keep one repeat.
    return (
        Stage(OpType.STEM, out_c=32, kernel=3, stride=2, activation=acts[0]),
        Stage(OpType.SPACE_TO_DEPTH, out_c=128, kernel=2, stride=2, activation=acts[1]),
        _mb(3, 1, 1.0, 1, 64, 1, acts[2], scalable=False),
        # The fused stage is sized from the 16-wide stage it replaces in B0.
        _mb(3, 6, 0.5, 1, 24, 2, acts[3], fused=fused, expand_in=16),
        _mb(5, 6, 0.25, 2, 40, 2, acts[4], fused=fused),
        _mb(3, 6, 0.25, 2, 80, 3, acts[5]),
        _mb(5, 6, 0.25, 1, 112, 3, acts[6]),
        _mb(5, 6, 0.25, 2, 192, 4, acts[7]),
        _mb(3, 6, 0.25, 1, 320, 1, acts[8], scalable=False),
        Stage(OpType.HEAD, out_c=1280, kernel=1, activation=acts[9]),
    )


def build_efficientnet_x_b0(target: str = "tpu") -> ModelSpec:
    """The searched 10-stage X-B0 base model for ``target`` ('tpu' or 'gpu')."""
    if target not in _XB0_ACTIVATIONS:
        raise SpecError(f"target must be 'tpu' or 'gpu', got {target!r}")
    return ModelSpec(f"efficientnet-x-b0-{target}", 224,
                     _xb0_stages(True, _XB0_ACTIVATIONS[target]))


def build_breakdown_variants() -> list[ModelSpec]:
    """B0 -> +SpaceToDepth -> +FusedConv -> X-B0 (TPU activations)."""
    swish = ("swish",) * 10
    return [
        build_efficientnet_b0(),
        ModelSpec("b0+space_to_depth", 224, _xb0_stages(False, swish)),
        ModelSpec("b0+space_to_depth+fused_conv", 224, _xb0_stages(True, swish)),
        build_efficientnet_x_b0("tpu"),
    ]


BUILTIN_MODELS = {
    "efficientnet-b0": build_efficientnet_b0,
    "efficientnet-x-b0-tpu": lambda: build_efficientnet_x_b0("tpu"),
    "efficientnet-x-b0-gpu": lambda: build_efficientnet_x_b0("gpu"),
}


# -- JSON ------------------------------------------------------------------------

MODEL_FIELDS = ("name", "input_resolution", "stages")
OPTIONAL_MODEL_FIELDS = ("input_channels",)
STAGE_FIELDS = ("op", "kernel", "stride", "out_c", "expansion", "se_ratio", "repeats",
                "activation", "scalable")
OPTIONAL_STAGE_FIELDS = ("expand_in",)


def model_to_dict(spec: ModelSpec) -> dict[str, Any]:
    stages = []
    for st in spec.stages:
        d = {
            "op": st.op.value, "kernel": st.kernel, "stride": st.stride, "out_c": st.out_c,
            "expansion": st.expansion, "se_ratio": st.se_ratio, "repeats": st.repeats,
            "activation": st.activation.value, "scalable": st.scalable,
        }
        if st.expand_in is not None:
            d["expand_in"] = st.expand_in
        stages.append(d)
    out: dict[str, Any] = {"name": spec.name, "input_resolution": spec.input_resolution,
                           "stages": stages}
    if spec.input_channels != 3:
        out["input_channels"] = spec.input_channels
    return out


def _expect(cond: bool, msg: str, field: str, path: str | None) -> None:
    if not cond:
        raise ParseError(msg, path=path, field=field)


def _is_num(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def model_from_dict(doc: Any, path: str | None = None) -> ModelSpec:
    _expect(isinstance(doc, dict), "model document must be a JSON object", "<root>", path)
    unknown = set(doc) - set(MODEL_FIELDS) - set(OPTIONAL_MODEL_FIELDS)
    _expect(not unknown, f"unknown field(s) {sorted(unknown)}", ",".join(sorted(unknown)), path)
    for f in MODEL_FIELDS:
        _expect(f in doc, "missing required field", f, path)
    _expect(isinstance(doc["name"], str), "must be a string", "name", path)
    _expect(_is_num(doc["input_resolution"]), "must be a number", "input_resolution", path)
    _expect(isinstance(doc["stages"], list), "must be a list", "stages", path)
    stages = []
    for i, sd in enumerate(doc["stages"]):
        loc = f"stages[{i}]"
        _expect(isinstance(sd, dict), "stage must be an object", loc, path)
        unknown = set(sd) - set(STAGE_FIELDS) - set(OPTIONAL_STAGE_FIELDS)
        _expect(not unknown, f"unknown field(s) {sorted(unknown)}",
                f"{loc}.{sorted(unknown)[0]}" if unknown else loc, path)
        _expect("op" in sd, "missing required field", f"{loc}.op", path)
        try:
            op = OpType(sd["op"])
        except ValueError:
            raise ParseError(f"unknown op {sd['op']!r}", path=path, field=f"{loc}.op") from None
        try:
            act = Activation(sd.get("activation", "relu"))
        except ValueError:
            raise ParseError(f"unknown activation {sd.get('activation')!r}", path=path,
                             field=f"{loc}.activation") from None
        for f in ("kernel", "stride", "expansion"):
            if f in sd:
                _expect(isinstance(sd[f], int) and not isinstance(sd[f], bool),
                        "must be an integer", f"{loc}.{f}", path)
        for f in ("out_c", "se_ratio", "repeats", "expand_in"):
            if sd.get(f) is not None:
                _expect(_is_num(sd[f]), "must be a number", f"{loc}.{f}", path)
        if "scalable" in sd:
            _expect(isinstance(sd["scalable"], bool), "must be a boolean", f"{loc}.scalable", path)
        stages.append(Stage(
            op=op, out_c=sd.get("out_c"), kernel=sd.get("kernel", 1), stride=sd.get("stride", 1),
            expansion=sd.get("expansion", 1), se_ratio=sd.get("se_ratio", 0.0),
            repeats=sd.get("repeats", 1), activation=act, scalable=sd.get("scalable", False),
            expand_in=sd.get("expand_in")))
    ic = doc.get("input_channels", 3)
    _expect(isinstance(ic, int) and ic >= 1, "must be a positive integer", "input_channels", path)
    return ModelSpec(doc["name"], doc["input_resolution"], tuple(stages), ic)


def load_model(path: str | Path) -> ModelSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read model file: {exc.strerror}", path=str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from None
    return model_from_dict(doc, str(path))


def dump_model(spec: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(spec), indent=2) + "\n")
