"""Roofline cost model for staged CNNs.

Work is counted in multiply-adds (one MAC = one op), memory traffic in
tensor elements and then bytes.  Each operator is split into three
resources that run concurrently:

* the matrix unit (dense and pointwise convolutions, FC layers),
* the vector unit (depthwise MACs plus every element-wise op, activations
  included),
* memory (every operand read and every result written).

An operator's latency is the slowest of the three, each compute resource
derated by its execution efficiency.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .arch_ir import (Activation, ModelSpec, NUM_CLASSES, Number, OpType, Stage, TensorShape,
                      ValidatedModel, validate_model)
from .errors import BadRange, ParseError, UnsupportedOp

DEFAULT_BATCH = 128
ACTIVATION_OPS = {Activation.RELU: 1, Activation.SWISH: 4}
EFFICIENCY_CLASSES = ("dense", "depthwise", "elementwise")
PROFILE_ENV = "ACCELSCALE_PROFILE_DIR"


# -- closed forms for uniform layers ----------------------------------------------------

def conv_flops(n: int, h: int, w: int, c: int, k: int) -> int:
    """MACs of a stride-1 KxK convolution with C input and output channels."""
    _check_positive(n, h, w, c, k)
    return n * h * w * c * c * k * k


def conv_intensity(n: int, h: int, w: int, c: int, k: int) -> float:
    """MACs per element of traffic (input + output activations + weights)."""
    return conv_flops(n, h, w, c, k) / (2 * n * h * w * c + c * c * k * k)


def dwsep_flops(n: int, h: int, w: int, c: int, k: int) -> int:
    """MACs of a depthwise KxK conv followed by a CxC pointwise conv."""
    _check_positive(n, h, w, c, k)
    return n * h * w * c * (c + k * k)


def dwsep_intensity(n: int, h: int, w: int, c: int, k: int) -> float:
    return dwsep_flops(n, h, w, c, k) / (4 * n * h * w * c + c * k * k + c * c)


def _check_positive(*args: int) -> None:
    if any(a < 1 for a in args):
        raise ValueError("all dimensions must be >= 1")


# -- hardware profile ----------------------------------------------------------

@dataclass(frozen=True)
class HardwareProfile:
    name: str
    peak_matrix_ops: float
    peak_vector_ops: float
    mem_bandwidth: float
    bytes_per_element: int = 2
    fused_activations: frozenset = frozenset()
    efficiency: tuple = (("dense", 0.55), ("depthwise", 0.55), ("elementwise", 0.55))

    def __post_init__(self):
        if isinstance(self.efficiency, Mapping):
            object.__setattr__(self, "efficiency", tuple(sorted(self.efficiency.items())))
        object.__setattr__(self, "fused_activations",
                           frozenset(Activation(a) for a in self.fused_activations))
        for label in ("peak_matrix_ops", "peak_vector_ops", "mem_bandwidth"):
            if not getattr(self, label) > 0:
                raise ValueError(f"{label} must be > 0")
        if self.bytes_per_element not in (1, 2, 4):
            raise ValueError("bytes_per_element must be 1, 2 or 4")
        eff = dict(self.efficiency)
        missing = set(EFFICIENCY_CLASSES) - set(eff)
        if missing:
            raise ValueError(f"efficiency table lacks {sorted(missing)}")
        for k, v in eff.items():
            if not 0 < v <= 1:
                raise ValueError(f"efficiency[{k}] must lie in (0, 1], got {v}")

    def eff(self, op_class: str) -> float:
        return dict(self.efficiency)[op_class]

    def is_fused(self, act: Activation) -> bool:
        return Activation(act) in self.fused_activations

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "peak_matrix_ops": self.peak_matrix_ops,
            "peak_vector_ops": self.peak_vector_ops,
            "mem_bandwidth_bytes": self.mem_bandwidth,
            "bytes_per_element": self.bytes_per_element,
            "fused_activations": sorted(a.value for a in self.fused_activations),
            "efficiency": dict(self.efficiency),
        }


_PROFILE_KEYS = {"name", "peak_matrix_ops", "peak_vector_ops", "mem_bandwidth_bytes",
                 "bytes_per_element", "fused_activations", "efficiency"}


def profile_from_dict(doc: Any, path: str | None = None) -> HardwareProfile:
    if not isinstance(doc, dict):
        raise ParseError("profile must be a JSON object", path=path)
    unknown = set(doc) - _PROFILE_KEYS
    if unknown:
        raise ParseError(f"unknown field(s) {sorted(unknown)}", path=path,
                         field=sorted(unknown)[0])
    for key in sorted(_PROFILE_KEYS - {"fused_activations", "bytes_per_element"}):
        if key not in doc:
            raise ParseError("missing required field", path=path, field=key)
    eff = doc["efficiency"]
    if not isinstance(eff, dict):
        raise ParseError("must be an object", path=path, field="efficiency")
    try:
        return HardwareProfile(
            name=str(doc["name"]),
            peak_matrix_ops=float(doc["peak_matrix_ops"]),
            peak_vector_ops=float(doc["peak_vector_ops"]),
            mem_bandwidth=float(doc["mem_bandwidth_bytes"]),
            bytes_per_element=int(doc.get("bytes_per_element", 2)),
            fused_activations=frozenset(doc.get("fused_activations", [])),
            efficiency={k: float(v) for k, v in eff.items()},
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path=path) from None


def load_profile(path: str | Path) -> HardwareProfile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read profile file: {exc.strerror}", path=str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from None
    return profile_from_dict(doc, str(path))


def builtin_profile_names() -> list[str]:
    folder = resources.files("accelscale") / "data" / "profiles"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def get_profile(name_or_path: str | Path) -> HardwareProfile:
    """Resolve a profile by file path, then ``$ACCELSCALE_PROFILE_DIR``, then
    the bundled defaults."""
    candidate = Path(name_or_path)
    if candidate.suffix == ".json" or candidate.exists():
        return load_profile(candidate)
    env_dir = os.environ.get(PROFILE_ENV)
    if env_dir:
        p = Path(env_dir) / f"{name_or_path}.json"
        if p.exists():
            return load_profile(p)
    bundled = resources.files("accelscale") / "data" / "profiles" / f"{name_or_path}.json"
    if bundled.is_file():
        return profile_from_dict(json.loads(bundled.read_text()), str(name_or_path))
    raise ParseError(f"no such profile (known: {', '.join(builtin_profile_names())})",
                     path=str(name_or_path))


# -- roofline ------------------------------------------------------------------

def ridge_point(profile: HardwareProfile) -> float:
    return profile.peak_matrix_ops / profile.mem_bandwidth


def attainable(profile: HardwareProfile, intensity: float) -> float:
    """Roofline-ideal compute rate at ``intensity`` ops/byte."""
    if intensity >= ridge_point(profile):
        return profile.peak_matrix_ops
    return intensity * profile.mem_bandwidth


def roofline_curve(profile: HardwareProfile, i_min: float, i_max: float,
                   n_points: int = 64) -> list[tuple[float, float]]:
    if not (0 < i_min < i_max) or n_points < 2:
        raise BadRange(f"need 0 < i_min < i_max and n_points >= 2, got "
                       f"({i_min}, {i_max}, {n_points})")
    xs = np.geomspace(i_min, i_max, n_points)
    return [(float(x), attainable(profile, float(x))) for x in xs]


# -- per-op accounting ------------------------------------------------------------

@dataclass
class Work:
    """Raw resource demand of one operator before it meets a profile."""

    matrix_macs: Number = 0
    depthwise_macs: Number = 0
    elementwise_ops: Number = 0
    mem_elems: Number = 0

    @property
    def flops(self) -> Number:
        return self.matrix_macs + self.depthwise_macs

    def conv(self, n, hi, wi, ho, wo, cin, cout, k) -> None:
        self.matrix_macs += n * ho * wo * cin * cout * k * k
        self.mem_elems += n * hi * wi * cin + n * ho * wo * cout + cin * cout * k * k

    def depthwise(self, n, hi, wi, ho, wo, c, k) -> None:
        self.depthwise_macs += n * ho * wo * c * k * k
        self.mem_elems += n * hi * wi * c + n * ho * wo * c + c * k * k

    def activation(self, elems, act: Activation, profile: HardwareProfile) -> None:
        self.elementwise_ops += ACTIVATION_OPS[act] * elems
        if not profile.is_fused(act):
            self.mem_elems += 2 * elems

    def squeeze_excite(self, n, h, w, c, ratio) -> None:
        if ratio <= 0:
            return
        squeezed = ratio * c
        if isinstance(c, int):
            squeezed = max(1, math.ceil(squeezed))
        self.matrix_macs += 2 * n * c * squeezed
        self.mem_elems += 2 * c * squeezed + 2 * n * c
        self.elementwise_ops += 2 * n * h * w * c  # pooling + channel rescale


@dataclass(frozen=True)
class OpCost:
    flops: Number
    vector_ops: Number
    mem_elems: Number
    mem_bytes: Number
    intensity: float
    intensity_elems: float
    matrix_time: float
    vector_time: float
    mem_time: float
    latency: float
    regime: str

    @property
    def compute_bound(self) -> bool:
        return self.regime == "compute_bound"


def cost_from_work(work: Work, profile: HardwareProfile) -> OpCost:
    q_bytes = work.mem_elems * profile.bytes_per_element
    matrix_time = work.matrix_macs / (profile.peak_matrix_ops * profile.eff("dense"))
    vector_time = (work.depthwise_macs / (profile.peak_vector_ops * profile.eff("depthwise"))
                   + work.elementwise_ops / (profile.peak_vector_ops * profile.eff("elementwise")))
    mem_time = q_bytes / profile.mem_bandwidth
    latency = max(matrix_time, vector_time, mem_time)
    regime = "compute_bound" if max(matrix_time, vector_time) >= mem_time else "memory_bound"
    w = work.flops
    return OpCost(
        flops=w, vector_ops=work.depthwise_macs + work.elementwise_ops,
        mem_elems=work.mem_elems, mem_bytes=q_bytes,
        intensity=w / q_bytes if q_bytes else 0.0,
        intensity_elems=w / work.mem_elems if work.mem_elems else 0.0,
        matrix_time=matrix_time, vector_time=vector_time, mem_time=mem_time,
        latency=latency, regime=regime)


def _block_work(stage: Stage, x: TensorShape, y: TensorShape, act: Activation,
                profile: HardwareProfile, work: Work) -> None:
    n, hi, wi, cin = x.n, x.h, x.w, x.c
    ho, wo, cout = y.h, y.w, y.c
    k, e = stage.kernel, stage.expansion
    mid = e * (stage.expand_in if stage.expand_in is not None else cin) if e != 1 else cin
    if stage.op is OpType.MBCONV:
        if e != 1:
            work.conv(n, hi, wi, hi, wi, cin, mid, 1)
            work.activation(n * hi * wi * mid, act, profile)
        work.depthwise(n, hi, wi, ho, wo, mid, k)
        work.activation(n * ho * wo * mid, act, profile)
        work.squeeze_excite(n, ho, wo, mid, stage.se_ratio)
        work.conv(n, ho, wo, ho, wo, mid, cout, 1)
    else:
        if e != 1:
            work.conv(n, hi, wi, ho, wo, cin, mid, k)
            work.activation(n * ho * wo * mid, act, profile)
            work.squeeze_excite(n, ho, wo, mid, stage.se_ratio)
            work.conv(n, ho, wo, ho, wo, mid, cout, 1)
        else:
            work.conv(n, hi, wi, ho, wo, cin, cout, k)
            work.activation(n * ho * wo * cout, act, profile)
            work.squeeze_excite(n, ho, wo, cout, stage.se_ratio)
    if stage.stride == 1 and cin == cout:
        skip = n * ho * wo * cout
        work.elementwise_ops += skip
        work.mem_elems += skip


def op_work(stage: Stage, in_shape: TensorShape, profile: HardwareProfile,
            activation: Activation | None = None) -> tuple[Work, TensorShape]:
    """Resource demand of one repeat of ``stage`` applied to ``in_shape``."""
    from .arch_ir import _stage_output  # shape rule lives with the IR

    act = Activation(activation or stage.activation)
    y = _stage_output(0, stage, in_shape)
    x = in_shape
    work = Work()
    op = stage.op
    if op in (OpType.STEM, OpType.CONV, OpType.SPACE_TO_DEPTH):
        work.conv(x.n, x.h, x.w, y.h, y.w, x.c, y.c, stage.kernel)
        work.activation(y.elements, act, profile)
    elif op is OpType.DWSEP:
        work.depthwise(x.n, x.h, x.w, y.h, y.w, x.c, stage.kernel)
        work.activation(x.n * y.h * y.w * x.c, act, profile)
        work.conv(x.n, y.h, y.w, y.h, y.w, x.c, y.c, 1)
        work.activation(y.elements, act, profile)
    elif op in (OpType.MBCONV, OpType.FUSED_MBCONV):
        _block_work(stage, x, y, act, profile, work)
    elif op is OpType.POOL:
        work.elementwise_ops += x.elements
        work.mem_elems += x.elements + x.n * x.c
    elif op is OpType.FC:
        feats = x.h * x.w * x.c
        work.matrix_macs += x.n * feats * y.c
        work.mem_elems += x.n * feats + x.n * y.c + feats * y.c
    elif op is OpType.HEAD:
        width = stage.out_c
        work.conv(x.n, x.h, x.w, x.h, x.w, x.c, width, 1)
        conv_out = x.n * x.h * x.w * width
        work.activation(conv_out, act, profile)
        work.elementwise_ops += conv_out
        work.mem_elems += conv_out + x.n * width
        work.matrix_macs += x.n * width * NUM_CLASSES
        work.mem_elems += x.n * width + x.n * NUM_CLASSES + width * NUM_CLASSES
    else:  # pragma: no cover - OpType is closed
        raise UnsupportedOp(f"no cost rule for {op}")
    return work, y


def op_cost(stage: Stage, in_shape: TensorShape, profile: HardwareProfile,
            activation: Activation | None = None) -> OpCost:
    if not isinstance(stage, Stage):
        raise UnsupportedOp(f"cannot cost {stage!r}")
    work, _ = op_work(stage, in_shape, profile, activation)
    return cost_from_work(work, profile)


# -- model level ---------------------------------------------------------------

@dataclass(frozen=True)
class StageCost:
    index: int
    op: str
    repeats: Number
    first: OpCost
    rest: OpCost | None

    def _total(self, attr: str) -> Number:
        v = getattr(self.first, attr)
        if self.rest is not None:
            v += (self.repeats - 1) * getattr(self.rest, attr)
        return v

    @property
    def flops(self) -> Number:
        return self._total("flops")

    @property
    def mem_bytes(self) -> Number:
        return self._total("mem_bytes")

    @property
    def latency(self) -> float:
        return self._total("latency")

    @property
    def intensity(self) -> float:
        q = self.mem_bytes
        return self.flops / q if q else 0.0

    @property
    def regime(self) -> str:
        if self.rest is None or self.first.latency >= (self.repeats - 1) * self.rest.latency:
            return self.first.regime
        return self.rest.regime


@dataclass(frozen=True)
class ModelCost:
    name: str
    batch: int
    stages: tuple[StageCost, ...]
    total_flops: Number
    total_bytes: Number
    total_latency: float
    aggregate_intensity: float
    achieved_efficiency: float

    @property
    def flops_per_image(self) -> float:
        return self.total_flops / self.batch

    @property
    def achieved_rate(self) -> float:
        return self.total_flops / self.total_latency if self.total_latency else 0.0

    def regime_mix(self) -> dict[str, float]:
        """Share of latency spent in compute- vs memory-bound stages."""
        mix = {"compute_bound": 0.0, "memory_bound": 0.0}
        for s in self.stages:
            mix[s.regime] += s.latency
        total = sum(mix.values())
        return {k: (v / total if total else 0.0) for k, v in mix.items()}


def model_cost(model: ModelSpec | ValidatedModel, profile: HardwareProfile,
               batch: int = DEFAULT_BATCH) -> ModelCost:
    if isinstance(model, ValidatedModel):
        return _model_cost_cached(model.spec, profile, model.batch)
    return _model_cost_cached(model, profile, batch)


@lru_cache(maxsize=8192)
def _model_cost_cached(spec: ModelSpec, profile: HardwareProfile, batch: int) -> ModelCost:
    vm = validate_model(spec, batch=batch, allow_empty=True)
    stages = []
    for i, (stage, sh) in enumerate(vm):
        first = op_cost(stage, sh.in_shape, profile)
        rest = None
        if stage.repeats != 1:
            repeat = replace(stage, stride=1, expand_in=None)
            rest = op_cost(repeat, sh.out_shape, profile)
        stages.append(StageCost(i, stage.op.value, stage.repeats, first, rest))
    w = sum(s.flops for s in stages)
    q = sum(s.mem_bytes for s in stages)
    lat = sum(s.latency for s in stages)
    agg = w / q if q else 0.0
    eff = w / (lat * attainable(profile, agg)) if lat and agg else 0.0
    return ModelCost(spec.name, batch, tuple(stages), w, q, lat, agg, eff)


_COUNTING_PROFILE = HardwareProfile("counting", 1.0, 1.0, 1.0,
                                    fused_activations=frozenset(Activation))


def model_flops(spec: ModelSpec, batch: int = 1) -> Number:
    """Total MACs of ``spec``; independent of any hardware profile."""
    return _model_cost_cached(spec, _COUNTING_PROFILE, batch).total_flops


def model_latency(spec: ModelSpec, profile: HardwareProfile, batch: int = DEFAULT_BATCH) -> float:
    return _model_cost_cached(spec, profile, batch).total_latency


# -- export --------------------------------------------------------------------

COST_CSV_COLUMNS = ("stage", "op", "W", "Q_bytes", "I", "regime", "latency_s")


def sig6(x: float) -> float:
    """Round to 6 significant digits (report convention for times)."""
    return float(f"{x:.6g}")


def cost_rows(cost: ModelCost) -> list[dict[str, Any]]:
    return [{
        "stage": s.index, "op": s.op, "W": int(round(s.flops)), "Q_bytes": int(round(s.mem_bytes)),
        "I": sig6(s.intensity), "regime": s.regime, "latency_s": sig6(s.latency),
    } for s in cost.stages]


def cost_to_csv(cost: ModelCost) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COST_CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(cost_rows(cost))
    return buf.getvalue()
