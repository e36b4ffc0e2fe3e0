"""Small-scale architecture search over a factorized, accelerator-aware space.

A candidate fixes one :class:`StageChoice` per block stage of a fixed
skeleton (channels, strides and repeats never change) plus an optional
space-to-depth insertion point.  Candidates are scored with the same reward
as the scaling search.  Regularized evolution stands in for a learned
controller; :func:`exhaustive_search` is the brute-force oracle.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Sequence

from .arch_ir import Activation, ModelSpec, OpType, Stage, validate_model
from .cost_model import DEFAULT_BATCH, HardwareProfile, model_cost
from .errors import InputError, NoMutationPossible, ParseError, SpaceTooLarge
from .lacs import AccuracySurrogate, RewardConfig, reward

CHOICE_FIELDS = ("conv_type", "kernel", "expansion", "se_ratio", "activation")
DEFAULT_CHOICES: dict[str, tuple] = {
    "conv_type": ("mbconv", "fused_mbconv"),
    "kernel": (3, 5),
    "expansion": (1, 6),
    "se_ratio": (0.25, 0.5),
    "activation": ("relu", "swish"),
}
EXHAUSTIVE_CAP = 1_000_000


@dataclass(frozen=True)
class StageChoice:
    conv_type: str = "mbconv"
    kernel: int = 3
    expansion: int = 6
    se_ratio: float = 0.25
    activation: str = "relu"

    def __post_init__(self):
        for f in CHOICE_FIELDS:
            if getattr(self, f) not in DEFAULT_CHOICES[f]:
                raise InputError(f"{f}={getattr(self, f)!r} is not one of {DEFAULT_CHOICES[f]}")

    def to_dict(self) -> dict[str, Any]:
        return {f: getattr(self, f) for f in CHOICE_FIELDS}


@dataclass(frozen=True)
class SkeletonStage:
    """Fixed part of a searchable block stage."""

    out_c: int
    stride: int = 1
    repeats: int = 1
    expand_in: int | None = None


# Block stages of X-B0 with every downsample in place: a space-to-depth
# insertion absorbs the stride of the next strided stage.
XB0_SKELETON = (
    SkeletonStage(64, 1, 1),
    SkeletonStage(24, 2, 2, expand_in=16),
    SkeletonStage(40, 2, 2),
    SkeletonStage(80, 2, 3),
    SkeletonStage(112, 1, 3),
    SkeletonStage(192, 2, 4),
    SkeletonStage(320, 1, 1),
)


@dataclass(frozen=True)
class Candidate:
    choices: tuple[StageChoice, ...]
    s2d_position: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"stages": [c.to_dict() for c in self.choices], "s2d_position": self.s2d_position}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Candidate":
        return cls(tuple(StageChoice(**d) for d in doc["stages"]), doc.get("s2d_position"))


@dataclass(frozen=True)
class SearchSpace:
    """Skeleton plus the option set of every choice field.

    ``choices`` maps a field to either one option list shared by all stages
    or a list of per-stage option lists.  ``s2d_positions`` lists the allowed
    insertion points (``None`` meaning no space-to-depth); by default every
    position whose input resolution is even and that has a later strided
    stage to absorb the downsample.
    """

    skeleton: tuple[SkeletonStage, ...] = XB0_SKELETON
    choices: tuple[tuple[str, Any], ...] = tuple(DEFAULT_CHOICES.items())
    s2d_positions: tuple[int | None, ...] | None = None
    resolution: int = 224
    stem_c: int = 32
    head_c: int = 1280
    name: str = "nas"

    def __post_init__(self):
        object.__setattr__(self, "skeleton", tuple(self.skeleton))
        n = len(self.skeleton)
        if not n:
            raise InputError("skeleton needs at least one stage")
        ch = dict(self.choices)
        unknown = set(ch) - set(CHOICE_FIELDS)
        if unknown:
            raise InputError(f"unknown choice field(s) {sorted(unknown)}")
        merged = []
        for f in CHOICE_FIELDS:
            raw = ch.get(f, DEFAULT_CHOICES[f])
            per_stage = bool(raw) and all(isinstance(o, (list, tuple)) for o in raw)
            if per_stage and len(raw) != n:
                raise InputError(f"{f}: {len(raw)} per-stage option lists for {n} stages")
            stage_opts = tuple(tuple(o) for o in raw) if per_stage else (tuple(raw),) * n
            for opts in stage_opts:
                if not opts or len(set(opts)) != len(opts):
                    raise InputError(f"choice set for {f} must be non-empty and distinct")
                for o in opts:
                    if o not in DEFAULT_CHOICES[f]:
                        raise InputError(f"{f} option {o!r} is not one of {DEFAULT_CHOICES[f]}")
            merged.append((f, stage_opts))
        object.__setattr__(self, "choices", tuple(merged))
        valid = self.valid_s2d_positions()
        if self.s2d_positions is None:
            object.__setattr__(self, "s2d_positions", (None,) + valid)
        else:
            pos = tuple(self.s2d_positions)
            if not pos or len(set(pos)) != len(pos):
                raise InputError("s2d_positions must be non-empty and distinct")
            bad = [p for p in pos if p is not None and p not in valid]
            if bad:
                raise InputError(f"space-to-depth cannot go at stage(s) {bad}; valid: {valid}")
            object.__setattr__(self, "s2d_positions", pos)

    def options(self, f: str, stage: int = 0) -> tuple:
        return dict(self.choices)[f][stage]

    def valid_s2d_positions(self) -> tuple[int, ...]:
        out = []
        h = math.ceil(self.resolution / 2)  # after the stride-2 stem
        for i, st in enumerate(self.skeleton):
            later = any(s.stride == 2 for s in self.skeleton[i:])
            if h % 2 == 0 and later:
                out.append(i)
            h = math.ceil(h / st.stride)
        return tuple(out)

    @property
    def size(self) -> int:
        total = len(self.s2d_positions)
        for _, stage_opts in self.choices:
            total *= math.prod(len(o) for o in stage_opts)
        return total

    def mutable_fields(self) -> list[tuple[int | None, str]]:
        fields: list[tuple[int | None, str]] = [
            (i, f) for i in range(len(self.skeleton)) for f, o in self.choices if len(o[i]) > 1]
        if len(self.s2d_positions) > 1:
            fields.append((None, "s2d_position"))
        return fields

    def sort_key(self, cand: Candidate) -> tuple:
        """Lexicographic position of ``cand`` in the enumeration order."""
        key = [self.s2d_positions.index(cand.s2d_position)]
        for i, c in enumerate(cand.choices):
            key.extend(self.options(f, i).index(getattr(c, f)) for f in CHOICE_FIELDS)
        return tuple(key)

    def stage_options(self, stage: int) -> list[StageChoice]:
        return [StageChoice(*vals) for vals in
                itertools.product(*(self.options(f, stage) for f in CHOICE_FIELDS))]

    def enumerate(self) -> Iterator[Candidate]:
        per_stage = [self.stage_options(i) for i in range(len(self.skeleton))]
        for pos in self.s2d_positions:
            for combo in itertools.product(*per_stage):
                yield Candidate(combo, pos)

    def build(self, cand: Candidate) -> ModelSpec:
        """Materialise ``cand`` on the skeleton as a :class:`ModelSpec`."""
        if len(cand.choices) != len(self.skeleton):
            raise InputError(f"candidate has {len(cand.choices)} stages, skeleton has "
                             f"{len(self.skeleton)}")
        if cand.s2d_position not in self.s2d_positions:
            raise InputError(f"s2d_position {cand.s2d_position} not allowed")
        for i, c in enumerate(cand.choices):
            for f in CHOICE_FIELDS:
                if getattr(c, f) not in self.options(f, i):
                    raise InputError(f"stage {i}: {f}={getattr(c, f)!r} outside the space")
        first = cand.choices[0].activation
        stages = [Stage(OpType.STEM, out_c=self.stem_c, kernel=3, stride=2, activation=first)]
        prev_c = self.stem_c
        absorb = False
        for i, (sk, ch) in enumerate(zip(self.skeleton, cand.choices)):
            if i == cand.s2d_position:
                prev_c *= 4
                stages.append(Stage(OpType.SPACE_TO_DEPTH, out_c=prev_c, kernel=2, stride=2,
                                    activation=ch.activation))
                absorb = True
            stride = sk.stride
            if absorb and stride == 2:
                stride, absorb = 1, False
            stages.append(Stage(OpType(ch.conv_type), out_c=sk.out_c, kernel=ch.kernel,
                                stride=stride, expansion=ch.expansion, se_ratio=ch.se_ratio,
                                repeats=sk.repeats, activation=Activation(ch.activation),
                                expand_in=sk.expand_in if ch.expansion != 1 else None))
            prev_c = sk.out_c
        stages.append(Stage(OpType.HEAD, out_c=self.head_c, kernel=1,
                            activation=cand.choices[-1].activation))
        spec = ModelSpec(self.name, self.resolution, tuple(stages))
        validate_model(spec)
        return spec


def _rng(seed: int | random.Random | None) -> random.Random:
    return seed if isinstance(seed, random.Random) else random.Random(seed)


def sample(space: SearchSpace, rng_seed: int | random.Random | None = None) -> Candidate:
    """Uniform, independent choice for every field of every stage."""
    rng = _rng(rng_seed)
    choices = tuple(StageChoice(*(rng.choice(space.options(f, i)) for f in CHOICE_FIELDS))
                    for i in range(len(space.skeleton)))
    return Candidate(choices, rng.choice(space.s2d_positions))


def mutate(cand: Candidate, space: SearchSpace,
           rng_seed: int | random.Random | None = None) -> Candidate:
    """Resample exactly one field to a different value."""
    fields = space.mutable_fields()
    if not fields:
        raise NoMutationPossible("every choice set is a singleton")
    rng = _rng(rng_seed)
    stage, f = rng.choice(fields)
    if stage is None:
        new = rng.choice([p for p in space.s2d_positions if p != cand.s2d_position])
        return replace(cand, s2d_position=new)
    current = getattr(cand.choices[stage], f)
    new = rng.choice([o for o in space.options(f, stage) if o != current])
    choices = list(cand.choices)
    choices[stage] = replace(choices[stage], **{f: new})
    return replace(cand, choices=tuple(choices))


# -- Pareto archive -----------------------------------------------------------------

@dataclass(frozen=True)
class ArchiveEntry:
    candidate: Candidate
    accuracy: float
    latency: float


def dominates(a: ArchiveEntry, b: ArchiveEntry) -> bool:
    return (a.accuracy >= b.accuracy and a.latency <= b.latency
            and (a.accuracy > b.accuracy or a.latency < b.latency))


class ParetoArchive:
    """Nondominated set under (max accuracy, min latency)."""

    def __init__(self):
        self._entries: list[ArchiveEntry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ArchiveEntry]:
        return iter(sorted(self._entries, key=lambda e: (e.latency, -e.accuracy)))

    def insert(self, candidate: Candidate, accuracy: float, latency: float) -> bool:
        """Add a point unless it is dominated; evict points it dominates."""
        new = ArchiveEntry(candidate, accuracy, latency)
        for e in self._entries:
            if e.candidate == candidate or dominates(e, new):
                return False
        self._entries = [e for e in self._entries if not dominates(new, e)]
        self._entries.append(new)
        return True

    def is_consistent(self) -> bool:
        return not any(dominates(a, b) for a in self._entries for b in self._entries)

    def to_rows(self) -> list[dict[str, Any]]:
        return [{"accuracy": e.accuracy, "latency_s": e.latency,
                 "candidate": json.dumps(e.candidate.to_dict(), sort_keys=True)} for e in self]


# -- search -------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecord:
    index: int
    candidate: Candidate
    accuracy: float
    latency: float
    reward: float

    def to_dict(self) -> dict[str, Any]:
        return {"index": self.index, "candidate": self.candidate.to_dict(),
                "accuracy": self.accuracy, "latency_s": self.latency, "reward": self.reward}


@dataclass
class SearchResult:
    best: EvalRecord
    archive: ParetoArchive
    log: list[EvalRecord] = field(default_factory=list)

    def log_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.log)


class _Evaluator:
    def __init__(self, space, surrogate, profile, cfg, batch):
        self.space, self.surrogate, self.profile = space, surrogate, profile
        self.cfg, self.batch = cfg, batch
        self.cache: dict[Candidate, tuple[float, float, float]] = {}

    def __call__(self, cand: Candidate) -> tuple[float, float, float]:
        hit = self.cache.get(cand)
        if hit is None:
            spec = self.space.build(cand)
            acc = self.surrogate(spec)
            lat = model_cost(spec, self.profile, self.batch).total_latency
            hit = (acc, lat, reward(acc, lat, self.cfg))
            self.cache[cand] = hit
        return hit


def _rank(space: SearchSpace, rec: EvalRecord) -> tuple:
    # Same tie-break as the coefficient search: reward, accuracy, latency,
    # then enumeration order.
    return (-rec.reward, -rec.accuracy, rec.latency, space.sort_key(rec.candidate))


def default_reward_config(space: SearchSpace, profile: HardwareProfile,
                          batch: int = DEFAULT_BATCH) -> RewardConfig:
    """Target latency of the first candidate in enumeration order."""
    ref = next(space.enumerate())
    return RewardConfig(model_cost(space.build(ref), profile, batch).total_latency)


def evolutionary_search(space: SearchSpace, surrogate: AccuracySurrogate,
                        profile: HardwareProfile, cfg: RewardConfig | None = None,
                        budget: int = 1000, seed: int = 0, population: int = 64,
                        samples: int = 16, batch: int = DEFAULT_BATCH,
                        max_retries: int = 8) -> SearchResult:
    """Regularized evolution: tournament of ``samples``, mutate the winner,
    evict the oldest.

    ``budget`` counts evaluation events.  A child that was already evaluated
    is re-mutated up to ``max_retries`` times before it is accepted anyway;
    repeated candidates are served from a cache but still count.
    """
    if population < 1 or samples < 1:
        raise InputError("population and samples must be >= 1")
    if budget < population:
        raise InputError(f"budget ({budget}) must be >= population size ({population})")
    cfg = cfg or default_reward_config(space, profile, batch)
    rng = random.Random(seed)
    evaluate = _Evaluator(space, surrogate, profile, cfg, batch)
    archive = ParetoArchive()
    log: list[EvalRecord] = []

    def record(cand: Candidate) -> EvalRecord:
        acc, lat, r = evaluate(cand)
        rec = EvalRecord(len(log), cand, acc, lat, r)
        log.append(rec)
        archive.insert(cand, acc, lat)
        return rec

    pop: deque[EvalRecord] = deque()
    for _ in range(population):
        pop.append(record(sample(space, rng)))
    can_mutate = bool(space.mutable_fields())
    while len(log) < budget:
        if not can_mutate:
            record(pop[0].candidate)
            continue
        contenders = rng.sample(list(pop), min(samples, len(pop)))
        parent = min(contenders, key=lambda r: _rank(space, r))
        child = mutate(parent.candidate, space, rng)
        for _ in range(max_retries):
            if child not in evaluate.cache:
                break
            child = mutate(parent.candidate if rng.random() < 0.5 else child, space, rng)
        pop.append(record(child))
        pop.popleft()
    best = min(log, key=lambda r: _rank(space, r))
    return SearchResult(best, archive, log)


def exhaustive_search(space: SearchSpace, surrogate: AccuracySurrogate,
                      profile: HardwareProfile, cfg: RewardConfig | None = None,
                      batch: int = DEFAULT_BATCH, cap: int = EXHAUSTIVE_CAP) -> EvalRecord:
    if space.size > cap:
        raise SpaceTooLarge(f"space has {space.size} candidates, cap is {cap}")
    cfg = cfg or default_reward_config(space, profile, batch)
    evaluate = _Evaluator(space, surrogate, profile, cfg, batch)
    best = None
    for i, cand in enumerate(space.enumerate()):
        acc, lat, r = evaluate(cand)
        rec = EvalRecord(i, cand, acc, lat, r)
        if best is None or _rank(space, rec) < _rank(space, best):
            best = rec
    return best


# -- config files -------------------------------------------------------------------

SEARCH_CONFIG_KEYS = {"skeleton", "choices", "population", "samples", "budget", "seed",
                      "s2d_positions", "resolution"}


@dataclass(frozen=True)
class SearchConfig:
    space: SearchSpace
    population: int = 64
    samples: int = 16
    budget: int = 1000
    seed: int = 0


def search_config_from_dict(doc: Any, path: str | None = None) -> SearchConfig:
    if not isinstance(doc, dict):
        raise ParseError("search config must be a JSON object", path=path)
    unknown = set(doc) - SEARCH_CONFIG_KEYS
    if unknown:
        raise ParseError(f"unknown field(s) {sorted(unknown)}", path=path,
                         field=sorted(unknown)[0])
    kw: dict[str, Any] = {}
    if "skeleton" in doc:
        sk = doc["skeleton"]
        if not isinstance(sk, list):
            raise ParseError("must be a list", path=path, field="skeleton")
        stages = []
        for i, d in enumerate(sk):
            if not isinstance(d, dict) or "out_c" not in d:
                raise ParseError("stage needs at least out_c", path=path, field=f"skeleton[{i}]")
            try:
                stages.append(SkeletonStage(**d))
            except TypeError as exc:
                raise ParseError(str(exc), path=path, field=f"skeleton[{i}]") from None
        kw["skeleton"] = tuple(stages)
    if "choices" in doc:
        if not isinstance(doc["choices"], dict):
            raise ParseError("must be an object", path=path, field="choices")
        for k, v in doc["choices"].items():
            if not isinstance(v, list):
                raise ParseError("must be a list", path=path, field=f"choices.{k}")
        kw["choices"] = tuple((k, tuple(tuple(o) if isinstance(o, list) else o for o in v))
                              for k, v in doc["choices"].items())
    if "s2d_positions" in doc:
        kw["s2d_positions"] = tuple(doc["s2d_positions"])
    if "resolution" in doc:
        kw["resolution"] = doc["resolution"]
    ints = {}
    for key in ("population", "samples", "budget", "seed"):
        if key in doc:
            v = doc[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ParseError("must be a non-negative integer", path=path, field=key)
            ints[key] = v
    try:
        cfg = SearchConfig(SearchSpace(**kw), **ints)
    except InputError as exc:
        raise ParseError(str(exc), path=path) from None
    if cfg.budget < cfg.population:
        raise ParseError("budget must be >= population", path=path, field="budget")
    return cfg


def load_search_config(path: str | Path) -> SearchConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read search config: {exc.strerror}", path=str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from None
    return search_config_from_dict(doc, str(path))
