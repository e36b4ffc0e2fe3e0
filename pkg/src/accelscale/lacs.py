"""Latency-aware compound scaling.

Searches (alpha, beta, gamma) for a base model under the reward
``accuracy * (latency / T) ** w``, solves the compound exponent ``phi`` that
lands a scaled model on a latency target, and emits whole model families.
Accuracy comes from a pluggable surrogate; nothing here trains a network.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .arch_ir import (Activation, FIXED_OPS, ModelSpec, RoundingPolicy, ScalingCoeffs,
                      apply_compound_scaling, count_total_depth, width_multiplier)
from .cost_model import (DEFAULT_BATCH, HardwareProfile, ModelCost, model_cost, model_flops,
                         sig6)
from .errors import (EmptyGrid, InputError, InvalidPhi, LevelMismatch, NonMonotone, ParseError,
                     Unreachable)

DEFAULT_W = -0.09

# Coefficients reported for the two accelerators and for accuracy-only scaling.
REFERENCE_COEFFS = {
    "lacs_gpu": ScalingCoeffs(1.28, 1.17, 1.07),
    "lacs_tpu": ScalingCoeffs(1.25, 1.17, 1.09),
    "single_objective": ScalingCoeffs(1.2, 1.1, 1.15),
}


# -- reward ------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardConfig:
    target_latency: float
    w: float = DEFAULT_W

    def __post_init__(self):
        if not self.w < 0:
            raise InputError(f"reward exponent w must be negative, got {self.w}")
        if not self.target_latency > 0:
            raise InputError(f"target latency must be positive, got {self.target_latency}")


def reward(accuracy: float, latency: float, cfg: RewardConfig) -> float:
    """Multi-objective reward shared by coefficient search and NAS."""
    if not 0 < accuracy <= 1:
        raise InputError(f"accuracy must lie in (0, 1], got {accuracy}")
    if not latency > 0:
        raise InputError(f"latency must be positive, got {latency}")
    if latency == cfg.target_latency:
        return accuracy
    return accuracy * (latency / cfg.target_latency) ** cfg.w


# -- accuracy surrogates -----------------------------------------------------------

class SurrogateKind(str, Enum):
    SYNTHETIC = "synthetic"
    TABLE = "table"


class SyntheticAccuracy:
    """Closed-form stand-in for trained ImageNet accuracy.

    ``acc = 1 - (1 - base_accuracy) * exp(-kappa * x)`` where ``x`` is an
    effective log-capacity gain over ``reference``:

    * Depth, width and resolution gains (log ratios ``l_d, l_w, l_r``; depth
      over the scalable layers) count
      with their FLOPs exponents (1, 2, 2) but each saturates on its own
      scale ``tau_i = saturation * balance_i``, so pushing a single dimension
      pays off less and less.  Under a fixed FLOPs budget the best split is
      proportional to ``balance``.
    * An architecture change that is not a pure rescaling of ``reference``
      adds ``arch_weight * log(FLOPs / FLOPs_ref)``.
    * Every fraction of body layers switched from relu to swish adds
      ``swish_gain`` accuracy.

    ``saturation=None`` turns the dimension terms into plain log-FLOPs,
    i.e. the model becomes monotone in FLOPs alone.
    """

    kind = SurrogateKind.SYNTHETIC

    def __init__(self, reference: ModelSpec, base_accuracy: float = 0.77,
                 top_accuracy: float = 0.85, top_level: float = 7.0,
                 balance: Sequence[float] = (1.2, 1.1, 1.15),
                 saturation: float | None = 2.0, arch_weight: float = 1.0,
                 swish_gain: float = 0.002):
        if not 0 < base_accuracy < top_accuracy < 1:
            raise InputError("need 0 < base_accuracy < top_accuracy < 1")
        if any(b <= 1 for b in balance):
            raise InputError("balance coefficients must exceed 1")
        self.reference = reference
        self.base_accuracy = base_accuracy
        self.top_accuracy = top_accuracy
        self.top_level = top_level
        self.balance = tuple(float(b) for b in balance)
        self.saturation = saturation
        self.arch_weight = arch_weight
        self.swish_gain = swish_gain
        self._ref_flops = model_flops(reference)
        self._ref_depth = _scalable_depth(reference)
        self._ref_swish = _swish_fraction(reference)
        # kappa puts the balanced model at ``top_level`` on ``top_accuracy``.
        top = [top_level * math.log(b) for b in self.balance]
        x_top = self._dims_gain(top)
        self.kappa = math.log((1 - base_accuracy) / (1 - top_accuracy)) / x_top

    def __repr__(self) -> str:
        return (f"SyntheticAccuracy(reference={self.reference.name!r}, "
                f"base_accuracy={self.base_accuracy}, top_accuracy={self.top_accuracy}, "
                f"balance={self.balance}, saturation={self.saturation})")

    def _dims_gain(self, logs: Sequence[float]) -> float:
        total = 0.0
        for exponent, l, b in zip((1, 2, 2), logs, self.balance):
            if self.saturation is None:
                total += exponent * l
            else:
                tau = self.saturation * math.log(b)
                total += exponent * tau * (1 - math.exp(-l / tau))
        return total

    def log_capacity(self, spec: ModelSpec) -> float:
        if _same_skeleton(spec, self.reference):
            logs = [math.log(_scalable_depth(spec) / self._ref_depth),
                    math.log(width_multiplier(spec, self.reference)),
                    math.log(spec.input_resolution / self.reference.input_resolution)]
            return self._dims_gain(logs)
        return self.arch_weight * math.log(model_flops(spec) / self._ref_flops)

    def __call__(self, spec: ModelSpec) -> float:
        x = self.log_capacity(spec)
        acc = 1 - (1 - self.base_accuracy) * math.exp(-self.kappa * x)
        acc += self.swish_gain * (_swish_fraction(spec) - self._ref_swish)
        return min(max(acc, 1e-6), 1.0)


class TableAccuracy:
    """Looks accuracies up by model name."""

    kind = SurrogateKind.TABLE

    def __init__(self, table: Mapping[str, float]):
        for k, v in table.items():
            if not 0 < v <= 1:
                raise InputError(f"accuracy for {k!r} must lie in (0, 1]")
        self.table = dict(table)

    def __call__(self, spec: ModelSpec) -> float:
        try:
            return self.table[spec.name]
        except KeyError:
            raise InputError(f"no tabulated accuracy for model {spec.name!r}") from None


AccuracySurrogate = Callable[[ModelSpec], float]


def _scalable_depth(spec: ModelSpec) -> float:
    # Depth gain is measured on the layers that scaling can grow, so the
    # fixed single-layer stages do not dilute it.
    scalable = sum(s.repeats for s in spec.stages if s.scalable)
    return scalable or count_total_depth(spec)


def _swish_fraction(spec: ModelSpec) -> float:
    body = [(s.repeats, s.activation) for s in spec.stages if s.op not in FIXED_OPS]
    total = sum(r for r, _ in body)
    if not total:
        return 0.0
    return sum(r for r, a in body if a is Activation.SWISH) / total


_SCALED_FIELDS = ("repeats", "out_c", "expand_in", "scalable")


def _same_skeleton(a: ModelSpec, b: ModelSpec) -> bool:
    """True when ``a`` differs from ``b`` only by depth, width and resolution."""
    if len(a.stages) != len(b.stages):
        return False
    for x, y in zip(a.stages, b.stages):
        dx, dy = asdict(x), asdict(y)
        for f in _SCALED_FIELDS:
            dx.pop(f), dy.pop(f)
        if dx != dy:
            return False
    return True


# -- phi schedules -----------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleLevel:
    name: str
    phi: float | None = None
    latency_target: float | None = None

    def __post_init__(self):
        if (self.phi is None) == (self.latency_target is None):
            raise InputError(f"level {self.name!r} needs exactly one of phi / latency target")


@dataclass(frozen=True)
class PhiSchedule:
    levels: tuple[ScheduleLevel, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if not self.levels:
            raise InputError("schedule has no levels")
        names = [lv.name for lv in self.levels]
        if len(set(names)) != len(names):
            raise InputError("schedule level names must be unique")
        first = self.levels[0]
        if first.phi is not None and first.phi != 0:
            raise InvalidPhi("level 0 must have phi = 0")
        phis = [lv.phi for lv in self.levels if lv.phi is not None]
        if any(p < 0 for p in phis):
            raise InvalidPhi("phi must be non-negative")
        if any(b <= a for a, b in zip(phis, phis[1:])):
            raise InvalidPhi("phi must strictly increase across levels")
        lats = [lv.latency_target for lv in self.levels if lv.latency_target is not None]
        if any(t <= 0 for t in lats) or any(b <= a for a, b in zip(lats, lats[1:])):
            raise InputError("latency targets must be positive and strictly increasing")

    @classmethod
    def from_phis(cls, pairs: Iterable[tuple[str, float]]) -> "PhiSchedule":
        return cls(tuple(ScheduleLevel(n, phi=float(p)) for n, p in pairs))

    @classmethod
    def from_latency_targets(cls, pairs: Iterable[tuple[str, float]]) -> "PhiSchedule":
        return cls(tuple(ScheduleLevel(n, latency_target=float(t)) for n, t in pairs))

    @property
    def names(self) -> list[str]:
        return [lv.name for lv in self.levels]

    def to_dict(self) -> dict[str, Any]:
        out = []
        for lv in self.levels:
            if lv.phi is not None:
                out.append({"name": lv.name, "phi": lv.phi})
            else:
                out.append({"name": lv.name, "latency_target_s": lv.latency_target})
        return {"levels": out}


def schedule_from_dict(doc: Any, path: str | None = None) -> PhiSchedule:
    if not isinstance(doc, dict) or set(doc) != {"levels"}:
        raise ParseError("schedule must be an object with a single 'levels' list", path=path)
    if not isinstance(doc["levels"], list):
        raise ParseError("must be a list", path=path, field="levels")
    levels = []
    for i, d in enumerate(doc["levels"]):
        loc = f"levels[{i}]"
        if not isinstance(d, dict):
            raise ParseError("level must be an object", path=path, field=loc)
        unknown = set(d) - {"name", "phi", "latency_target_s"}
        if unknown:
            raise ParseError(f"unknown field(s) {sorted(unknown)}", path=path,
                             field=f"{loc}.{sorted(unknown)[0]}")
        if not isinstance(d.get("name"), str):
            raise ParseError("missing or non-string name", path=path, field=f"{loc}.name")
        for key in ("phi", "latency_target_s"):
            if key in d and (isinstance(d[key], bool) or not isinstance(d[key], (int, float))):
                raise ParseError("must be a number", path=path, field=f"{loc}.{key}")
        try:
            levels.append(ScheduleLevel(d["name"], phi=d.get("phi"),
                                        latency_target=d.get("latency_target_s")))
        except InputError as exc:
            raise ParseError(str(exc), path=path, field=loc) from None
    try:
        return PhiSchedule(tuple(levels))
    except InputError as exc:
        raise ParseError(str(exc), path=path, field="levels") from None


def load_schedule(path: str | Path) -> PhiSchedule:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read schedule file: {exc.strerror}", path=str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from None
    return schedule_from_dict(doc, str(path))


def dump_schedule(schedule: PhiSchedule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schedule.to_dict(), indent=2) + "\n")


def builtin_schedule_names() -> list[str]:
    folder = resources.files("accelscale") / "data" / "schedules"
    return sorted(p.name[:-5] for p in folder.iterdir()
                  if p.name.endswith(".json") and p.name != "reference_dimensions.json")


def get_schedule(name_or_path: str | Path) -> PhiSchedule:
    """Load a schedule from a path, or one of the bundled ones by name."""
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return load_schedule(p)
    bundled = resources.files("accelscale") / "data" / "schedules" / f"{name_or_path}.json"
    if bundled.is_file():
        return schedule_from_dict(json.loads(bundled.read_text()), str(name_or_path))
    raise ParseError(f"no such schedule (known: {', '.join(builtin_schedule_names())})",
                     path=str(name_or_path))


def reference_dimensions() -> dict[str, list[tuple[str, int, int]]]:
    """Published (level, depth, resolution) rows of the three X families."""
    f = resources.files("accelscale") / "data" / "schedules" / "reference_dimensions.json"
    doc = json.loads(f.read_text())
    return {k: [(r["name"], r["depth"], r["resolution"]) for r in rows]
            for k, rows in doc.items()}


def fit_schedule(base: ModelSpec, coeffs: ScalingCoeffs,
                 targets: Sequence[tuple[str, int, int]], rounding: RoundingPolicy | None = None,
                 depth_tol: float = 2.0, res_tol: float = 8.0, phi_max: float = 12.0,
                 step: float = 1e-3) -> PhiSchedule:
    """Per-level phi that best reproduces target (depth, resolution) pairs.

    Each level minimises the tolerance-normalised squared error of its
    rounded depth and resolution over a ``step``-spaced phi grid, subject to
    phi strictly increasing.  The rounded dimensions are step functions, so
    the optimum is a plateau; the midpoint of the first optimal plateau is
    returned, which keeps the choice away from rounding boundaries.
    """
    rounding = rounding or RoundingPolicy()
    phis = np.round(np.arange(0.0, phi_max + step / 2, step), 9)
    depth = np.empty_like(phis)
    res = np.empty_like(phis)
    for i, p in enumerate(phis):
        spec = apply_compound_scaling(base, coeffs, float(p), rounding)
        depth[i] = count_total_depth(spec)
        res[i] = spec.input_resolution
    out: list[tuple[str, float]] = []
    prev = -1.0
    for name, td, tr in targets:
        err = ((depth - td) / depth_tol) ** 2 + ((res - tr) / res_tol) ** 2
        err = np.where(phis > prev, err, np.inf)
        if not out:
            err = np.where(phis == 0, err, np.inf)
        j = int(np.argmin(err))
        if not np.isfinite(err[j]):
            raise Unreachable(f"no phi <= {phi_max} left for level {name!r}")
        k = j
        while k + 1 < len(phis) and err[k + 1] == err[j]:
            k += 1
        phi = 0.0 if not out else round(float(phis[j] + phis[k]) / 2, 3)
        out.append((name, phi))
        prev = phi
    return PhiSchedule.from_phis(out)


# -- phi solving -------------------------------------------------------------------

def _latency(spec: ModelSpec, profile: HardwareProfile, batch: int) -> float:
    return model_cost(spec, profile, batch).total_latency


def fit_phi(base: ModelSpec, coeffs: ScalingCoeffs, target_latency: float,
            profile: HardwareProfile, rounding: RoundingPolicy | None = None,
            batch: int = DEFAULT_BATCH, phi_max: float = 64.0, rel_tol: float = 1e-9,
            monotone_tol: float = 1e-6) -> float:
    """Solve ``latency(scale(base, coeffs, phi)) = target_latency`` for phi.

    Bisection runs on the unrounded (continuous) family, whose latency is
    monotone in phi.  With a rounding policy the answer is then repaired
    locally: the rounded latency is a step function, and of the two steps
    bracketing the target the one closer to it wins.
    """
    rounding = rounding or RoundingPolicy()
    if not target_latency > 0:
        raise InputError("target latency must be positive")
    base_lat = _latency(base, profile, batch)
    if base_lat > target_latency * (1 + rel_tol):
        raise Unreachable(f"base latency {base_lat:.6g}s already exceeds target "
                          f"{target_latency:.6g}s")
    if all(c == 1 for c in coeffs.as_tuple()):
        raise Unreachable("coefficients (1, 1, 1) never grow the model")

    continuous = RoundingPolicy.disabled()

    def f(phi: float) -> float:
        return _latency(apply_compound_scaling(base, coeffs, phi, continuous), profile, batch)

    lo, hi = 0.0, 1.0
    f_hi = f(hi)
    while f_hi < target_latency:
        lo, hi = hi, hi * 2
        if hi > phi_max:
            raise Unreachable(f"latency plateaus below target {target_latency:.6g}s")
        f_hi = f(hi)
    while hi - lo > 1e-12 * max(1.0, hi):
        mid = (lo + hi) / 2
        if f(mid) < target_latency:
            lo = mid
        else:
            hi = mid
    phi_c = hi if abs(f(hi) - target_latency) <= abs(f(lo) - target_latency) else lo
    if rounding.is_disabled:
        return phi_c

    def g(phi: float) -> float:
        return _latency(apply_compound_scaling(base, coeffs, phi, rounding), profile, batch)

    # Bracket the first rounded step at or above the target.
    lo, hi = 0.0, max(phi_c, 1e-3)
    g_hi = g(hi)
    while g_hi < target_latency:
        lo, hi = hi, hi * 1.5 + 1e-3
        if hi > phi_max:
            raise Unreachable(f"rounded latency plateaus below target {target_latency:.6g}s")
        g_hi = g(hi)
    g_lo = g(lo)
    if g_lo >= target_latency:
        return lo
    while hi - lo > 1e-9:
        mid = (lo + hi) / 2
        g_mid = g(mid)
        if g_mid < target_latency:
            lo, g_lo = mid, g_mid
        else:
            hi, g_hi = mid, g_mid
    if g_lo > g_hi * (1 + monotone_tol):
        raise NonMonotone(f"rounded latency decreases near phi={hi:.6g}")
    return hi if g_hi - target_latency <= target_latency - g_lo else lo


# -- grid search -------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    alpha: tuple[float, float, float] = (1.0, 1.5, 0.05)
    beta: tuple[float, float, float] = (1.0, 1.5, 0.05)
    gamma: tuple[float, float, float] = (1.0, 1.3, 0.05)
    refinement_rounds: int = 2

    def __post_init__(self):
        for label in ("alpha", "beta", "gamma"):
            axis = tuple(float(v) for v in getattr(self, label))
            object.__setattr__(self, label, axis)
            if len(axis) != 3:
                raise EmptyGrid(f"{label} axis must be (min, max, step)")
            lo, hi, step = axis
            if lo < 1:
                raise EmptyGrid(f"{label} lower bound must be >= 1, got {lo}")
            if hi < lo:
                raise EmptyGrid(f"{label} axis is empty ({lo} > {hi})")
            if not step > 0:
                raise EmptyGrid(f"{label} step must be positive")
        if self.refinement_rounds < 0:
            raise InputError("refinement_rounds must be >= 0")

    @classmethod
    def singleton(cls, coeffs: ScalingCoeffs, refinement_rounds: int = 0) -> "GridSpec":
        a, b, g = coeffs.as_tuple()
        return cls((a, a, 0.05), (b, b, 0.05), (g, g, 0.05), refinement_rounds)

    @staticmethod
    def axis_values(axis: tuple[float, float, float]) -> list[float]:
        lo, hi, step = axis
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [round(lo + i * step, 10) for i in range(n)]

    def points(self) -> list[tuple[float, float, float]]:
        return [(a, b, g) for a in self.axis_values(self.alpha)
                for b in self.axis_values(self.beta) for g in self.axis_values(self.gamma)]

    @property
    def steps(self) -> tuple[float, float, float]:
        return (self.alpha[2], self.beta[2], self.gamma[2])


@dataclass(frozen=True)
class Evaluation:
    coeffs: tuple[float, float, float]
    phase: int
    phi: float | None = None
    accuracy: float | None = None
    latency: float | None = None
    flops: float | None = None
    reward: float | None = None
    skipped: str | None = None

    @property
    def ok(self) -> bool:
        return self.skipped is None

    def rank_key(self) -> tuple:
        """Sort key whose minimum is the winner under the tie-breaking rule."""
        return (-self.reward, -self.accuracy, self.latency, self.coeffs)


@dataclass(frozen=True)
class CoeffSearchResult:
    best: ScalingCoeffs
    reward: float
    evaluated: tuple[Evaluation, ...]
    phase1_best: ScalingCoeffs
    objective: str = "lacs"

    def phase(self, k: int) -> list[Evaluation]:
        return [e for e in self.evaluated if e.phase == k]

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective,
            "best": list(self.best.as_tuple()),
            "reward": self.reward,
            "phase1_best": list(self.phase1_best.as_tuple()),
            "evaluated": [
                {"alpha": e.coeffs[0], "beta": e.coeffs[1], "gamma": e.coeffs[2],
                 "phase": e.phase, "phi": e.phi, "accuracy": e.accuracy,
                 "latency_s": e.latency, "flops": e.flops, "reward": e.reward,
                 "skipped": e.skipped}
                for e in self.evaluated
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        cols = ["alpha", "beta", "gamma", "phase", "phi", "accuracy", "latency_s", "flops",
                "reward", "skipped"]
        wr.writerow(cols)
        for row in self.to_dict()["evaluated"]:
            wr.writerow(["" if row[c] is None else row[c] for c in cols])
        return buf.getvalue()


def _lacs_eval(args) -> Evaluation:
    base, profile, surrogate, cfg, rounding, batch, triplet, phase = args
    coeffs = ScalingCoeffs(*triplet)
    try:
        phi = fit_phi(base, coeffs, cfg.target_latency, profile, rounding, batch)
    except Unreachable as exc:
        return Evaluation(triplet, phase, skipped=str(exc))
    spec = apply_compound_scaling(base, coeffs, phi, rounding)
    cost = model_cost(spec, profile, batch)
    acc = surrogate(spec)
    return Evaluation(triplet, phase, phi, acc, cost.total_latency, cost.flops_per_image,
                      reward(acc, cost.total_latency, cfg))


def _single_eval(args) -> Evaluation:
    base, surrogate, budget_flops, triplet, phase = args
    spec = apply_compound_scaling(base, ScalingCoeffs(*triplet), 1.0, RoundingPolicy.disabled())
    flops = model_flops(spec)
    if flops > budget_flops * (1 + 1e-9):
        return Evaluation(triplet, phase, 1.0, flops=flops, skipped="over FLOPs budget")
    acc = surrogate(spec)
    # Accuracy is the sole objective; FLOPs stand in for latency in tie-breaks.
    return Evaluation(triplet, phase, 1.0, acc, flops, flops, acc)


def _run_grid(grid: GridSpec, make_args: Callable[[tuple, int], tuple],
              evaluate: Callable[[tuple], Evaluation], n_jobs: int,
              objective: str) -> CoeffSearchResult:
    points = grid.points()
    if not points:
        raise EmptyGrid("grid has no points")
    log: dict[tuple, Evaluation] = {}

    def run(batch: list[tuple], phase: int) -> None:
        todo = sorted(t for t in set(batch) if t not in log)
        args = [make_args(t, phase) for t in todo]
        if n_jobs > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=n_jobs) as pool:
                results = list(pool.map(evaluate, args))
        else:
            results = [evaluate(a) for a in args]
        for t, ev in zip(todo, results):
            log[t] = ev

    def winner() -> Evaluation:
        ok = [e for e in log.values() if e.ok]
        if not ok:
            raise Unreachable("no grid triplet produced a feasible model")
        return min(ok, key=Evaluation.rank_key)

    run(points, 1)
    first = winner()
    best = first
    steps = grid.steps
    for rnd in range(1, grid.refinement_rounds + 1):
        offsets = [tuple(s / 2 ** rnd for s in steps)]
        neighbours = []
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                for dg in (-1, 0, 1):
                    t = tuple(round(c + k * o, 10) for c, k, o in
                              zip(best.coeffs, (da, db, dg), offsets[0]))
                    if all(v >= 1 for v in t):
                        neighbours.append(t)
        run(neighbours, rnd + 1)
        best = winner()
    ordered = tuple(sorted(log.values(), key=lambda e: (e.phase, e.coeffs)))
    return CoeffSearchResult(ScalingCoeffs(*best.coeffs), best.reward, ordered,
                             ScalingCoeffs(*first.coeffs), objective)


def grid_search_coeffs(base: ModelSpec, profile: HardwareProfile, surrogate: AccuracySurrogate,
                       cfg: RewardConfig, grid: GridSpec | None = None,
                       rounding: RoundingPolicy | None = None, batch: int = DEFAULT_BATCH,
                       n_jobs: int = 1) -> CoeffSearchResult:
    """Two-phase grid search for the reward-maximising scaling triplet.

    Every triplet is first scaled to the latency target, so the search
    compares models of equal latency and the reward mostly ranks them by
    accuracy.  Triplets that cannot reach the target are logged as skipped.

    By default the search runs on unrounded dimensions: near the base model
    integer rounding moves latency in coarse steps, so many triplets would
    collapse onto the same rounded model and the reward would favour
    whichever step happens to undershoot the target.
    """
    grid = grid or GridSpec()
    rounding = rounding or RoundingPolicy.disabled()
    return _run_grid(grid, lambda t, ph: (base, profile, surrogate, cfg, rounding, batch, t, ph),
                     _lacs_eval, n_jobs, "lacs")


def single_objective_coeffs(base: ModelSpec, surrogate: AccuracySurrogate,
                            flops_budget_ratio: float = 2.0, grid: GridSpec | None = None,
                            n_jobs: int = 1) -> CoeffSearchResult:
    """Accuracy-only baseline: best triplet whose phi=1 model fits the FLOPs budget."""
    if not flops_budget_ratio > 1:
        raise InputError("flops_budget_ratio must exceed 1")
    grid = grid or GridSpec()
    budget = flops_budget_ratio * model_flops(base)
    return _run_grid(grid, lambda t, ph: (base, surrogate, budget, t, ph), _single_eval,
                     n_jobs, "single_objective")


# -- families ----------------------------------------------------------------------

@dataclass(frozen=True)
class FamilyMember:
    level: str
    phi: float
    spec: ModelSpec
    cost: ModelCost

    @property
    def depth(self) -> float:
        return count_total_depth(self.spec)

    @property
    def resolution(self) -> float:
        return self.spec.input_resolution


def _as_coeffs(c: ScalingCoeffs | CoeffSearchResult | Sequence[float]) -> ScalingCoeffs:
    if isinstance(c, CoeffSearchResult):
        return c.best
    if isinstance(c, ScalingCoeffs):
        return c
    return ScalingCoeffs(*c)


def scale_family(base: ModelSpec, coeffs: ScalingCoeffs | CoeffSearchResult,
                 schedule: PhiSchedule, profile: HardwareProfile,
                 rounding: RoundingPolicy | None = None,
                 batch: int = DEFAULT_BATCH, family_name: str | None = None) -> list[FamilyMember]:
    coeffs = _as_coeffs(coeffs)
    rounding = rounding or RoundingPolicy()
    prefix = family_name or base.name
    out: list[FamilyMember] = []
    for lv in schedule.levels:
        if lv.phi is not None:
            phi = lv.phi
        elif lv is schedule.levels[0] and abs(lv.latency_target - _latency(base, profile, batch)) \
                <= 1e-9 * lv.latency_target:
            phi = 0.0
        else:
            phi = fit_phi(base, coeffs, lv.latency_target, profile, rounding, batch)
        spec = apply_compound_scaling(base, coeffs, phi, rounding, name=f"{prefix}-{lv.name}")
        out.append(FamilyMember(lv.name, phi, spec, model_cost(spec, profile, batch)))
    for a, b in zip(out, out[1:]):
        if b.cost.total_latency < a.cost.total_latency or b.depth < a.depth:
            raise NonMonotone(f"family shrinks from level {a.level!r} to {b.level!r}")
    return out


FAMILY_COLUMNS = ("level", "phi", "depth", "width_mult", "resolution", "flops", "intensity",
                  "latency_s")


def family_rows(members: Sequence[FamilyMember], base: ModelSpec) -> list[dict[str, Any]]:
    rows = []
    for m in members:
        rows.append({
            "level": m.level,
            "phi": m.phi,
            "depth": m.depth,
            "width_mult": sig6(width_multiplier(m.spec, base)),
            "resolution": m.resolution,
            "flops": int(round(m.cost.flops_per_image)),
            "intensity": sig6(m.cost.aggregate_intensity),
            "latency_s": sig6(m.cost.total_latency),
        })
    return rows


@dataclass(frozen=True)
class ComparisonRow:
    level: str
    lacs: dict[str, Any]
    single: dict[str, Any]
    latency_delta: float
    intensity_delta: float


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"rows": [asdict(r) for r in self.rows]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        keys = [c for c in FAMILY_COLUMNS if c != "level"]
        wr.writerow(["level"] + [f"lacs_{k}" for k in keys] + [f"single_{k}" for k in keys]
                    + ["latency_delta", "intensity_delta"])
        for r in self.rows:
            wr.writerow([r.level] + [r.lacs[k] for k in keys] + [r.single[k] for k in keys]
                        + [r.latency_delta, r.intensity_delta])
        return buf.getvalue()


def compare_scaling(base: ModelSpec, lacs_result: ScalingCoeffs | CoeffSearchResult,
                    single_obj_result: ScalingCoeffs | CoeffSearchResult,
                    schedule: PhiSchedule, profile: HardwareProfile,
                    rounding: RoundingPolicy | None = None,
                    batch: int = DEFAULT_BATCH) -> ComparisonReport:
    """Per-level dimensions and costs of two families built from one schedule.

    Deltas are relative: ``lacs / single - 1``.
    """
    a = scale_family(base, lacs_result, schedule, profile, rounding, batch)
    b = scale_family(base, single_obj_result, schedule, profile, rounding, batch)
    rows = []
    for ra, rb in zip(family_rows(a, base), family_rows(b, base)):
        rows.append(ComparisonRow(
            ra["level"], ra, rb,
            sig6(ra["latency_s"] / rb["latency_s"] - 1),
            sig6(ra["intensity"] / rb["intensity"] - 1)))
    return ComparisonReport(tuple(rows))


def check_same_levels(a: Sequence[str], b: Sequence[str]) -> None:
    if list(a) != list(b):
        raise LevelMismatch(f"level names differ: {list(a)} vs {list(b)}")
