"""Input coercion and checking shared by the estimators and the CLI.

Every ``check_*`` helper accepts the loose forms a user is likely to pass
(an object, a dict, a file path or a builtin name) and returns the strict
type, raising an :class:`~accelscale.errors.InputError` subclass otherwise.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Any, Sequence

from .arch_ir import (BUILTIN_MODELS, ModelSpec, ScalingCoeffs, load_model, model_from_dict,
                      validate_model)
from .cost_model import HardwareProfile, get_profile, profile_from_dict
from .errors import InputError, ParseError
from .lacs import GridSpec, PhiSchedule, get_schedule, schedule_from_dict


def check_model(model: Any) -> ModelSpec:
    """ModelSpec, JSON-like dict, path to a JSON file, or builtin model name."""
    if isinstance(model, ModelSpec):
        spec = model
    elif isinstance(model, dict):
        spec = model_from_dict(model)
    elif isinstance(model, (str, Path)):
        if str(model) in BUILTIN_MODELS:
            spec = BUILTIN_MODELS[str(model)]()
        else:
            spec = load_model(model)
    else:
        raise InputError(f"cannot interpret {type(model).__name__} as a model")
    validate_model(spec)
    return spec


def check_profile(profile: Any) -> HardwareProfile:
    """HardwareProfile, JSON-like dict, path, or profile name."""
    if isinstance(profile, HardwareProfile):
        return profile
    if isinstance(profile, dict):
        return profile_from_dict(profile)
    if isinstance(profile, (str, Path)):
        return get_profile(profile)
    raise InputError(f"cannot interpret {type(profile).__name__} as a hardware profile")


def check_schedule(schedule: Any) -> PhiSchedule:
    if isinstance(schedule, PhiSchedule):
        return schedule
    if isinstance(schedule, dict):
        return schedule_from_dict(schedule)
    if isinstance(schedule, (str, Path)):
        return get_schedule(schedule)
    raise InputError(f"cannot interpret {type(schedule).__name__} as a phi schedule")


def check_coeffs(coeffs: Any) -> ScalingCoeffs:
    """ScalingCoeffs, a 3-sequence, or an ``"a,b,g"`` string."""
    if isinstance(coeffs, ScalingCoeffs):
        return coeffs
    if isinstance(coeffs, str):
        parts = [p.strip() for p in coeffs.split(",")]
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise InputError(f"coefficients must be three numbers, got {coeffs!r}") from None
    elif isinstance(coeffs, Sequence):
        values = list(coeffs)
    else:
        raise InputError(f"cannot interpret {type(coeffs).__name__} as scaling coefficients")
    if len(values) != 3:
        raise InputError(f"expected three coefficients (alpha, beta, gamma), got {len(values)}")
    return ScalingCoeffs(*(float(v) for v in values))


_AXIS = re.compile(r"^\s*([^:]+):([^:]+):([^:]+)\s*$")


def parse_axis(text: str) -> tuple[float, float, float]:
    """Parse ``min:max:step``."""
    m = _AXIS.match(text)
    if not m:
        raise InputError(f"grid axis must look like min:max:step, got {text!r}")
    try:
        return tuple(float(g) for g in m.groups())  # type: ignore[return-value]
    except ValueError:
        raise InputError(f"grid axis must hold numbers, got {text!r}") from None


def check_grid(grid: Any, refinement_rounds: int = 2) -> GridSpec:
    """GridSpec, or three ``min:max:step`` strings / triples for alpha, beta, gamma."""
    if grid is None:
        return GridSpec()
    if isinstance(grid, GridSpec):
        return grid
    axes = list(grid)
    if len(axes) != 3:
        raise InputError("a grid needs exactly three axes (alpha, beta, gamma)")
    axes = [parse_axis(a) if isinstance(a, str) else tuple(float(v) for v in a) for a in axes]
    return GridSpec(*axes, refinement_rounds=refinement_rounds)


def check_positive_int(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise InputError(f"{name} must be a positive integer, got {value!r}")
    return value


__all__ = ["check_model", "check_profile", "check_schedule", "check_coeffs", "check_grid",
           "parse_axis", "check_positive_int", "ParseError"]
