"""scikit-learn style wrappers around the cost model, LACS and NAS.

The wrappers only add the familiar ``fit`` / ``transform`` / ``predict``
surface and ``get_params`` / ``set_params``; all the work happens in the
functional modules.  Constructor arguments are stored untouched, as
scikit-learn expects, and checked in ``fit``.
"""

from __future__ import annotations

from typing import Any, Iterable

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .arch_ir import ModelSpec, RoundingPolicy, apply_compound_scaling, build_efficientnet_x_b0
from .cost_model import DEFAULT_BATCH, model_cost
from .lacs import (DEFAULT_W, RewardConfig, SyntheticAccuracy, grid_search_coeffs, scale_family)
from .nas_lite import SearchSpace, evolutionary_search
from .validation import (check_coeffs, check_grid, check_model, check_positive_int,
                         check_profile, check_schedule)

COST_FEATURES = ("flops_per_image", "bytes", "intensity", "latency_s")


def _models(X: Any) -> list[ModelSpec]:
    if isinstance(X, (ModelSpec, dict, str)):
        X = [X]
    return [check_model(m) for m in X]


class RooflineEstimator(BaseEstimator, TransformerMixin):
    """Maps models to roofline cost features; ``predict`` gives latency."""

    def __init__(self, profile="tpu_v3_like", batch=DEFAULT_BATCH):
        self.profile = profile
        self.batch = batch

    def fit(self, X=None, y=None):
        self.profile_ = check_profile(self.profile)
        self.batch_ = check_positive_int(self.batch, "batch")
        self.feature_names_out_ = np.array(COST_FEATURES)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "profile_")
        rows = []
        for spec in _models(X):
            c = model_cost(spec, self.profile_, self.batch_)
            rows.append([c.flops_per_image, c.total_bytes, c.aggregate_intensity,
                         c.total_latency])
        return np.asarray(rows, dtype=float).reshape(-1, len(COST_FEATURES))

    def predict(self, X) -> np.ndarray:
        return self.transform(X)[:, COST_FEATURES.index("latency_s")]

    def get_feature_names_out(self, input_features=None) -> np.ndarray:
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_


class LACSScaler(BaseEstimator):
    """Finds scaling coefficients for a base model and scales it into a family.

    ``fit(base)`` runs the coefficient grid search unless ``coeffs`` is
    given.  The latency target is ``target_latency`` seconds or, if that is
    ``None``, ``target_ratio`` times the base latency.  ``transform(base)``
    returns the scaled family members for ``schedule``.
    """

    def __init__(self, profile="tpu_v3_like", coeffs=None, schedule="lacs_tpu",
                 target_latency=None, target_ratio=2.0, w=DEFAULT_W, grid=None,
                 surrogate=None, batch=DEFAULT_BATCH, n_jobs=1):
        self.profile = profile
        self.coeffs = coeffs
        self.schedule = schedule
        self.target_latency = target_latency
        self.target_ratio = target_ratio
        self.w = w
        self.grid = grid
        self.surrogate = surrogate
        self.batch = batch
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        models = _models(X)
        if len(models) != 1:
            raise ValueError("LACSScaler.fit expects exactly one base model")
        base = models[0]
        profile = check_profile(self.profile)
        batch = check_positive_int(self.batch, "batch")
        self.base_ = base
        self.profile_ = profile
        self.schedule_ = check_schedule(self.schedule)
        if self.coeffs is not None:
            self.coeffs_ = check_coeffs(self.coeffs)
            self.search_result_ = None
            return self
        target = self.target_latency
        if target is None:
            target = self.target_ratio * model_cost(base, profile, batch).total_latency
        self.reward_config_ = RewardConfig(float(target), self.w)
        surrogate = self.surrogate or SyntheticAccuracy(base)
        self.search_result_ = grid_search_coeffs(base, profile, surrogate, self.reward_config_,
                                                 check_grid(self.grid), batch=batch,
                                                 n_jobs=self.n_jobs)
        self.coeffs_ = self.search_result_.best
        return self

    def transform(self, X=None):
        check_is_fitted(self, "coeffs_")
        base = _models(X)[0] if X is not None else self.base_
        return scale_family(base, self.coeffs_, self.schedule_, self.profile_,
                            batch=self.batch)

    def scale(self, phi: float, rounding: RoundingPolicy | None = None) -> ModelSpec:
        check_is_fitted(self, "coeffs_")
        return apply_compound_scaling(self.base_, self.coeffs_, phi, rounding)


class EvolutionarySearch(BaseEstimator):
    """Regularized-evolution architecture search; ``fit`` runs the search."""

    def __init__(self, profile="tpu_v3_like", space=None, surrogate=None, budget=1000,
                 seed=0, population=64, samples=16, target_latency=None, w=DEFAULT_W,
                 batch=DEFAULT_BATCH):
        self.profile = profile
        self.space = space
        self.surrogate = surrogate
        self.budget = budget
        self.seed = seed
        self.population = population
        self.samples = samples
        self.target_latency = target_latency
        self.w = w
        self.batch = batch

    def fit(self, X=None, y=None):
        profile = check_profile(self.profile)
        space = self.space or SearchSpace()
        surrogate = self.surrogate
        if surrogate is None:
            surrogate = SyntheticAccuracy(build_efficientnet_x_b0())
        cfg = None
        if self.target_latency is not None:
            cfg = RewardConfig(float(self.target_latency), self.w)
        self.result_ = evolutionary_search(space, surrogate, profile, cfg, self.budget,
                                           self.seed, self.population, self.samples,
                                           self.batch)
        self.space_ = space
        self.best_ = self.result_.best
        self.archive_ = self.result_.archive
        self.best_model_ = space.build(self.best_.candidate)
        return self

    def predict(self, X: Iterable | None = None) -> ModelSpec:
        check_is_fitted(self, "best_model_")
        return self.best_model_
