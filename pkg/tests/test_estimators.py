from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from accelscale.arch_ir import ScalingCoeffs, apply_compound_scaling, model_to_dict
from accelscale.cost_model import model_cost
from accelscale.estimators import EvolutionarySearch, LACSScaler, RooflineEstimator
from accelscale.lacs import GridSpec, reference_dimensions
from accelscale.nas_lite import SearchSpace, SkeletonStage


def test_params_and_clone():
    est = RooflineEstimator(profile="gpu_v100_like", batch=8)
    assert est.get_params() == {"profile": "gpu_v100_like", "batch": 8}
    est.set_params(batch=16)
    twin = clone(est)
    assert twin is not est and twin.get_params() == est.get_params()
    assert set(LACSScaler().get_params()) >= {"coeffs", "schedule", "target_ratio", "grid"}


def test_roofline_estimator_features(xb0_tpu, b0, tpu):
    est = RooflineEstimator().fit()
    feats = est.transform([xb0_tpu, b0])
    assert feats.shape == (2, 4)
    assert list(est.get_feature_names_out()) == ["flops_per_image", "bytes", "intensity",
                                                 "latency_s"]
    np.testing.assert_allclose(est.predict([xb0_tpu, b0]),
                               [model_cost(m, tpu).total_latency for m in (xb0_tpu, b0)])
    # a single model and a JSON-style dict are accepted too
    assert est.transform(model_to_dict(b0)).shape == (1, 4)


def test_unfitted_estimator_raises(b0):
    with pytest.raises(NotFittedError):
        RooflineEstimator().transform([b0])


def test_scaler_with_fixed_coeffs(xb0_gpu):
    scaler = LACSScaler(profile="gpu_v100_like", coeffs=(1.28, 1.17, 1.07),
                        schedule="lacs_gpu").fit(xb0_gpu)
    assert scaler.search_result_ is None
    family = scaler.transform()
    assert len(family) == 8
    for m, (level, depth, res) in zip(family, reference_dimensions()["lacs_gpu"]):
        assert m.level == level
        assert abs(m.depth - depth) <= 2 and abs(m.resolution - res) <= 8
    c = ScalingCoeffs(1.28, 1.17, 1.07)
    assert scaler.scale(2.0) == apply_compound_scaling(xb0_gpu, c, 2.0)


def test_scaler_runs_grid_search(xb0_tpu):
    grid = GridSpec((1.0, 1.4, 0.2), (1.0, 1.2, 0.2), (1.0, 1.2, 0.2), refinement_rounds=0)
    scaler = LACSScaler(grid=grid).fit(xb0_tpu)
    assert scaler.coeffs_ == scaler.search_result_.best
    assert scaler.reward_config_.target_latency == pytest.approx(
        2.0 * model_cost(xb0_tpu, scaler.profile_).total_latency)


def test_scaler_rejects_many_bases(xb0_tpu, b0):
    with pytest.raises(ValueError):
        LACSScaler(coeffs=(1.2, 1.1, 1.1)).fit([xb0_tpu, b0])


def test_evolutionary_search_estimator():
    space = SearchSpace(skeleton=(SkeletonStage(32, 2, 1), SkeletonStage(64, 2, 2)),
                        resolution=64,
                        choices=(("activation", ("relu", "swish")), ("conv_type", ("mbconv",)),
                                 ("kernel", (3,)), ("expansion", (6,)), ("se_ratio", (0.25,))),
                        s2d_positions=(None,))
    est = EvolutionarySearch(space=space, budget=8, population=4, samples=2).fit()
    assert est.predict() == est.best_model_ == space.build(est.best_.candidate)
    assert est.archive_.is_consistent()
    assert len(est.result_.log) == 8
