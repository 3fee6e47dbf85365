import json
import math

import numpy as np
import pytest

import multienv as me


def test_quantiles():
    assert me.quant_plus([3.0, 1.0, 2.0], 0.5) == 2.0
    assert me.quant_plus([1.0, 2.0, 3.0, 4.0], 0.05) == math.inf
    assert me.quant_minus([1.0, 2.0, 3.0, 4.0], 0.25) == 1.0
    assert me.left_quantile([(1.0, 0.5), (2.0, 0.5)], 0.5) == 1.0
    assert me.right_quantile([(0.0, 1.0)], 0.3) == 0.0
    with pytest.raises(ValueError):
        me.quant_plus([], 0.5)


def test_dataset_round_trip():
    data, outliers = me.generate(m=4, n=6, p=2, seed=3)
    assert data.num_environments == 4
    assert data.total_rows == 24
    assert len(outliers) == 4
    again = me.Dataset.from_csv(data.to_csv())
    env_id, X, y = again.env(0)
    assert X.shape == (6, 2)
    np.testing.assert_array_equal(y, data.env(0)[2])


def test_jackknife_minmax_matches_hand_interval():
    rng = np.random.default_rng(0)
    envs = [(f"e{i}", rng.normal(size=(10, 1)), rng.normal(size=10)) for i in range(6)]
    data = me.Dataset(envs)
    mapping = me.jackknife_minmax(data, alpha=0.2, delta=0.3, lambda_grid=[1.0])
    lo, hi = mapping(np.zeros(1))
    assert lo < hi
    info = mapping.info()
    assert info["algorithm"] == "jackknife_minmax"


def test_fitted_methods_cover_their_centres():
    data, _ = me.generate(m=12, n=20, p=3, seed=5)
    x = np.zeros(3)
    for mapping in [
        me.split_conformal(data, 0.1, 0.2, seed=1),
        me.hcp(data, 0.1, seed=1),
        me.hier_jackknife_plus(data, 0.1),
        me.jackknife_plus_quantile(data, 0.1, 0.2),
    ]:
        lo, hi = mapping(x)
        assert lo <= hi
    _, X, y = data.env(0)
    resized = me.resized_split_conformal(data, X[:8], y[:8], 0.1, 0.2, seed=2)
    assert len(resized(x)) == 2


def test_classification_label_sets():
    rng = np.random.default_rng(1)
    envs = []
    for i in range(5):
        y = rng.integers(0, 3, size=30).astype(float)
        X = np.c_[y + rng.normal(scale=0.5, size=30), rng.normal(size=30)]
        envs.append((f"e{i}", X, y))
    data = me.Dataset(envs, num_classes=3)
    labels = me.jackknife_minmax(data, 0.2, 0.3)(np.array([1.0, 0.0]))
    assert isinstance(labels, list)
    assert all(0 <= k < 3 for k in labels)


def test_weighted_constant_features():
    scores = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    t = me.weighted_threshold(scores, np.ones((6, 1)), 0.2)
    assert t == me.quant_plus(list(scores), 0.2)
    eta = me.dual_eta(np.array([0.0]), np.ones((2, 1)), 0.5, 0.0, -1.0)
    assert eta[1] == pytest.approx(-0.5)


def test_run_trials_and_cli_agree():
    config = {
        "seed": 4,
        "data": {"generator": {"n": 15, "p": 3}},
        "method": {"algorithm": "split_conformal", "lambda_grid": [0.1, 1.0]},
        "trials": {"count": 3, "train_envs": 8, "test_envs": 2},
    }
    report = me.run_trials(config)
    assert report["aggregates"]["pairs"] == 6
    code, out, err = me.run_cli(["--help"])
    assert code == 0 and "simulate" in out
    with pytest.raises(ValueError):
        me.run_trials({"data": {}})


def test_cli_config_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"data": {"generator": {}}, "method": {"algorithm": "nope"}}))
    code, out, err = me.run_cli(["run", str(path)])
    assert code == 2
    assert json.loads(err)["error"]["kind"] == "config"
