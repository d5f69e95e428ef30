import json

import numpy as np
import pytest

from polysls.alphanet import TrainConfig
from polysls.experiment import (CONTROLLERS, ExperimentConfig, eval_disturbances, report_json, run_experiment,
                                write_outputs)
from polysls.systems import PointMassConfig


def tiny(**kw) -> ExperimentConfig:
    base = dict(k=2, T=1, hidden=(8,), eval_seeds=2, eval_N_T=12,
                train=TrainConfig(N_T=10, epochs=2, learning_rate=0.1, batch=2))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny_report():
    return run_experiment(tiny())


def test_defaults_describe_the_benchmark():
    cfg = ExperimentConfig()
    assert (cfg.k, cfg.T, cfg.W, cfg.alpha_min) == (3, 4, 1.0, 0.5)
    assert cfg.hidden == (256, 256, 256, 256) and cfg.dropout_rate == 0.1
    assert cfg.eval_seed_base >= 10_000


def test_from_dict_accepts_nested_tables():
    cfg = ExperimentConfig.from_dict({"plant": {"dt": 0.05}, "train": {"epochs": 3}, "hidden": [4, 4]})
    assert isinstance(cfg.plant, PointMassConfig) and cfg.plant.dt == 0.05
    assert isinstance(cfg.train, TrainConfig) and cfg.train.epochs == 3
    assert cfg.hidden == (4, 4)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({"horizon": 4})


def test_eval_horizon_must_exceed_T():
    with pytest.raises(ValueError):
        ExperimentConfig(T=4, eval_N_T=4)


def test_toml_round_trip(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('T = 2\nalpha_min = 0.6\nQ = [[2.0, 0.0], [0.0, 1.0]]\n\n[plant]\na1 = -0.5\n\n'
                    '[train]\nN_T = 20\nlearning_rate = 0.2\n')
    cfg = ExperimentConfig.from_toml(path)
    assert cfg.T == 2 and cfg.alpha_min == 0.6 and cfg.plant.a1 == -0.5
    assert cfg.train.N_T == 20 and cfg.train.learning_rate == 0.2
    Q, R = cfg.matrices(2)
    assert Q.tolist() == [[2.0, 0.0], [0.0, 1.0]] and np.array_equal(R, np.eye(2))
    assert ExperimentConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_eval_disturbances_disjoint_from_training_seed():
    cfg = tiny()
    d = eval_disturbances(cfg, 2)
    assert d.shape == (2, 12, 2) and np.all(np.abs(d) <= cfg.W)
    assert not np.array_equal(d[0], d[1])


def test_report_structure(tiny_report):
    r = tiny_report
    for key in ("config", "fit", "controller", "certificate", "cost_bound", "riccati", "training", "evaluation",
                "comparison"):
        assert key in r
    assert set(r["evaluation"]) == set(CONTROLLERS)
    assert len(r["training"]["loss_trace"]) == 2
    cmp = r["comparison"]
    ev = r["evaluation"]
    assert cmp["trained_le_alpha1"] == (ev["trained_sls"]["mean_time_averaged_cost"]
                                        <= ev["alpha1_sls"]["mean_time_averaged_cost"])
    assert len(ev["fbl"]["curve"]) == 12


def test_report_json_is_strict(tiny_report):
    text = report_json(tiny_report)
    json.loads(text)  # no NaN / Infinity tokens
    assert "NaN" not in text and "Infinity" not in text


def test_non_finite_values_become_strings():
    text = report_json({"a": float("nan"), "b": [float("inf"), 1.0]})
    assert json.loads(text) == {"a": "nan", "b": ["inf", 1.0]}


def test_write_outputs(tmp_path, tiny_report):
    paths = write_outputs(tiny_report, tmp_path / "o")
    assert {p.name for p in paths.values()} == {"report.json", "comparison.csv", "curves.csv"}
    header = paths["curves"].read_text().splitlines()[0].split(",")
    assert header == ["t", *CONTROLLERS]


def test_run_is_deterministic(tiny_report):
    assert report_json(run_experiment(tiny())) == report_json(tiny_report)
