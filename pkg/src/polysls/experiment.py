"""The point-mass benchmark: fit, synthesize, certify, train, compare.

Everything is seeded, so two runs with the same configuration produce the
same report byte for byte (on the same machine and torch build).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli

from .alphanet import TrainConfig, layer_dims_for, net_init, train
from .baselines import const_alpha_controller, fbl_controller
from .harness import DisturbanceSpec, SlsPolicy, gen_disturbances, simulate_batch
from .synth import check_iss, compute_l_c, cost_bound_u1, synthesize
from .systems import PointMassConfig, point_mass
from .taylor import estimate_deriv_bound, taylor_expand, uniform_deriv_bound

log = logging.getLogger(__name__)

# Reference numbers from the original study, reported next to ours.
REFERENCE_ALPHA_FUNCTIONS = 14
REFERENCE_REDUCTION_VS_FBL = 33.0

CONTROLLERS = ("trained_sls", "untrained_sls", "alpha1_sls", "fbl")


def _desk_train() -> TrainConfig:
    return TrainConfig(N_T=100, epochs=30, learning_rate=1.0, batch=8, W=1.0, seed=0, momentum=0.9)


@dataclass
class ExperimentConfig:
    plant: PointMassConfig = field(default_factory=PointMassConfig)
    k: int = 3
    T: int = 4
    max_degree: int | None = 3
    W: float = 1.0
    radius: float = 2.0
    deriv_samples: int = 200
    alpha_min: float = 0.5
    hidden: tuple = (256, 256, 256, 256)
    dropout_rate: float = 0.1
    net_seed: int = 0
    train: TrainConfig = field(default_factory=_desk_train)
    eval_seeds: int = 10
    eval_seed_base: int = 10_000
    eval_N_T: int = 100
    eval_kind: str = "uniform"
    Q: list | None = None
    R: list | None = None

    def __post_init__(self):
        if isinstance(self.plant, dict):
            self.plant = PointMassConfig(**self.plant)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.eval_N_T <= self.T or self.eval_seeds < 1:
            raise ValueError("evaluation needs at least one seed and N_T > T")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomli.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def matrices(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return TrainConfig(Q=self.Q, R=self.R).matrices(n)


def eval_disturbances(cfg: ExperimentConfig, n: int) -> np.ndarray:
    """Held-out sequences; their seeds never overlap the training stream."""
    return np.stack([
        gen_disturbances(DisturbanceSpec(cfg.eval_kind, cfg.W, cfg.eval_N_T, n, cfg.eval_seed_base + s))
        for s in range(cfg.eval_seeds)
    ])


def _summary(results) -> dict:
    avg = [r.time_averaged_cost for r in results]
    curves = np.mean([r.time_averaged_curve for r in results], axis=0)
    return {
        "mean_time_averaged_cost": float(np.mean(avg)),
        "per_seed": [float(a) for a in avg],
        "diverged": int(sum(r.diverged for r in results)),
        "max_state_inf": float(max(np.max(np.abs(r.states)) for r in results)),
        "max_input_2": float(max(np.max(np.linalg.norm(r.inputs, axis=1)) for r in results)),
        "curve": [float(v) for v in curves],
    }


def run_experiment(cfg: ExperimentConfig | None = None) -> dict:
    cfg = cfg or ExperimentConfig()
    plant = point_mass(cfg.plant)
    n = plant.n
    Q, R = cfg.matrices(n)

    M_rem = estimate_deriv_bound(plant, cfg.radius, cfg.k, samples=cfg.deriv_samples)
    M_all = uniform_deriv_bound(plant, cfg.radius, cfg.k, samples=cfg.deriv_samples)
    fit = taylor_expand(plant, cfg.k, M=M_rem)
    ctl = synthesize(fit, cfg.T, max_degree=cfg.max_degree)
    l, c = compute_l_c(ctl, cfg.W)
    cert = check_iss(M_rem, cfg.W, cfg.k, l, c, cfg.alpha_min)
    if not cert.satisfied:
        log.warning("ISS certificate not satisfied: b = %.6g", cert.b)
    bound = cost_bound_u1(M_all, cfg.W, cfg.k, n, cfg.radius, R, T_steps=cfg.eval_N_T)

    A1 = fit.H[0]
    fbl, ric = fbl_controller(plant, A1, Q, R)

    net = net_init(layer_dims_for(ctl, cfg.hidden), cfg.net_seed, cfg.alpha_min, cfg.dropout_rate)
    d_eval = eval_disturbances(cfg, n)
    untrained = _summary(simulate_batch(plant, SlsPolicy(ctl, net.eval()), d_eval, Q, R, cfg.W))
    net, trace = train(net, ctl, plant, cfg.train)

    evals = {
        "trained_sls": simulate_batch(plant, SlsPolicy(ctl, net), d_eval, Q, R, cfg.W),
        "alpha1_sls": simulate_batch(plant, const_alpha_controller(ctl, 1.0), d_eval, Q, R, cfg.W),
        "fbl": simulate_batch(plant, fbl, d_eval, Q, R, cfg.W),
    }
    summary = {name: _summary(res) for name, res in evals.items()}
    summary["untrained_sls"] = untrained

    a1 = evals["alpha1_sls"]
    in_ball = all(np.max(np.abs(r.states).sum(1)) <= cfg.radius for r in a1)
    u_max = max(float(np.max(np.linalg.norm(r.inputs, axis=1))) for r in a1)

    cost = {k: v["mean_time_averaged_cost"] for k, v in summary.items()}
    reduction = 100.0 * (cost["fbl"] - cost["trained_sls"]) / cost["fbl"]
    comparison = {
        "trained_le_alpha1": bool(cost["trained_sls"] <= cost["alpha1_sls"]),
        "trained_lt_fbl": bool(cost["trained_sls"] < cost["fbl"]),
        "fbl_lt_alpha1": bool(cost["fbl"] < cost["alpha1_sls"]),
        "reference_ordering_reproduced": bool(cost["trained_sls"] < cost["fbl"] < cost["alpha1_sls"]),
        "reduction_vs_fbl_percent": reduction,
        "reference_reduction_vs_fbl_percent": REFERENCE_REDUCTION_VS_FBL,
    }

    return {
        "config": cfg.to_dict(),
        "fit": {
            "H": [h.tolist() for h in fit.H],
            "M_remainder": M_rem,
            "M_uniform": M_all,
            "diagnostics": fit.metadata["fit_diagnostics"],
        },
        "controller": {**ctl.report(), "reference_alpha_functions": REFERENCE_ALPHA_FUNCTIONS},
        "certificate": cert.to_json(),
        "cost_bound": {**bound.to_json(), "alpha1_max_input": u_max, "alpha1_states_in_ball": bool(in_ball),
                       "holds": bool(in_ball and u_max <= bound.U1)},
        "riccati": {"P": ric.P.tolist(), "K": ric.K.tolist(), "residual": ric.residual},
        "training": {"loss_trace": [float(v) for v in trace]},
        "evaluation": summary,
        "comparison": comparison,
    }


def _finite(obj):
    """Strict JSON: non-finite floats become the strings "nan", "inf", "-inf"."""
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_finite(report), sort_keys=True, indent=2, allow_nan=False)


def comparison_rows(report: dict) -> list[dict]:
    ev = report["evaluation"]
    return [{"controller": name, "mean_time_averaged_cost": ev[name]["mean_time_averaged_cost"],
             "diverged": ev[name]["diverged"], "max_state_inf": ev[name]["max_state_inf"]}
            for name in CONTROLLERS]


def write_outputs(report: dict, out_dir) -> dict[str, Path]:
    """report.json, comparison.csv and curves.csv (time-averaged cost per controller)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "comparison": out / "comparison.csv", "curves": out / "curves.csv"}
    paths["report"].write_text(report_json(report))
    rows = comparison_rows(report)
    with open(paths["comparison"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows({k: repr(v) if isinstance(v, float) else v for k, v in r.items()} for r in rows)
    curves = {name: report["evaluation"][name]["curve"] for name in CONTROLLERS}
    with open(paths["curves"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *CONTROLLERS])
        for t in range(len(curves[CONTROLLERS[0]])):
            w.writerow([t + 1, *(repr(curves[name][t]) for name in CONTROLLERS)])
    return paths
