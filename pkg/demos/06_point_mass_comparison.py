"""
Point-mass benchmark
====================

Fit, synthesize, certify, train and compare against feedback linearization.
A shortened training run keeps this demo to about a minute; the full desk
configuration is ``ExperimentConfig()`` (or ``polysls compare``).
"""

import sys
from dataclasses import replace

from polysls import ExperimentConfig, comparison_rows, run_experiment, write_outputs

cfg = ExperimentConfig()
cfg.train = replace(cfg.train, epochs=5)
report = run_experiment(cfg)

ctl = report["controller"]
print(f"controller: c_m = {ctl['c_m']}, {ctl['n_gated']} gains, {ctl['n_terms']} control terms")
cert = report["certificate"]
print(f"certificate: b = {cert['b']:.1f} (satisfied: {cert['satisfied']})")
cb = report["cost_bound"]
print(f"unit-gain input bound U1 = {cb['U1']:.1f}, observed max |u| = {cb['alpha1_max_input']:.3f}")
for row in comparison_rows(report):
    print(f"{row['controller']:>14s}: {row['mean_time_averaged_cost']:.4f}")
print("comparison:", report["comparison"])

out = sys.argv[1] if len(sys.argv) > 1 else "point_mass_out"
print("wrote", {k: str(v) for k, v in write_outputs(report, out).items()})
