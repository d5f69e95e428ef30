"""Command-line front end: ``polysls <command> ...``.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 certificate not
satisfied (suppressed by ``--force``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import tomli

from .alphanet import AlphaNet, TrainConfig, layer_dims_for, net_init, train
from .baselines import fbl_controller
from .experiment import ExperimentConfig, comparison_rows, run_experiment, write_outputs
from .harness import DisturbanceSpec, SlsPolicy, gen_disturbances, simulate
from .poly import PolyDynamics
from .synth import SlsController, check_iss, compute_l_c, cost_bound_u1, synthesize
from .systems import builtin
from .taylor import estimate_deriv_bound, taylor_expand

EXIT_CERT = 3
M_FLOOR = 1e-12


class CertificationFailed(Exception):
    pass


def _matrix(text: str | None, n: int) -> np.ndarray | None:
    """A scalar (times identity) or a JSON nested list."""
    if text is None:
        return None
    val = json.loads(text)
    M = np.atleast_2d(np.asarray(val, dtype=float))
    return M[0, 0] * np.eye(n) if M.shape == (1, 1) else M


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))


# --- commands ----------------------------------------------------------------------


def cmd_fit(args) -> int:
    plant = builtin(args.system)
    M = estimate_deriv_bound(plant, args.radius, args.k, samples=args.samples, seed=args.seed)
    dyn = taylor_expand(plant, args.k, M=max(M, M_FLOOR))
    dyn.metadata["radius"] = args.radius
    _write_json(args.out, dyn.to_json())
    print(f"fitted {args.system}: n={dyn.n} k={dyn.k} M={dyn.M:.6g} -> {args.out}")
    return 0


def cmd_synth(args) -> int:
    with open(args.dyn) as fh:
        dyn = PolyDynamics.from_json(json.load(fh))
    ctl = synthesize(dyn, args.T, max_degree=args.max_degree, max_terms=args.max_terms)
    ctl.save(args.out)
    rep = ctl.report()
    print(f"c_m={rep['c_m']} c={rep['c']} gated={rep['n_gated']} terms={rep['n_terms']} -> {args.out}")
    return 0


def cmd_certify(args) -> int:
    ctl = SlsController.load(args.ctl)
    l, c = compute_l_c(ctl, args.W)
    cert = check_iss(args.M, args.W, ctl.k, l, c, args.alpha_min)
    steps = ctl.T if args.steps is None else args.steps
    bound = cost_bound_u1(args.M, args.W, ctl.k, ctl.n, args.h, T_steps=steps)
    print(f"b = {cert.b!r}")
    print(f"satisfied = {cert.satisfied}")
    print(f"state_bound = {cert.state_bound!r}")
    print(f"U1 = {bound.U1!r}")
    print(f"total = {bound.total!r}")
    if args.out:
        _write_json(args.out, {"certificate": cert.to_json(), "cost_bound": bound.to_json()})
    if not cert.satisfied and not args.force:
        raise CertificationFailed(f"b = {cert.b:.6g} >= 1")
    return 0


def _train_settings(path) -> tuple[TrainConfig, dict]:
    """TrainConfig from the [train] table (or top level); network options from [net]."""
    if path is None:
        return TrainConfig(), {}
    data = _load_toml(path)
    net_opts = data.pop("net", {})
    return TrainConfig(**data.get("train", data)), net_opts


def cmd_train(args) -> int:
    ctl = SlsController.load(args.ctl)
    plant = builtin(args.dyn_true)
    cfg, net_opts = _train_settings(args.config)
    hidden = tuple(net_opts.get("hidden", (256, 256, 256, 256)))
    net = net_init(layer_dims_for(ctl, hidden), net_opts.get("seed", cfg.seed),
                   net_opts.get("alpha_min", 0.5), net_opts.get("dropout_rate", 0.1))
    net, trace = train(net, ctl, plant, cfg)
    net.save(args.out)
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows((i, repr(float(v))) for i, v in enumerate(trace))
    print(f"loss {trace[0]:.6g} -> {trace[-1]:.6g} over {len(trace)} epochs; net -> {args.out}, trace -> {loss_csv}")
    return 0


def _policy(args, plant):
    if args.controller == "fbl":
        A1 = taylor_expand(plant, 1).H[0]
        policy, _ = fbl_controller(plant, A1, _matrix(args.Q, plant.n), _matrix(args.R, plant.n))
        return policy
    if args.ctl is None:
        raise ValueError("--ctl is required for the sls controller")
    ctl = SlsController.load(args.ctl)
    return SlsPolicy(ctl, AlphaNet.load(args.net).eval() if args.net else args.alpha)


def cmd_simulate(args) -> int:
    plant = builtin(args.dyn_true)
    d = gen_disturbances(DisturbanceSpec(args.kind, args.W, args.N_T, plant.n, args.seed))
    res = simulate(plant, _policy(args, plant), d, _matrix(args.Q, plant.n), _matrix(args.R, plant.n), args.W)
    res.to_csv(args.out)
    print(f"time-averaged cost {res.time_averaged_cost:.6g} (diverged={res.diverged}) -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    cfg = ExperimentConfig.from_toml(args.config) if args.config else ExperimentConfig()
    report = run_experiment(cfg)
    paths = write_outputs(report, args.out_dir)
    for row in comparison_rows(report):
        print(f"{row['controller']:>14s}  {row['mean_time_averaged_cost']:.6f}  diverged={row['diverged']}")
    cmp = report["comparison"]
    print(f"reduction vs FBL: {cmp['reduction_vs_fbl_percent']:.2f}% "
          f"(reference {cmp['reference_reduction_vs_fbl_percent']:.0f}%); "
          f"reference ordering reproduced: {cmp['reference_ordering_reproduced']}")
    print(f"report -> {paths['report']}")
    cert = report["certificate"]
    if not cert["satisfied"] and not args.force:
        raise CertificationFailed(f"b = {cert['b']:.6g} >= 1")
    return 0


def cmd_baseline_fbl(args) -> int:
    plant = builtin(args.dyn_true)
    A1 = taylor_expand(plant, 1).H[0]
    _, sol = fbl_controller(plant, A1, _matrix(args.Q, plant.n), _matrix(args.R, plant.n))
    out = {"A1": A1.tolist(), "P": sol.P.tolist(), "K": sol.K.tolist(), "residual": sol.residual}
    print("K =", json.dumps(out["K"]))
    print("P =", json.dumps(out["P"]))
    if args.out:
        _write_json(args.out, out)
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polysls", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", help="Taylor-fit a builtin system")
    s.add_argument("--system", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--samples", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("synth", help="synthesize the SLS controller")
    s.add_argument("--dyn", required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--max-degree", type=int, default=None)
    s.add_argument("--max-terms", type=int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("certify", help="ISS certificate and input/cost bounds")
    s.add_argument("--ctl", required=True)
    s.add_argument("--M", type=float, required=True)
    s.add_argument("--W", type=float, required=True)
    s.add_argument("--alpha-min", type=float, required=True)
    s.add_argument("--h", type=float, default=1.0, help="radius of the certified state ball")
    s.add_argument("--steps", type=int, default=None, help="horizon of the cost bound (default: T)")
    s.add_argument("--out", default=None)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("train", help="train the gain network")
    s.add_argument("--ctl", required=True)
    s.add_argument("--dyn-true", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--loss-csv", default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="closed-loop rollout to CSV")
    s.add_argument("--dyn-true", required=True)
    s.add_argument("--controller", choices=("sls", "fbl"), default="sls")
    s.add_argument("--ctl", default=None)
    s.add_argument("--net", default=None)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--kind", default="uniform", choices=("uniform", "impulse", "sign_random"))
    s.add_argument("--W", type=float, default=1.0)
    s.add_argument("--N-T", dest="N_T", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--Q", default=None)
    s.add_argument("--R", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("compare", help="run the point-mass experiment")
    s.add_argument("--config", default=None)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("baseline", help="reference controllers")
    bsub = s.add_subparsers(dest="baseline", required=True)
    b = bsub.add_parser("fbl", help="feedback linearization with the Riccati gain")
    b.add_argument("--dyn-true", required=True)
    b.add_argument("--Q", default=None)
    b.add_argument("--R", default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_baseline_fbl)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CertificationFailed as exc:
        print(f"certification failed: {exc} (use --force to ignore)", file=sys.stderr)
        return EXIT_CERT
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
