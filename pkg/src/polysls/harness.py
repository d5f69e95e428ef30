"""Disturbance generation, closed-loop rollouts and cost accounting.

The rollout engine runs in torch (float64) so the same loop serves plain
simulation and training through the unrolled closed loop.  Plant steps use
the true drift; SLS policies only see the state and reconstruct the
disturbances from it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import torch

from .synth import SlsController
from .taylor import SmoothDynamics

DTYPE = torch.float64
GUARD_FACTOR = 1e3

KINDS = ("uniform", "impulse", "sign_random")


@dataclass(frozen=True)
class DisturbanceSpec:
    kind: str = "uniform"
    W: float = 1.0
    N_T: int = 100
    n: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.W < 0 or self.N_T < 1 or self.n < 1:
            raise ValueError("need W >= 0, N_T >= 1, n >= 1")


def gen_disturbances(spec: DisturbanceSpec) -> np.ndarray:
    """(N_T, n) sequence; row i is the disturbance entering state i+1."""
    rng = np.random.default_rng(spec.seed)
    shape = (spec.N_T, spec.n)
    if spec.kind == "uniform":
        return rng.uniform(-spec.W, spec.W, size=shape)
    if spec.kind == "sign_random":
        return spec.W * rng.choice([-1.0, 1.0], size=shape)
    w = np.zeros(shape)
    w[0] = spec.W
    return w


# --- policies ------------------------------------------------------------------


class SlsPolicy:
    """SLS disturbance feedback driven by reconstructed disturbances.

    ``gains`` is either a constant in (0, 1] or a gain model exposing
    ``gains(older, levels)`` (see :class:`polysls.alphanet.AlphaNet`).
    """

    def __init__(self, ctl: SlsController, gains=1.0):
        if np.isscalar(gains) and not 0.0 < float(gains) <= 1.0:
            raise ValueError("constant gain must lie in (0, 1]")
        self.ctl = ctl
        self.gain_model = gains
        self.levels = torch.as_tensor(ctl.term_levels)

    def reset(self, batch: int):
        T, n, q = self.ctl.T, self.ctl.n, self.ctl.n_gated
        self.w_hist = torch.zeros(batch, T + 1, n, dtype=DTYPE)
        self.a_hist = torch.ones(batch, T + 1, q, dtype=DTYPE)
        self.w_hat = None
        self.alpha = None

    def _gains(self, older):
        if np.isscalar(self.gain_model):
            return torch.full((older.shape[0], self.ctl.n_gated), float(self.gain_model), dtype=DTYPE)
        return self.gain_model.gains(older, self.levels)

    def step(self, x):
        T = self.ctl.T
        older = self.w_hist[:, :T]
        zero = torch.zeros_like(x)[:, None]
        a_prev = torch.cat([self.a_hist[:, :1], self.a_hist[:, :T]], 1)
        predicted = self.ctl.residual_table.evaluate(torch.cat([zero, older], 1), a_prev)
        w_hat = x - predicted
        alpha = self._gains(older)
        self.w_hist = torch.cat([w_hat[:, None], older], 1)
        self.a_hist = torch.cat([alpha[:, None], self.a_hist[:, :T]], 1)
        self.w_hat, self.alpha = w_hat, alpha
        return self.ctl.control_table.evaluate(self.w_hist, self.a_hist)


class FblPolicy:
    """Cancel the drift beyond its Jacobian, then apply the LQR gain."""

    def __init__(self, plant: SmoothDynamics, A1, K):
        self.plant = plant
        self.A1 = torch.as_tensor(np.asarray(A1, float), dtype=DTYPE)
        self.K = torch.as_tensor(np.asarray(K, float), dtype=DTYPE)

    def reset(self, batch: int):
        self.w_hat = self.alpha = None

    def step(self, x):
        return -(self.plant.shifted(x) - x @ self.A1.T) - x @ self.K.T


# --- engine ----------------------------------------------------------------------


def _as_matrix(M, n):
    if M is None:
        return torch.eye(n, dtype=DTYPE)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape == (1, 1) and n > 1:
        M = M[0, 0] * np.eye(n)
    return torch.as_tensor(M, dtype=DTYPE)


def rollout(plant: SmoothDynamics, policy, disturbances, Q=None, R=None, guard: float | None = None):
    """Batched closed loop from x_0 = 0; returns a dict of (B, N, ...) tensors.

    x_{t+1} = f(x_t) + u_t + d[t]  for t = 0..N-1; costs are charged on
    t = 1..N.  A sample whose state leaves the ``guard`` box is frozen at
    zero from then on and charged ``guard**2`` for every remaining step.
    """
    d = torch.as_tensor(disturbances, dtype=DTYPE)
    if d.ndim == 2:
        d = d[None]
    B, N, n = d.shape
    Qm, Rm = _as_matrix(Q, n), _as_matrix(R, n)
    if guard is None:
        guard = GUARD_FACTOR * max(float(d.abs().max()), 1.0)
    policy.reset(B)
    x = torch.zeros(B, n, dtype=DTYPE)
    u = policy.step(x)
    alive = torch.ones(B, dtype=torch.bool)
    xs, us, ws, als, costs = [], [], [], [], []
    for t in range(N):
        x = plant.shifted(x) + u + d[:, t]
        blown = alive & ~(x.abs().max(-1).values <= guard)
        x = torch.where(alive[:, None] & ~blown[:, None], x, torch.zeros_like(x))
        u = policy.step(x)
        u = torch.where(alive[:, None] & ~blown[:, None], u, torch.zeros_like(u))
        cost = ((x @ Qm) * x).sum(-1) + ((u @ Rm) * u).sum(-1)
        cost = cost + blown.to(DTYPE) * guard**2 * (N - t)
        alive = alive & ~blown
        xs.append(x)
        us.append(u)
        costs.append(cost)
        if policy.w_hat is not None:
            ws.append(policy.w_hat)
        if policy.alpha is not None:
            als.append(policy.alpha)
    return {
        "states": torch.stack(xs, 1),
        "inputs": torch.stack(us, 1),
        "w_hat": torch.stack(ws, 1) if ws else None,
        "alphas": torch.stack(als, 1) if als else None,
        "step_costs": torch.stack(costs, 1),
        "diverged": ~alive,
    }


@dataclass
class RolloutResult:
    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    reconstructed_disturbances: np.ndarray | None
    step_costs: np.ndarray
    total_cost: float
    time_averaged_cost: float
    diverged: bool
    alphas: np.ndarray | None = None

    @property
    def time_averaged_curve(self) -> np.ndarray:
        return np.cumsum(self.step_costs) / np.arange(1, len(self.step_costs) + 1)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
                         + [f"w{i}" for i in range(n)] + ["step_cost"])
            for t in range(len(self.step_costs)):
                row = [*self.states[t], *self.inputs[t], *self.disturbances[t], self.step_costs[t]]
                out.writerow([t + 1, *(repr(float(v)) for v in row)])


def _results(raw, d: np.ndarray) -> list[RolloutResult]:
    out = []
    for b in range(d.shape[0]):
        sc = raw["step_costs"][b].detach().numpy()
        total = float(sc.sum())
        out.append(RolloutResult(
            states=raw["states"][b].detach().numpy(),
            inputs=raw["inputs"][b].detach().numpy(),
            disturbances=d[b],
            reconstructed_disturbances=None if raw["w_hat"] is None else raw["w_hat"][b].detach().numpy(),
            step_costs=sc,
            total_cost=total,
            time_averaged_cost=total / len(sc),
            diverged=bool(raw["diverged"][b]),
            alphas=None if raw["alphas"] is None else raw["alphas"][b].detach().numpy(),
        ))
    return out


def simulate_batch(plant, controller, disturbances, Q=None, R=None, W: float | None = None) -> list[RolloutResult]:
    d = np.asarray(disturbances, dtype=float)
    if d.ndim == 2:
        d = d[None]
    guard = None if W is None else GUARD_FACTOR * max(W, 1e-12)
    with torch.no_grad():
        raw = rollout(plant, controller, d, Q, R, guard)
    return _results(raw, d)


def simulate(plant: SmoothDynamics, controller, disturbances, Q=None, R=None,
             W: float | None = None) -> RolloutResult:
    """Single closed-loop rollout from x_0 = 0 (see :func:`rollout`)."""
    d = np.asarray(disturbances, dtype=float)
    if d.ndim != 2:
        raise ValueError("disturbances must be an (N, n) array")
    return simulate_batch(plant, controller, d, Q, R, W)[0]


def quadratic_cost(result: RolloutResult, Q=None, R=None) -> tuple[float, np.ndarray]:
    """Total of x'Qx + u'Ru over the rollout and its running time average."""
    n = result.states.shape[1]
    Qm = np.eye(n) if Q is None else np.atleast_2d(np.asarray(Q, float))
    Rm = np.eye(n) if R is None else np.atleast_2d(np.asarray(R, float))
    step = np.einsum("ti,ij,tj->t", result.states, Qm, result.states)
    step += np.einsum("ti,ij,tj->t", result.inputs, Rm, result.inputs)
    return float(step.sum()), np.cumsum(step) / np.arange(1, len(step) + 1)
