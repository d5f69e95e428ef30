"""Neural gain schedule for the SLS controller and its training loop.

The network maps the window of past reconstructed disturbances
``(w_{t-1}, ..., w_{t-T})`` to one gain per gated controller term, squashed
into ``(alpha_min, 1)``.  Gains of level-m terms are computed from a copy of
the window with every entry older than ``w_{t-1-m}`` zeroed, so a gain never
depends on the current or future disturbances.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .harness import DTYPE, SlsPolicy, rollout
from .synth import SlsController
from .taylor import SmoothDynamics

log = logging.getLogger(__name__)

LOGIT_CLIP = 30.0
SATURATION_BIAS = 30.0


class AlphaNet(nn.Module):
    def __init__(self, layer_dims, alpha_min: float = 0.5, dropout_rate: float = 0.1):
        super().__init__()
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise ValueError("need at least input and output widths, all positive")
        if not 0.0 < alpha_min < 1.0:
            raise ValueError("alpha_min must lie in (0, 1)")
        self.layer_dims = [int(d) for d in layer_dims]
        self.alpha_min = float(alpha_min)
        self.dropout_rate = float(dropout_rate)
        self.linears = nn.ModuleList(
            nn.Linear(a, b, dtype=DTYPE) for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:])
        )
        self.dropout = nn.Dropout(self.dropout_rate)

    def forward(self, window):
        h = window
        for i, lin in enumerate(self.linears):
            h = lin(h)
            if i < len(self.linears) - 1:
                h = self.dropout(torch.relu(h))
        z = h.clamp(-LOGIT_CLIP, LOGIT_CLIP)
        return self.alpha_min + (1.0 - self.alpha_min) * torch.sigmoid(z)

    def gains(self, older, levels):
        """Per-term gains from the (B, T, n) window of ages 1..T."""
        B, T, n = older.shape
        keep = (torch.arange(T)[None, :] <= torch.arange(T)[:, None]).to(older.dtype)
        inputs = (older[None] * keep[:, None, :, None]).reshape(T * B, T * n)
        out = self(inputs).reshape(T, B, -1)
        idx = levels.clamp(max=T - 1)[None, None, :].expand(1, B, -1)
        return out.gather(0, idx)[0]

    # --- parameters as one flat vector (for checks and serialization) --------

    def flat_parameters(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def to_json(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "alpha_min": self.alpha_min,
            "dropout_rate": self.dropout_rate,
            "weights": [{"W": lin.weight.detach().tolist(), "b": lin.bias.detach().tolist()}
                        for lin in self.linears],
        }

    @classmethod
    def from_json(cls, d: dict) -> "AlphaNet":
        net = cls(d["layer_dims"], d["alpha_min"], d["dropout_rate"])
        with torch.no_grad():
            for lin, layer in zip(net.linears, d["weights"]):
                lin.weight.copy_(torch.tensor(layer["W"], dtype=DTYPE))
                lin.bias.copy_(torch.tensor(layer["b"], dtype=DTYPE))
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "AlphaNet":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def layer_dims_for(ctl: SlsController, hidden=(256, 256, 256, 256)) -> list[int]:
    return [ctl.n * ctl.T, *hidden, ctl.n_gated]


def net_init(layer_dims, seed: int = 0, alpha_min: float = 0.5, dropout_rate: float = 0.1) -> AlphaNet:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded."""
    net = AlphaNet(layer_dims, alpha_min, dropout_rate)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for lin in net.linears:
            bound = 1.0 / np.sqrt(lin.in_features)
            lin.weight.copy_(torch.as_tensor(rng.uniform(-bound, bound, lin.weight.shape)))
            lin.bias.copy_(torch.as_tensor(rng.uniform(-bound, bound, lin.bias.shape)))
    return net


def saturated_net(layer_dims, alpha_min: float = 0.5, dropout_rate: float = 0.1) -> AlphaNet:
    """Constant network whose gains equal 1 to within 1e-12."""
    net = AlphaNet(layer_dims, alpha_min, dropout_rate)
    with torch.no_grad():
        for lin in net.linears:
            lin.weight.zero_()
            lin.bias.zero_()
        net.linears[-1].bias.fill_(SATURATION_BIAS)
    return net


def net_forward(net: AlphaNet, window, train_mode: bool = False) -> np.ndarray:
    x = torch.as_tensor(np.asarray(window, dtype=float), dtype=DTYPE)
    if not torch.all(torch.isfinite(x)):
        raise ValueError("non-finite network input")
    net.train(train_mode)
    with torch.no_grad():
        return net(x).numpy()


def alphas_for_time(net: AlphaNet, history, ctl: SlsController) -> dict[int, float]:
    """Gains used at time t.

    ``history`` is newest first and starts with ``w_t``; that entry (and
    anything newer) is ignored.  Missing older entries count as zero.
    """
    T, n = ctl.T, ctl.n
    h = np.zeros((T + 1, n))
    hist = np.atleast_2d(np.asarray(history, dtype=float)) if len(history) else np.zeros((0, n))
    h[: min(len(hist), T + 1)] = hist[: T + 1]
    older = torch.as_tensor(h[1:][None], dtype=DTYPE)
    net.eval()
    with torch.no_grad():
        a = net.gains(older, torch.as_tensor(ctl.term_levels))[0].numpy()
    return {i: float(v) for i, v in enumerate(a)}


# --- training ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    N_T: int = 100
    epochs: int = 100
    learning_rate: float = 1e-2
    batch: int = 16
    W: float = 1.0
    Q: list | None = None
    R: list | None = None
    seed: int = 0
    momentum: float = 0.0
    kind: str = "uniform"

    def matrices(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        Q = np.eye(n) if self.Q is None else np.atleast_2d(np.asarray(self.Q, float))
        R = np.eye(n) if self.R is None else np.atleast_2d(np.asarray(self.R, float))
        if Q.shape == (1, 1) and n > 1:
            Q = Q[0, 0] * np.eye(n)
        if R.shape == (1, 1) and n > 1:
            R = R[0, 0] * np.eye(n)
        return Q, R

    def validate(self, ctl: SlsController) -> None:
        if self.N_T <= ctl.T:
            raise ValueError("training sequences must be longer than the FIR horizon")
        _, R = self.matrices(ctl.n)
        if np.min(np.linalg.eigvalsh((R + R.T) / 2)) <= 0:
            raise ValueError("R must be positive definite")
        if self.learning_rate < 0 or self.batch < 1 or self.epochs < 0:
            raise ValueError("invalid learning rate, batch or epochs")


@dataclass
class GradReport:
    analytic_grad: np.ndarray
    fd_grad: np.ndarray
    max_rel_err: float
    coords: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def training_batch(cfg: TrainConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    shape = (cfg.batch, cfg.N_T, n)
    if cfg.kind == "sign_random":
        return cfg.W * rng.choice([-1.0, 1.0], size=shape)
    return rng.uniform(-cfg.W, cfg.W, size=shape)


def rollout_loss(net: AlphaNet, ctl: SlsController, plant: SmoothDynamics, disturbances,
                 Q=None, R=None, train_mode: bool = False, guard: float | None = None) -> torch.Tensor:
    """Batch mean of sum_t x'Qx + u'Ru over the rollout (differentiable in the weights)."""
    net.train(train_mode)
    out = rollout(plant, SlsPolicy(ctl, net), disturbances, Q, R, guard)
    return out["step_costs"].sum(1).mean()


def train(net: AlphaNet, ctl: SlsController, plant: SmoothDynamics, cfg: TrainConfig):
    """Plain (momentum) SGD on the time-averaged rollout cost; returns (net, loss trace)."""
    cfg.validate(ctl)
    Q, R = cfg.matrices(ctl.n)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.SGD(net.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum)
    guard = 1e3 * max(cfg.W, 1e-12)
    trace = []
    for epoch in range(cfg.epochs):
        d = training_batch(cfg, ctl.n, rng)
        opt.zero_grad()
        loss = rollout_loss(net, ctl, plant, d, Q, R, train_mode=True, guard=guard) / cfg.N_T
        loss.backward()
        grads = [p.grad for p in net.parameters() if p.grad is not None]
        if not all(torch.all(torch.isfinite(g)) for g in grads):
            log.warning("epoch %d: non-finite gradient, step skipped", epoch)
        else:
            opt.step()
        trace.append(float(loss.detach()))
    net.eval()
    return net, np.array(trace)


def grad_check(net: AlphaNet, loss_closure, eps: float = 1e-6, n_coords: int = 100, seed: int = 0,
               floor_ratio: float = 1e-3) -> GradReport:
    """Compare autograd against central differences on random coordinates.

    Relative error per coordinate is |g_a - g_fd| / max(|g_a|, |g_fd|, floor)
    with floor = floor_ratio * max|g_a|.  Central differences carry a
    round-off error of roughly eps_machine * |loss| / eps, so coordinates
    whose gradient is many orders below the largest one cannot be resolved
    in relative terms; the floor measures those against the gradient scale.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    net.eval()
    params = list(net.parameters())
    net.zero_grad()
    loss_closure().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).detach().numpy().copy()
    rng = np.random.default_rng(seed)
    coords = np.sort(rng.choice(analytic.size, size=min(n_coords, analytic.size), replace=False))
    sizes = np.cumsum([0] + [p.numel() for p in params])
    fd = np.empty(len(coords))
    with torch.no_grad():
        for i, c in enumerate(coords):
            k = int(np.searchsorted(sizes, c, side="right") - 1)
            flat = params[k].view(-1)
            off = int(c - sizes[k])
            orig = float(flat[off])
            flat[off] = orig + eps
            lp = float(loss_closure())
            flat[off] = orig - eps
            lm = float(loss_closure())
            flat[off] = orig
            fd[i] = (lp - lm) / (2 * eps)
    a = analytic[coords]
    floor = floor_ratio * max(np.max(np.abs(analytic)), 1e-300)
    rel = np.abs(a - fd) / np.maximum(np.maximum(np.abs(a), np.abs(fd)), floor)
    return GradReport(a, fd, float(rel.max()) if len(rel) else 0.0, coords)
