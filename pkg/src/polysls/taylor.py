"""Taylor models of smooth dynamics from finite differences, and remainder bounds."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, factorial
from typing import Callable

import numpy as np

from .poly import PolyDynamics, kron_column

MAX_ORDER = 6
DEFAULT_STEP = 1e-2
SAFETY_FACTOR = 1.5
ZERO_TOL = 1e-9


@dataclass
class SmoothDynamics:
    """Drift ``f`` of  x+ = f(x) + u + w  in original coordinates.

    ``f`` must map an ``(..., n)`` array to an ``(..., n)`` array unless
    ``vectorized`` is False.  ``x_star`` must be a fixed point of ``f``.
    """

    n: int
    f: Callable
    x_star: np.ndarray | None = None
    name: str = "custom"
    vectorized: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_star = np.zeros(self.n) if self.x_star is None else np.asarray(self.x_star, float)
        if self.x_star.shape != (self.n,):
            raise ValueError("x_star has the wrong length")
        fx = np.asarray(self(self.x_star), dtype=float)
        if not np.allclose(fx, self.x_star, atol=1e-10, rtol=0):
            raise ValueError(f"x_star is not an equilibrium: f(x_star) - x_star = {fx - self.x_star}")

    def __call__(self, x):
        if self.vectorized or _is_torch(x):
            return self.f(x)
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.n)
        out = np.array([np.asarray(self.f(xi), dtype=float) for xi in flat])
        return out.reshape(x.shape)

    def shifted(self, dx):
        """Drift in coordinates centered at the equilibrium (zero at zero)."""
        if _is_torch(dx):
            import torch

            xs = torch.as_tensor(self.x_star, dtype=dx.dtype)
            return self(dx + xs) - xs
        dx = np.asarray(dx, dtype=float)
        return np.asarray(self(dx + self.x_star), dtype=float) - self.x_star


def _is_torch(x) -> bool:
    return type(x).__module__.startswith("torch")


@dataclass(frozen=True)
class RemainderModel:
    M: float
    k: int
    radius: float

    def __post_init__(self):
        if not (self.M > 0 and self.k > 0 and self.radius > 0):
            raise ValueError("M, k and radius must be positive")

    def bound(self) -> float:
        return lagrange_remainder(self)


def lagrange_remainder(rm: RemainderModel) -> float:
    """Error bound M radius^(k+1) / (k+1)! of the order-k Taylor model."""
    return rm.M * rm.radius ** (rm.k + 1) / factorial(rm.k + 1)


# --- finite-difference derivatives ----------------------------------------------


def _multi_indices(n: int, order: int):
    """All exponent vectors of total degree ``order``."""
    for combo in itertools.combinations_with_replacement(range(n), order):
        alpha = [0] * n
        for i in combo:
            alpha[i] += 1
        yield tuple(alpha)


def _stencil(alpha, h):
    """Offsets (P, n) and weights (P,) of the tensor central difference."""
    axes = []
    for a in alpha:
        if a == 0:
            axes.append([(0.0, 1.0)])
        else:
            axes.append([((a / 2 - s) * h, (-1) ** s * comb(a, s) / h**a) for s in range(a + 1)])
    pts, wts = [], []
    for combo in itertools.product(*axes):
        pts.append([o for o, _ in combo])
        wts.append(np.prod([w for _, w in combo]))
    return np.array(pts), np.array(wts)


def order_step(order: int, step: float = DEFAULT_STEP) -> float:
    return step * max(order, 1)


def partial_derivatives(g: Callable, points, alphas, step: float = DEFAULT_STEP) -> np.ndarray:
    """Mixed partials of ``g`` at each point, one Richardson level.

    Returns an array of shape (len(points), len(alphas), n_out).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    blocks, layout = [], []
    for alpha in alphas:
        h = order_step(sum(alpha), step)
        for hh in (h, h / 2):
            offs, wts = _stencil(alpha, hh)
            blocks.append(offs)
            layout.append((len(offs), wts))
    offsets = np.concatenate(blocks)
    samples = points[:, None, :] + offsets[None, :, :]
    vals = np.asarray(g(samples.reshape(-1, points.shape[1])), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("dynamics returned non-finite values")
    vals = vals.reshape(len(points), len(offsets), -1)
    out = np.empty((len(points), len(alphas), vals.shape[-1]))
    pos = 0
    for a_i in range(len(alphas)):
        est = []
        for _ in range(2):
            size, wts = layout[2 * a_i + len(est)]
            est.append(np.einsum("p,bpo->bo", wts, vals[:, pos: pos + size]))
            pos += size
        out[:, a_i] = (4.0 * est[1] - est[0]) / 3.0
    return out


def taylor_expand(f: SmoothDynamics, k: int, step: float = DEFAULT_STEP, M: float | None = None,
                  zero_tol: float = ZERO_TOL) -> PolyDynamics:
    """Order-k Taylor model of ``f`` around its equilibrium, in shifted coordinates.

    ``H_j[:, col(i1..ij)] = d^j f / dx_i1..dx_ij / j!``, the symmetric layout
    under which ``H_j kron_power(x, j)`` reproduces the degree-j Taylor terms.
    Entries below ``zero_tol`` in magnitude are finite-difference noise and
    are set to zero, otherwise they would spawn spurious controller terms.
    """
    if not 1 <= k <= MAX_ORDER:
        raise ValueError(f"order k must be in [1, {MAX_ORDER}]")
    n = f.n
    H = []
    for j in range(1, k + 1):
        alphas = list(_multi_indices(n, j))
        D = partial_derivatives(f.shifted, np.zeros((1, n)), alphas, step)[0]
        Hj = np.zeros((n, n**j))
        for a_i, alpha in enumerate(alphas):
            base = [i for i, a in enumerate(alpha) for _ in range(a)]
            for idx in set(itertools.permutations(base)):
                Hj[:, kron_column(idx, n)] = D[a_i] / factorial(j)
        Hj[np.abs(Hj) < zero_tol] = 0.0
        H.append(Hj)
    diag = {"step": step, "richardson_levels": 1, "zero_tol": zero_tol,
            "equilibrium_residual": float(np.max(np.abs(f.shifted(np.zeros(n)))))}
    return PolyDynamics(H, x_star=f.x_star, M=1.0 if M is None else M,
                        metadata={"k": k, "source": f.name, "fit_diagnostics": diag})


def sample_l1_ball(n: int, radius: float, samples: int, seed: int = 0) -> np.ndarray:
    """Origin, the 2n vertices and uniform random points of the 1-norm ball."""
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=(samples, n + 1))
    pts = e[:, :n] / e.sum(axis=1, keepdims=True)
    pts *= rng.choice([-1.0, 1.0], size=(samples, n)) * radius
    verts = np.vstack([np.eye(n), -np.eye(n)]) * radius
    return np.vstack([np.zeros((1, n)), verts, pts])


def derivative_bound(f: SmoothDynamics, radius: float, order: int, samples: int = 200,
                     seed: int = 0, step: float = DEFAULT_STEP) -> float:
    """Largest |d^order f_i / dx^alpha| seen on the sampled 1-norm ball (no safety factor)."""
    pts = sample_l1_ball(f.n, radius, samples, seed)
    D = partial_derivatives(f.shifted, pts, list(_multi_indices(f.n, order)), step)
    if not np.all(np.isfinite(D)):
        raise ValueError("non-finite derivative estimate")
    return float(np.max(np.abs(D)))


def estimate_deriv_bound(f: SmoothDynamics, radius: float, k: int, samples: int = 200,
                         safety: float = SAFETY_FACTOR, seed: int = 0) -> float:
    """Sampled bound on the order-(k+1) derivatives, inflated by ``safety``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    return safety * derivative_bound(f, radius, k + 1, samples, seed)


def uniform_deriv_bound(f: SmoothDynamics, radius: float, k: int, samples: int = 200,
                        safety: float = SAFETY_FACTOR, seed: int = 0) -> float:
    """Bound on all derivatives of orders 1..k+1, as the input bound needs."""
    return safety * max(derivative_bound(f, radius, q, samples, seed) for q in range(1, k + 2))
