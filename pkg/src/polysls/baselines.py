"""Reference controllers: feedback linearization with an LQR gain, constant-gain SLS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harness import FblPolicy, SlsPolicy
from .synth import SlsController
from .taylor import SmoothDynamics


class RiccatiError(RuntimeError):
    pass


@dataclass
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int


def riccati_residual(A, B, Q, R, P) -> float:
    BtP = B.T @ P
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
    return float(np.max(np.abs(rhs - P)))


def dare_solve(A, B, Q, R, tol: float = 1e-10, max_iter: int = 200_000) -> RiccatiSolution:
    """Value iteration P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA, started at P = Q."""
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    P = Q.copy()
    for it in range(1, max_iter + 1):
        BtP = B.T @ P
        with np.errstate(over="ignore", invalid="ignore"):
            P_new = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P_new = (P_new + P_new.T) / 2
        if not np.all(np.isfinite(P_new)):
            raise RiccatiError("Riccati iteration diverged; is (A, B) stabilizable?")
        step = np.max(np.abs(P_new - P))
        P = P_new
        if step <= tol * max(1.0, np.max(np.abs(P))):
            res = riccati_residual(A, B, Q, R, P)
            if res <= max(tol, 1e-12) * max(1.0, np.max(np.abs(P))):
                break
    else:
        raise RiccatiError(f"no convergence in {max_iter} iterations")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return RiccatiSolution(P, K, riccati_residual(A, B, Q, R, P), it)


def fbl_control(plant: SmoothDynamics, A1, K, x) -> np.ndarray:
    """u = -(f(x) - A1 x) - K x in shifted coordinates."""
    x = np.asarray(x, dtype=float)
    return -(plant.shifted(x) - x @ np.asarray(A1).T) - x @ np.asarray(K).T


def fbl_controller(plant: SmoothDynamics, A1, Q=None, R=None) -> tuple[FblPolicy, RiccatiSolution]:
    n = plant.n
    Q = np.eye(n) if Q is None else Q
    R = np.eye(n) if R is None else R
    sol = dare_solve(A1, np.eye(n), Q, R)
    return FblPolicy(plant, A1, sol.K), sol


def const_alpha_controller(ctl: SlsController, value: float) -> SlsPolicy:
    """SLS policy with every gain fixed; value = 1 cancels each disturbance's effect at once."""
    return SlsPolicy(ctl, float(value))
