"""Builtin plants: the hovering point mass and a few polynomial test systems."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .poly import PolyDynamics
from .taylor import SmoothDynamics


def _xp(x):
    if type(x).__module__.startswith("torch"):
        import torch

        return torch
    return np


@dataclass
class PointMassConfig:
    """Vertical point mass  z'' = -g + f_a(z, z')/mass + u + w, Euler-discretized.

    The learned aerodynamic term of the original setup is replaced by the
    analytic stand-in ``f_a = a1 tanh(z') + a2 z z' + a3 z^2``.  Input and
    disturbance act on both state channels so the plant is fully actuated;
    the constant hover input ``u_star = dt g`` is folded into the drift.
    """

    g: float = 9.81
    mass: float = 1.0
    dt: float = 0.1
    a1: float = -0.8
    a2: float = 0.3
    a3: float = -0.2

    def __post_init__(self):
        if self.dt <= 0 or self.mass <= 0:
            raise ValueError("dt and mass must be positive")

    @property
    def u_star(self) -> np.ndarray:
        return np.array([0.0, self.dt * self.g])

    def f_a(self, z, v):
        xp = _xp(z)
        return self.a1 * xp.tanh(v) + self.a2 * z * v + self.a3 * z * z


def point_mass(cfg: PointMassConfig | None = None) -> SmoothDynamics:
    cfg = cfg or PointMassConfig()

    def f(x):
        xp = _xp(x)
        z, v = x[..., 0], x[..., 1]
        z_next = z + cfg.dt * v
        # -dt g from gravity and +dt g from u_star cancel exactly
        v_next = v + cfg.dt * cfg.f_a(z, v) / cfg.mass
        return xp.stack([z_next, v_next], -1)

    return SmoothDynamics(2, f, np.zeros(2), name="point_mass", params=asdict(cfg))


def polynomial_plant(dyn: PolyDynamics, name: str = "polynomial") -> SmoothDynamics:
    """True dynamics that coincide with a polynomial model (no Taylor error)."""
    return SmoothDynamics(dyn.n, dyn.apply, np.zeros(dyn.n), name=name)


def scalar_quadratic(a: float = 0.5) -> PolyDynamics:
    """x+ = a x^2 + u + w."""
    return PolyDynamics([[[0.0]], [[a]]])


def cubic2() -> PolyDynamics:
    """A sparse two-state cubic test system.

    x1+ = 0.5 x1 + 0.2 x2 + 0.1 x1 x2
    x2+ = 0.3 x2 - 0.1 x1^3
    """
    H1 = np.array([[0.5, 0.2], [0.0, 0.3]])
    H2 = np.zeros((2, 4))
    H2[0, 1] = H2[0, 2] = 0.05
    H3 = np.zeros((2, 8))
    H3[1, 0] = -0.1
    return PolyDynamics([H1, H2, H3])


def sine_plant(gain: float = 0.6) -> SmoothDynamics:
    """Scalar x+ = gain sin(x): smooth, every derivative bounded by gain."""

    def f(x):
        return gain * _xp(x).sin(x)

    return SmoothDynamics(1, f, np.zeros(1), name="sine", params={"gain": gain})


BUILTIN = {
    "point_mass": point_mass,
    "scalar_quadratic": lambda: polynomial_plant(scalar_quadratic(), "scalar_quadratic"),
    "cubic2": lambda: polynomial_plant(cubic2(), "cubic2"),
    "sine": sine_plant,
}


def builtin(name: str) -> SmoothDynamics:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(BUILTIN)}") from None
