"""Symbolic synthesis of the polynomial SLS disturbance-feedback controller.

Time convention: ``w_t`` is the disturbance that appears additively in
``x_t``, i.e. the plant is stepped as ``x_{t+1} = f(x_t) + u_t + w_{t+1}``.
The controller at time ``t`` sees ``x_t`` and therefore ``w_t``.

Histories are passed newest first: ``w_hist[a]`` is the disturbance of age
``a``.  Gain histories are lag indexed: ``alpha_hist[L, id]`` is the gain
of term ``id`` applied ``L`` steps ago (``L = 0`` is the current step).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from math import factorial
from typing import Mapping, Sequence

import numpy as np

from .poly import (
    ALPHA,
    ONE_MINUS_ALPHA,
    AlphaFactor,
    Monomial,
    PolyDynamics,
    Polynomial,
)

DEFAULT_MAX_TERMS = 100_000


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class GTerm:
    """One controller monomial; ``alpha_id`` is None for the fully canceled level T."""

    m: int
    j: int
    comp: int
    monomial: Monomial
    alpha_id: int | None = None

    def to_json(self) -> dict:
        mono = Polynomial.from_monomials([self.monomial]).to_json()
        return {"m": self.m, "j": self.j, "comp": self.comp, "alpha_id": self.alpha_id,
                "monomial": mono[0] if mono else {"coeff": 0.0, "exponents": [], "alpha_factors": []}}

    @classmethod
    def from_json(cls, d: dict) -> "GTerm":
        mono = Polynomial.from_json([d["monomial"]]).terms[0]
        return cls(int(d["m"]), int(d["j"]), int(d["comp"]), mono, d.get("alpha_id"))


# --- numeric evaluation of term tables ----------------------------------------


def _is_torch(x) -> bool:
    return type(x).__module__.startswith("torch")


class TermTable:
    """Vectorized evaluator for  out[i] = sum coeff * prod(gains) * prod(w)  per component.

    Works on numpy arrays or torch tensors (batched over leading axes).
    """

    def __init__(self, polys: Sequence[Polynomial], n: int, max_age: int, n_ids: int, max_lag: int):
        self.n, self.max_age, self.n_ids, self.max_lag = n, max_age, n_ids, max_lag
        n_vars = (max_age + 1) * n
        n_gain = (max_lag + 1) * n_ids
        var_rows, fac_rows, coeffs, comps = [], [], [], []
        for comp, p in enumerate(polys):
            for mono in p.terms:
                idx = []
                for age, c, power in mono.exponents:
                    if age > max_age:
                        raise ValueError("monomial older than the table horizon")
                    idx += [age * n + c] * power
                fidx = []
                for f in mono.alpha_factors:
                    if f.lag > max_lag or f.id >= n_ids:
                        raise ValueError("gain factor outside the table range")
                    base = f.lag * n_ids + f.id
                    fidx.append(base if f.kind == ALPHA else n_gain + base)
                var_rows.append(idx)
                fac_rows.append(fidx)
                coeffs.append(mono.coeff)
                comps.append(comp)
        self.n_terms = len(coeffs)
        dmax = max((len(r) for r in var_rows), default=0)
        fmax = max((len(r) for r in fac_rows), default=0)
        self.var_idx = np.full((self.n_terms, max(dmax, 1)), n_vars, dtype=np.int64)
        self.fac_idx = np.full((self.n_terms, max(fmax, 1)), 2 * n_gain, dtype=np.int64)
        for t, (r, fr) in enumerate(zip(var_rows, fac_rows)):
            self.var_idx[t, : len(r)] = r
            self.fac_idx[t, : len(fr)] = fr
        self.scatter = np.zeros((self.n_terms, n))
        if self.n_terms:
            self.scatter[np.arange(self.n_terms), comps] = coeffs
        self.has_gains = fmax > 0
        self._torch_cache: dict = {}

    def _index(self, like):
        if not _is_torch(like):
            return self.var_idx, self.fac_idx, self.scatter
        import torch

        key = (like.dtype, like.device)
        if key not in self._torch_cache:
            self._torch_cache[key] = (
                torch.as_tensor(self.var_idx, device=like.device),
                torch.as_tensor(self.fac_idx, device=like.device),
                torch.as_tensor(self.scatter, dtype=like.dtype, device=like.device),
            )
        return self._torch_cache[key]

    def evaluate(self, w_hist, alpha_hist=None):
        """w_hist: (..., max_age+1, n); alpha_hist: (..., max_lag+1, n_ids)."""
        batch = w_hist.shape[:-2]
        if self.n_terms == 0:
            return w_hist[..., 0, :] * 0.0
        var_idx, fac_idx, scatter = self._index(w_hist)
        flat = w_hist.reshape(*batch, -1)
        if _is_torch(w_hist):
            import torch

            ones = torch.ones(*batch, 1, dtype=w_hist.dtype, device=w_hist.device)
            ext = torch.cat([flat, ones], -1)
        else:
            ext = np.concatenate([flat, np.ones((*batch, 1))], -1)
        vals = ext[..., var_idx].prod(-1)
        if self.has_gains:
            if alpha_hist is None:
                raise ValueError("gain values required")
            a = alpha_hist.reshape(*alpha_hist.shape[:-2], -1)
            if _is_torch(a):
                import torch

                one = torch.ones(*a.shape[:-1], 1, dtype=a.dtype, device=a.device)
                aext = torch.cat([a, 1.0 - a, one], -1)
            else:
                aext = np.concatenate([a, 1.0 - a, np.ones((*a.shape[:-1], 1))], -1)
            vals = vals * aext[..., fac_idx].prod(-1)
        return vals @ scatter


def _shifted_residual(mono: Monomial, alpha_id: int) -> Monomial:
    """(1 - alpha) * G moved one step into the past."""
    exps = tuple((a + 1, c, p) for a, c, p in mono.exponents)
    facs = tuple(AlphaFactor(f.id, f.kind, f.lag + 1) for f in mono.alpha_factors)
    return Monomial(mono.coeff, exps, facs + (AlphaFactor(alpha_id, ONE_MINUS_ALPHA, 1),))


# --- controller ----------------------------------------------------------------


@dataclass
class SlsController:
    n: int
    k: int
    T: int
    terms: list
    max_degree: int | None = None

    def __post_init__(self):
        self.c_m = [sum(1 for g in self.terms if g.m == m) for m in range(self.T + 1)]
        self.c = max(self.c_m, default=0)
        self.n_gated = sum(1 for g in self.terms if g.alpha_id is not None)
        self._build()

    @property
    def gated_terms(self) -> list:
        return [g for g in self.terms if g.alpha_id is not None]

    @property
    def term_levels(self) -> np.ndarray:
        """Level m of each gated term, indexed by alpha_id."""
        lv = np.zeros(self.n_gated, dtype=np.int64)
        for g in self.gated_terms:
            lv[g.alpha_id] = g.m
        return lv

    def _build(self):
        n, T = self.n, self.T
        u = [[] for _ in range(n)]
        resid = [[] for _ in range(n)]
        for g in self.terms:
            mono = g.monomial
            if g.alpha_id is None:
                u[g.comp].append(Monomial(-mono.coeff, mono.exponents, mono.alpha_factors))
                continue
            gate = AlphaFactor(g.alpha_id, ALPHA, 0)
            u[g.comp].append(Monomial(-mono.coeff, mono.exponents, mono.alpha_factors + (gate,)))
            resid[g.comp].append(_shifted_residual(mono, g.alpha_id))
        self.control_polys = [Polynomial.from_monomials(ms) for ms in u]
        self.residual_polys = [Polynomial.from_monomials(ms) for ms in resid]
        self.control_table = TermTable(self.control_polys, n, T, self.n_gated, T)
        self.residual_table = TermTable(self.residual_polys, n, T, self.n_gated, T)

    def response_polys(self) -> list[Polynomial]:
        """State response x_t as polynomials in the disturbance history."""
        return [Polynomial.var(0, i) + r for i, r in enumerate(self.residual_polys)]

    def report(self) -> dict:
        return {"n": self.n, "k": self.k, "T": self.T, "c_m": list(self.c_m), "c": self.c,
                "n_gated": self.n_gated, "n_terms": len(self.terms), "max_degree": self.max_degree}

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k, "T": self.T, "max_degree": self.max_degree,
                "terms": [g.to_json() for g in self.terms], "c_m": list(self.c_m), "c": self.c}

    @classmethod
    def from_json(cls, d: dict) -> "SlsController":
        return cls(int(d["n"]), int(d["k"]), int(d["T"]), [GTerm.from_json(t) for t in d["terms"]],
                   d.get("max_degree"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "SlsController":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def synthesize(dyn: PolyDynamics, T: int, max_degree: int | None = None,
               max_terms: int = DEFAULT_MAX_TERMS) -> SlsController:
    """Unroll the closed loop level by level and collect the controller terms.

    Every monomial of ``p(x_t)`` whose oldest disturbance has age ``m < T``
    gets its own gain; the uncanceled fraction ``(1 - alpha)`` is carried into
    the next state.  Monomials reaching age ``T`` are canceled outright.

    ``max_degree`` drops monomials above that total degree during the
    expansion; the dropped part then acts like model error.  ``None`` keeps
    the expansion exact.
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    n = dyn.n
    X = [Polynomial.var(0, i) for i in range(n)]
    terms: list[GTerm] = []
    next_id = 0
    for m in range(T + 1):
        try:
            P = dyn.symbolic(X, max_degree, max_work=10 * max_terms)
        except OverflowError as exc:
            growth = [sum(1 for g in terms if g.m == q) for q in range(m)]
            raise SynthesisError(
                f"term explosion at level {m} (c_m so far {growth}): {exc}; "
                f"reduce T, k or set max_degree"
            ) from None
        j = 0
        for i in range(n):
            resid = []
            for mono in P[i].terms:
                if mono.max_age != m:
                    continue
                if m < T:
                    terms.append(GTerm(m, j, i, mono, next_id))
                    resid.append(_shifted_residual(mono, next_id))
                    next_id += 1
                else:
                    terms.append(GTerm(m, j, i, mono, None))
                j += 1
            if resid:
                X[i] = X[i] + Polynomial.from_monomials(resid)
        if len(terms) > max_terms:
            growth = [sum(1 for g in terms if g.m == q) for q in range(m + 1)]
            raise SynthesisError(
                f"term explosion: {len(terms)} terms after level {m} (c_m so far {growth}); "
                f"reduce T, k or set max_degree"
            )
    return SlsController(n, dyn.k, T, terms, max_degree)


# --- evaluation helpers --------------------------------------------------------


def alpha_history(ctl: SlsController, alphas) -> np.ndarray:
    """Normalize gain input to a (T+1, n_gated) lag-indexed array.

    Accepts a scalar, a mapping id -> value, a vector over ids (all constant
    in time), a (T+1, n_gated) array, or a sequence of per-lag mappings.
    """
    L, q = ctl.T + 1, ctl.n_gated
    if alphas is None:
        if q:
            raise ValueError("gain values required")
        return np.ones((L, 0))
    if np.isscalar(alphas):
        return np.full((L, q), float(alphas))
    if isinstance(alphas, Mapping):
        vec = np.empty(q)
        for i in range(q):
            if i not in alphas:
                raise KeyError(f"missing alpha value for id {i}")
            vec[i] = alphas[i]
        return np.tile(vec, (L, 1))
    if isinstance(alphas, Sequence) and alphas and isinstance(alphas[0], Mapping):
        rows = [alpha_history(ctl, a)[0] for a in alphas]
        rows += [rows[-1]] * (L - len(rows))
        return np.array(rows[:L])
    arr = np.asarray(alphas, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != q:
            raise ValueError(f"expected {q} gains, got {arr.shape[0]}")
        return np.tile(arr, (L, 1))
    if arr.shape != (L, q):
        raise ValueError(f"gain history must have shape {(L, q)}")
    return arr


def _hist(ctl: SlsController, w_hist, cold_start: bool, length: int) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w_hist, dtype=float))
    if w.shape[-1] != ctl.n:
        raise ValueError("disturbance vectors have the wrong length")
    if w.shape[0] < length:
        if not cold_start:
            raise ValueError(f"history has {w.shape[0]} entries, need {length}")
        w = np.vstack([w, np.zeros((length - w.shape[0], ctl.n))])
    return w[:length]


def _check_range(a: np.ndarray):
    if a.size and (np.any(a <= 0.0) or np.any(a > 1.0)):
        raise ValueError("gains must lie in (0, 1]")


def control_input(ctl: SlsController, w_hist, alphas, cold_start: bool = False) -> np.ndarray:
    """u_t = -sum alpha G (levels < T) - sum G (level T)."""
    w = _hist(ctl, w_hist, cold_start, ctl.T + 1)
    a = alpha_history(ctl, alphas)
    _check_range(a)
    return ctl.control_table.evaluate(w, a)


def predict_state(ctl: SlsController, w_hist, alphas, cold_start: bool = False) -> np.ndarray:
    """x_t = w_t + sum (1 - alpha) G over the previous steps' gated terms."""
    w = _hist(ctl, w_hist, cold_start, ctl.T + 1)
    a = alpha_history(ctl, alphas)
    _check_range(a)
    return w[0] + ctl.residual_table.evaluate(w, a)


def reconstruct_disturbance(ctl: SlsController, x_observed, w_hist_older, alphas,
                            cold_start: bool = False) -> np.ndarray:
    """Newest disturbance implied by the observed state and the older history.

    On the true nonlinear plant this returns ``w_t + e(x_{t-1})``.
    """
    older = _hist(ctl, w_hist_older, cold_start, ctl.T)
    w = np.vstack([np.zeros((1, ctl.n)), older])
    a = alpha_history(ctl, alphas)
    return np.asarray(x_observed, dtype=float) - ctl.residual_table.evaluate(w, a)


# --- certificates and bounds ---------------------------------------------------


def compute_l_c(ctl: SlsController, W: float) -> tuple[float, int]:
    """Linear growth constant l of the gated terms on the W-box, and c."""
    if not W > 0:
        raise ValueError("W must be positive")
    l = 0.0
    for g in ctl.gated_terms:
        l = max(l, abs(g.monomial.coeff) * W ** (g.monomial.degree - 1))
    return l, ctl.c


@dataclass(frozen=True)
class StabilityCert:
    M: float
    W: float
    k: int
    l: float
    c: float
    alpha_min: float
    b: float
    satisfied: bool
    state_bound: float

    def to_json(self) -> dict:
        return asdict(self)


def check_iss(M: float, W: float, k: int, l: float, c: float, alpha_min: float) -> StabilityCert:
    """ISS test b = M W^k/(k+1)! + l c (1 - alpha_min) < 1, bound W/(1 - b)."""
    if not 0.0 < alpha_min <= 1.0:
        raise ValueError("alpha_min must lie in (0, 1]")
    if M < 0 or W <= 0 or l < 0 or c < 0:
        raise ValueError("M, l, c must be non-negative and W positive")
    b = M * W**k / factorial(k + 1) + l * c * (1.0 - alpha_min)
    ok = bool(b < 1.0)
    return StabilityCert(M, W, k, l, c, alpha_min, b, ok, W / (1.0 - b) if ok else float("inf"))


def u1_series(M: float, W: float, k: int, e_x: float) -> float:
    """sum_{j=1}^k M W^j ((e_x/W + 1)^j - 1); finite everywhere."""
    d = e_x / W + 1.0
    return sum(M * W**j * (d**j - 1.0) for j in range(1, k + 1))


def u1_closed_form(M: float, W: float, k: int, e_x: float) -> float:
    """Closed form of the same sum; singular at W d = 1 or W = 1 (returns nan)."""
    d = e_x / W + 1.0
    if W * d == 1.0 or W == 1.0:
        return float("nan")
    return M * (W * d * ((W * d) ** k - 1) / (W * d - 1) + W * (1 - W**k) / (W - 1))


@dataclass(frozen=True)
class CostBound:
    M: float
    W: float
    k: int
    n: int
    h: float
    e_x: float
    d: float
    d_display: float
    U1: float
    U1_closed: float
    r: float
    T_steps: int
    total: float

    def to_json(self) -> dict:
        return asdict(self)


def cost_bound_u1(M: float, W: float, k: int, n: int, h: float, R=None, T_steps: int = 1,
                  e_x: float | None = None) -> CostBound:
    """Input bound of the alpha = 1 controller and the cost bound r T U1.

    ``e_x`` defaults to the Lagrange remainder M (n h)^(k+1)/(k+1)! on the
    1-norm ball of radius h.  ``d_display`` is the variant with (n h)^k.
    """
    if min(M, W, h) <= 0 or k < 1 or n < 1:
        raise ValueError("M, W, h must be positive; k, n >= 1")
    if e_x is None:
        e_x = M * (n * h) ** (k + 1) / factorial(k + 1)
    d = e_x / W + 1.0
    d_display = M * (n * h) ** k / (W * factorial(k + 1)) + 1.0
    U1 = u1_series(M, W, k, e_x)
    r = 1.0 if R is None else float(np.max(np.linalg.eigvalsh(np.atleast_2d(R))))
    return CostBound(M, W, k, n, h, e_x, d, d_display, U1, u1_closed_form(M, W, k, e_x),
                     r, T_steps, r * T_steps * U1)


__all__ = [
    "CostBound", "GTerm", "SlsController", "StabilityCert", "SynthesisError", "TermTable",
    "alpha_history", "check_iss", "compute_l_c", "control_input", "cost_bound_u1",
    "predict_state", "reconstruct_disturbance", "synthesize", "u1_closed_form", "u1_series",
]
