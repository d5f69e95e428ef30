"""Exact multivariate polynomials over time-tagged disturbance variables.

A variable ``VarId(age, comp)`` stands for component ``comp`` of the
disturbance that arrived ``age`` steps ago.  Monomials carry a real
coefficient, integer exponents and a multiset of symbolic gating factors
``alpha(id)`` / ``1 - alpha(id)``.  Each gating factor also records the lag
(in steps, relative to the evaluation time) at which that coefficient was
applied, so time-varying gains can be resolved exactly.

Coefficients are doubles; the structure (exponents, factor ids) is exact.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

MERGE_TOL = 1e-14

ALPHA = "alpha"
ONE_MINUS_ALPHA = "one_minus_alpha"


class VarId(NamedTuple):
    age: int
    comp: int


class AlphaFactor(NamedTuple):
    id: int
    kind: str
    lag: int = 0

    def value(self, alphas) -> float:
        a = _lookup_alpha(alphas, self.id, self.lag)
        return a if self.kind == ALPHA else 1.0 - a


def _lookup_alpha(alphas, id_: int, lag: int) -> float:
    if callable(alphas):
        return alphas(id_, lag)
    try:
        return alphas[id_]
    except (KeyError, IndexError):
        raise KeyError(f"no value supplied for alpha id {id_}") from None


# (age, comp, power) triples sorted by (age, comp)
Exponents = tuple
Factors = tuple
_Key = tuple  # (Exponents, Factors)


@dataclass(frozen=True)
class Monomial:
    coeff: float
    exponents: Exponents = ()
    alpha_factors: Factors = ()

    @property
    def degree(self) -> int:
        return sum(p for _, _, p in self.exponents)

    @property
    def max_age(self) -> int:
        return max((a for a, _, _ in self.exponents), default=-1)

    def evaluate(self, values, alphas=None) -> float:
        out = self.coeff
        for age, comp, power in self.exponents:
            out *= _lookup_value(values, age, comp) ** power
        for f in self.alpha_factors:
            out *= f.value(alphas)
        return out


def _lookup_value(values, age: int, comp: int) -> float:
    if callable(values):
        return values(VarId(age, comp))
    if isinstance(values, Mapping):
        return values[VarId(age, comp)]
    # array indexed [age, comp]
    return values[age][comp]


def _sort_key(key: _Key):
    exps, facs = key
    return (sum(p for _, _, p in exps), exps, facs)


def _mul_exponents(a: Exponents, b: Exponents) -> Exponents:
    if not a:
        return b
    if not b:
        return a
    acc = dict(((age, comp), p) for age, comp, p in a)
    for age, comp, p in b:
        acc[(age, comp)] = acc.get((age, comp), 0) + p
    return tuple((age, comp, p) for (age, comp), p in sorted(acc.items()))


def _mul_factors(a: Factors, b: Factors) -> Factors:
    if not a:
        return b
    if not b:
        return a
    return tuple(sorted(a + b))


class Polynomial:
    """Immutable sparse polynomial; terms are merged and kept canonical."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[_Key, float] | None = None):
        clean = {}
        if terms:
            for key, c in terms.items():
                if abs(c) >= MERGE_TOL:
                    clean[key] = float(c)
        self._terms = dict(sorted(clean.items(), key=lambda kv: _sort_key(kv[0])))

    # construction -----------------------------------------------------------

    @classmethod
    def zero(cls) -> "Polynomial":
        return cls()

    @classmethod
    def constant(cls, c: float) -> "Polynomial":
        return cls({((), ()): c})

    @classmethod
    def var(cls, age: int, comp: int, coeff: float = 1.0) -> "Polynomial":
        return cls({(((age, comp, 1),), ()): coeff})

    @classmethod
    def from_monomials(cls, monomials: Iterable[Monomial]) -> "Polynomial":
        acc: dict = defaultdict(float)
        for m in monomials:
            exps = tuple(sorted((a, c, p) for a, c, p in m.exponents if p))
            facs = tuple(sorted(AlphaFactor(*f) for f in m.alpha_factors))
            acc[(exps, facs)] += m.coeff
        return cls(acc)

    # views ------------------------------------------------------------------

    @property
    def terms(self) -> list[Monomial]:
        return [Monomial(c, exps, facs) for (exps, facs), c in self._terms.items()]

    def items(self):
        return self._terms.items()

    def items_keys(self):
        return self._terms.keys()

    def __len__(self) -> int:
        return len(self._terms)

    def __bool__(self) -> bool:
        return bool(self._terms)

    def __iter__(self):
        return iter(self.terms)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        return hash(tuple(self._terms.items()))

    def __repr__(self) -> str:
        if not self._terms:
            return "Polynomial(0)"
        parts = []
        for m in self.terms:
            s = f"{m.coeff:+.6g}"
            for f in m.alpha_factors:
                s += f"*a{f.id}@{f.lag}" if f.kind == ALPHA else f"*(1-a{f.id}@{f.lag})"
            for age, comp, p in m.exponents:
                s += f"*w[{age},{comp}]" + (f"^{p}" if p > 1 else "")
            parts.append(s)
        return "Polynomial(" + " ".join(parts) + ")"

    @property
    def max_age(self) -> int:
        """Largest variable age present, -1 for constants/zero."""
        return max((a for exps, _ in self._terms for a, _, _ in exps), default=-1)

    @property
    def degree(self) -> int:
        return max((sum(p for _, _, p in exps) for exps, _ in self._terms), default=0)

    def variables(self) -> set[VarId]:
        return {VarId(a, c) for exps, _ in self._terms for a, c, _ in exps}

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> "Polynomial":
        other = _as_poly(other)
        acc = dict(self._terms)
        for key, c in other._terms.items():
            acc[key] = acc.get(key, 0.0) + c
        return Polynomial(acc)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({k: -c for k, c in self._terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-_as_poly(other))

    def __rsub__(self, other) -> "Polynomial":
        return _as_poly(other) - self

    def scale(self, s: float) -> "Polynomial":
        return Polynomial({k: c * s for k, c in self._terms.items()})

    def mul(self, other, max_degree: int | None = None) -> "Polynomial":
        """Product, optionally discarding monomials above ``max_degree``."""
        other = _as_poly(other)
        acc: dict = defaultdict(float)
        for (ea, fa), ca in self._terms.items():
            da = sum(p for _, _, p in ea)
            for (eb, fb), cb in other._terms.items():
                if max_degree is not None and da + sum(p for _, _, p in eb) > max_degree:
                    continue
                acc[(_mul_exponents(ea, eb), _mul_factors(fa, fb))] += ca * cb
        return Polynomial(acc)

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        return self.mul(other)

    def __rmul__(self, other) -> "Polynomial":
        return self.__mul__(other)

    def __pow__(self, e: int) -> "Polynomial":
        return self.power(e)

    def power(self, e: int, max_degree: int | None = None) -> "Polynomial":
        if e < 0:
            raise ValueError("negative powers are not polynomial")
        out = Polynomial.constant(1.0)
        base = self
        while e:
            if e & 1:
                out = out.mul(base, max_degree)
            e >>= 1
            if e:
                base = base.mul(base, max_degree)
        return out

    def with_factor(self, factor: AlphaFactor) -> "Polynomial":
        return Polynomial(
            {(exps, _mul_factors(facs, (factor,))): c for (exps, facs), c in self._terms.items()}
        )

    def shift(self, steps: int = 1) -> "Polynomial":
        """Age every variable and every gating lag by ``steps``."""
        out = {}
        for (exps, facs), c in self._terms.items():
            exps2 = tuple((a + steps, comp, p) for a, comp, p in exps)
            facs2 = tuple(AlphaFactor(f.id, f.kind, f.lag + steps) for f in facs)
            out[(exps2, facs2)] = c
        return Polynomial(out)

    def evaluate(self, values, alphas=None) -> float:
        return sum(m.evaluate(values, alphas) for m in self.terms)

    # serialization ----------------------------------------------------------

    def to_json(self) -> list[dict]:
        return [
            {
                "coeff": m.coeff,
                "exponents": [[a, c, p] for a, c, p in m.exponents],
                "alpha_factors": [{"id": f.id, "kind": f.kind, "lag": f.lag} for f in m.alpha_factors],
            }
            for m in self.terms
        ]

    @classmethod
    def from_json(cls, data: Sequence[dict]) -> "Polynomial":
        monos = []
        for t in data:
            exps = tuple((int(a), int(c), int(p)) for a, c, p in t.get("exponents", []))
            facs = tuple(
                AlphaFactor(int(f["id"]), _check_kind(f["kind"]), int(f.get("lag", 0)))
                for f in t.get("alpha_factors", [])
            )
            monos.append(Monomial(float(t["coeff"]), exps, facs))
        return cls.from_monomials(monos)

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, s: str) -> "Polynomial":
        return cls.from_json(json.loads(s))


def _check_kind(kind: str) -> str:
    if kind not in (ALPHA, ONE_MINUS_ALPHA):
        raise ValueError(f"unknown alpha factor kind {kind!r}")
    return kind


def _as_poly(x) -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    return Polynomial.constant(float(x))


def poly_substitute(p: Polynomial, assignment: Mapping[VarId, Polynomial],
                    max_degree: int | None = None) -> Polynomial:
    """Replace every variable of ``p`` by a polynomial and expand."""
    missing = p.variables() - set(assignment)
    if missing:
        raise KeyError(f"missing assignment for {sorted(missing)}")
    powers: dict = {}
    out = Polynomial.zero()
    for (exps, facs), c in p.items():
        term = Polynomial({((), facs): c})
        for age, comp, power in exps:
            key = (VarId(age, comp), power)
            if key not in powers:
                powers[key] = _as_poly(assignment[VarId(age, comp)]).power(power, max_degree)
            term = term.mul(powers[key], max_degree)
        out = out + term
    return out


def truncate_by_age(p: Polynomial, max_age: int) -> tuple[Polynomial, Polynomial]:
    """Split into monomials whose oldest variable is <= max_age and the rest."""
    if max_age < 0:
        raise ValueError("max_age must be non-negative")
    kept, dropped = {}, {}
    for (exps, facs), c in p.items():
        oldest = max((a for a, _, _ in exps), default=-1)
        (kept if oldest <= max_age else dropped)[(exps, facs)] = c
    return Polynomial(kept), Polynomial(dropped)


# --- Kronecker-power polynomial dynamics -------------------------------------


def kron_power(x, j: int) -> np.ndarray:
    """j-fold Kronecker product of x with itself."""
    if j < 1:
        raise ValueError("kron_power needs j >= 1 (no constant term)")
    x = np.asarray(x, dtype=float).ravel()
    out = x
    for _ in range(j - 1):
        out = np.kron(out, x)
    return out


def kron_column(idx: Sequence[int], n: int) -> int:
    """Column of the Kronecker power holding x[idx[0]] * x[idx[1]] * ..."""
    col = 0
    for i in idx:
        col = col * n + i
    return col


@dataclass
class PolyDynamics:
    """Degree-k polynomial model  x+ = sum_j H_j kron_power(x, j)  (shifted coordinates).

    ``H[j-1]`` has shape ``(n, n**j)``; ``x_star`` is the expansion point in the
    original coordinates and ``M`` the derivative bound used by certificates.
    """

    H: list
    x_star: np.ndarray | None = None
    M: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = [np.atleast_2d(np.asarray(h, dtype=float)) for h in self.H]
        if not self.H:
            raise ValueError("need at least H_1")
        n = self.H[0].shape[0]
        for j, h in enumerate(self.H, start=1):
            if h.shape != (n, n**j):
                raise ValueError(f"H_{j} has shape {h.shape}, expected {(n, n ** j)}")
        self.x_star = np.zeros(n) if self.x_star is None else np.asarray(self.x_star, dtype=float)
        if self.x_star.shape != (n,):
            raise ValueError("x_star has the wrong length")
        if not self.M > 0:
            raise ValueError("M must be positive")

    @property
    def n(self) -> int:
        return self.H[0].shape[0]

    @property
    def k(self) -> int:
        return len(self.H)

    def __call__(self, x):
        return self.apply(x)

    def apply(self, x):
        """Evaluate on numpy arrays or torch tensors with leading batch axes."""
        if not hasattr(self, "_table"):
            self._table = list(self.monomial_table().items())
        comps = [0.0 * x[..., 0] for _ in range(self.n)]
        for (_, idx), coeffs in self._table:
            prod = x[..., idx[0]]
            for i in idx[1:]:
                prod = prod * x[..., i]
            for i in range(self.n):
                if coeffs[i] != 0.0:
                    comps[i] = comps[i] + float(coeffs[i]) * prod
        if type(x).__module__.startswith("torch"):
            import torch

            return torch.stack(comps, -1)
        return np.stack(comps, -1)

    def monomial_table(self):
        """Symmetrized coefficients: {(j, sorted index tuple): n-vector}."""
        table = {}
        for j, h in enumerate(self.H, start=1):
            for idx in itertools.product(range(self.n), repeat=j):
                key = (j, tuple(sorted(idx)))
                col = h[:, kron_column(idx, self.n)]
                table[key] = table.get(key, 0.0) + col
        return {key: v for key, v in table.items() if np.any(v != 0.0)}

    def symbolic(self, X: Sequence[Polynomial], max_degree: int | None = None,
                 max_work: int | None = None) -> list[Polynomial]:
        """Apply the dynamics to a vector of polynomials.

        ``max_work`` caps the number of pairwise term products of any single
        multiplication (OverflowError when exceeded).
        """
        if len(X) != self.n:
            raise ValueError("dimension mismatch")
        out = [Polynomial.zero() for _ in range(self.n)]
        prods: dict = {}
        for (j, idx), coeffs in self.monomial_table().items():
            prod = Polynomial.constant(1.0)
            for r in range(1, len(idx) + 1):
                sub = idx[:r]
                if sub not in prods:
                    if max_work is not None:
                        work = _pair_count(prod, X[idx[r - 1]], max_degree)
                        if work > max_work:
                            raise OverflowError(
                                f"product of {len(prod)} x {len(X[idx[r - 1]])} terms "
                                f"({work} pairs) exceeds the work cap"
                            )
                    prods[sub] = prod.mul(X[idx[r - 1]], max_degree)
                prod = prods[sub]
            for i in range(self.n):
                if coeffs[i] != 0.0:
                    out[i] = out[i] + prod.scale(float(coeffs[i]))
        return out

    def to_json(self) -> dict:
        polys = self.symbolic([Polynomial.var(0, i) for i in range(self.n)])
        return {
            "n": self.n,
            "k": self.k,
            "M": self.M,
            "x_star": self.x_star.tolist(),
            "H": [h.tolist() for h in self.H],
            "polynomials": [p.to_json() for p in polys],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PolyDynamics":
        return cls(H=data["H"], x_star=data.get("x_star"), M=data.get("M", 1.0),
                   metadata=data.get("metadata", {}))


def _pair_count(a: Polynomial, b: Polynomial, max_degree: int | None) -> int:
    """Number of term pairs a product has to form under the degree cap."""
    if max_degree is None:
        return len(a) * len(b)
    da = np.bincount([sum(p for _, _, p in e) for e, _ in a.items_keys()], minlength=max_degree + 1)
    db = np.bincount([sum(p for _, _, p in e) for e, _ in b.items_keys()], minlength=max_degree + 1)
    cb = np.cumsum(db)
    return int(sum(da[i] * cb[min(max_degree - i, len(cb) - 1)]
                   for i in range(min(len(da), max_degree + 1))))


def poly_eval(dyn: PolyDynamics, x) -> np.ndarray:
    """Evaluate sum_j H_j kron_power(x, j); x may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dyn.n:
        raise ValueError(f"state has length {x.shape[-1]}, dynamics expect {dyn.n}")
    if x.ndim > 1:
        return np.stack([poly_eval(dyn, xi) for xi in x.reshape(-1, dyn.n)]).reshape(x.shape)
    return sum(h @ kron_power(x, j) for j, h in enumerate(dyn.H, start=1))


def multinomial(powers: Sequence[int]) -> int:
    out = factorial(sum(powers))
    for p in powers:
        out //= factorial(p)
    return out


__all__ = [
    "ALPHA", "ONE_MINUS_ALPHA", "AlphaFactor", "Monomial", "Polynomial", "PolyDynamics",
    "VarId", "kron_column", "kron_power", "multinomial", "poly_eval",
    "poly_substitute", "truncate_by_age",
]
