"""Coupled SIS adoption / consensus opinion model.

Node i carries an adopter fraction x_i and a scaled mean opinion o_i::

    dx_i/dt = -delta_i x_i (1 - o_i) + (1 - x_i) o_i (sum_{j != i} beta_ij x_j + beta_ii)
    do_i/dt = sum_j a_ij (o_j - o_i) + w^x_i (gamma_i x_i - o_i)

where ``a_ij`` is the opinion weight w^o_ij, or under bounded confidence
w^o_ij only while |o_j - o_i| < xi. Matrices are indexed [listener, source]:
``beta[i, j]`` is the rate at which node j's adopters convert node i.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics

DOMAIN_EPS = 1e-6


class ModelError(ValueError):
    """Inconsistent dimensions or malformed parameters."""


class AssumptionError(ModelError):
    """A hard modelling assumption (positivity of beta_ii, coupling, gamma) fails."""


class DomainError(ValueError):
    """State outside the unit hypercube."""


@dataclass(frozen=True, eq=False)
class AdoptionParams:
    beta: np.ndarray
    delta: np.ndarray

    @property
    def beta_self(self) -> np.ndarray:
        return np.diag(self.beta).copy()

    @property
    def beta_off(self) -> np.ndarray:
        b = self.beta.copy()
        np.fill_diagonal(b, 0.0)
        return b


@dataclass(frozen=True, eq=False)
class OpinionParams:
    w_o: np.ndarray
    w_x: np.ndarray
    gamma: np.ndarray

    @property
    def laplacian(self) -> np.ndarray:
        """Weighted in-degree Laplacian diag(sum_j w_ij) - W_o."""
        return np.diag(self.w_o.sum(axis=1)) - self.w_o


@dataclass(frozen=True, eq=False)
class Model:
    adoption: AdoptionParams
    opinion: OpinionParams
    xi: Optional[float] = None

    @property
    def n(self) -> int:
        return self.adoption.delta.shape[0]

    @property
    def bounded(self) -> bool:
        return self.xi is not None

    def with_xi(self, xi):
        return Model(self.adoption, self.opinion, None if xi is None else float(xi))

    def to_dict(self) -> dict:
        return model_to_dict(self)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def make_model(beta, delta, w_o=None, w_x=None, gamma=None, xi=None) -> Model:
    """Build a model, filling the defaults used throughout the scenarios.

    Omitted opinion weights default to unit weight on every adoption edge,
    ``w_x`` to ones and ``gamma`` to ones.
    """
    beta = np.array(beta, dtype=float)
    delta = np.array(delta, dtype=float).reshape(-1)
    n = delta.shape[0]
    if beta.shape != (n, n):
        raise ModelError(f"beta has shape {beta.shape}, expected ({n}, {n})")
    if w_o is None:
        w_o = (beta > 0).astype(float)
        np.fill_diagonal(w_o, 0.0)
    w_o = np.array(w_o, dtype=float)
    if w_o.shape != (n, n):
        raise ModelError(f"w_o has shape {w_o.shape}, expected ({n}, {n})")
    w_o = w_o.copy()
    if np.any(np.diag(w_o) != 0.0):
        raise ModelError("w_o must have a zero diagonal")
    w_x = np.ones(n) if w_x is None else np.array(w_x, dtype=float).reshape(-1)
    gamma = np.ones(n) if gamma is None else np.array(gamma, dtype=float).reshape(-1)
    for name, v in (("w_x", w_x), ("gamma", gamma)):
        if v.shape != (n,):
            raise ModelError(f"{name} has length {v.shape[0]}, expected {n}")
    for name, v in (("beta", beta), ("delta", delta), ("w_o", w_o), ("w_x", w_x), ("gamma", gamma)):
        if not np.all(np.isfinite(v)):
            raise ModelError(f"{name} has non-finite entries")
    if xi is not None:
        xi = float(xi)
        if not xi > 0:
            raise ModelError("bounded-confidence threshold xi must be positive")
    for arr in (beta, delta, w_o, w_x, gamma):
        arr.setflags(write=False)
    return Model(AdoptionParams(beta, delta), OpinionParams(w_o, w_x, gamma), xi)


@dataclass(frozen=True, eq=False)
class State:
    x: np.ndarray
    o: np.ndarray

    @classmethod
    def from_z(cls, z):
        z = np.asarray(z, dtype=float)
        n = z.shape[0] // 2
        return cls(z[:n].copy(), z[n:].copy())

    @classmethod
    def constant(cls, n, value):
        return cls(np.full(n, float(value)), np.full(n, float(value)))

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.o])


# ---------------------------------------------------------------------------
# assumptions


@dataclass
class ValidationReport:
    a1_self_adoption: bool
    a2_coupling: bool
    a3_gamma: bool
    a4_strongly_connected: bool
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "A1": self.a1_self_adoption,
            "A2": self.a2_coupling,
            "A3": self.a3_gamma,
            "A4": self.a4_strongly_connected,
            "violations": list(self.violations),
        }


def validate(model: Model) -> ValidationReport:
    a, op = model.adoption, model.opinion
    v = []
    if np.any(a.beta < 0):
        v.extend(f"nonneg: beta[{i}][{j}] < 0" for i, j in zip(*np.nonzero(a.beta < 0)))
    if np.any(op.w_o < 0):
        v.extend(f"nonneg: w_o[{i}][{j}] < 0" for i, j in zip(*np.nonzero(op.w_o < 0)))
    if np.any(op.w_x < 0):
        v.extend(f"nonneg: w_x[{i}] < 0" for i in np.flatnonzero(op.w_x < 0))
    if np.any(a.delta <= 0):
        v.extend(f"delta: delta[{i}] <= 0" for i in np.flatnonzero(a.delta <= 0))
    bad1 = np.flatnonzero(a.beta_self <= 0)
    v.extend(f"Assumption 1: beta[{i}][{i}] must be > 0" for i in bad1)
    a2 = bool(np.any(op.w_x > 0))
    if not a2:
        v.append("Assumption 2: w_x needs at least one positive entry")
    bad3 = np.flatnonzero((op.gamma <= 0) | (op.gamma > 1))
    v.extend(f"Assumption 3: gamma[{i}] = {op.gamma[i]} must lie in (0, 1]" for i in bad3)
    a4 = numerics.strongly_connected(op.w_o)
    if not a4:
        v.append("Assumption 4 (advisory): opinion graph w_o is not strongly connected")
    return ValidationReport(len(bad1) == 0, a2, len(bad3) == 0, a4, v)


def require_valid(model: Model, allow_uncoupled: bool = False) -> ValidationReport:
    rep = validate(model)
    hard = [s for s in rep.violations if not s.startswith("Assumption 4")]
    if allow_uncoupled:
        hard = [s for s in hard if not s.startswith("Assumption 2")]
    if hard:
        raise AssumptionError("; ".join(hard))
    return rep


# ---------------------------------------------------------------------------
# evaluation


def _check_state(x, o, n):
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    if x.shape != (n,) or o.shape != (n,):
        raise ModelError(f"state vectors must have length {n}")
    z = np.concatenate([x, o])
    if not np.all(np.isfinite(z)) or z.min() < -DOMAIN_EPS or z.max() > 1 + DOMAIN_EPS:
        raise DomainError("state outside [0, 1]^{2N}")
    return x, o


def effective_opinion_weights(model: Model, o) -> np.ndarray:
    """Opinion weights with every link between opinions at least xi apart cut."""
    if model.xi is None:
        raise numerics.ContractError("effective weights need a bounded-confidence model")
    o = np.asarray(o, dtype=float)
    gap = np.abs(o[None, :] - o[:, None])
    return np.where(gap < model.xi, model.opinion.w_o, 0.0)


def active_weights(model: Model, o) -> np.ndarray:
    return effective_opinion_weights(model, o) if model.bounded else model.opinion.w_o


def vector_field(model: Model, x, o, weights=None):
    x, o = _check_state(x, o, model.n)
    return field_unchecked(model, x, o, weights)


def field_unchecked(model: Model, x, o, weights=None):
    """The vector field without the hypercube guard (used off-domain by analysis)."""
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    if weights is None:
        weights = active_weights(model, o)
    a, op = model.adoption, model.opinion
    rate = a.beta_off @ x + a.beta_self
    dx = -a.delta * x * (1 - o) + (1 - x) * o * rate
    do = weights @ o - weights.sum(axis=1) * o + op.w_x * (op.gamma * x - o)
    return dx, do


def jacobian(model: Model, x, o, weights=None) -> np.ndarray:
    """Closed-form 2N x 2N Jacobian, blocks ordered (x, o)."""
    x, o = _check_state(x, o, model.n)
    return jacobian_unchecked(model, x, o, weights)


def jacobian_unchecked(model: Model, x, o, weights=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    o = np.asarray(o, dtype=float)
    if weights is None:
        weights = active_weights(model, o)
    a, op = model.adoption, model.opinion
    n = model.n
    rate = a.beta_off @ x + a.beta_self
    j = np.zeros((2 * n, 2 * n))
    fx = ((1 - x) * o)[:, None] * a.beta_off
    fx[np.diag_indices(n)] = -a.delta * (1 - o) - o * rate
    j[:n, :n] = fx
    j[:n, n:] = np.diag(a.delta * x + (1 - x) * rate)
    j[n:, :n] = np.diag(op.w_x * op.gamma)
    go = np.array(weights, dtype=float)
    go[np.diag_indices(n)] = -weights.sum(axis=1) - op.w_x
    j[n:, n:] = go
    return j


# ---------------------------------------------------------------------------
# serialization


def _fmt(v: float) -> str:
    if v == 0:
        return "0.0"
    s = f"{v:.17g}"
    if "e" not in s and "." not in s and "inf" not in s and "nan" not in s:
        s += ".0"
    return s


def _canon(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_canon(obj[k])}" for k in sorted(obj)) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_canon(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError("non-finite value in canonical JSON")
        return _fmt(v)
    return json.dumps(obj)


def canonical_json(obj) -> str:
    """Sorted keys, reals at 17 significant digits; stable across round trips."""
    return _canon(obj)


def model_to_dict(model: Model) -> dict:
    d = {
        "n": model.n,
        "beta": model.adoption.beta.tolist(),
        "delta": model.adoption.delta.tolist(),
        "w_o": model.opinion.w_o.tolist(),
        "w_x": model.opinion.w_x.tolist(),
        "gamma": model.opinion.gamma.tolist(),
    }
    if model.xi is not None:
        d["xi"] = model.xi
    return d


MODEL_KEYS = {"n", "beta", "delta", "w_o", "w_x", "gamma", "xi"}


def model_from_dict(d: dict) -> Model:
    unknown = set(d) - MODEL_KEYS
    if unknown:
        raise ModelError(f"unknown model fields: {sorted(unknown)}")
    for key in ("n", "beta", "delta"):
        if key not in d:
            raise ModelError(f"missing required field '{key}'")
    n = d["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ModelError("field 'n' must be a positive integer")
    try:
        m = make_model(
            d["beta"], d["delta"], d.get("w_o"), d.get("w_x"), d.get("gamma"), d.get("xi")
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelError):
            raise
        raise ModelError(str(exc)) from exc
    if m.n != n:
        raise ModelError(f"field 'n' = {n} but delta has length {m.n}")
    return m
