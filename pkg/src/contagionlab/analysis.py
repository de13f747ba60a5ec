"""Stability certificates for the hit (all ones) and flop (all zeros) equilibria.

Everything here is a sufficient-condition check or a numerically verifiable
certificate: threshold rates Omega_i(tau), the stability-table classifier,
weakly chained diagonal dominance, linear comparison systems with diagonal
Lyapunov matrices, equilibria of the ``delta_i = sum_j beta_ij x_j + beta_ii``
family, and positive-vector instability witnesses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import numerics
from .model import Model, State, field_unchecked, jacobian_unchecked

EQ_TOL = 1e-12
CERT_TOL = 1e-9

UNSTABLE = "Unstable"
LOCAL = "LocallyStable"
ASYMPTOTIC = "AsymptoticallyStable"
INCONCLUSIVE = "Inconclusive"

_RANK = {INCONCLUSIVE: 0, LOCAL: 1, ASYMPTOTIC: 2}


class WitnessError(ValueError):
    pass


def omega(model: Model, i: int, tau: float) -> float:
    """Largest adoption pressure on node i when every neighbour has x_j <= tau."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau = {tau} outside [0, 1]")
    if not 0 <= i < model.n:
        raise IndexError(i)
    a = model.adoption
    return float(a.beta_off[i].sum() * tau + a.beta_self[i])


def omega_all(model: Model, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau = {tau} outside [0, 1]")
    a = model.adoption
    return a.beta_off.sum(axis=1) * tau + a.beta_self


# ---------------------------------------------------------------------------
# stability table


@dataclass
class Verdict:
    verdict: str = INCONCLUSIVE
    condition: Optional[str] = None
    tau: Optional[float] = None
    satisfied: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "condition": self.condition,
            "tau": self.tau,
            "satisfied": list(self.satisfied),
        }


@dataclass
class StabilityReport:
    flop: Verdict
    hit: Verdict
    omega_0: np.ndarray
    omega_1: np.ndarray
    alpha_b_minus_d: float
    opinion_strongly_connected: bool
    bounded_confidence: List[str] = field(default_factory=list)

    @property
    def conditions(self) -> List[str]:
        return self.flop.satisfied + self.hit.satisfied + self.bounded_confidence

    def to_dict(self) -> dict:
        return {
            "flop": self.flop.to_dict(),
            "hit": self.hit.to_dict(),
            "conditions": self.conditions,
            "omega_0": self.omega_0.tolist(),
            "omega_1": self.omega_1.tolist(),
            "alpha_B_minus_D": self.alpha_b_minus_d,
            "opinion_strongly_connected": self.opinion_strongly_connected,
        }


def _strict_tau(ok, start, direction):
    """Walk one ulp at a time from a boundary value until ``ok`` holds."""
    t = float(start)
    for _ in range(64):
        if 0.0 <= t <= 1.0 and ok(t):
            return t
        t = float(np.nextafter(t, direction))
    return None


def _flop_tau(model: Model) -> Optional[float]:
    """Largest tau in [0, 1] with delta_i > Omega_i(tau) for all i, or None."""
    a = model.adoption
    s = a.beta_off.sum(axis=1)
    slack = a.delta - a.beta_self
    if np.any(slack <= 0):
        return None
    with np.errstate(divide="ignore"):
        bounds = np.where(s > 0, slack / np.where(s > 0, s, 1.0), np.inf)
    sup = float(np.min(bounds))
    if sup > 1.0:
        return 1.0
    return _strict_tau(lambda t: bool(np.all(a.delta > omega_all(model, t))), sup, 0.0)


def _hit_tau(model: Model) -> Optional[float]:
    """Smallest tau in [0, 1] with Omega_i(tau) > delta_i for all i, or None."""
    a = model.adoption
    s = a.beta_off.sum(axis=1)
    need = a.delta - a.beta_self
    if np.any((s == 0) & (need >= 0)) or np.any(need >= s):
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = np.where(s > 0, need / np.where(s > 0, s, 1.0), -np.inf)
    inf = float(np.max(bounds))
    if inf < 0.0:
        return 0.0
    return _strict_tau(lambda t: bool(np.all(omega_all(model, t) > a.delta)), inf, 1.0)


def classify(model: Model) -> StabilityReport:
    """Evaluate every sufficient condition of the stability table.

    The verdict for each equilibrium is the strongest one satisfied;
    ``satisfied`` lists every condition that holds.
    """
    a, op = model.adoption, model.opinion
    delta, bself = a.delta, a.beta_self
    om1 = omega_all(model, 1.0)
    om0 = omega_all(model, 0.0)
    w_all = bool(np.all(op.w_x > 0))
    g1 = bool(np.all(np.abs(op.gamma - 1.0) <= EQ_TOL))
    sc = numerics.strongly_connected(op.w_o)
    gmax = float(np.max(op.gamma))

    flop = Verdict()
    if g1 and w_all and sc and np.all(np.abs(delta - bself) <= EQ_TOL):
        flop.satisfied.append("table1_flop_unstable")
    if np.all(delta > bself):
        flop.satisfied.append("table1_flop_local")
    if w_all and np.all(delta > gmax * bself):
        flop.satisfied.append("lemma2_flop_local_gamma")
    if w_all:
        tau = _flop_tau(model)
        if tau is not None:
            flop.tau = float(tau)
            flop.satisfied.append("table1_flop_asymptotic" if tau == 1.0 else "theorem1_flop_asymptotic")
    _settle(flop, asymptotic=("table1_flop_asymptotic", "theorem1_flop_asymptotic"),
            local=("table1_flop_local", "lemma2_flop_local_gamma"), unstable="table1_flop_unstable")

    hit = Verdict()
    if g1:
        if w_all and sc and np.all(np.abs(om1 - delta) <= EQ_TOL):
            hit.satisfied.append("table1_hit_unstable")
        if np.all(om1 > delta):
            hit.satisfied.append("table1_hit_local")
        if w_all:
            tau = _hit_tau(model)
            if tau is not None:
                hit.tau = float(tau)
                hit.satisfied.append("table1_hit_asymptotic" if tau == 0.0 else "theorem2_hit_asymptotic")
    _settle(hit, asymptotic=("table1_hit_asymptotic", "theorem2_hit_asymptotic"),
            local=("table1_hit_local",), unstable="table1_hit_unstable")

    bc = []
    if model.bounded and _undirected(op.w_o):
        if np.all(delta > om1) and np.all(np.abs(om1 - op.w_x) <= EQ_TOL):
            bc.append("theorem4_flop_uniform_bounded_confidence")
        if g1 and np.all(bself > delta) and np.all(np.abs(delta - op.w_x) <= EQ_TOL):
            bc.append("theorem5_hit_bounded_confidence")

    alpha_bd = numerics.spectral_abscissa(a.beta - np.diag(delta))
    return StabilityReport(flop, hit, om0, om1, alpha_bd, sc, bc)


def _settle(v: Verdict, asymptotic, local, unstable):
    for name in asymptotic:
        if name in v.satisfied:
            v.verdict, v.condition = ASYMPTOTIC, name
            return
    v.tau = None
    for name in local:
        if name in v.satisfied:
            v.verdict, v.condition = LOCAL, name
            return
    if unstable in v.satisfied:
        v.verdict, v.condition = UNSTABLE, unstable


def verdict_rank(verdict: str) -> int:
    return _RANK.get(verdict, -1)


def _undirected(w: np.ndarray) -> bool:
    return bool(np.allclose(w, w.T, rtol=0, atol=EQ_TOL))


# ---------------------------------------------------------------------------
# diagonal dominance


def wcdd(m, rtol: float = 1e-12):
    """Weak chained diagonal dominance test.

    Returns ``(verdict, strict_rows)``. Row dominance is judged with a small
    relative slack so exact-zero row sums survive rounding.
    """
    a = numerics.as_square(m)
    d = np.abs(np.diag(a))
    off = np.sum(np.abs(a), axis=1) - d
    slack = rtol * (d + off)
    dominant = d - off >= -slack
    strict = set(int(i) for i in np.flatnonzero(d - off > slack))
    if not np.all(dominant):
        return False, strict
    if not strict:
        return False, strict
    reach = numerics.reachable_rows(a, strict)
    return len(reach) == a.shape[0], strict


# ---------------------------------------------------------------------------
# comparison systems and Lyapunov certificates


@dataclass
class ComparisonMatrices:
    p: np.ndarray        # adoption bound diag(Omega(tau)), opinion input W Gamma
    p_upper: np.ndarray  # same with W in place of W Gamma
    p_hat: np.ndarray    # hit-side bound in 1 - z coordinates


def comparison_matrices(model: Model, tau: float = 1.0, weights=None) -> ComparisonMatrices:
    n = model.n
    op = model.opinion
    w_o = op.w_o if weights is None else np.asarray(weights, dtype=float)
    lap = np.diag(w_o.sum(axis=1)) - w_o
    bbar = np.diag(omega_all(model, tau))
    wd = np.diag(op.w_x)
    lower = -(lap + wd)

    def block(top, left):
        p = np.zeros((2 * n, 2 * n))
        p[:n, :n] = -top
        p[:n, n:] = top
        p[n:, :n] = left
        p[n:, n:] = lower
        return p

    return ComparisonMatrices(
        p=block(bbar, wd @ np.diag(op.gamma)),
        p_upper=block(bbar, wd),
        p_hat=block(np.diag(model.adoption.delta), wd),
    )


@dataclass
class LyapunovCertificate:
    p: np.ndarray
    q: np.ndarray
    lambda_max: float
    alpha: float
    hurwitz: bool

    @property
    def valid(self) -> bool:
        if not np.all(self.q > 0) or not self.lambda_max <= CERT_TOL:
            return False
        return self.lambda_max < 0 if self.hurwitz else True

    def to_dict(self) -> dict:
        return {
            "q": self.q.tolist(),
            "lambda_max": self.lambda_max,
            "alpha": self.alpha,
            "hurwitz": self.hurwitz,
            "valid": self.valid,
        }


def _kernel_vector(m: np.ndarray) -> np.ndarray:
    """Null vector of a singular irreducible M-matrix, normalised to sum one."""
    n = m.shape[0]
    a = m.copy()
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return numerics.solve_linear(a, rhs)


def lyapunov_certificate(p, alpha_tol: float = 1e-9) -> LyapunovCertificate:
    """Positive diagonal Q with P^T Q + Q P negative (semi)definite.

    With right and left vectors xi, eta solving P xi = -1, P^T eta = -1
    (Hurwitz case) or spanning the kernels (marginal case), ``q = eta / xi``
    gives (P^T Q + Q P) xi = -(1 + q) or 0, which for a symmetric Metzler
    matrix settles its definiteness.
    """
    p = numerics.as_square(p)
    if not numerics.is_metzler(p):
        raise numerics.ContractError("certificate needs a Metzler matrix")
    if not numerics.strongly_connected(p):
        raise numerics.ContractError("certificate needs an irreducible matrix")
    scale = max(1.0, numerics.inf_norm(p))
    alpha = numerics.spectral_abscissa(p)
    if alpha > alpha_tol * scale:
        raise numerics.ContractError(f"spectral abscissa {alpha:.3g} is positive")
    n = p.shape[0]
    hurwitz = alpha < -alpha_tol * scale
    if hurwitz:
        xi = -numerics.solve_linear(p, np.ones(n))
        eta = -numerics.solve_linear(p.T, np.ones(n))
    else:
        xi = _kernel_vector(p)
        eta = _kernel_vector(p.T.copy())
    if np.any(xi <= 0) or np.any(eta <= 0):
        raise numerics.NumericError("Perron vectors are not strictly positive", partial=(xi, eta))
    q = eta / xi
    q = q / q.max()
    qm = np.diag(q)
    s = p.T @ qm + qm @ p
    lam = numerics.symmetric_max_eig(0.5 * (s + s.T))
    return LyapunovCertificate(p, q, lam, alpha, hurwitz)


def common_lyapunov_margin(model: Model, weight_family) -> float:
    """max over opinion topologies of lambda_max(P_k + P_k^T) / 2 for V = z^T z / 2.

    Non-positive means the identity is a common quadratic Lyapunov matrix for
    the upper-bounding comparison systems of every topology in the family.
    """
    worst = -math.inf
    for w in weight_family:
        pk = comparison_matrices(model, 1.0, weights=w).p_upper
        worst = max(worst, numerics.symmetric_max_eig(0.5 * (pk + pk.T)))
    return worst


def common_lyapunov_margin_hit(model: Model, weight_family) -> float:
    worst = -math.inf
    for w in weight_family:
        pk = comparison_matrices(model, 1.0, weights=w).p_hat
        worst = max(worst, numerics.symmetric_max_eig(0.5 * (pk + pk.T)))
    return worst


# ---------------------------------------------------------------------------
# equilibria with delta_i = sum_j beta_ij x_j + beta_ii and instability witnesses


@dataclass
class InteriorEquilibrium:
    z_star: State
    adoption_residual: float
    field_residual: float
    consensus_residual: float
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "x": self.z_star.x.tolist(),
            "o": self.z_star.o.tolist(),
            "adoption_residual": self.adoption_residual,
            "field_residual": self.field_residual,
            "consensus_residual": self.consensus_residual,
            "feasible": self.feasible,
        }


def equilibrium_record(model: Model, x) -> InteriorEquilibrium:
    """Residuals of the three defining conditions at z = (x, x)."""
    x = np.asarray(x, dtype=float)
    a, op = model.adoption, model.opinion
    adopt = float(np.max(np.abs(a.beta_off @ x + a.beta_self - a.delta)))
    dx, do = field_unchecked(model, x, x, op.w_o)
    cons = float(np.max(np.abs(op.w_o @ x - op.w_o.sum(axis=1) * x)))
    feasible = bool(np.all(x > 0) and np.all(x < 1))
    return InteriorEquilibrium(State(x.copy(), x.copy()), adopt,
                               float(max(np.max(np.abs(dx)), np.max(np.abs(do)))), cons, feasible)


def interior_equilibrium(model: Model) -> Optional[InteriorEquilibrium]:
    """Solve sum_{j != i} beta_ij x_j = delta_i - beta_ii and set o = x.

    Consensus is measured with the model's opinion weights (unit weights
    give the plain neighbour sum). Returns None when the system is singular.
    """
    if not np.all(np.abs(model.opinion.gamma - 1.0) <= EQ_TOL):
        raise numerics.ContractError("needs gamma_i = 1 for all i")
    a = model.adoption
    try:
        x = numerics.solve_linear(a.beta_off, a.delta - a.beta_self)
    except numerics.SingularMatrixError:
        return None
    return equilibrium_record(model, x)


@dataclass
class InstabilityWitness:
    y: np.ndarray
    epsilons: np.ndarray
    jy_min: float
    alpha: float

    @property
    def valid(self) -> bool:
        return bool(np.all(self.y > 0) and self.jy_min > 0)

    def to_dict(self) -> dict:
        return {
            "y": self.y.tolist(),
            "epsilons": self.epsilons.tolist(),
            "jy_min": self.jy_min,
            "alpha": self.alpha,
            "valid": self.valid,
        }


def instability_witness(model: Model, eq: InteriorEquilibrium, residual_tol: float = 1e-9) -> InstabilityWitness:
    """Positive y with J(z*) y > 0, proving alpha(J(z*)) > 0 for an irreducible Metzler J.

    y = (1 + eps, 1) with eps_i half of sum_j beta_ij x_i (1 - x_i) / delta_i.
    The construction is symmetric under x -> 1 - x (the Jacobian is unchanged
    by that reflection), so the same bound serves equilibria at the hit.
    """
    op = model.opinion
    if not np.all(np.abs(op.gamma - 1.0) <= EQ_TOL):
        raise numerics.ContractError("needs gamma_i = 1 for all i")
    if not np.all(op.w_x > 0):
        raise numerics.ContractError("needs w_x > 0 at every node")
    if not numerics.strongly_connected(op.w_o):
        raise numerics.ContractError("needs a strongly connected opinion graph")
    if max(eq.adoption_residual, eq.field_residual, eq.consensus_residual) >= residual_tol:
        raise numerics.ContractError("point does not satisfy the equilibrium conditions")
    x = eq.z_star.x
    a = model.adoption
    slack = a.beta_off.sum(axis=1) * x * (1 - x)
    bound = slack / a.delta
    bad = np.flatnonzero(bound <= 0)
    if bad.size:
        raise WitnessError(
            f"epsilon bound is zero at node(s) {bad.tolist()} "
            f"(x* = {x[bad].tolist()}); no strictly positive witness of this form"
        )
    eps = 0.5 * bound
    y = np.concatenate([1.0 + eps, np.ones(model.n)])
    j = jacobian_unchecked(model, x, eq.z_star.o, op.w_o)
    jy = j @ y
    alpha = numerics.spectral_abscissa(j)
    return InstabilityWitness(y, eps, float(jy.min()), alpha)
