"""Fixed-step RK4 integration of the coupled system, with terminal classification.

The stepping loop is compiled with numba and run in chunks of
``record_stride`` steps; Python only records states, checks for clamping
excursions and decides termination between chunks.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numba
import numpy as np

from . import model as mdl
from .model import Model, State

log = logging.getLogger(__name__)

HIT = "Hit"
FLOP = "Flop"
INTERIOR = "Interior"
SPLIT = "Split"
TIMEOUT = "Timeout"
LABELS = (HIT, FLOP, INTERIOR, SPLIT, TIMEOUT)

CONVERGED_STREAK = 10


class IntegrationError(ArithmeticError):
    def __init__(self, message, last_time):
        super().__init__(message)
        self.last_time = last_time


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 0.01
    t_max: float = 5000.0
    convergence_tol: float = 1e-10
    clamp_warn_tol: float = 1e-9
    record_stride: int = 100

    def __post_init__(self):
        if not (self.step > 0 and self.t_max > 0 and self.step < self.t_max):
            raise ValueError("need 0 < step < t_max")
        if not (self.convergence_tol > 0 and self.clamp_warn_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (isinstance(self.record_stride, (int, np.integer)) and self.record_stride >= 1):
            raise ValueError("record_stride must be a positive integer")

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "t_max": self.t_max,
            "convergence_tol": self.convergence_tol,
            "clamp_warn_tol": self.clamp_warn_tol,
            "record_stride": int(self.record_stride),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntegratorConfig":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ValueError(f"unknown integrator fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class TerminalLabel:
    label: str
    residual: float

    def __str__(self):
        return self.label


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (k, 2N), rows are z = (x, o)
    terminal: Optional[TerminalLabel] = None
    converged: bool = False
    residual: float = math.inf
    switch_trace: Optional[List[Tuple[float, int]]] = None
    xi: Optional[float] = None
    pre_clamp_min: float = 0.0
    pre_clamp_max: float = 1.0
    steps: int = 0

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    @property
    def final(self) -> State:
        return State.from_z(self.states[-1])

    def __len__(self):
        return len(self.times)


# ---------------------------------------------------------------------------
# compiled kernel


@numba.njit(cache=True, nogil=True)
def _rhs(z, n, beta_off, beta_self, delta, w_o, w_x, gamma, xi, out):
    """Write dz/dt into ``out``; returns the number of active opinion edges."""
    bounded = xi > 0.0
    active = 0
    for i in range(n):
        xi_ = z[i]
        oi = z[n + i]
        rate = beta_self[i]
        for j in range(n):
            rate += beta_off[i, j] * z[j]
        out[i] = -delta[i] * xi_ * (1.0 - oi) + (1.0 - xi_) * oi * rate
        acc = 0.0
        for j in range(n):
            w = w_o[i, j]
            if w != 0.0:
                d = z[n + j] - oi
                if bounded and not (abs(d) < xi):
                    continue
                acc += w * d
                active += 1
        out[n + i] = acc + w_x[i] * (gamma[i] * xi_ - oi)
    return active


@numba.njit(cache=True, nogil=True)
def _advance(z, k1, t, h, nsteps, n, beta_off, beta_self, delta, w_o, w_x, gamma, xi,
             tol, streak, need, trace_t, trace_c, last_count):
    """Take up to ``nsteps`` RK4 steps from z (k1 = f(z) on entry).

    Returns (steps, t, streak, residual, pre_min, pre_max, n_trace, last_count, status)
    with status 0 = running, 1 = converged, 2 = non-finite state.
    """
    m = 2 * n
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    pre_min = 1.0
    pre_max = 0.0
    ntr = 0
    resid = 0.0
    for i in range(m):
        resid = max(resid, abs(k1[i]))
    for step in range(nsteps):
        for i in range(m):
            tmp[i] = z[i] + 0.5 * h * k1[i]
        _rhs(tmp, n, beta_off, beta_self, delta, w_o, w_x, gamma, xi, k2)
        for i in range(m):
            tmp[i] = z[i] + 0.5 * h * k2[i]
        _rhs(tmp, n, beta_off, beta_self, delta, w_o, w_x, gamma, xi, k3)
        for i in range(m):
            tmp[i] = z[i] + h * k3[i]
        _rhs(tmp, n, beta_off, beta_self, delta, w_o, w_x, gamma, xi, k4)
        finite = True
        for i in range(m):
            v = z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(v):
                finite = False
            pre_min = min(pre_min, v)
            pre_max = max(pre_max, v)
            z[i] = min(1.0, max(0.0, v))
        t += h
        if not finite:
            return step + 1, t, streak, math.inf, pre_min, pre_max, ntr, last_count, 2
        count = _rhs(z, n, beta_off, beta_self, delta, w_o, w_x, gamma, xi, k1)
        if xi > 0.0 and count != last_count:
            trace_t[ntr] = t
            trace_c[ntr] = count
            ntr += 1
            last_count = count
        resid = 0.0
        for i in range(m):
            resid = max(resid, abs(k1[i]))
        if resid < tol:
            streak += 1
            if streak >= need:
                return step + 1, t, streak, resid, pre_min, pre_max, ntr, last_count, 1
        else:
            streak = 0
    return nsteps, t, streak, resid, pre_min, pre_max, ntr, last_count, 0


def _kernel_args(model: Model):
    a, op = model.adoption, model.opinion
    return (
        np.ascontiguousarray(a.beta_off),
        np.ascontiguousarray(a.beta_self),
        np.ascontiguousarray(a.delta),
        np.ascontiguousarray(op.w_o),
        np.ascontiguousarray(op.w_x),
        np.ascontiguousarray(op.gamma),
        float(model.xi) if model.bounded else -1.0,
    )


def rhs(model: Model, z) -> np.ndarray:
    """Vector field via the compiled kernel, for cross-checking against model.vector_field."""
    z = np.ascontiguousarray(z, dtype=float)
    out = np.empty_like(z)
    _rhs(z, model.n, *_kernel_args(model), out)
    return out


# ---------------------------------------------------------------------------


def simulate(model: Model, initial: State, cfg: IntegratorConfig = IntegratorConfig(),
             allow_uncoupled: bool = False) -> Trajectory:
    """Integrate from ``initial`` until convergence or ``cfg.t_max``."""
    mdl.require_valid(model, allow_uncoupled=allow_uncoupled)
    n = model.n
    x0, o0 = mdl._check_state(initial.x, initial.o, n)
    z = np.clip(np.concatenate([x0, o0]), 0.0, 1.0)
    args = _kernel_args(model)
    k1 = np.empty(2 * n)
    count = _rhs(z, n, *args, k1)

    total = int(round(cfg.t_max / cfg.step))
    stride = int(cfg.record_stride)
    times = [0.0]
    states = [z.copy()]
    trace = [(0.0, int(count))] if model.bounded else None
    trace_t = np.empty(stride)
    trace_c = np.empty(stride, dtype=np.int64)
    t = 0.0
    done = 0
    streak = 0
    status = 0
    resid = float(np.max(np.abs(k1)))
    lo, hi = float(z.min()), float(z.max())
    while done < total and status == 0:
        chunk = min(stride, total - done)
        steps, t_new, streak, resid, pmin, pmax, ntr, count, status = _advance(
            z, k1, t, cfg.step, chunk, n, *args, cfg.convergence_tol, streak,
            CONVERGED_STREAK, trace_t, trace_c, count,
        )
        done += steps
        # recompute from the step count to avoid accumulated rounding in t
        t = done * cfg.step
        if status == 2:
            raise IntegrationError("non-finite state during integration", last_time=times[-1])
        lo, hi = min(lo, pmin), max(hi, pmax)
        excursion = max(-pmin, pmax - 1.0)
        if excursion > cfg.clamp_warn_tol:
            log.warning("clamped state excursion %.3g near t=%.4g", excursion, t)
        if trace is not None:
            trace.extend((float(trace_t[k]), int(trace_c[k])) for k in range(ntr))
        times.append(t)
        states.append(z.copy())

    traj = Trajectory(
        times=np.array(times),
        states=np.array(states),
        converged=status == 1,
        residual=float(resid),
        switch_trace=trace,
        xi=model.xi,
        pre_clamp_min=lo,
        pre_clamp_max=hi,
        steps=done,
    )
    traj.terminal = classify_terminal(traj)
    return traj


def opinion_clusters(o, xi: float) -> int:
    s = np.sort(np.asarray(o, dtype=float))
    return int(1 + np.sum(np.diff(s) > xi))


def classify_terminal(traj: Trajectory) -> TerminalLabel:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    z = traj.states[-1]
    if not traj.converged:
        return TerminalLabel(TIMEOUT, traj.residual)
    if z.min() > 0.99:
        return TerminalLabel(HIT, traj.residual)
    if z.max() < 0.01:
        return TerminalLabel(FLOP, traj.residual)
    if traj.xi is not None and opinion_clusters(z[traj.n:], traj.xi) >= 2:
        return TerminalLabel(SPLIT, traj.residual)
    return TerminalLabel(INTERIOR, traj.residual)


def constant_trajectory(z, xi=None) -> Trajectory:
    """A converged single-point trajectory, handy for classifying a known state."""
    z = np.asarray(z, dtype=float)
    return Trajectory(np.array([0.0]), z[None, :].copy(), converged=True, residual=0.0, xi=xi)


# ---------------------------------------------------------------------------
# trajectory CSV


def _num(v: float) -> str:
    return np.format_float_positional(float(v), precision=12, unique=False, fractional=False, trim="-")


def trajectory_csv(traj: Trajectory) -> str:
    n = traj.n
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"o{i + 1}" for i in range(n)]
    lines = [",".join(header)]
    for t, z in zip(traj.times, traj.states):
        lines.append(",".join([_num(t)] + [_num(v) for v in z]))
    term = traj.terminal or classify_terminal(traj)
    lines.append(f"# terminal={term.label} residual={term.residual:.6e}")
    return "\n".join(lines) + "\n"


def read_trajectory_csv(text: str) -> Trajectory:
    rows = []
    label, residual = None, math.inf
    header = None
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith("#"):
            for part in line[1:].split():
                k, _, v = part.partition("=")
                if k == "terminal":
                    label = v
                elif k == "residual":
                    residual = float(v)
            continue
        if header is None:
            header = line.split(",")
            continue
        rows.append([float(v) for v in line.split(",")])
    data = np.array(rows)
    traj = Trajectory(data[:, 0], data[:, 1:], converged=label not in (None, TIMEOUT), residual=residual)
    if label is not None:
        traj.terminal = TerminalLabel(label, residual)
    return traj
