"""Builtin scenarios and a seeded Monte-Carlo basin harness.

Every random draw comes from a Philox stream keyed by ``(seed, trial)``,
so the outcome of a trial does not depend on how trials are spread over
workers.
"""
from __future__ import annotations

import json
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from . import dynamics as dyn
from .dynamics import IntegratorConfig, Trajectory
from .model import Model, State, make_model

THREADS_ENV = "CONTAGIONLAB_THREADS"

# 7-node barbell, two triangles joined through node 4
BARBELL_BETA = np.array([
    [0.0665, 0.0668, 0.0630, 0, 0, 0, 0],
    [0.0718, 0.0033, 0.0477, 0, 0, 0, 0],
    [0.0281, 0.0521, 0.0549, 0.0641, 0, 0, 0],
    [0, 0, 0.0114, 0.0525, 0.0480, 0, 0],
    [0, 0, 0, 0.0250, 0.0646, 0.0432, 0.0575],
    [0, 0, 0, 0, 0.0112, 0.0050, 0.0346],
    [0, 0, 0, 0, 0.0470, 0.0421, 0.0108],
])
BARBELL_DELTA = np.array([0.0599, 0.0208, 0.0790, 0.0767, 0.0773, 0.0813, 0.0156])
BARBELL_O0 = np.array([0.8279, 0.2410, 0.7215, 0.9841, 0.6457, 0.5573, 0.9630])

TIPPING_BETA = np.array([
    [0.1, 0.25, 0.3, 0.35],
    [0.15, 0.05, 0.3, 0.3],
    [0.5, 0.3, 0.1, 0.3],
    [0.2, 0.1, 0.1, 0.2],
])
TIPPING_DELTA = np.array([0.5, 0.4, 0.6, 0.3])

STAR_BETA = np.array([
    [0.1, 0.2, 0.2, 0.2, 0.2],
    [0.01, 0.15, 0, 0, 0],
    [0.01, 0, 0.15, 0, 0],
    [0.01, 0, 0, 0.15, 0],
    [0.01, 0, 0, 0, 0.15],
])
STAR_DELTA = np.array([5.0, 0.1, 0.1, 0.1, 0.1])


def complete_weights(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


def barbell_model(variant: str) -> Model:
    if variant == "no_coupling":
        n = len(BARBELL_DELTA)
        return make_model(BARBELL_BETA, BARBELL_DELTA, w_o=np.zeros((n, n)), w_x=np.zeros(n))
    w = (BARBELL_BETA > 0).astype(float)
    np.fill_diagonal(w, 0.0)
    if variant == "deleted":
        # nodes 3 and 5 stop listening to node 4
        w[2, 3] = 0.0
        w[4, 3] = 0.0
    elif variant != "identical":
        raise KeyError(variant)
    return make_model(BARBELL_BETA, BARBELL_DELTA, w_o=w)


def two_community_tipping(within=0.3, across=0.05, self_rate=0.05, x_star=0.5, xi=None) -> Model:
    """Four nodes in two adoption communities {1, 2} and {3, 4}, complete opinion graph.

    Drop rates are chosen so x = o = x_star * 1 is an exact equilibrium of
    the delta_i = sum_j beta_ij x_j + beta_ii family. With within > 2 * across
    (at x_star = 0.5) one community at the hit and the other at the flop is
    locally stable once the opinion links between them are cut.
    """
    beta = np.full((4, 4), float(across))
    for i, j in ((0, 1), (2, 3)):
        beta[i, j] = beta[j, i] = within
    np.fill_diagonal(beta, 0.0)
    delta = beta.sum(axis=1) * x_star + self_rate
    np.fill_diagonal(beta, self_rate)
    return make_model(beta, delta, w_o=complete_weights(4), xi=xi)


def complete20_model() -> Model:
    n = 20
    beta = 0.005 * np.ones((n, n)) + 0.145 * np.eye(n)
    return make_model(beta, 0.1 * np.ones(n), w_o=complete_weights(n), gamma=0.75 * np.ones(n))


# ---------------------------------------------------------------------------


@dataclass
class InitialPolicy:
    kind: str = "fixed"          # fixed | uniform | grid
    state: Optional[State] = None
    grid_points: int = 5

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "fixed" and self.state is not None:
            d["x"] = self.state.x.tolist()
            d["o"] = self.state.o.tolist()
        if self.kind == "grid":
            d["grid_points"] = self.grid_points
        return d


@dataclass
class ScenarioSpec:
    name: str
    model: Model
    initial: InitialPolicy = field(default_factory=InitialPolicy)
    trials: int = 1
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    allow_uncoupled: bool = False


def _fixed(model: Model, x, o=None) -> InitialPolicy:
    x = np.asarray(x, dtype=float) * np.ones(model.n)
    o = x if o is None else np.asarray(o, dtype=float) * np.ones(model.n)
    return InitialPolicy("fixed", State(x, o))


def builtin(name: str) -> ScenarioSpec:
    if name.startswith("barbell_"):
        variant = {"barbell_no_coupling": "no_coupling", "barbell_identical": "identical",
                   "barbell_deleted": "deleted"}.get(name)
        if variant is None:
            raise KeyError(f"unknown builtin scenario '{name}'")
        m = barbell_model(variant)
        return ScenarioSpec(name, m, _fixed(m, np.eye(m.n)[0], BARBELL_O0),
                            integrator=IntegratorConfig(t_max=2000.0),
                            allow_uncoupled=variant == "no_coupling")
    if name == "tipping4":
        m = make_model(TIPPING_BETA, TIPPING_DELTA, w_o=complete_weights(4))
        return ScenarioSpec(name, m, InitialPolicy("uniform"), trials=100)
    if name in ("tipping4_exact", "tipping4_exact_bc"):
        m = two_community_tipping(xi=0.01 if name.endswith("_bc") else None)
        return ScenarioSpec(name, m, InitialPolicy("uniform"), trials=500)
    if name == "star5":
        m = make_model(STAR_BETA, STAR_DELTA)
        return ScenarioSpec(name, m, _fixed(m, 0.5))
    if name == "complete20":
        m = complete20_model()
        return ScenarioSpec(name, m, _fixed(m, 0.5))
    raise KeyError(f"unknown builtin scenario '{name}'")


BUILTINS = ("barbell_no_coupling", "barbell_identical", "barbell_deleted", "tipping4",
            "tipping4_exact", "tipping4_exact_bc", "star5", "complete20")


# ---------------------------------------------------------------------------
# Monte Carlo


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(ss))


def initial_state(spec: ScenarioSpec, trial: int) -> State:
    n = spec.model.n
    pol = spec.initial
    if pol.kind == "fixed":
        return pol.state
    if pol.kind == "uniform":
        z = trial_rng(spec.seed, trial).random(2 * n)
        return State(z[:n], z[n:])
    if pol.kind == "grid":
        k = pol.grid_points
        vals = np.linspace(0.0, 1.0, k)
        a, b = divmod(trial, k)
        return State(np.full(n, vals[a % k]), np.full(n, vals[b]))
    raise ValueError(f"unknown initial policy '{pol.kind}'")


@dataclass
class TrialRecord:
    trial: int
    x0: np.ndarray
    o0: np.ndarray
    outcome: str
    residual: float
    final: Optional[np.ndarray] = None
    error: Optional[str] = None
    pre_clamp_min: float = 0.0
    pre_clamp_max: float = 1.0

    @property
    def mean_x0(self) -> float:
        return float(np.mean(self.x0))

    @property
    def mean_o0(self) -> float:
        return float(np.mean(self.o0))

    def key(self):
        """Everything that must be bit-identical across reruns."""
        return (self.trial, self.x0.tobytes(), self.o0.tobytes(), self.outcome, self.residual,
                None if self.final is None else self.final.tobytes(), self.error)


@dataclass
class McSummary:
    counts: Dict[str, int]
    records: List[TrialRecord]
    wall_time: float

    @property
    def trials(self) -> int:
        return len(self.records)

    def mean_initial_adoption(self, label: str) -> float:
        v = [r.mean_x0 for r in self.records if r.outcome == label]
        return float(np.mean(v)) if v else float("nan")


def _run_trial(spec: ScenarioSpec, trial: int) -> TrialRecord:
    s0 = initial_state(spec, trial)
    try:
        tr = dyn.simulate(spec.model, s0, spec.integrator, allow_uncoupled=spec.allow_uncoupled)
    except (ArithmeticError, ValueError) as exc:
        return TrialRecord(trial, s0.x.copy(), s0.o.copy(), "Error", float("nan"), error=str(exc))
    return TrialRecord(trial, s0.x.copy(), s0.o.copy(), tr.terminal.label, tr.terminal.residual,
                       final=tr.states[-1].copy(), pre_clamp_min=tr.pre_clamp_min,
                       pre_clamp_max=tr.pre_clamp_max)


def worker_count(trials: int, workers: Optional[int] = None) -> int:
    if workers is None:
        env = os.environ.get(THREADS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(workers), trials))


def n_trials(spec: ScenarioSpec) -> int:
    if spec.initial.kind == "grid":
        return spec.initial.grid_points ** 2
    return spec.trials


def monte_carlo(spec: ScenarioSpec, workers: Optional[int] = None) -> McSummary:
    trials = n_trials(spec)
    if trials < 1:
        raise ValueError("need at least one trial")
    t0 = time.perf_counter()
    nw = worker_count(trials, workers)
    if nw == 1:
        records = [_run_trial(spec, k) for k in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            records = list(pool.map(lambda k: _run_trial(spec, k), range(trials)))
    counts = {label: 0 for label in dyn.LABELS}
    for r in records:
        counts[r.outcome] = counts.get(r.outcome, 0) + 1
    return McSummary(counts, records, time.perf_counter() - t0)


# ---------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    trajectories: List[Trajectory] = field(default_factory=list)
    mc: Optional[McSummary] = None
    wall_time: float = 0.0

    def summary(self) -> dict:
        spec = self.spec
        d = {
            "name": spec.name,
            "seed": int(spec.seed),
            "model": spec.model.to_dict(),
            "integrator": spec.integrator.to_dict(),
            "initial": spec.initial.to_dict(),
        }
        if self.trajectories:
            d["runs"] = [
                {
                    "terminal": tr.terminal.label,
                    "residual": tr.terminal.residual,
                    "t_end": float(tr.times[-1]),
                    "x": tr.states[-1][: tr.n].tolist(),
                    "o": tr.states[-1][tr.n:].tolist(),
                }
                for tr in self.trajectories
            ]
        if self.mc is not None:
            d["trials"] = self.mc.trials
            d["counts"] = self.mc.counts
        return d


def run_scenario(spec: ScenarioSpec) -> ScenarioResult:
    t0 = time.perf_counter()
    if spec.initial.kind == "fixed" and spec.trials <= 1:
        tr = dyn.simulate(spec.model, spec.initial.state, spec.integrator,
                          allow_uncoupled=spec.allow_uncoupled)
        return ScenarioResult(spec, [tr], wall_time=time.perf_counter() - t0)
    mc = monte_carlo(spec)
    return ScenarioResult(spec, mc=mc, wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# output layout


class OutputExistsError(FileExistsError):
    pass


def _atomic_write(path: str, text: str):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def basin_csv(mc: McSummary) -> str:
    lines = ["mean_x0,mean_o0,outcome"]
    for r in mc.records:
        lines.append(f"{dyn._num(r.mean_x0)},{dyn._num(r.mean_o0)},{r.outcome}")
    return "\n".join(lines) + "\n"


def write_outputs(result: ScenarioResult, out_dir: str, force: bool = False) -> List[str]:
    """Write summary.json, trajectory_<k>.csv and (for Monte Carlo) basin.csv.

    Files are rendered in memory first and each is moved into place with a
    rename, so a failure leaves no partial file behind.
    """
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise OutputExistsError(f"{out_dir} is not empty; pass --force to overwrite")
    files = {"summary.json": json.dumps(result.summary(), indent=2, sort_keys=True) + "\n"}
    for k, tr in enumerate(result.trajectories):
        files[f"trajectory_{k}.csv"] = dyn.trajectory_csv(tr)
    if result.mc is not None:
        files["basin.csv"] = basin_csv(result.mc)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, text in files.items():
        path = os.path.join(out_dir, name)
        _atomic_write(path, text)
        written.append(path)
    return written


def with_overrides(spec: ScenarioSpec, *, seed=None, trials=None, t_max=None, step=None) -> ScenarioSpec:
    cfg = spec.integrator
    if t_max is not None or step is not None:
        cfg = replace(cfg, t_max=cfg.t_max if t_max is None else t_max, step=cfg.step if step is None else step)
    return replace(
        spec,
        seed=spec.seed if seed is None else int(seed),
        trials=spec.trials if trials is None else int(trials),
        integrator=cfg,
    )
