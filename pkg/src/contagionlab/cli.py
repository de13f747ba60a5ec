"""Command-line front end.

Exit status: 0 success, 2 validation / domain / usage error (including a
refused overwrite), 3 numeric or I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import analysis as an
from . import dynamics as dyn
from . import experiments as ex
from . import model as mdl
from . import numerics
from .dynamics import IntegratorConfig
from .model import Model, State

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

CONFIG_KEYS = mdl.MODEL_KEYS | {"integrator", "initial"}
INITIAL_KEYS = {"kind", "x", "o", "grid_points", "trials", "seed"}

log = logging.getLogger("contagionlab")


class ConfigError(mdl.ModelError):
    pass


@dataclass
class LoadedConfig:
    model: Model
    integrator: IntegratorConfig
    initial: Optional[ex.InitialPolicy] = None
    trials: int = 1
    seed: int = 0

    def echo(self) -> dict:
        d = self.model.to_dict()
        d["integrator"] = self.integrator.to_dict()
        if self.initial is not None:
            d["initial"] = self.initial.to_dict()
        return d


def _vector(v, n, path):
    try:
        arr = np.asarray(v, dtype=float) * np.ones(n)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if arr.shape != (n,):
        raise ConfigError(f"{path}: expected a scalar or {n} values")
    return arr


def _initial(block, n) -> tuple:
    if not isinstance(block, dict):
        raise ConfigError("initial: expected an object")
    unknown = set(block) - INITIAL_KEYS
    if unknown:
        raise ConfigError(f"initial: unknown fields {sorted(unknown)}")
    kind = block.get("kind", "fixed")
    if kind == "fixed":
        x = _vector(block.get("x", 0.5), n, "initial.x")
        o = _vector(block.get("o", x), n, "initial.o")
        try:
            mdl._check_state(x, o, n)
        except mdl.DomainError as exc:
            raise mdl.DomainError(f"initial: {exc}") from exc
        pol = ex.InitialPolicy("fixed", State(x, o))
    elif kind == "uniform":
        pol = ex.InitialPolicy("uniform")
    elif kind == "grid":
        pol = ex.InitialPolicy("grid", grid_points=int(block.get("grid_points", 5)))
    else:
        raise ConfigError(f"initial.kind: unknown policy '{kind}'")
    return pol, int(block.get("trials", 1)), int(block.get("seed", 0))


def parse_config(doc) -> LoadedConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"config: unknown top-level fields {sorted(unknown)}")
    model = mdl.model_from_dict({k: v for k, v in doc.items() if k in mdl.MODEL_KEYS})
    rep = mdl.validate(model)
    hard = [v for v in rep.violations if not v.startswith("Assumption 4")]
    if hard:
        raise mdl.AssumptionError("; ".join(hard))
    try:
        cfg = IntegratorConfig.from_dict(doc.get("integrator", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from exc
    out = LoadedConfig(model, cfg)
    if "initial" in doc:
        out.initial, out.trials, out.seed = _initial(doc["initial"], model.n)
    return out


def load_config(path: str) -> LoadedConfig:
    """Read and fully validate a JSON config; see parse_config for the layout."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return parse_config(doc)


# ---------------------------------------------------------------------------


def _emit(text: str, out: Optional[str], filename: str, force: bool):
    if out is None:
        sys.stdout.write(text)
        return
    path = os.path.join(out, filename)
    if os.path.exists(path) and not force:
        raise ex.OutputExistsError(f"{path} exists; pass --force to overwrite")
    os.makedirs(out, exist_ok=True)
    ex._atomic_write(path, text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _integrator(cfg: IntegratorConfig, args) -> IntegratorConfig:
    if args.tmax is not None:
        cfg = replace(cfg, t_max=args.tmax)
    if args.step is not None:
        cfg = replace(cfg, step=args.step)
    return cfg


def _need_config(args) -> LoadedConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    return load_config(args.config)


class UsageError(ValueError):
    pass


def cmd_validate(args) -> int:
    conf = _need_config(args)
    rep = mdl.validate(conf.model)
    sys.stdout.write(_dump({"config": json.loads(mdl.canonical_json(conf.echo())),
                            "report": rep.to_dict()}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    conf = _need_config(args)
    pol = conf.initial or ex._fixed(conf.model, 0.5)
    if pol.kind != "fixed":
        raise UsageError("simulate needs a fixed initial state; use mc for random initials")
    cfg = _integrator(conf.integrator, args)
    tr = dyn.simulate(conf.model, pol.state, cfg)
    if args.out is None:
        sys.stdout.write(dyn.trajectory_csv(tr))
        return EXIT_OK
    spec = ex.ScenarioSpec("simulate", conf.model, pol, integrator=cfg)
    ex.write_outputs(ex.ScenarioResult(spec, [tr]), args.out, force=args.force)
    return EXIT_OK


def cmd_classify(args) -> int:
    conf = _need_config(args)
    _emit(_dump(an.classify(conf.model).to_dict()), args.out, "stability.json", args.force)
    return EXIT_OK


def _try_certificate(p):
    try:
        return an.lyapunov_certificate(p), None
    except numerics.ContractError as exc:
        return None, str(exc)


def cmd_certify(args) -> int:
    conf = _need_config(args)
    m = conf.model
    cm = an.comparison_matrices(m, 1.0)
    doc = {}
    ok = True
    for key, p in (("flop", cm.p), ("flop_upper", cm.p_upper), ("hit", cm.p_hat)):
        cert, why = _try_certificate(p)
        if cert is None:
            doc[key] = {"constructed": False, "reason": why}
        else:
            doc[key] = {"constructed": True, **cert.to_dict()}
            ok &= cert.valid
    doc["witness"] = _witness_entry(m)
    if doc["witness"].get("constructed"):
        ok &= doc["witness"]["valid"]
    _emit(_dump(doc), args.out, "certificate.json", args.force)
    if not ok:
        return _fail("a constructed certificate failed its own validity check", EXIT_NUMERIC)
    return EXIT_OK


def _witness_entry(m: Model) -> dict:
    try:
        eq = an.interior_equilibrium(m)
    except numerics.ContractError as exc:
        return {"constructed": False, "reason": str(exc)}
    if eq is None:
        return {"constructed": False, "reason": "equilibrium system is singular"}
    try:
        w = an.instability_witness(m, eq)
    except (numerics.ContractError, an.WitnessError) as exc:
        return {"constructed": False, "reason": str(exc), "equilibrium": eq.to_dict()}
    return {"constructed": True, "equilibrium": eq.to_dict(), **w.to_dict()}


def cmd_equilibrium(args) -> int:
    conf = _need_config(args)
    eq = an.interior_equilibrium(conf.model)
    doc = {"equilibrium": None, "diagnostic": "equilibrium system is singular"} if eq is None \
        else {"equilibrium": eq.to_dict()}
    _emit(_dump(doc), args.out, "equilibrium.json", args.force)
    return EXIT_OK


def _scenario_spec(args, default_trials: Optional[int]) -> ex.ScenarioSpec:
    if args.name and args.config:
        raise UsageError("pass either --name or --config, not both")
    if args.name:
        try:
            spec = ex.builtin(args.name)
        except KeyError:
            raise UsageError(f"unknown builtin '{args.name}'; choose from {', '.join(ex.BUILTINS)}")
    elif args.config:
        conf = load_config(args.config)
        pol = conf.initial or ex._fixed(conf.model, 0.5)
        spec = ex.ScenarioSpec(os.path.splitext(os.path.basename(args.config))[0], conf.model, pol,
                               trials=conf.trials, seed=conf.seed, integrator=conf.integrator)
    else:
        raise UsageError("--name or --config is required")
    trials = args.trials if args.trials is not None else default_trials
    if trials is not None and trials < 1:
        raise UsageError("--trials must be positive")
    return ex.with_overrides(spec, seed=args.seed, trials=trials, t_max=args.tmax, step=args.step)


def _run_and_write(spec: ex.ScenarioSpec, args, force_mc: bool) -> int:
    out = args.out or os.path.join("results", spec.name)
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise ex.OutputExistsError(f"{out} is not empty; pass --force to overwrite")
    if force_mc:
        res = ex.ScenarioResult(spec, mc=ex.monte_carlo(spec))
    else:
        res = ex.run_scenario(spec)
    ex.write_outputs(res, out, force=args.force)
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_scenario(args) -> int:
    return _run_and_write(_scenario_spec(args, None), args, force_mc=False)


def cmd_mc(args) -> int:
    spec = _scenario_spec(args, None)
    if spec.initial.kind == "fixed":
        spec = replace(spec, initial=ex.InitialPolicy("uniform"))
    return _run_and_write(spec, args, force_mc=True)


COMMANDS = {
    "validate": (cmd_validate, "check a model config and echo it with defaults"),
    "simulate": (cmd_simulate, "integrate one trajectory"),
    "classify": (cmd_classify, "stability report for the hit and flop equilibria"),
    "certify": (cmd_certify, "Lyapunov certificates and interior instability witness"),
    "equilibrium": (cmd_equilibrium, "interior equilibrium of the delta = B x family"),
    "scenario": (cmd_scenario, "run a builtin or configured scenario"),
    "mc": (cmd_mc, "Monte Carlo basin sweep"),
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH")
    shared.add_argument("--out", metavar="DIR")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--trials", type=int)
    shared.add_argument("--name", metavar="BUILTIN")
    shared.add_argument("--tmax", type=float)
    shared.add_argument("--step", type=float)
    shared.add_argument("--force", action="store_true")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="contagionlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[shared], help=help_)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches our validation code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ex.OutputExistsError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except ArithmeticError as exc:
        return _fail(f"numeric failure: {exc}", EXIT_NUMERIC)
    except OSError as exc:
        return _fail(f"I/O failure: {exc}", EXIT_NUMERIC)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)


def _fail(message: str, code: int) -> int:
    print(f"contagionlab: error: {message}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
