"""Command-line front end: ``fragopt <command> --config run.json``.

Every run reads one JSON file (schema in the README), writes its CSV/JSON
outputs and a ``manifest.json`` to the output directory and prints one summary
line per result. Exit status is 0 on success, 2 on validation failures and 3
on numerical failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import platform
import sys
import traceback
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .asymptotics import (
    check_large_threshold_theorems,
    check_small_threshold_theorems,
    constants_F_D,
    corollary_verdict,
    gamma_constants,
    growth_ordering,
    inf_efficiency,
    regular_variation_index,
    rv_index,
    small_threshold_limit,
    stationary_overshoot,
)
from .energy import (
    TwoStepConfig,
    mean_energy_single,
    mean_energy_two_step,
    mean_energy_two_step_mc,
    write_csv,
)
from .errors import ConfigError, ExplosionGuard, InfiniteActivity, NumericalError, ValidationError
from .model import FiniteDiscrete, FragmentationModel, model_from_dict, validate
from .optimize import minimize_eta, write_sweep_csv
from .renewal import RenewalOptions
from .simulate import simulate_two_step, tree_energy_mean

SCHEMA_VERSION = 1
COMMANDS = ("validate", "energy", "simulate", "compare", "asymptotics", "optimize")
FORMATS = ("csv", "json")


@dataclasses.dataclass
class RunConfig:
    command: str
    models: dict[str, FragmentationModel]
    raw_models: dict
    first: str | None = None
    second: str | None = None
    model: str | None = None
    thresholds: dict = dataclasses.field(default_factory=dict)
    n_replicas: int = 10_000
    seed: int = 0
    trunc_eps: float | None = None
    renewal: RenewalOptions = dataclasses.field(default_factory=RenewalOptions)
    tree: bool = True
    event_log: bool = False
    optimize: dict = dataclasses.field(default_factory=dict)
    out_dir: Path = Path("fragopt_out")
    formats: tuple[str, ...] = FORMATS

    def get(self, name: str | None, role: str) -> FragmentationModel:
        if name is None:
            raise ConfigError(f"command {self.command!r} needs a {role!r} model name")
        try:
            return self.models[name]
        except KeyError:
            raise ConfigError(f"{role} model {name!r} is not defined in 'models'") from None

    def pair(self) -> tuple[FragmentationModel, FragmentationModel]:
        return self.get(self.first, "first"), self.get(self.second, "second")

    def threshold(self, key: str) -> float:
        if key not in self.thresholds:
            raise ConfigError(f"command {self.command!r} needs thresholds.{key}")
        v = float(self.thresholds[key])
        if not math.isfinite(v) or v <= 0:
            raise ConfigError(f"thresholds.{key} must be positive, got {v}")
        return v

    def eta_grid(self) -> list[float]:
        grid = self.thresholds.get("eta_grid")
        if not grid:
            raise ConfigError(f"command {self.command!r} needs a nonempty thresholds.eta_grid")
        return [float(x) for x in grid]


def load_config(path: str | os.PathLike, command: str, seed: int | None = None,
                out: str | None = None) -> tuple[RunConfig, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        d = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {d.get('schema_version')!r}")
    if "command" in d and d["command"] != command:
        raise ConfigError(f"config is for command {d['command']!r}, not {command!r}")
    raw_models = d.get("models")
    if not isinstance(raw_models, dict) or not raw_models:
        raise ConfigError("'models' must be a nonempty object of named models")
    models = {name: model_from_dict(spec, name) for name, spec in raw_models.items()}
    mc = d.get("mc", {})
    output = d.get("output", {})
    formats = tuple(output.get("formats", FORMATS))
    if not set(formats) <= set(FORMATS):
        raise ConfigError(f"output.formats must be a subset of {FORMATS}")
    renewal = RenewalOptions(
        n_samples=int(mc.get("renewal_samples", 20_000)),
        seed=int(mc.get("seed", 0) if seed is None else seed),
        cells=int(mc.get("renewal_cells", 400)),
        trunc_eps=mc.get("trunc_eps"),
    )
    cfg = RunConfig(
        command=command,
        models=models,
        raw_models=raw_models,
        first=d.get("first"),
        second=d.get("second"),
        model=d.get("model"),
        thresholds=d.get("thresholds", {}),
        n_replicas=int(mc.get("n_replicas", 10_000)),
        seed=renewal.seed,
        trunc_eps=mc.get("trunc_eps"),
        renewal=renewal,
        tree=bool(mc.get("tree", True)),
        event_log=bool(output.get("event_log", False)),
        optimize=d.get("optimize", {}),
        out_dir=Path(out if out is not None else output.get("directory", "fragopt_out")),
        formats=formats,
    )
    if cfg.n_replicas < 100:
        raise ConfigError("mc.n_replicas must be at least 100")
    return cfg, raw


class Run:
    """Output bookkeeping for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.files: list[str] = []
        self.notes: list[str] = []
        cfg.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.cfg.out_dir / name

    def json(self, name: str, obj) -> None:
        if "json" in self.cfg.formats:
            self.path(name).write_text(json.dumps(_strict(obj), indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, writer, *args) -> None:
        if "csv" in self.cfg.formats:
            writer(*args, self.path(name))

    def say(self, line: str) -> None:
        print(line)

    def note(self, line: str) -> None:
        self.notes.append(line)
        print(f"note: {line}", file=sys.stderr)


def _strict(obj):
    """Replace non-finite floats by the strings "inf", "-inf", "nan" (strict JSON)."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _strict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strict(v) for v in obj]
    return obj


def _fmt(x: float) -> str:
    return repr(float(x))


def _estimate_line(label: str, est) -> str:
    return f"{label} {est.method}: {_fmt(est.value)} +/- {_fmt(est.error)}"


def _tree(run: Run, m1, m2, tcfg: TwoStepConfig):
    """Branching-tree mean, or ``None`` when it cannot run for this model."""
    cfg = run.cfg
    if not cfg.tree:
        return None
    if not (isinstance(m1.nu, FiniteDiscrete) and (m2 is None or isinstance(m2.nu, FiniteDiscrete))):
        run.note("branching simulation skipped: infinite dislocation measure")
        return None
    try:
        return tree_energy_mean(m1, m2, tcfg, cfg.n_replicas, cfg.seed)
    except ExplosionGuard as exc:
        run.note(f"branching simulation skipped: {exc}")
        return None


def _thresholds_two_step(cfg: RunConfig) -> TwoStepConfig:
    eta = cfg.threshold("eta")
    if "eta0" in cfg.thresholds:
        eta0 = cfg.threshold("eta0")
    elif "lambda_gap" in cfg.thresholds:
        eta0 = eta * math.exp(-cfg.threshold("lambda_gap"))
    else:
        raise ConfigError("thresholds need eta0 or lambda_gap")
    try:
        return TwoStepConfig(eta, eta0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_validate(run: Run) -> int:
    out, status = {}, 0
    for name, model in run.cfg.models.items():
        rep = validate(model)
        out[name] = rep.as_dict()
        run.say(f"{name}: {'ok' if rep.ok else 'invalid'}"
                + (f" alpha={_fmt(rep.alpha)} C={_fmt(rep.C)} lattice={rep.lattice}" if rep.ok else
                   f" ({'; '.join(rep.violations)})"))
        if not rep.ok:
            status = 2
    run.json("validate.json", out)
    return status


def cmd_energy(run: Run) -> int:
    cfg = run.cfg
    rows = []
    if cfg.first is not None or cfg.second is not None:
        m1, m2 = cfg.pair()
        t = _thresholds_two_step(cfg)
        ests = [mean_energy_two_step(m1, m2, t, cfg.renewal),
                mean_energy_two_step_mc(m1, m2, t, cfg.n_replicas, cfg.seed, cfg.renewal, cfg.trunc_eps)]
        tree = _tree(run, m1, m2, t)
    else:
        m = cfg.get(cfg.model, "model")
        eta0 = cfg.threshold("eta0")
        t = TwoStepConfig(eta0, eta0)
        ests = [mean_energy_single(m, eta0, cfg.renewal)]
        tree = _tree(run, m, None, t)
    if tree is not None:
        ests.append(tree)
    for est in ests:
        rows.append((t.eta, t.eta0, est.method, est.value, est.error))
        run.say(_estimate_line(f"eta={_fmt(t.eta)} eta0={_fmt(t.eta0)}", est))
    run.csv("energy.csv", write_csv, rows)
    return 0


def cmd_simulate(run: Run) -> int:
    cfg = run.cfg
    if cfg.first is not None or cfg.second is not None:
        m1, m2 = cfg.pair()
        t = _thresholds_two_step(cfg)
    else:
        m1, m2 = cfg.get(cfg.model, "model"), None
        eta0 = cfg.threshold("eta0")
        t = TwoStepConfig(eta0, eta0)
    if not isinstance(m1.nu, FiniteDiscrete) or (m2 is not None and not isinstance(m2.nu, FiniteDiscrete)):
        raise InfiniteActivity("direct tree simulation needs finite dislocation measures")
    est = tree_energy_mean(m1, m2, t, cfg.n_replicas, cfg.seed)
    run.say(_estimate_line(f"eta={_fmt(t.eta)} eta0={_fmt(t.eta0)}", est))
    run.csv("simulate.csv", write_csv, [(t.eta, t.eta0, est.method, est.value, est.error)])
    if cfg.event_log and "csv" in cfg.formats:
        simulate_two_step(m1, m2 if m2 is not None else m1, t, cfg.seed, 0, event_log=run.path("events.csv"))
    return 0


def _report_csv(report, path) -> None:
    report.to_csv(path)


def cmd_compare(run: Run) -> int:
    cfg = run.cfg
    m1, m2 = cfg.pair()
    v = corollary_verdict(m1.alpha, m1.beta, m2.alpha, m2.beta)
    growth = growth_ordering(m1.alpha, m1.beta, m2.alpha, m2.beta)
    out = {
        "alpha": m1.alpha, "beta": m1.beta, "alpha_hat": m2.alpha, "beta_hat": m2.beta,
        "status": v.status.value, "row": v.row, "order": list(v.order) if v.order else None,
        "growth_order": list(growth), "rationale": v.rationale,
    }
    run.say(f"verdict: {v.status.value} row={v.row} order={out['order']} growth_order={out['growth_order']}")
    if "eta" in cfg.thresholds:
        t = _thresholds_two_step(cfg)
        energies = {
            "F12": mean_energy_two_step(m1, m2, t, cfg.renewal).value,
            "F1": mean_energy_single(m1, t.eta0, cfg.renewal).value,
            "F2": mean_energy_single(m2, t.eta0, cfg.renewal).value,
        }
        out["energies"] = energies
        out["observed_order"] = sorted(energies, key=energies.get)
        run.say(f"energies at eta={_fmt(t.eta)} eta0={_fmt(t.eta0)}: "
                + " ".join(f"{k}={_fmt(x)}" for k, x in energies.items()))
    if "lambda_gap" in cfg.thresholds and cfg.thresholds.get("eta_grid"):
        rep = check_small_threshold_theorems(m1, m2, cfg.threshold("lambda_gap"), cfg.eta_grid(),
                                             options=cfg.renewal)
        out["report_notes"] = rep.notes
        run.csv("compare_report.csv", _report_csv, rep)
        for tag in rep.tags():
            if not tag.startswith("excess"):  # ratio rows carry no sign
                run.say(f"{tag}: holds from eta <= {rep.holds_from(tag)}")
    run.json("compare.json", out)
    return 0


def cmd_asymptotics(run: Run) -> int:
    cfg = run.cfg
    out = {}
    if cfg.model is not None:
        m = cfg.get(cfg.model, "model")
        rec = {"alpha": m.alpha, "beta": m.beta, "C": m.C}
        if m.beta < m.alpha:
            rec["small_threshold_limit"] = small_threshold_limit(m)
        rec["stationary_overshoot_mass"] = stationary_overshoot(m).total_mass
        if not isinstance(m.nu, FiniteDiscrete):
            idx = rv_index(m)
            rec["rv_index"] = {"rho": idx.rho, "residual": idx.residual, "not_rv": idx.not_rv}
        out[m.name] = rec
        run.say(f"{m.name}: " + " ".join(f"{k}={_fmt(x)}" for k, x in rec.items() if isinstance(x, float)))
    if cfg.first is not None or cfg.second is not None:
        m1, m2 = cfg.pair()
        pair = {}
        if "lambda_gap" in cfg.thresholds:
            k = constants_F_D(m1, m2, cfg.threshold("lambda_gap"), cfg.renewal)
            pair["small_threshold"] = dataclasses.asdict(k)
            run.say(f"F={_fmt(k.F_lambda)} D={_fmt(k.D_lambda)} D_hat={_fmt(k.D_hat_lambda)}")
        if "gamma_exp" in cfg.thresholds:
            g = cfg.threshold("gamma_exp")
            rho, rho_h = regular_variation_index(m1), regular_variation_index(m2)
            gc = gamma_constants(rho, rho_h, g)
            eff = inf_efficiency(m1, m2)
            pair["large_threshold"] = {"rho": rho, "rho_hat": rho_h, "A": gc.A, "A_hat": gc.A_hat, "B": gc.B,
                                       "efficiency": eff.verdict.value}
            run.say(f"rho={_fmt(rho)} rho_hat={_fmt(rho_h)} A={_fmt(gc.A)} A_hat={_fmt(gc.A_hat)} "
                    f"B={_fmt(gc.B)} efficiency={eff.verdict.value}")
            if cfg.thresholds.get("eta_grid"):
                rep = check_large_threshold_theorems(m1, m2, g, cfg.eta_grid(), options=cfg.renewal)
                run.csv("asymptotics_report.csv", _report_csv, rep)
        out["pair"] = pair
    if not out:
        raise ConfigError("asymptotics needs 'model' or 'first'/'second'")
    run.json("asymptotics.json", out)
    return 0


def cmd_optimize(run: Run) -> int:
    cfg = run.cfg
    m1, m2 = cfg.pair()
    eta0 = cfg.threshold("eta0")
    res = minimize_eta(m1, m2, eta0, tol=float(cfg.optimize.get("tol", 1e-6)),
                       n_points=int(cfg.optimize.get("n_points", 41)), options=cfg.renewal)
    run.say(f"eta_star={_fmt(res.eta_star)} energy_star={_fmt(res.energy_star)} flag={res.boundary_flag.value}")
    if "json" in cfg.formats:
        run.path("optimize.json").write_text(res.to_json() + "\n")
    run.csv("sweep.csv", write_sweep_csv, res.sweep_table)
    return 0


HANDLERS = {
    "validate": cmd_validate,
    "energy": cmd_energy,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "asymptotics": cmd_asymptotics,
    "optimize": cmd_optimize,
}


def _write_manifest(run: Run, raw: bytes, status: int) -> None:
    cfg = run.cfg
    manifest = {
        "command": cfg.command,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "seeds": {"mc": cfg.seed, "renewal": cfg.renewal.seed},
        "versions": {"fragopt": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": sorted(run.files),
        "notes": run.notes,
        "exit_status": status,
    }
    (cfg.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the exception passed through."""
    name = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("fragopt.") and mod != "fragopt.errors":
            name = mod.split(".", 1)[1]
    return name


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fragopt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fragopt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override mc.seed")
        sp.add_argument("--out", default=None, help="override output.directory")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run = raw = None
    try:
        cfg, raw = load_config(args.config, args.command, args.seed, args.out)
        run = Run(cfg)
        status = HANDLERS[args.command](run)
    except (ValidationError, ValueError) as exc:
        print(f"fragopt: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = 2
    except NumericalError as exc:
        print(f"fragopt: {_origin(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        status = 3
    if run is not None:
        _write_manifest(run, raw, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
