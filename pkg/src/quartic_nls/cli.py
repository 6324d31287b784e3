"""Command line entry point.

Every command reads a flat configuration: dotted ``section.key = value``
lines from ``--config`` overridden by flags.  Section ``run`` holds
``seed``, ``out`` and ``threads``; the command's own section holds its
parameters.  Exit status: 0 pass, 1 verdict failure, 2 usage or numerical
error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import (FlowSpec, NonFiniteError, StepSizeError, TrajectoryRecord, VARIANTS, evolve_truncated,
                       gauge_deterministic, gauge_random)
from .experiments import KINDS, StudySpec, default_spec, run_study
from .functionals import (EtaCutoff, FunctionalSpec, QuadratureError, SpaceTimeField, s_functional,
                          strichartz_grid, strichartz_ratio)
from .randomness import GaussianEnsemble, derive_trajectory_seed
from .spectral import phase_mismatches

THREADS_ENV = "QUARTIC_NLS_THREADS"


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- typed keys

def _ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto"):
        return None
    return float(text)


def _choice(*options):
    def parse(text):
        if str(text) not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return str(text)
    parse.options = options
    return parse


RUN_KEYS = {"seed": int, "out": str, "threads": int}

COMMAND_KEYS = {
    "sample": {"N": int, "alpha": float},
    "evolve": {"variant": _choice(*VARIANTS), "N": int, "t": float, "dt": _optional_float, "stride": int,
               "alpha": float, "halving": _choice("probe", "full", "off"), "halving_rtol": float,
               "phase_resolution": float, "max_steps": int},
    "gauge": {"input": str, "kind": _choice("deterministic", "random"),
              "direction": _choice("forward", "inverse"), "phase_cutoff": int},
    "functional": {"which": _choice("S1", "S2", "S3", "strichartz"), "box": int, "N": int, "delta": float,
                   "s": float, "b": float, "samples": int},
    "study": {"kind": _choice(*KINDS), "N": _ints, "t": _floats, "samples": int, "fdr": float,
              "correlation_factor": float, "delta": float, "sobolev": float, "ladder": _ints,
              "alphas": _floats, "epsilon": float, "slope_window": float, "box": int, "s": float, "b": float,
              "tolerance": float, "bounded_ratio": float, "phase_resolution": float, "halving_rtol": float,
              "max_steps": int, "control": _bool},
    "phase-check": {"box": int},
}

DEFAULTS = {
    "sample": {"N": 16, "alpha": 0.0},
    "evolve": {"variant": "renormalized", "N": 16, "t": 0.1, "dt": None, "stride": 0, "alpha": 0.0,
               "halving": "probe", "halving_rtol": 1e-6, "phase_resolution": 0.35, "max_steps": 50_000_000},
    "gauge": {"kind": "random", "direction": "forward", "phase_cutoff": -1},
    "functional": {"which": "S1", "box": 16, "N": 32, "delta": 0.2, "s": -0.05, "b": 0.45, "samples": 1},
    "study": {"kind": "invariance"},
    "phase-check": {"box": 50},
}

# study keys renamed from StudySpec field names
STUDY_ALIASES = {"N": "cutoffs", "t": "times"}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    """Resolved configuration of one command invocation."""

    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "out"
    threads: int = 1

    def to_text(self) -> str:
        lines = [f"run.{k} = {_format(getattr(self, k))}" for k in sorted(RUN_KEYS)]
        lines += [f"{self.command}.{k} = {_format(v)}" for k, v in sorted(self.params.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, command: str, text: str) -> "RunConfig":
        cfg = cls(command)
        cfg.update(parse_config_text(text), origin="config")
        return cfg

    def update(self, entries: dict, origin: str):
        keys = COMMAND_KEYS[self.command]
        for dotted, raw in entries.items():
            section, _, key = dotted.partition(".")
            try:
                if section == "run" and key in RUN_KEYS:
                    setattr(self, key, RUN_KEYS[key](raw))
                elif section == self.command and key in keys:
                    self.params[key] = keys[key](raw)
                else:
                    raise UsageError(f"unknown {origin} key {dotted!r} for command {self.command!r}")
            except (TypeError, ValueError) as err:
                if isinstance(err, UsageError):
                    raise
                raise UsageError(f"bad value for {origin} key {dotted!r}: {err}") from None

    def resolved(self) -> dict:
        """Everything that determines the results.

        ``out`` and ``threads`` only say where and how fast, so they are left
        out and reruns elsewhere stay byte-identical.
        """
        return {"command": self.command, "params": {k: list(v) if isinstance(v, tuple) else v
                                                     for k, v in sorted(self.params.items())},
                "seed": self.seed}

    def input_hash(self, *blobs: bytes) -> str:
        h = hashlib.sha256()
        text = "\n".join(f"{self.command}.{k} = {_format(v)}" for k, v in sorted(self.params.items()))
        h.update(f"run.seed = {self.seed}\n{text}\n".encode())
        for b in blobs:
            h.update(b"blob %d\0" % len(b) + b)
        return h.hexdigest()


def parse_config_text(text: str) -> dict:
    entries = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {i}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." not in key:
            raise UsageError(f"config line {i}: key {key!r} needs a section")
        entries[key] = value
    return entries


# ---------------------------------------------------------------- commands

def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _meta(cfg: RunConfig, *blobs: bytes) -> dict:
    return {"config": cfg.resolved(), "input_hash": cfg.input_hash(*blobs)}


def cmd_sample(cfg: RunConfig, out: Path) -> tuple[int, str]:
    p = cfg.params
    e = GaussianEnsemble(cfg.seed, p["N"], p["alpha"])
    f = e.field()
    payload = {**_meta(cfg), "cutoff": f.cutoff, "coeffs": [[float(z.real), float(z.imag)] for z in f.coeffs]}
    _write_json(out / "field.json", payload)
    return 0, f"sample: N={f.cutoff} seed={cfg.seed} mass={f.mass():.6g} -> {out / 'field.json'}"


def cmd_evolve(cfg: RunConfig, out: Path) -> tuple[int, str]:
    p = cfg.params
    spec = FlowSpec(p["variant"], p["N"], p["t"], dt=p["dt"], sample_stride=p["stride"] or None,
                    phase_resolution=p["phase_resolution"], halving=p["halving"],
                    halving_rtol=p["halving_rtol"], max_steps=p["max_steps"])
    e = GaussianEnsemble(cfg.seed, p["N"], p["alpha"])
    rec = evolve_truncated(e.field(), spec, e, seed=cfg.seed)
    (out / "trajectory.csv").write_text(rec.dumps(meta=_meta(cfg)))
    d = rec.diagnostics
    return 0, (f"evolve: {p['variant']} N={p['N']} t={p['t']} steps={d['steps']} dt={d['dt']:.3e} "
               f"mass_drift={d['mass_drift']:.2e} -> {out / 'trajectory.csv'}")


def cmd_gauge(cfg: RunConfig, out: Path) -> tuple[int, str]:
    p = cfg.params
    if "input" not in p:
        raise UsageError("gauge needs gauge.input (a trajectory.csv written by 'evolve')")
    blob = Path(p["input"]).read_bytes()
    rec = TrajectoryRecord.loads(blob.decode())
    if p["kind"] == "deterministic":
        res = gauge_deterministic(rec, p["direction"])
    else:
        if rec.ensemble is None:
            raise UsageError("the input trajectory carries no Gaussian ensemble for the random gauge")
        cut = None if p["phase_cutoff"] < 0 else p["phase_cutoff"]
        res = gauge_random(rec, rec.ensemble, cut, p["direction"])
    (out / "trajectory.csv").write_text(res.dumps(meta=_meta(cfg, blob)))
    return 0, f"gauge: {p['kind']}-{p['direction']} on {len(rec)} samples -> {out / 'trajectory.csv'}"


def cmd_functional(cfg: RunConfig, out: Path) -> tuple[int, str]:
    p = cfg.params
    M = p["samples"]
    if M < 1:
        raise UsageError("functional.samples must be >= 1")
    vals = []
    for r in range(M):
        seed = cfg.seed if M == 1 else derive_trajectory_seed(cfg.seed, r)
        if p["which"] == "strichartz":
            e = GaussianEnsemble(seed, p["N"])
            window = EtaCutoff(p["delta"])
            times = strichartz_grid(p["N"], window)
            vals.append(strichartz_ratio(SpaceTimeField.linear(e.field(), times), window))
        else:
            e = GaussianEnsemble(seed, p["box"])
            spec = FunctionalSpec(s=p["s"], b=p["b"], delta=p["delta"], box=p["box"])
            vals.append(s_functional(int(p["which"][1]), spec, e))
    vals = np.array(vals)
    value = float(vals.mean())
    err = float(vals.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    h = cfg.input_hash()
    cols = ["which", "box", "N", "delta", "s", "b", "samples", "seed", "value", "std_error", "input_hash"]
    row = [p["which"], p["box"], p["N"], repr(p["delta"]), repr(p["s"]), repr(p["b"]), M, cfg.seed,
           repr(value), repr(err), h]
    (out / "functional.csv").write_text(",".join(cols) + "\n" + ",".join(str(v) for v in row) + "\n")
    _write_json(out / "report.json", {**_meta(cfg), "value": value, "std_error": err,
                                      "values": [float(v) for v in vals]})
    return 0, f"functional: {p['which']} = {value:.6g} +- {err:.2g} ({M} samples) -> {out / 'functional.csv'}"


def study_spec(cfg: RunConfig) -> StudySpec:
    p = dict(cfg.params)
    kind = p.pop("kind")
    kw = {STUDY_ALIASES.get(k, k): v for k, v in p.items()}
    return default_spec(kind, seed=cfg.seed, **kw)


def cmd_study(cfg: RunConfig, out: Path) -> tuple[int, str]:
    spec = study_spec(cfg)
    rep = run_study(spec, cfg.threads)
    meta = _meta(cfg)
    rep.cells = [{**row, "input_hash": meta["input_hash"]} for row in rep.cells]
    rep.write(out, meta)
    failed = [k for k, v in rep.verdicts.items() if not v["passed"]]
    status = "PASS" if rep.passed else "FAIL"
    detail = f" failed: {', '.join(failed)}" if failed else ""
    return (0 if rep.passed else 1), f"study {spec.kind}: {status} ({len(rep.verdicts)} verdicts){detail}"


def cmd_phase_check(cfg: RunConfig, out: Path) -> tuple[int, str]:
    box = cfg.params["box"]
    if box < 0:
        raise UsageError("phase-check.box must be >= 0")
    bad, total = phase_mismatches(box)
    _write_json(out / "report.json", {**_meta(cfg), "mismatches": bad, "tuples": total})
    return (0 if bad == 0 else 1), f"phase-check: {bad} mismatches / all tuples ({total} checked, box {box})"


COMMANDS = {
    "sample": cmd_sample,
    "evolve": cmd_evolve,
    "gauge": cmd_gauge,
    "functional": cmd_functional,
    "study": cmd_study,
    "phase-check": cmd_phase_check,
}


# ---------------------------------------------------------------- argument parsing

COMMAND_HELP = {
    "sample": "draw white noise coefficients to field.json",
    "evolve": "integrate one truncated flow to trajectory.csv",
    "gauge": "apply the deterministic or random gauge to a trajectory",
    "functional": "evaluate S1, S2, S3 or the Strichartz ratio",
    "study": "run a Monte Carlo study and write report.json and cells.csv",
    "phase-check": "compare the phase with its factored form on a box",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quartic-nls",
                                     description="Truncated 4NLS flows with white noise data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMAND_KEYS.items():
        sp = sub.add_parser(name, help=COMMAND_HELP[name])
        sp.add_argument("--config", help="flat 'section.key = value' file; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out")
        for key, parse in keys.items():
            opt = "--" + key.replace("_", "-")
            extra = {"choices": parse.options} if hasattr(parse, "options") else {}
            sp.add_argument(opt, dest=f"param_{key}", **extra)
    return parser


def resolve(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(args.command, dict(DEFAULTS[args.command]))
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as err:
            raise UsageError(f"cannot read config: {err}") from None
        cfg.update(parse_config_text(text), origin="config")
    env = os.environ.get(THREADS_ENV)
    if env:
        cfg.update({"run.threads": env}, origin="environment")
    flags = {f"{args.command}.{k[6:]}": v for k, v in vars(args).items() if k.startswith("param_") and v is not None}
    flags.update({f"run.{k}": getattr(args, k) for k in RUN_KEYS if getattr(args, k) is not None})
    cfg.update(flags, origin="flag")
    if cfg.threads < 1:
        raise UsageError("run.threads must be >= 1")
    if cfg.command == "study" and "kind" not in cfg.params:
        raise UsageError("study needs study.kind")
    return cfg


def main(argv=None) -> int:
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except SystemExit as err:  # argparse
        return int(err.code or 0) and 2
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        code, line = COMMANDS[cfg.command](cfg, out)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except StepSizeError as err:
        print(f"step-size error: {err}", file=sys.stderr)
        return 2
    except (NonFiniteError, QuadratureError) as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
