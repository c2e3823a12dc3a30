"""Command-line runner: ``sgld-bea <kind> [--config FILE] [--out DIR] [--seed N]``.

Config files are INI text with one section per experiment kind. Keys not in
the kind's schema are rejected. Each table is written to
``<out>/<kind>_<table>.csv`` behind a ``#`` header that records the kind,
the config hash and the seed.

Exit codes: 0 when every gate passes, 2 when Monte Carlo is underpowered,
1 on any error or failed gate.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import math
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

from . import experiments as ex


class ConfigError(ValueError):
    pass


def _number(text: str):
    """Decimal -> float, ``p/q`` -> Fraction, ``inf`` -> math.inf."""
    text = text.strip()
    if text.lower() in ("inf", "infinity"):
        return math.inf
    if "/" in text:
        return Fraction(text)
    return float(text)


def _int(text: str):
    text = text.strip()
    if text.lower() in ("inf", "infinity"):
        return math.inf
    return int(text)


def _list(item: Callable):
    def parse(text: str):
        parts = [p for p in text.replace(",", " ").split() if p]
        if not parts:
            raise ValueError("empty list")
        return tuple(item(p) for p in parts)
    return parse


def _str(text: str) -> str:
    return text.strip()


Schema = Dict[str, Tuple[Callable, object]]

SCHEMAS: Dict[str, Schema] = {
    "order-study": {
        "beta": (_number, 1.0), "order": (int, 1), "etas": (_list(_number), (0.05, 0.1, 0.2, 0.3, 0.4)),
        "estimator": (_str, "exact"), "steps": (_int, math.inf), "replicas": (int, 10000), "seed": (int, 0),
        "x0": (float, 0.0), "sweep_eta": (_number, 0.2), "sweep_steps": (int, 30), "sweep_x0": (float, 3.0),
        "sweep_replicas": (int, 10000),
    },
    "density-compare": {
        "beta": (_number, 20), "eta": (_number, 0.5), "grid_min": (float, -1.0), "grid_max": (float, 1.0),
        "grid_points": (int, 201), "steps": (int, 10000), "replicas": (int, 10000), "bandwidth": (float, 0.1),
        "seed": (int, 0), "compare_window": (float, 0.6),
    },
    "gen-gap": {
        "n_list": (_list(int), (25, 50, 100, 200)), "var": (float, 1.0), "mean": (float, 0.0),
        "beta": (float, 10.0), "eta": (float, 0.1), "batch_size": (int, 5), "steps": (int, 200),
        "replicas": (int, 20000), "seed": (int, 7), "x0": (float, 0.0),
    },
    "stability": {
        "n_list": (_list(int), (50, 100, 200, 400)), "order": (int, 1), "eta": (_number, 0.1),
        "beta": (_number, 10), "var": (float, 1.0), "mean": (float, 0.0), "batch_size": (int, 5),
        "seed": (int, 3),
    },
    "ode-demo": {
        "rhs": (_str, "x1^2"), "order": (int, 4), "study_orders": (_list(int), (0, 1, 2, 3)),
        "etas": (_list(float), (0.01, 0.005, 0.0025, 0.00125)), "horizon": (float, 0.8),
        "curve_eta": (_number, Fraction(1, 6)), "curve_horizon": (float, 0.84), "y0": (float, 1.0),
    },
    "budget": {
        "eps": (float, 0.01), "orders": (_list(int), (1, 2, 3)), "C": (float, 1.0), "m": (float, 0.5),
        "M": (float, 1.0),
    },
}

RUNNERS: Dict[str, Callable[..., ex.Outcome]] = {
    "order-study": lambda **kw: ex.order_study_outcome(kw),
    "density-compare": ex.run_density_compare,
    "gen-gap": ex.run_gen_gap,
    "stability": ex.run_stability,
    "ode-demo": ex.run_ode_demo,
    "budget": ex.run_budget,
}

KINDS = tuple(SCHEMAS)


def _render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: Dict[str, object]

    def canonical(self) -> str:
        lines = [f"[{self.kind}]"] + [f"{k} = {_render(self.params[k])}" for k in sorted(self.params)]
        return "\n".join(lines) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    @property
    def seed(self) -> Optional[int]:
        return self.params.get("seed")


def parse_config(text: str, kind: str, seed: Optional[int] = None) -> ExperimentConfig:
    """Strictly parse ``text`` and return the resolved config for ``kind``."""
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if parser.defaults():
        raise ConfigError("keys outside a section are not allowed")
    for section in parser.sections():
        if section not in SCHEMAS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = sorted(set(parser[section]) - set(SCHEMAS[section]))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    schema = SCHEMAS[kind]
    params = {k: default for k, (_, default) in schema.items()}
    if parser.has_section(kind):
        for key, raw in parser[kind].items():
            try:
                params[key] = schema[key][0](raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"[{kind}] {key}: cannot parse {raw!r} ({exc})") from exc
    if seed is not None:
        if "seed" not in schema:
            raise ConfigError(f"{kind} has no random seed")
        params["seed"] = seed
    return ExperimentConfig(kind, params)


def load_config(path, kind: str, seed: Optional[int] = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), kind, seed)


def _cell(v) -> str:
    if hasattr(v, "dtype"):
        v = v.item()
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path: Path, cfg: ExperimentConfig, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# kind={cfg.kind}\n# config_sha256={cfg.digest}\n# seed={cfg.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def run(cfg: ExperimentConfig, out: Path) -> Tuple[int, ex.Outcome]:
    outcome = RUNNERS[cfg.kind](**cfg.params)
    out.mkdir(parents=True, exist_ok=True)
    gates = [(name, int(ok)) for name, ok in sorted(outcome.gates.items())]
    gates.append(("underpowered", int(outcome.underpowered)))
    write_table(out / f"{cfg.kind}_gates.csv", cfg, ["gate", "passed"], gates)
    for name, (header, rows) in outcome.tables.items():
        write_table(out / f"{cfg.kind}_{name}.csv", cfg, header, rows)
    if outcome.underpowered:
        return 2, outcome
    return (0 if outcome.passed else 1), outcome


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgld-bea", description="Run a modified-measure experiment and write CSVs.")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", type=Path, help="INI file with a [%s] section" % kind)
        p.add_argument("--out", type=Path, default=Path("results"))
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.kind, args.seed)
        else:
            cfg = parse_config("", args.kind, args.seed)
        code, outcome = run(cfg, args.out)
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, ok in sorted(outcome.gates.items()):
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    for note in outcome.notes:
        print(f"note: {note}")
    if code == 2:
        print("underpowered: Monte Carlo noise exceeds the signal", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
