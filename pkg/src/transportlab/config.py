"""Experiment configuration: strict INI-style parsing and canonical serialisation.

Grammar
-------
Blank lines and lines starting with '#' or ';' are ignored.  Sections are
introduced by ``[name]``; every other line is ``key = value``.  Lists are
comma separated.  Site lists are ``index:re:im`` triples separated by ';'
(``im`` may be omitted), interval lists are ``a:b`` pairs separated by ';'.
Unknown sections or keys are errors, and every error carries its line.

A JSON document (the ``config`` member of ``run_meta.json``) is accepted as
well, so a finished run can be replayed from its metadata.
"""
from __future__ import annotations

import configparser
import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from . import potentials as pot
from .lattice import KINDS, PotentialSpec, WavePacket

EXPERIMENTS = ("profile", "moments", "beta", "s_alpha", "premise_scan", "certificate",
               "tracemap", "band_scan", "critical_scan", "sublinearity")
METHODS = ("resolvent", "time-quadrature", "eigen-exact")
RULES = {"period_doubling": pot.PERIOD_DOUBLING, "thue_morse": pot.THUE_MORSE}


class ConfigError(ValueError):
    """All violations found in one config, each as (line, key, message)."""

    def __init__(self, problems: list[tuple[int | None, str, str]]):
        self.problems = sorted(problems, key=lambda p: (p[0] is None, p[0] or 0))
        super().__init__("\n".join(self.format_lines()))

    def format_lines(self) -> list[str]:
        out = []
        for line, key, msg in self.problems:
            where = f"line {line}" if line is not None else "config"
            out.append(f"{where}: {key}: {msg}")
        return out


# --- value coercers --------------------------------------------------------

def _float(v) -> float:
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


def _int(v) -> int:
    if isinstance(v, float) and not v.is_integer():
        raise ValueError("must be an integer")
    return int(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("true", "yes", "1", "on"):
        return True
    if s in ("false", "no", "0", "off"):
        return False
    raise ValueError("must be true or false")


def _floats(v) -> list[float]:
    if isinstance(v, (list, tuple)):
        return [_float(x) for x in v]
    parts = [p.strip() for p in str(v).split(",") if p.strip()]
    if not parts:
        raise ValueError("must be a non-empty list of numbers")
    return [_float(p) for p in parts]


def _sites(v) -> list[list[float]]:
    if isinstance(v, (list, tuple)):
        rows = [list(r) for r in v]
    else:
        rows = [[p.strip() for p in item.split(":")] for item in str(v).split(";") if item.strip()]
    out = []
    for r in rows:
        if len(r) not in (2, 3):
            raise ValueError("sites are index:re[:im] triples")
        out.append([_int(r[0]), _float(r[1]), _float(r[2]) if len(r) == 3 else 0.0])
    if not out:
        raise ValueError("at least one site is required")
    idx = [r[0] for r in out]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate site index")
    return out


def _intervals(v) -> list[list[float]]:
    if isinstance(v, (list, tuple)):
        rows = [list(r) for r in v]
    else:
        rows = [[p.strip() for p in item.split(":")] for item in str(v).split(";") if item.strip()]
    out = []
    for r in rows:
        if len(r) == 1:
            r = [r[0], r[0]]
        if len(r) != 2:
            raise ValueError("intervals are a:b pairs")
        a, b = _float(r[0]), _float(r[1])
        if a > b:
            raise ValueError("interval with a > b")
        out.append([a, b])
    if not out:
        raise ValueError("at least one interval is required")
    return out


def _choice(options) -> Callable[[Any], str]:
    def f(v):
        s = str(v).strip()
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return f


def _opt(conv):
    def f(v):
        if v is None or (isinstance(v, str) and v.strip().lower() in ("", "none")):
            return None
        return conv(v)
    return f


@dataclass(frozen=True)
class Key:
    conv: Callable
    default: Any = None
    required: bool = False
    check: Callable[[Any], str | None] | None = None


def _range(lo=None, hi=None, lo_open=False, hi_open=False):
    def chk(x):
        vals = x if isinstance(x, list) else [x]
        for v in vals:
            if v is None:
                continue
            if lo is not None and (v < lo or (lo_open and v == lo)):
                return f"out of range: {v} (must be {'>' if lo_open else '>='} {lo})"
            if hi is not None and (v > hi or (hi_open and v == hi)):
                return f"out of range: {v} (must be {'<' if hi_open else '<='} {hi})"
        return None
    return chk


SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "kind": Key(_choice(EXPERIMENTS), required=True),
        "method": Key(_choice(METHODS), "resolvent"),
        "cross_check": Key(_bool, False),
        "seed": Key(_int, 0, check=_range(0)),
        "output": Key(str, "out"),
    },
    "potential": {
        "kind": Key(_choice(KINDS), required=True),
        "coupling": Key(_float, 0.0, check=_range(0)),
        "theta": Key(_float, float(pot.GOLDEN_THETA), check=_range(0, 1, True, True)),
        "phase": Key(_float, 0.0, check=_range(0, 1, False, True)),
        "sampler": Key(_choice(tuple(pot.SAMPLERS)), "cosine"),
        "substitution": Key(_opt(_choice(tuple(RULES))), None),
        "block_plus": Key(_opt(_floats), None),
        "block_minus": Key(_opt(_floats), None),
        "bernoulli": Key(_float, 0.5, check=_range(0, 1, True, True)),
        "rng_seed": Key(_int, 0, check=_range(0)),
        "constant": Key(_float, 0.0),
        "table": Key(_opt(_floats), None),
        "table_offset": Key(_int, 0),
    },
    "state": {
        "sites": Key(_sites, [[0, 1.0, 0.0]]),
        "sites2": Key(_opt(_sites), None),
        "x": Key(_float, 1.0),
        "y": Key(_float, 0.0),
    },
    "times": {
        "T": Key(_opt(_float), None, check=_range(0, lo_open=True)),
        "start": Key(_float, 10.0, check=_range(0, lo_open=True)),
        "stop": Key(_float, 200.0, check=_range(0, lo_open=True)),
        "count": Key(_int, 8, check=_range(1)),
        "geometric": Key(_bool, True),
    },
    "parameters": {
        "p": Key(_floats, [2.0], check=_range(0, lo_open=True)),
        "alpha": Key(_float, 0.2, check=_range(0)),
        "m": Key(_floats, [2.0, 4.0, 6.0], check=_range(1, lo_open=True)),
        "C": Key(_float, 10.0, check=_range(0, lo_open=True)),
        "eps0": Key(_opt(_float), None, check=_range(0, lo_open=True)),
        "delta": Key(_float, 0.1, check=_range(0, 0.1, lo_open=True)),
        "k_min": Key(_int, 3, check=_range(1)),
        "k_max": Key(_int, 10, check=_range(3, 20)),
        "omegas": Key(_int, 32, check=_range(1)),
        "two_sided": Key(_bool, False),
        "slack": Key(_float, 0.05, check=_range(0)),
        "measure": Key(_bool, False),
    },
    "box": {
        "tol": Key(_float, 1e-6, check=_range(0, 1, True, True)),
        "margin": Key(_int, 16, check=_range(0)),
        "L_max": Key(_opt(_int), None, check=_range(1)),
        "L": Key(_opt(_int), None, check=_range(1)),
        "leakage_guard": Key(_float, 1e-4, check=_range(0, lo_open=True)),
    },
    "energy": {
        "E_min": Key(_float, -3.0),
        "E_max": Key(_float, 3.0),
        "step": Key(_float, 1e-3, check=_range(0, lo_open=True)),
        "n_max": Key(_int, 10**4, check=_range(1)),
        "threshold": Key(_float, 50.0, check=_range(0, lo_open=True)),
        "intervals": Key(_opt(_intervals), None),
        "tol": Key(_float, 1e-10, check=_range(0, lo_open=True)),
    },
}

REQUIRED_SECTIONS = ("experiment", "potential")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; `values` holds every resolved key by section."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def kind(self) -> str:
        return self.values["experiment"]["kind"]

    def potential(self) -> PotentialSpec:
        v = self.values["potential"]
        return PotentialSpec(
            v["kind"], coupling=v["coupling"], theta=v["theta"], phase=v["phase"], sampler=v["sampler"],
            rules=RULES[v["substitution"]] if v["substitution"] else None,
            block_plus=tuple(v["block_plus"] or ()), block_minus=tuple(v["block_minus"] or ()),
            bernoulli=v["bernoulli"], rng_seed=v["rng_seed"], constant=v["constant"],
            table=tuple(v["table"] or ()), table_offset=v["table_offset"],
        )

    def state(self, key: str = "sites") -> WavePacket:
        rows = self.values["state"][key]
        return WavePacket.from_sites({int(n): complex(re_, im) for n, re_, im in rows})

    def T_grid(self) -> list[float]:
        import numpy as np
        t = self.values["times"]
        if t["count"] == 1:
            return [t["start"]]
        grid = np.geomspace if t["geometric"] else np.linspace
        return [float(x) for x in grid(t["start"], t["stop"], t["count"])]

    def single_T(self) -> float:
        t = self.values["times"]
        return t["T"] if t["T"] is not None else t["stop"]

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.values))


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = i
            continue
        m = re.match(r"([^=:#;\s][^=]*?)\s*=", s)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip()), i)
    return lines


def _raw_from_ini(text: str) -> tuple[dict, dict, list]:
    lines = _line_numbers(text)
    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
        inline_comment_prefixes=None, strict=True, empty_lines_in_values=False,
    )
    parser.optionxform = str    # keys are case-sensitive (T, C, L_max)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        return {}, lines, [(line, "syntax", str(exc).splitlines()[0])]
    raw = {sec: dict(parser[sec]) for sec in parser.sections()}
    return raw, lines, []


def _validate(raw: dict, lines: dict) -> ExperimentConfig:
    problems: list[tuple[int | None, str, str]] = []
    values: dict[str, dict] = {}
    for sec in raw:
        if sec not in SCHEMA:
            problems.append((lines.get((sec, "")), sec, "unknown section"))
    for sec in REQUIRED_SECTIONS:
        if sec not in raw:
            problems.append((None, sec, "missing required section"))
    for sec, keys in SCHEMA.items():
        given = raw.get(sec, {})
        out = {}
        for k in given:
            if k not in keys:
                problems.append((lines.get((sec, k)), f"{sec}.{k}", "unknown key"))
        for k, spec in keys.items():
            line = lines.get((sec, k))
            if k in given:
                try:
                    val = spec.conv(given[k])
                except (TypeError, ValueError) as exc:
                    problems.append((line, f"{sec}.{k}", f"invalid value {given[k]!r}: {exc}"))
                    continue
                if spec.check is not None:
                    msg = spec.check(val)
                    if msg:
                        problems.append((line, f"{sec}.{k}", msg))
                        continue
                out[k] = val
            elif spec.required and sec in raw:
                problems.append((lines.get((sec, "")), f"{sec}.{k}", "missing required key"))
            else:
                out[k] = json.loads(json.dumps(spec.default))
        values[sec] = out
    if not problems:
        problems += _cross_checks(values, lines)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(values)


def _cross_checks(v: dict, lines: dict) -> list:
    out = []
    pk = v["potential"]["kind"]
    where = lambda sec, key: lines.get((sec, key), lines.get((sec, "")))
    if pk == "substitution" and not v["potential"]["substitution"]:
        out.append((where("potential", "kind"), "potential.substitution", "required for kind = substitution"))
    if pk == "polymer" and not (v["potential"]["block_plus"] and v["potential"]["block_minus"]):
        out.append((where("potential", "kind"), "potential.block_plus", "polymer needs block_plus and block_minus"))
    if pk == "table" and not v["potential"]["table"]:
        out.append((where("potential", "kind"), "potential.table", "required for kind = table"))
    t = v["times"]
    if t["stop"] < t["start"]:
        out.append((where("times", "stop"), "times.stop", "must be >= times.start"))
    kind = v["experiment"]["kind"]
    if kind in ("beta", "s_alpha", "sublinearity") and t["count"] < 6:
        out.append((where("times", "count"), "times.count", "fits need at least 6 grid points"))
    if kind in ("beta", "s_alpha", "sublinearity") and not t["geometric"]:
        out.append((where("times", "geometric"), "times.geometric", "fits need a geometric grid"))
    if kind == "premise_scan" and not 0 < v["parameters"]["alpha"] < 1:
        out.append((where("parameters", "alpha"), "parameters.alpha", "out of range: must lie in (0, 1)"))
    if kind == "s_alpha" and not 0 < v["parameters"]["alpha"] <= 1:
        out.append((where("parameters", "alpha"), "parameters.alpha", "out of range: must lie in (0, 1]"))
    if kind == "certificate" and not v["energy"]["intervals"]:
        out.append((where("energy", "intervals"), "energy.intervals", "certificate needs energy intervals"))
    if kind == "sublinearity" and not v["state"]["sites2"]:
        out.append((where("state", "sites2"), "state.sites2", "sublinearity needs a second state"))
    if kind == "critical_scan" and pk != "polymer":
        out.append((where("potential", "kind"), "potential.kind", "critical_scan needs a polymer potential"))
    if kind == "tracemap" and v["parameters"]["k_min"] > v["parameters"]["k_max"]:
        out.append((where("parameters", "k_min"), "parameters.k_min", "must be <= k_max"))
    if v["energy"]["E_max"] < v["energy"]["E_min"]:
        out.append((where("energy", "E_max"), "energy.E_max", "must be >= E_min"))
    if v["experiment"]["method"] == "eigen-exact" and (v["box"]["L"] or 0) > 300:
        out.append((where("box", "L"), "box.L", "eigen-exact is limited to L <= 300"))
    if not out:
        try:
            ExperimentConfig(v).potential()
            ExperimentConfig(v).state()
        except ValueError as exc:
            out.append((None, "potential", str(exc)))
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Validated config from INI text or a JSON document; raises ConfigError listing every violation."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([(exc.lineno, "syntax", exc.msg)]) from None
        raw = doc.get("config", doc) if isinstance(doc, dict) else None
        if not isinstance(raw, dict) or not all(isinstance(s, dict) for s in raw.values()):
            raise ConfigError([(None, "syntax", "JSON config must map sections to key/value objects")])
        return _validate(raw, {})
    raw, lines, problems = _raw_from_ini(text)
    if problems:
        raise ConfigError(problems)
    return _validate(raw, lines)
