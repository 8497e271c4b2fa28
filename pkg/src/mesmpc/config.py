"""Scenario files (INI-style), run configuration and validation."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .mes import frequency_violations, DitherChannel
from .servo import (
    LearnedParam,
    MpcTuning,
    Scenario,
    ServoParams,
    canned_scenarios,
)

OVERRIDE_KEYS = ("rho", "g", "N_E", "eps_factor", "max_iterations", "q_nominal")


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violated check as ``(module, message)``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"[{m}] {msg}" for m, msg in self.problems))


@dataclass
class RunConfig:
    scenario: str
    out_dir: Path = Path("out")
    overrides: dict = field(default_factory=dict)
    dithers: dict = field(default_factory=dict)
    learning: bool | None = None
    steps: int | None = None


def _num(text: str):
    v = float(text)
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def scenario_to_ini(s: Scenario) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["scenario"] = {
        "name": s.name,
        "learning": _fmt(s.learning),
        "duration_steps": _fmt(s.duration_steps),
        "amplitude": _fmt(s.amplitude),
        "period": _fmt(s.period),
        "dt_mpc": _fmt(s.dt_mpc),
    }
    cp["true"] = {f.name: _fmt(getattr(s.true_params, f.name)) for f in fields(ServoParams)}
    cp["assumed"] = {f.name: _fmt(getattr(s.assumed_params, f.name)) for f in fields(ServoParams)}
    cp["mpc"] = {f.name: _fmt(getattr(s.tuning, f.name)) for f in fields(MpcTuning)}
    learning = {
        "N_E": _fmt(s.n_e),
        "eps_factor": _fmt(s.eps_factor),
        "max_iterations": _fmt(s.max_iterations),
    }
    if s.q_nominal is not None:
        learning["q_nominal"] = _fmt(s.q_nominal)
    cp["learning"] = learning
    for p in s.learned:
        cp[f"dither.{p.name}"] = {"a": _fmt(p.a), "omega": _fmt(p.omega)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _params(section, base: ServoParams, where: str) -> ServoParams:
    names = {f.name for f in fields(ServoParams)}
    vals = {}
    for k, v in section.items():
        if k not in names:
            raise ConfigError([("servo", f"unknown parameter {k!r} in [{where}]")])
        vals[k] = float(v)
    return replace(base, **vals)


def parse_scenario(text: str) -> Scenario:
    """Scenario from INI text.

    ``[scenario] base = <canned name>`` starts from a canned scenario; the
    remaining sections override it key by key.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([("cli", f"cannot parse scenario file: {exc}")]) from exc
    sc = cp["scenario"] if cp.has_section("scenario") else {}
    base_name = sc.get("base", sc.get("name", "nominal"))
    canned = {c.name: c for c in canned_scenarios()}
    s = canned.get(base_name, canned["nominal"])
    try:
        if "name" in sc:
            s = replace(s, name=sc["name"])
        if "learning" in sc:
            s = replace(s, learning=cp.getboolean("scenario", "learning"))
        for key in ("duration_steps",):
            if key in sc:
                s = replace(s, **{key: int(sc[key])})
        for key in ("amplitude", "period", "dt_mpc"):
            if key in sc:
                s = replace(s, **{key: float(sc[key])})
        if cp.has_section("true"):
            s = replace(s, true_params=_params(cp["true"], s.true_params, "true"))
        if cp.has_section("assumed"):
            s = replace(s, assumed_params=_params(cp["assumed"], s.assumed_params, "assumed"))
        if cp.has_section("mpc"):
            tnames = {f.name: f for f in fields(MpcTuning)}
            vals = {}
            for k, v in cp["mpc"].items():
                if k not in tnames:
                    raise ConfigError([("mpc", f"unknown key {k!r} in [mpc]")])
                cur = getattr(MpcTuning(), k)
                vals[k] = cp.getboolean("mpc", k) if isinstance(cur, bool) else type(cur)(_num(v))
            s = replace(s, tuning=replace(s.tuning, **vals))
        if cp.has_section("learning"):
            lv = cp["learning"]
            if "N_E" in lv:
                s = replace(s, N_E=int(lv["N_E"]))
            if "eps_factor" in lv:
                s = replace(s, eps_factor=float(lv["eps_factor"]))
            if "max_iterations" in lv:
                s = replace(s, max_iterations=int(lv["max_iterations"]))
            if "q_nominal" in lv:
                s = replace(s, q_nominal=float(lv["q_nominal"]))
        dith = [sec for sec in cp.sections() if sec.startswith("dither.")]
        if dith:
            s = replace(s, learned=tuple(
                LearnedParam(sec.split(".", 1)[1], float(cp[sec]["a"]), float(cp[sec]["omega"]))
                for sec in dith
            ))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError([("cli", f"bad scenario value: {exc}")]) from exc
    return s


def load_scenario(name_or_path: str) -> Scenario:
    for c in canned_scenarios():
        if c.name == name_or_path:
            return c
    path = Path(name_or_path)
    if not path.is_file():
        names = ", ".join(c.name for c in canned_scenarios())
        raise ConfigError([("cli", f"no canned scenario or file named {name_or_path!r} (canned: {names})")])
    return parse_scenario(path.read_text())


def apply_overrides(s: Scenario, overrides: dict, dithers: dict | None = None,
                    learning: bool | None = None, steps: int | None = None) -> Scenario:
    unknown = set(overrides) - set(OVERRIDE_KEYS)
    if unknown:
        raise ConfigError([("cli", f"unknown override {k!r}") for k in sorted(unknown)])
    if "rho" in overrides:
        s = replace(s, tuning=replace(s.tuning, rho=float(overrides["rho"])))
    if "g" in overrides:
        g = float(overrides["g"])
        s = replace(s, true_params=replace(s.true_params, g=g),
                    assumed_params=replace(s.assumed_params, g=g))
    if "N_E" in overrides:
        s = replace(s, N_E=int(overrides["N_E"]))
    if "eps_factor" in overrides:
        s = replace(s, eps_factor=float(overrides["eps_factor"]))
    if "max_iterations" in overrides:
        s = replace(s, max_iterations=int(overrides["max_iterations"]))
    if "q_nominal" in overrides:
        s = replace(s, q_nominal=float(overrides["q_nominal"]))
    if dithers:
        learned = {p.name: p for p in s.learned}
        for name, (a, omega) in dithers.items():
            learned[name] = LearnedParam(name, float(a), float(omega))
        s = replace(s, learned=tuple(learned.values()))
    if learning is not None:
        s = replace(s, learning=learning)
    if steps is not None:
        s = replace(s, duration_steps=int(steps))
    return s


def validate_scenario(s: Scenario) -> list[tuple[str, str]]:
    """Every violated invariant as ``(module, message)``; empty when the scenario is usable."""
    probs = []
    for which, p in (("true", s.true_params), ("assumed", s.assumed_params)):
        for f in fields(ServoParams):
            v = getattr(p, f.name)
            if not math.isfinite(v):
                probs.append(("servo", f"{which} {f.name} is not finite"))
            elif v <= 0 and not (which == "true" and f.name == "beta_l"):
                probs.append(("servo", f"{which} {f.name} must be positive (got {v})"))
    t = s.tuning
    if t.N < 1:
        probs.append(("mpc", f"N must be >= 1 (got {t.N})"))
    if not 1 <= t.N_u <= t.N:
        probs.append(("mpc", f"N_u must satisfy 1 <= N_u <= N (got N_u={t.N_u}, N={t.N})"))
    if not 0 <= t.N_cu <= t.N:
        probs.append(("mpc", f"N_cu must satisfy 0 <= N_cu <= N (got N_cu={t.N_cu}, N={t.N})"))
    if not 0 <= t.N_c <= t.N - 1:
        probs.append(("mpc", f"N_c must satisfy 0 <= N_c <= N-1 (got N_c={t.N_c}, N={t.N})"))
    if not t.rho > 0:
        probs.append(("mpc", f"rho must be positive (got {t.rho})"))
    if not t.R_v > 0:
        probs.append(("mpc", f"R_v must be positive (got {t.R_v})"))
    if not t.Q_y >= 0:
        probs.append(("mpc", f"Q_y must be nonnegative (got {t.Q_y})"))
    if not (t.u_max > 0 and t.torque_max > 0):
        probs.append(("mpc", "voltage and torque limits must be positive"))
    if not s.dt_mpc > 0:
        probs.append(("servo", f"dt_mpc must be positive (got {s.dt_mpc})"))
    if not s.period > 0:
        probs.append(("servo", f"reference period must be positive (got {s.period})"))
    if s.duration_steps < 1:
        probs.append(("servo", f"duration_steps must be >= 1 (got {s.duration_steps})"))
    if s.n_e < 2:
        probs.append(("learner", f"N_E must be >= 2 (got {s.n_e})"))
    if not s.eps_factor > 0:
        probs.append(("learner", f"eps_factor must be positive (got {s.eps_factor})"))
    if s.max_iterations < 1:
        probs.append(("learner", f"max_iterations must be >= 1 (got {s.max_iterations})"))
    if s.q_nominal is not None and not s.q_nominal > 0:
        probs.append(("learner", f"q_nominal must be positive (got {s.q_nominal})"))
    names = [p.name for p in s.learned]
    for p in s.learned:
        if p.name not in {f.name for f in fields(ServoParams)}:
            probs.append(("learner", f"unknown learned parameter {p.name!r}"))
        if not (p.a > 0 and math.isfinite(p.a)):
            probs.append(("mes", f"dither amplitude for {p.name} must be positive (got {p.a})"))
        if not (p.omega > 0 and math.isfinite(p.omega)):
            probs.append(("mes", f"dither frequency for {p.name} must be positive (got {p.omega})"))
    if len(set(names)) != len(names):
        probs.append(("learner", "a parameter is learned by more than one channel"))
    if s.learned and s.n_e >= 2 and s.dt_mpc > 0:
        try:
            chans = [DitherChannel(p.a, p.omega, name=p.name) for p in s.learned]
        except ValueError:
            chans = []
        for msg in frequency_violations(chans, s.n_e * s.dt_mpc):
            probs.append(("mes", f"frequency validity: {msg}"))
    return probs


def resolve(cfg: RunConfig) -> Scenario:
    s = load_scenario(cfg.scenario)
    s = apply_overrides(s, cfg.overrides, cfg.dithers, cfg.learning, cfg.steps)
    probs = validate_scenario(s)
    if probs:
        raise ConfigError(probs)
    return s
