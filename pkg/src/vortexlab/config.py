"""Flat ``key = value`` run configuration with optional ``[section]`` headers."""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import REDUCED, SimParams, SystemSpec, Variant


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


COMMANDS = ("stationarity", "entropy-decay", "radius-law", "pairlog", "moments",
            "limit-law", "reversal", "scaling", "collision-bound")


def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


# key -> (section, parser, default); a default of None marks an optional key without default
SCHEMA = {
    "n": ("system", int, None),
    "a": ("system", _floats, None),
    "nu": ("system", float, 1.0),
    "variant": ("system", str, "rescaled"),
    "a1": ("system", float, None),
    "a2": ("system", float, None),
    "z0": ("system", _floats, None),
    "init": ("system", str, None),
    "init_mean": ("system", _floats, None),
    "init_var": ("system", float, None),
    "dt": ("sim", float, 1e-3),
    "horizon": ("sim", float, None),
    "eps": ("sim", float, 1e-2),
    "replicas": ("sim", int, 10000),
    "t_trunc": ("sim", float, 20.0),
    "scheme": ("sim", str, "rotation"),
    "times": ("sim", _floats, None),
    "k": ("est", int, 5),
    "n_permutations": ("est", int, 500),
    "n_samples": ("est", int, 2000),
    "alpha": ("est", float, 1.0),
    "eps_list": ("est", _floats, (0.1, 0.05, 0.01)),
    "repeats": ("est", int, 1),
    "out_dir": ("run", str, "out"),
    "command": ("run", str, None),
    "seed": ("run", int, 0),
}


@dataclass
class RunConfig:
    command: str
    values: dict
    source: dict = field(default_factory=dict)  # raw key -> text, for the manifest echo

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def seed(self):
        return int(self.values["seed"])

    def system(self) -> SystemSpec:
        v = self.values
        variant = Variant(v["variant"])
        if v["a1"] is not None or v["a2"] is not None:
            if v["a1"] is None or v["a2"] is None:
                raise ConfigError("a1 and a2 must be given together")
            if variant in REDUCED:
                return SystemSpec.two_vortex(variant, v["a1"], v["a2"], v["nu"])
            return SystemSpec(2, (v["a1"], v["a2"]), v["nu"], variant)
        return SystemSpec(v["n"], v["a"], v["nu"], variant)

    def sim(self, horizon=None) -> SimParams:
        v = self.values
        h = horizon if horizon is not None else v["horizon"]
        return SimParams(dt=v["dt"], horizon=h, eps=v["eps"], replicas=v["replicas"],
                         master_seed=self.seed, scheme=v["scheme"], t_trunc=v["t_trunc"])


def _suggest(key):
    # a known key that prefixes the typo (e.g. "epsilonn") beats fuzzy matching
    prefixed = [k for k in SCHEMA if key.startswith(k)]
    close = sorted(prefixed, key=len)[-1:] or difflib.get_close_matches(key, SCHEMA.keys(), n=1,
                                                                        cutoff=0.6)
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_config(text: str, command: str | None = None, seed: int | None = None) -> RunConfig:
    raw = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in {"system", "sim", "est", "run"}:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}{_suggest(key)}")
        if section is not None and SCHEMA[key][0] != section:
            raise ConfigError(f"line {lineno}: key {key!r} belongs in [{SCHEMA[key][0]}], not [{section}]")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = val
    values = {}
    for key, (_, parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from None
        else:
            values[key] = default
    cmd_cfg = values.pop("command")
    if command is not None and cmd_cfg is not None and command != cmd_cfg:
        raise ConfigError(f"command {command!r} conflicts with config command {cmd_cfg!r}")
    cmd = command or cmd_cfg
    if cmd is None:
        raise ConfigError("no command given")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}{_suggest_cmd(cmd)}")
    if seed is not None:
        values["seed"] = int(seed)
    _fill_system_defaults(values)
    cfg = RunConfig(cmd, values, dict(raw))
    _validate(cfg)
    return cfg


def _suggest_cmd(cmd):
    close = difflib.get_close_matches(cmd, COMMANDS, n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def _fill_system_defaults(v):
    try:
        variant = Variant(v["variant"])
    except ValueError:
        raise ConfigError(f"unknown variant {v['variant']!r}; choose from "
                          f"{', '.join(x.value for x in Variant)}") from None
    v["variant"] = variant.value
    if v["a1"] is not None:
        return
    if v["n"] is None:
        v["n"] = 1 if variant in REDUCED else (len(v["a"]) if v["a"] else 2)
    if v["a"] is None:
        v["a"] = (0.0,) if variant is Variant.OU else (1.0,) * v["n"]


def _validate(cfg: RunConfig):
    v = cfg.values
    if v["a1"] is None and len(v["a"]) != v["n"]:
        raise ConfigError(f"a has {len(v['a'])} entries but n = {v['n']}")
    try:
        spec = cfg.system()
        cfg.sim(horizon=v["horizon"] or 1.0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if v["z0"] is not None and len(v["z0"]) != 2 * spec.n:
        raise ConfigError(f"z0 needs {2 * spec.n} numbers for n = {spec.n}, got {len(v['z0'])}")
    if v["init"] not in (None, "point", "gaussian", "stationary"):
        raise ConfigError(f"unknown init {v['init']!r}")
    for key in ("k", "n_permutations", "n_samples", "repeats"):
        if v[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if not all(0 < e < 1 for e in v["eps_list"]):
        raise ConfigError("eps_list entries must lie in (0, 1)")
    if v["times"] is not None and any(not math.isfinite(t) or t < 0 for t in v["times"]):
        raise ConfigError("times must be finite and non-negative")


def load_config(path, command: str | None = None, seed: int | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, command, seed)
