"""INI-style run configuration with typed sections and a canonical text form.

Layout::

    [problem]
    name = point_delay_linear

    [problem.params]
    tau = 0.5

    [study]
    coarse_ns = 8,16,32,64,128,256,512
    n_fine = 8192

Any key may be overridden with ``section.key=value`` strings (the CLI's
``--set``). Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io

from .errors import ConfigError, SFDEError
from .problem import ProblemSpec, builtin, builtin_defaults, builtin_names


def _int_list(text):
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    return [int(s) for s in items]


_FORMAT = {int: str, float: repr, str: str, _int_list: lambda v: ",".join(str(x) for x in v)}

SCHEMA = {
    "problem": {"name": (str, "point_delay_linear")},
    "study": {
        "coarse_ns": (_int_list, [8, 16, 32, 64, 128, 256, 512]),
        "n_fine": (int, 8192),
        "num_paths": (int, 10000),
        "q": (float, 2.0),
        "seed": (int, 0),
        "bootstrap_resamples": (int, 1000),
        "reference": (str, "fine"),
        "chunk_size": (int, 500),
    },
    "simulate": {"n": (int, 1024), "seed": (int, 0), "stream": (int, 0), "coarse_ns": (str, "")},
    "bounds": {
        "q": (float, 2.0),
        "n": (int, 64),
        "du": (float, 0.01),
        "ms_p": (float, 0.5),
        "alpha_integral": (float, 0.0),
        "log_expectation": (float, 0.0),
    },
    "gronwall": {
        "scenario": (str, "G1"),
        "alpha": (float, 1.0),
        "H": (float, 1.0),
        "p": (float, 0.5),
        "T": (float, 1.0),
        "q": (float, 2.0),
        "n": (int, 256),
        "num_paths": (int, 1000),
        "seed": (int, 0),
    },
    "validate": {"num_samples": (int, 100), "seed": (int, 0), "num_times": (int, 17)},
}

PARAMS = "problem.params"


class RunConfig:
    """Resolved configuration: every schema key present and typed."""

    def __init__(self, values: dict, params: dict):
        self.values = values
        self.params = params

    def __getitem__(self, section):
        return self.values[section]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()

    @property
    def problem_name(self) -> str:
        return self.values["problem"]["name"]

    def problem(self) -> ProblemSpec:
        try:
            return builtin(self.problem_name, **self.params)
        except SFDEError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {s: dict(v) for s, v in self.values.items()}
        out[PARAMS] = dict(self.params)
        return out

    def to_ini(self) -> str:
        """Canonical text: sections and keys sorted, floats in round-trip form."""
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section in sorted(list(SCHEMA) + [PARAMS]):
            parser.add_section(section)
            if section == PARAMS:
                for key in sorted(self.params):
                    parser.set(section, key, repr(float(self.params[key])))
                continue
            for key in sorted(SCHEMA[section]):
                kind = SCHEMA[section][key][0]
                parser.set(section, key, _FORMAT[kind](self.values[section][key]))
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _convert(section, key, raw):
    if section == PARAMS:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{PARAMS}] {key} must be a number, got {raw!r}") from None
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    kind = SCHEMA[section][key][0]
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def parse_override(text: str):
    """``"study.num_paths=100"`` -> ``("study", "num_paths", "100")``."""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    section, key = lhs.strip().rsplit(".", 1)
    return section, key.strip(), value.strip()


def load_config(path=None, overrides=(), text=None) -> RunConfig:
    """Read an INI file (or ``text``), fill defaults and apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        if text is not None:
            parser.read_string(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides:
        section, key, value = parse_override(item)
        raw.setdefault(section, {})[key] = value

    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    for section, items in raw.items():
        if section == PARAMS:
            continue
        for key, value in items.items():
            values.setdefault(section, {})[key] = _convert(section, key, value)
    name = values["problem"]["name"]
    if name not in builtin_names():
        raise ConfigError(f"unknown problem {name!r}; choose from {builtin_names()}")
    allowed = builtin_defaults(name)
    params = {}
    for key, value in raw.get(PARAMS, {}).items():
        if key not in allowed:
            raise ConfigError(f"problem {name} has no parameter {key!r}; known: {sorted(allowed)}")
        params[key] = _convert(PARAMS, key, value)
    return RunConfig(values, params)
