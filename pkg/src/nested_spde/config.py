"""Experiment configuration: INI-style sections ``[model]``, ``[scheme]``, ``[experiment]``.

Example::

    [model]
    bc = neumann
    gamma = 1.0
    nonlinearity = none

    [scheme]
    T = 1
    dt = 2^-10
    k = auto

    [experiment]
    levels = 2..5
    level_ref = 6
    replicates = 10
    seed = 0
"""
import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .errors import ConfigError

_POWER = re.compile(r"^\s*([0-9.]+)\s*(?:\^|\*\*)\s*\(?\s*([-+]?[0-9.]+)\s*\)?\s*$")


def parse_number(text):
    """Float parser that also accepts powers such as ``2^-10`` or ``2**-10``."""
    text = str(text).strip()
    m = _POWER.match(text)
    try:
        if m:
            return float(m.group(1)) ** float(m.group(2))
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def parse_levels(text):
    """``"2..5"`` or ``"2,3,4"`` -> tuple of ints."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split(".."))
            return tuple(range(lo, hi + 1))
        return tuple(int(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError:
        raise ConfigError(f"bad level list: {text!r}") from None


def parse_numbers(text):
    return tuple(parse_number(t) for t in str(text).split(",") if t.strip())


@dataclass
class ExperimentConfig:
    # [model]
    bc: str = "neumann"
    gamma: float = 1.0
    nonlinearity: str = "none"
    a1_diffusion: float = 1.0
    a1_reaction: float = 0.0
    a1_advection_x: float = 0.0
    a1_advection_y: float = 0.0
    a2_diffusion: float = 1.0
    a2_reaction: float = 1.0
    initial: float = 0.0
    # [scheme]
    T: float = 1.0
    dt: float = 2.0 ** -10
    dt_ref: Optional[float] = None
    k: Optional[float] = None          # None -> h-dependent rule
    k_c0: float = 1.0
    tol: float = 1e-10
    # [experiment]
    levels: Tuple[int, ...] = (2, 3, 4, 5)
    level_ref: int = 6
    level: int = 5
    dt_ladder: Tuple[float, ...] = field(default=tuple(2.0 ** -e for e in range(4, 9)))
    replicates: int = 10
    seed: int = 0
    batch_size: int = 256
    oracle_cutoff: int = 200
    output: Optional[str] = None

    @property
    def reference_dt(self):
        return self.dt if self.dt_ref is None else self.dt_ref

    def validate(self, mode="converge", allow_degenerate=False):
        if self.bc not in ("neumann", "dirichlet"):
            raise ConfigError(f"bc must be neumann or dirichlet, got {self.bc!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.nonlinearity not in ("none", "sin"):
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.k is not None and not self.k > 0:
            raise ConfigError("k must be positive or 'auto'")
        if not (self.T > 0 and self.dt > 0 and self.reference_dt > 0):
            raise ConfigError("T, dt and dt_ref must be positive")
        dts = [self.dt, self.reference_dt]
        if mode == "time-rate":
            dts += list(self.dt_ladder)
            if not self.dt_ladder:
                raise ConfigError("dt_ladder is empty")
        for dt in dts:
            _check_multiple(self.T, dt, "T", "dt")
        for dt in (self.dt_ladder if mode == "time-rate" else [self.dt]):
            _check_multiple(dt, self.reference_dt, "dt", "dt_ref")
        if mode in ("converge", "pathwise"):
            if not self.levels:
                raise ConfigError("levels is empty")
            if min(self.levels) < 0:
                raise ConfigError("levels must be nonnegative")
            top = max(self.levels)
            if top > self.level_ref or (top == self.level_ref and not allow_degenerate):
                raise ConfigError(f"level_ref ({self.level_ref}) must exceed every level ({top})")
        return self


def _check_multiple(big, small, big_name, small_name):
    n = round(big / small)
    if n < 1 or abs(n * small - big) > 1e-12 * big:
        raise ConfigError(f"{big_name} = {big} is not an integer multiple of {small_name} = {small}")


_SECTIONS = {
    "model": {"bc": str, "gamma": parse_number, "nonlinearity": str,
              "a1_diffusion": parse_number, "a1_reaction": parse_number,
              "a1_advection_x": parse_number, "a1_advection_y": parse_number,
              "a2_diffusion": parse_number, "a2_reaction": parse_number,
              "initial": parse_number},
    "scheme": {"T": parse_number, "dt": parse_number, "dt_ref": parse_number,
               "k": parse_number, "k_c0": parse_number, "tol": parse_number},
    "experiment": {"levels": parse_levels, "level_ref": int, "level": int,
                   "dt_ladder": parse_numbers, "replicates": int, "seed": int,
                   "batch_size": int, "oracle_cutoff": int, "output": str},
}


def load_config(path=None, text=None, **overrides):
    """Read a config file (or string); unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            with open(path) as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            if key == "k" and raw.strip().lower() == "auto":
                values[key] = None
                continue
            try:
                values[key] = _SECTIONS[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    if "bc" in values:
        values["bc"] = values["bc"].lower()
    return dataclasses.replace(ExperimentConfig(), **values)
