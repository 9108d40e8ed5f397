"""Run configuration: flat ``key = value`` files with ``[section]`` headers.

Keys are unique across sections, so a value can be overridden from the
command line with ``--set key=value`` without naming its section. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .continuation import BranchSeed
from .errors import ConfigError

OUTPUT_ENV = "VKPLATE_OUTPUT_DIR"

SECTIONS = {
    "mesh": ("L", "nx", "ny", "degree"),
    "continuation": (
        "lambda_start", "lambda_end", "d_lambda", "psi", "psi_grid", "seeds",
        "newton_tol", "newton_max_iter", "delta", "store_every",
    ),
    "eigen": ("k", "spectrum_start", "spectrum_end", "spectrum_step"),
    "rom": ("n_max", "energy_tol", "stride", "test_start", "test_end", "test_points"),
    "output": ("output_dir", "seed", "figures"),
}


def parse_seeds(text: str) -> list[BranchSeed]:
    """``"1 1 +; 1 1 -"`` -> seeds; an empty string gives no seeds.

    An optional fourth number is the amplitude.
    """
    seeds = []
    for chunk in text.replace(",", " ").split(";"):
        parts = chunk.split()
        if not parts:
            continue
        if len(parts) not in (3, 4) or parts[2] not in ("+", "-"):
            raise ConfigError(f"bad seed {chunk.strip()!r}, expected 'm n +|-' [amplitude]")
        try:
            m, n = int(parts[0]), int(parts[1])
            amp = float(parts[3]) if len(parts) == 4 else 1.0
            seeds.append(BranchSeed((m, n), amp, 1 if parts[2] == "+" else -1))
        except ValueError as exc:
            raise ConfigError(f"bad seed {chunk.strip()!r}: {exc}") from exc
    return seeds


def format_seeds(seeds) -> str:
    return "; ".join(f"{s.mode[0]} {s.mode[1]} {'+' if s.sign > 0 else '-'} {s.amplitude:g}" for s in seeds)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    L: float = 1.0
    nx: int = 20
    ny: int = 20
    degree: int = 2
    lambda_start: float = 35.0
    lambda_end: float = 65.0
    d_lambda: float = 0.5
    psi: float = 0.0
    psi_grid: tuple = (0.0, 0.5, 1.0, 1.5, 2.0)
    seeds: tuple = field(default_factory=lambda: (BranchSeed((1, 1)), BranchSeed((1, 1), sign=-1),
                                                  BranchSeed((2, 1)), BranchSeed((2, 1), sign=-1)))
    newton_tol: float = 1e-10
    newton_max_iter: int = 20
    delta: float = 1e-4
    store_every: int = 5
    k: int = 4
    spectrum_start: float = 30.0
    spectrum_end: float = 40.0
    spectrum_step: float = 0.5
    n_max: int = 8
    energy_tol: float = 0.0
    stride: int = 1
    test_start: float = 40.0
    test_end: float = 65.0
    test_points: int = 20
    output_dir: str = "out"
    seed: int = 2024
    figures: bool = True

    def validate(self) -> "RunConfig":
        checks = [
            (self.L > 0, "L must be positive"),
            (self.nx >= 1 and self.ny >= 1, "nx, ny must be >= 1"),
            (self.degree in (1, 2, 3), "degree must be 1, 2 or 3"),
            (self.lambda_start < self.lambda_end, "need lambda_start < lambda_end"),
            (self.d_lambda > 0, "d_lambda must be positive"),
            (0.0 <= self.psi <= 2.0, "psi must lie in [0, 2]"),
            (len(self.psi_grid) > 0 and all(0.0 <= p <= 2.0 for p in self.psi_grid), "psi_grid must lie in [0, 2]"),
            (self.newton_tol > 0, "newton_tol must be positive"),
            (self.newton_max_iter >= 1, "newton_max_iter must be >= 1"),
            (self.delta > 0, "delta must be positive"),
            (self.store_every >= 1, "store_every must be >= 1"),
            (self.k >= 1, "k must be >= 1"),
            (self.spectrum_start < self.spectrum_end and self.spectrum_step > 0, "bad spectrum grid"),
            (self.n_max >= 1, "n_max must be >= 1"),
            (0.0 <= self.energy_tol < 1.0, "energy_tol must lie in [0, 1)"),
            (self.stride >= 1, "stride must be >= 1"),
            (self.test_start < self.test_end and self.test_points >= 1, "bad test sample"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    @property
    def out(self) -> Path:
        return Path(self.output_dir)


_CONVERTERS = {
    "psi_grid": _floats,
    "seeds": lambda t: tuple(parse_seeds(t)),
    "figures": _bool,
}


def _convert(key: str, text: str):
    conv = _CONVERTERS.get(key)
    if conv is None:
        default = RunConfig.__dataclass_fields__[key].default
        conv = type(default)
    try:
        return conv(text.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        if key not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=None, base: RunConfig | None = None) -> RunConfig:
    """Read ``path`` (if any) on top of ``base`` and apply ``key=value`` overrides.

    Precedence, lowest first: defaults, config file, ``$VKPLATE_OUTPUT_DIR``,
    overrides.
    """
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        parser.optionxform = str  # keep 'L' upper case
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in parser.sections():
            allowed = SECTIONS.get(section)
            if allowed is None:
                raise ConfigError(f"unknown section [{section}]")
            for key, text in parser.items(section):
                if key not in allowed:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[key] = _convert(key, text)
    if os.environ.get(OUTPUT_ENV):
        values["output_dir"] = os.environ[OUTPUT_ENV]
    values.update(parse_overrides(overrides))
    cfg = replace(base or RunConfig(), **values)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    """Config file text that round-trips through load_config."""
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = getattr(cfg, key)
            if key == "seeds":
                v = format_seeds(v)
            elif key == "psi_grid":
                v = " ".join(f"{p:g}" for p in v)
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))
