"""Run configuration: a sectioned key-value file read with :mod:`configparser`.

Grammar (``#`` or ``;`` start a comment, keys are case-insensitive)::

    [run]
    seed = 0

    [grid]                         ; optional, overrides the family default box
    n = 32 32 64                   ; or n1 / n2 / n3
    L = 2pi 2pi 0.5pi              ; numbers, optionally suffixed by "pi"
    vertical_scaling = auto        ; auto | none | eps

    [generator]                    ; defaults for every family
    amplitude = 1.0
    [generator oscillating]        ; per-family overrides
    phi_width = 0.6

    [solver]
    dt = 0.01
    t_end = 4
    scheme = IF-RK4                ; IF-RK4 | IF-RK2
    dealias = true
    stride = 1
    cfl = 0.5

    [sweep]
    recipes = h12-oscillating, G-forcing
    eps = 1/4, 1/8, 1/16, 1/32, 1/64
    stride = 4                     ; any SweepSettings field
    base_shape = 32 32 16

Only the output directory may come from the environment (``ANISONS_OUT``).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from .exceptions import ConfigError
from .harness import RECIPES, SweepSettings
from .solvers import SCHEMES, SolveConfig
from .spectral import TWO_PI, Grid

OUT_ENV = "ANISONS_OUT"
DEFAULT_OUT = "anisons-out"
DEFAULT_EPS = (0.25, 0.125, 0.0625, 0.03125, 0.015625)

GEN_FAMILIES = ("oscillating", "slow-varying", "cone", "cone-union", "layered", "taylor-green")

# (shape, lengths, scale vertically by eps); matches the sweep pipelines
FAMILY_GRIDS = {
    "oscillating": ((32, 32, 64), (TWO_PI, TWO_PI, TWO_PI / 4.0), False),
    "slow-varying": ((32, 32, 64), (TWO_PI, TWO_PI, 4.0 * math.pi), True),
    "cone": ((16, 16, 16), (TWO_PI,) * 3, True),
    "cone-union": ((16, 16, 16), (TWO_PI,) * 3, True),
    "layered": ((32, 32, 16), (TWO_PI,) * 3, False),
    "taylor-green": ((32, 32, 32), (TWO_PI,) * 3, False),
}

GENERATOR_KEYS = {
    "amplitude": float,
    "phi_width": float,
    "phi0_width": float,
    "phi0_center": float,
    "power": float,
    "vertical_weight": float,
    "w_amplitude": float,
    "zero_slice": "bool",
    "width": float,
}

_SECTIONS = ("run", "grid", "generator", "solver", "sweep")
_LENGTH = re.compile(r"^([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*(pi)?$")


def parse_length(text: str) -> float:
    """``"2pi"`` -> 6.283..., ``"0.5pi"`` -> 1.5707..., ``"3.0"`` -> 3.0."""
    m = _LENGTH.match(text.strip().lower())
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ConfigError(f"cannot read length {text!r}; expected a number optionally followed by 'pi'")
    coef = float(m.group(1)) if m.group(1) is not None else 1.0
    return coef * math.pi if m.group(2) else coef


def parse_eps_list(text: str) -> list[float]:
    """``"1/4,1/8"`` -> [0.25, 0.125]; entries may also be decimals."""
    out = []
    for tok in text.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            value = float(Fraction(tok))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad eps entry {tok!r}") from exc
        if not 0.0 < value < 1.0:
            raise ConfigError(f"eps entries must lie in (0, 1), got {tok}")
        out.append(value)
    if not out:
        raise ConfigError("empty eps list")
    return out


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected integers, got {text!r}") from exc


def _bool(section, key, value) -> bool:
    v = value.strip().lower()
    if v in ("1", "yes", "true", "on"):
        return True
    if v in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")


def _float(section, key, value) -> float:
    try:
        return float(Fraction(value.strip())) if "/" in value else float(value)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from exc


@dataclass(frozen=True)
class GridSpec:
    shape: tuple[int, int, int]
    lengths: tuple[float, float, float]
    scale_vertically: bool

    def build(self, eps: float | None = None) -> Grid:
        try:
            g = Grid(*self.shape, *self.lengths)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.scale_vertically and eps is not None:
            g = g.scaled_vertically(eps)
        return g


@dataclass
class RunConfig:
    """Parsed configuration plus the raw text it came from."""

    text: str = ""
    seed: int = 0
    grid: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    generator_family: dict = field(default_factory=dict)
    solver: SolveConfig = field(default_factory=SolveConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    recipes: tuple[str, ...] = ()
    eps: tuple[float, ...] = DEFAULT_EPS
    out_dir: Path = Path(DEFAULT_OUT)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def grid_spec(self, family: str) -> GridSpec:
        shape, lengths, scaled = FAMILY_GRIDS.get(family, FAMILY_GRIDS["taylor-green"])
        shape = self.grid.get("shape", shape)
        lengths = self.grid.get("lengths", lengths)
        mode = self.grid.get("vertical_scaling", "auto")
        if mode != "auto":
            scaled = mode == "eps"
        return GridSpec(tuple(shape), tuple(lengths), scaled)

    def generator_params(self, family: str) -> dict:
        params = dict(self.generator)
        params.update(self.generator_family.get(family, {}))
        return params

    def effective(self) -> dict:
        """JSON-ready view of every resolved setting."""
        solver = {f.name: getattr(self.solver, f.name) for f in fields(self.solver)}
        return {
            "seed": self.seed,
            "grid": {k: list(v) if isinstance(v, tuple) else v for k, v in self.grid.items()},
            "generator": self.generator,
            "generator_family": self.generator_family,
            "solver": solver,
            "sweep": json.loads(json.dumps({f.name: getattr(self.sweep, f.name) for f in fields(self.sweep)})),
            "recipes": list(self.recipes),
            "eps": list(self.eps),
        }


def _parse_grid(sec) -> dict:
    out = {}
    keys = set(sec.keys())
    if "n" in keys:
        shape = _ints(sec["n"])
        if len(shape) == 1:
            shape = shape * 3
    elif keys & {"n1", "n2", "n3"}:
        shape = tuple(int(sec.get(k, "32")) for k in ("n1", "n2", "n3"))
    else:
        shape = None
    if shape is not None:
        if len(shape) != 3 or any(n < 4 or n % 2 for n in shape):
            raise ConfigError(f"[grid] n: need three even sizes >= 4, got {shape}")
        out["shape"] = shape
    if "l" in keys:
        lengths = tuple(parse_length(t) for t in sec["l"].replace(",", " ").split())
        if len(lengths) == 1:
            lengths = lengths * 3
    elif keys & {"l1", "l2", "l3"}:
        lengths = tuple(parse_length(sec.get(k, "2pi")) for k in ("l1", "l2", "l3"))
    else:
        lengths = None
    if lengths is not None:
        if len(lengths) != 3 or any(not (L > 0) for L in lengths):
            raise ConfigError(f"[grid] L: need three positive lengths, got {lengths}")
        out["lengths"] = lengths
    mode = sec.get("vertical_scaling", "auto").strip().lower()
    if mode not in ("auto", "none", "eps"):
        raise ConfigError(f"[grid] vertical_scaling must be auto, none or eps, got {mode!r}")
    out["vertical_scaling"] = mode
    unknown = keys - {"n", "n1", "n2", "n3", "l", "l1", "l2", "l3", "vertical_scaling"}
    if unknown:
        raise ConfigError(f"[grid] unknown keys: {sorted(unknown)}")
    return out


def _parse_generator(name, sec) -> dict:
    out = {}
    for key, value in sec.items():
        kind = GENERATOR_KEYS.get(key)
        if kind is None:
            raise ConfigError(f"[{name}] unknown key {key!r}; known: {sorted(GENERATOR_KEYS)}")
        out[key] = _bool(name, key, value) if kind == "bool" else _float(name, key, value)
    return out


def _parse_solver(sec) -> SolveConfig:
    kw = {}
    for key, value in sec.items():
        if key in ("dt", "t_end", "cfl"):
            kw[key] = _float("solver", key, value)
        elif key == "stride":
            kw[key] = int(value)
        elif key == "dealias":
            kw[key] = _bool("solver", key, value)
        elif key == "scheme":
            if value.strip() not in SCHEMES:
                raise ConfigError(f"[solver] scheme must be one of {SCHEMES}")
            kw[key] = value.strip()
        else:
            raise ConfigError(f"[solver] unknown key {key!r}")
    try:
        return SolveConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}") from exc


def _parse_sweep(sec):
    recipes: tuple[str, ...] = ()
    eps = DEFAULT_EPS
    kw = {}
    types = {f.name: f.type for f in fields(SweepSettings)}
    defaults = SweepSettings()
    for key, value in sec.items():
        if key == "recipes":
            recipes = tuple(r.strip() for r in value.split(",") if r.strip())
        elif key == "eps":
            eps = tuple(parse_eps_list(value))
        elif key in types:
            current = getattr(defaults, key)
            if isinstance(current, tuple):
                kw[key] = _ints(value)
            elif isinstance(current, bool):
                kw[key] = _bool("sweep", key, value)
            elif isinstance(current, int):
                kw[key] = int(value)
            elif isinstance(current, float):
                kw[key] = _float("sweep", key, value)
            else:
                kw[key] = value.strip()
        else:
            raise ConfigError(f"[sweep] unknown key {key!r}")
    unknown = [r for r in recipes if r not in RECIPES]
    if unknown:
        raise ConfigError(f"[sweep] unknown recipes {unknown}; known: {sorted(RECIPES)}")
    try:
        settings = replace(defaults, **kw)
        settings.solve_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[sweep] {exc}") from exc
    return settings, recipes, eps


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = RunConfig(text=text)
    for name in cp.sections():
        head, _, tail = name.partition(" ")
        if head not in _SECTIONS or (tail and head != "generator"):
            raise ConfigError(f"unknown section [{name}]")
        if head == "generator" and tail and tail.strip() not in GEN_FAMILIES:
            raise ConfigError(f"[{name}]: unknown family; known: {GEN_FAMILIES}")
    if cp.has_section("run"):
        for key, value in cp["run"].items():
            if key != "seed":
                raise ConfigError(f"[run] unknown key {key!r}")
            cfg.seed = _seed(value)
    if cp.has_section("grid"):
        cfg.grid = _parse_grid(cp["grid"])
    if cp.has_section("generator"):
        cfg.generator = _parse_generator("generator", cp["generator"])
    for name in cp.sections():
        if name.startswith("generator "):
            fam = name.partition(" ")[2].strip()
            cfg.generator_family[fam] = _parse_generator(name, cp[name])
    if cp.has_section("solver"):
        cfg.solver = _parse_solver(cp["solver"])
    if cp.has_section("sweep"):
        cfg.sweep, cfg.recipes, cfg.eps = _parse_sweep(cp["sweep"])
    cfg.sweep = replace(cfg.sweep, seed=cfg.seed)
    return cfg


def _seed(value) -> int:
    try:
        seed = int(value)
    except ValueError as exc:
        raise ConfigError(f"seed must be an integer, got {value!r}") from exc
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must lie in [0, 2^64)")
    return seed


def load_config(path=None, *, seed=None, out=None) -> RunConfig:
    """Read ``path`` (or use defaults) and apply command-line overrides."""
    if path is None:
        cfg = parse_config("")
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_config(text)
    if seed is not None:
        cfg.seed = _seed(seed)
        cfg.sweep = replace(cfg.sweep, seed=cfg.seed)
    if out is not None:
        cfg.out_dir = Path(out)
    elif os.environ.get(OUT_ENV):
        cfg.out_dir = Path(os.environ[OUT_ENV])
    return cfg
