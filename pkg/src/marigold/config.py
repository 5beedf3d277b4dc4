"""Experiment configuration: flat ``key = value`` INI files with one section per module.

Example::

    [problem]
    kind = quadratic
    m = 2

    [run]
    balancer = marigold, mgda, ls
    seeds = 0, 1, 2
    iterations = 500

Every key has a default except ``problem.kind``, ``run.balancer`` and
``run.seeds``. Unknown sections or keys, duplicates and bad values raise
``ConfigError`` with the offending file line.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .balancers import GRADIENT_BALANCERS, LOSS_BALANCERS
from .bilevel import BATCH_POLICIES, PERTURB_MODES, SCHEDULES
from .errors import ConfigError

METHODS = ("marigold",) + GRADIENT_BALANCERS + LOSS_BALANCERS
PROBLEM_KINDS = ("quadratic", "mlp", "aux")
AUX_METHODS = ("marigold", "ls")


def _choice(*allowed):
    def check(v):
        if v not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}")
    return check


def _positive(v):
    if not v > 0:
        raise ValueError("must be > 0")


def _nonneg(v):
    if not v >= 0:
        raise ValueError("must be >= 0")


def _at_least(k):
    def check(v):
        if v < k:
            raise ValueError(f"must be >= {k}")
    return check


def _open_unit(v):
    if not 0 <= v < 1:
        raise ValueError("must lie in [0, 1)")


def _unit_interval(v):
    if not -1 <= v <= 1:
        raise ValueError("must lie in [-1, 1]")


def _opt(default, check=None, required=False):
    return field(default=default, metadata={"check": check, "required": required})


@dataclass
class ProblemConfig:
    kind: str = _opt("quadratic", _choice(*PROBLEM_KINDS), required=True)
    m: int = _opt(2, _at_least(2))
    d: int = _opt(2, _at_least(1))
    spread: float = _opt(1.0, _positive)
    curvature: str = _opt("identity", _choice("identity", "random"))
    cond: float = _opt(10.0, _at_least(1.0))
    center_scale: float = _opt(1.0, _positive)
    data_seed: int = _opt(0, _nonneg)
    input_dim: int = _opt(4, _at_least(1))
    shared: tuple = _opt((8,))
    pool_size: int = _opt(256, _at_least(1))
    noise: float = _opt(0.1, _nonneg)
    correlation: float = _opt(0.0, _unit_interval)
    teacher_hidden: int = _opt(8, _at_least(1))
    base: str = _opt("quadratic", _choice("quadratic", "mlp"))
    target: int = _opt(0, _nonneg)
    init_scale: float = _opt(1.0, _nonneg)


@dataclass
class RunSection:
    balancer: tuple = _opt((), required=True)
    seeds: tuple = _opt((), required=True)
    iterations: int = _opt(100, _at_least(1))
    batch_size: int = _opt(0, _nonneg)   # 0 means the full pool
    log_every: int = _opt(1, _at_least(1))
    out: str = _opt("")
    baseline: str = _opt("")
    timing: bool = _opt(False)


@dataclass
class OptimizerConfig:
    kind: str = _opt("sgd", _choice("sgd", "adam"))
    lr: float = _opt(0.05, _positive)
    beta1: float = _opt(0.9, _open_unit)
    beta2: float = _opt(0.999, _open_unit)
    eps: float = _opt(1e-8, _positive)


@dataclass
class MarigoldConfig:
    beta: float = _opt(1.0, _positive)
    r: float = _opt(1e-3, _positive)
    upper_lr_u: float = _opt(1e-4, _positive)
    upper_lr_v: float = _opt(1e-4, _positive)
    upper_optimizer: str = _opt("adam", _choice("sgd", "adam"))
    perturb_mode: str = _opt("logit", _choice(*PERTURB_MODES))
    batch_policy: str = _opt("reuse", _choice(*BATCH_POLICIES))
    update_schedule: str = _opt("simultaneous", _choice(*SCHEDULES))
    antithetic: bool = _opt(False)


@dataclass
class AuxConfig:
    omega: float = _opt(0.0)
    r: float = _opt(1e-3, _positive)
    lr: float = _opt(1e-4, _positive)
    upper_optimizer: str = _opt("adam", _choice("sgd", "adam"))


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    run: RunSection = field(default_factory=RunSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    marigold: MarigoldConfig = field(default_factory=MarigoldConfig)
    aux: AuxConfig = field(default_factory=AuxConfig)
    source: str = "<memory>"

    @property
    def methods(self) -> tuple:
        return self.run.balancer

    @property
    def baseline(self) -> str:
        if self.run.baseline:
            return self.run.baseline
        return "ls" if "ls" in self.methods else self.methods[0]


SECTIONS = {"problem": ProblemConfig, "run": RunSection, "optimizer": OptimizerConfig,
            "marigold": MarigoldConfig, "aux": AuxConfig}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _list(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _coerce(section, name, raw):
    kind = {f.name: f for f in fields(SECTIONS[section])}[name]
    default = kind.default
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError("must be a boolean (true/false)")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        value = float(raw)
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("must be finite")
        return value
    if isinstance(default, tuple):
        items = _list(raw)
        if name in ("seeds", "shared"):
            return tuple(int(t) for t in items)
        return items
    return raw


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to the 1-based line where the key is set."""
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        head = re.match(r"^\[([^\]]+)\]$", s)
        if head:
            section = head.group(1).strip()
            lines.setdefault((section, None), no)
            continue
        kv = re.match(r"^([^=:]+?)\s*[=:]", s)
        if kv and section is not None:
            lines.setdefault((section, kv.group(1).strip().lower()), no)
    return lines


def _check_cross(cfg: RunConfig, where) -> None:
    if not cfg.run.balancer:
        raise ConfigError(f"{where('run', 'balancer')}: run.balancer: at least one method is required")
    for mth in cfg.run.balancer:
        if mth not in METHODS:
            raise ConfigError(f"{where('run', 'balancer')}: run.balancer: unknown method {mth!r}; "
                              f"expected one of {', '.join(METHODS)}")
    if len(set(cfg.run.balancer)) != len(cfg.run.balancer):
        raise ConfigError(f"{where('run', 'balancer')}: run.balancer: methods repeat")
    if not cfg.run.seeds:
        raise ConfigError(f"{where('run', 'seeds')}: run.seeds: at least one seed is required")
    if any(s < 0 for s in cfg.run.seeds) or len(set(cfg.run.seeds)) != len(cfg.run.seeds):
        raise ConfigError(f"{where('run', 'seeds')}: run.seeds: seeds must be distinct and >= 0")
    if cfg.run.baseline and cfg.run.baseline not in cfg.run.balancer:
        raise ConfigError(f"{where('run', 'baseline')}: run.baseline: {cfg.run.baseline!r} is not in run.balancer")
    p = cfg.problem
    if p.kind == "aux":
        bad = [mth for mth in cfg.run.balancer if mth not in AUX_METHODS]
        if bad:
            raise ConfigError(f"{where('run', 'balancer')}: run.balancer: auxiliary problems support "
                              f"only {', '.join(AUX_METHODS)}, got {', '.join(bad)}")
    if p.kind == "quadratic" and p.curvature == "identity" and p.m > 2 and p.d < p.m:
        raise ConfigError(f"{where('problem', 'd')}: problem.d: identity quadratics with m > 2 need d >= m")
    if p.kind == "aux" and p.base == "quadratic" and p.d < p.m:
        raise ConfigError(f"{where('problem', 'd')}: problem.d: auxiliary quadratics need d >= m")
    if p.kind in ("aux",) and p.target >= p.m:
        raise ConfigError(f"{where('problem', 'target')}: problem.target: must be < m")
    if p.kind in ("mlp", "aux") and any(w < 1 for w in p.shared):
        raise ConfigError(f"{where('problem', 'shared')}: problem.shared: widths must be >= 1")


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(strict=True, interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    lines = _key_lines(text)

    def where(section, key=None):
        no = lines.get((section, key)) or lines.get((section, None))
        return f"{source}:{no}" if no else source

    values = {name: {} for name in SECTIONS}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{where(section)}: unknown section [{section}]; "
                              f"expected one of {', '.join(SECTIONS)}")
        known = {f.name: f for f in fields(SECTIONS[section])}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{where(section, key)}: unknown key {key!r} in [{section}]")
            try:
                value = _coerce(section, key, raw.strip())
                check = known[key].metadata.get("check")
                if check is not None:
                    check(value)
            except ValueError as exc:
                raise ConfigError(f"{where(section, key)}: {section}.{key} = {raw.strip()!r}: {exc}") from None
            values[section][key] = value

    for section, cls in SECTIONS.items():
        for f in fields(cls):
            if f.metadata.get("required") and f.name not in values[section]:
                raise ConfigError(f"{source}: missing required key {section}.{f.name}")

    cfg = RunConfig(**{name: SECTIONS[name](**values[name]) for name in SECTIONS}, source=source)
    _check_cross(cfg, where)
    return cfg


def parse_config(path) -> RunConfig:
    """Read and fully validate a configuration file, filling defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"{path}: configuration file not found") from None
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    return parse_config_text(text, str(path))
