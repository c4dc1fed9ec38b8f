"""Benchmark configuration: flat ``key = value`` files plus CLI overrides."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass

from ..errors import ConfigError
from ..imaging import PATTERNS
from ..warp import WarpRanges

METHOD_RE = re.compile(r"^(iclk|esm|jd|hp|sym|(dct|hpdct|symdct)-\d+)$")

DEFAULT_METHODS = ("iclk", "esm", "jd", "dct-25", "hp", "hpdct-25", "sym", "symdct-25")


@dataclass
class BenchConfig:
    image: str = "fixture:textured"
    side: int = 9
    pattern: str = "dense"
    trans_range: float = 1.0
    other_range: float = 0.2
    test_trans_range: float | None = None
    test_other_range: float | None = None
    m: int = 5000
    n_test: int = 100
    max_corners: int = 40
    min_score: float = 1e-6
    methods: tuple = DEFAULT_METHODS
    train_seed: int = 1
    test_seed: int = 2
    energy_iters: int = 10
    energy_tol: float = 1e-4
    lp_iters: int = 1
    noise: float = 0.0
    repeats: int = 5
    workers: int = 1
    output: str | None = None
    model: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def train_ranges(self) -> WarpRanges:
        return WarpRanges.symmetric(self.trans_range, self.other_range)

    @property
    def test_ranges(self) -> WarpRanges:
        t = self.trans_range if self.test_trans_range is None else self.test_trans_range
        o = self.other_range if self.test_other_range is None else self.test_other_range
        return WarpRanges.symmetric(t, o)

    def validate(self) -> None:
        if isinstance(self.methods, str):
            self.methods = tuple(s.strip() for s in self.methods.split(",") if s.strip())
        self.methods = tuple(self.methods)
        bad = [m for m in self.methods if not METHOD_RE.match(m)]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad or '(none)'}")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        if self.side < 3 or self.side % 2 == 0:
            raise ConfigError("side must be odd and >= 3")
        for name in ("m", "n_test", "max_corners", "repeats", "workers", "energy_iters", "lp_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        try:
            train, test = self.train_ranges, self.test_ranges
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not test.issubset(train):
            raise ConfigError("test ranges must lie inside the training ranges")
        if self.pattern != "dense" and any("dct" in m for m in self.methods):
            raise ConfigError("DCT methods need a dense pattern")
        if any("dct" in m and int(m.split("-")[1]) > self.side ** 2 for m in self.methods):
            raise ConfigError("DCT retained count exceeds the number of patch pixels")

    def replace(self, **changes) -> "BenchConfig":
        return dataclasses.replace(self, **changes)


def _field_types():
    return {f.name: f for f in dataclasses.fields(BenchConfig)}


def coerce(key: str, value: str):
    fields = _field_types()
    if key not in fields:
        raise ConfigError(f"unknown config key {key!r}")
    kind = str(fields[key].type)
    value = value.strip()
    if key == "methods":
        return tuple(s.strip() for s in value.split(",") if s.strip())
    if "None" in kind and value.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return value


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def load_config(path=None, overrides: dict | None = None) -> BenchConfig:
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value) if isinstance(value, str) else value
    try:
        return BenchConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_keys() -> list[str]:
    return list(_field_types())


