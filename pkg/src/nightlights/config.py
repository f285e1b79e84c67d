"""Plain-text ``key = value`` configuration files and the run configuration."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from ._bands import DEFAULT_CHUNK_ROWS
from .errors import ConfigError

DEFAULT_PERIODS = ((1993, 2006), (2007, 2013))


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_kv(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_kv_text(text, str(path))


def parse_period(text: str) -> tuple[int, int]:
    try:
        a, b = (int(p) for p in text.strip().split("-"))
    except ValueError:
        raise ConfigError(f"period must look like 1993-2006, got {text!r}") from None
    if a > b:
        raise ConfigError(f"period {text!r} ends before it starts")
    return a, b


def parse_periods(text: str) -> tuple[tuple[int, int], ...]:
    return tuple(parse_period(p) for p in text.split(",") if p.strip())


def parse_scopes(text: str) -> tuple[str, ...] | None:
    """Region names, or ``None`` for every region (``all``); ``none`` selects nothing."""
    raw = text.strip()
    if raw in ("", "all", "*"):
        return None
    if raw == "none":
        return ()
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def period_tag(period: tuple[int, int]) -> str:
    """``(1993, 2006)`` -> ``"9306"``, the column suffix used in reports."""
    return f"{period[0] % 100:02d}{period[1] % 100:02d}"


@dataclass(frozen=True)
class RunConfig:
    panel_dir: Path | None = None
    mask: Path | None = None
    table: Path | None = None
    external_series: Path | None = None
    scopes: tuple[str, ...] | None = None  # None = every region in the table
    periods: tuple[tuple[int, int], ...] = DEFAULT_PERIODS
    out_dir: Path = Path("out")
    clamp: float = 3.0
    max_width: int = 4320
    image_format: str = "ppm"
    qq_points: int = 99
    scatter_max_points: int = 100_000
    threads: int = 1
    chunk_rows: int = DEFAULT_CHUNK_ROWS
    synth_spec: Path | None = None

    _PATHS = ("panel_dir", "mask", "table", "external_series", "out_dir", "synth_spec")

    @classmethod
    def from_mapping(cls, kv: dict[str, str], base: Path | None = None) -> "RunConfig":
        kv = dict(kv)
        args: dict = {}

        def path(v):
            p = Path(v).expanduser()
            return p if p.is_absolute() or base is None else base / p

        for key in cls._PATHS:
            if key in kv:
                args[key] = path(kv.pop(key))
        if "scopes" in kv:
            args["scopes"] = parse_scopes(kv.pop("scopes"))
        if "periods" in kv:
            args["periods"] = parse_periods(kv.pop("periods"))
        for key, conv in (("clamp", float), ("max_width", int), ("qq_points", int),
                          ("scatter_max_points", int), ("threads", int), ("chunk_rows", int)):
            if key in kv:
                try:
                    args[key] = conv(kv.pop(key))
                except ValueError:
                    raise ConfigError(f"{key}: not a valid {conv.__name__}") from None
        if "image_format" in kv:
            args["image_format"] = kv.pop("image_format")
        if kv:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(kv))}")
        return cls(**args).validated()

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_mapping(parse_kv(path), Path(path).resolve().parent)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None}).validated()

    def validated(self) -> "RunConfig":
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.chunk_rows < 1:
            raise ConfigError("chunk_rows must be at least 1")
        if not self.clamp > 0:
            raise ConfigError("clamp must be positive")
        if self.image_format not in ("ppm", "png"):
            raise ConfigError("image_format must be ppm or png")
        if self.qq_points < 2:
            raise ConfigError("qq_points must be at least 2")
        if not self.periods:
            raise ConfigError("at least one period is required")
        return self

    def check_periods(self, years) -> None:
        """Each period needs its preceding year in the panel, since growth in
        year ``t`` is measured from ``t - 1``."""
        years = tuple(years)
        for a, b in self.periods:
            if a - 1 < years[0] or b > years[-1]:
                raise ConfigError(
                    f"period {a}-{b} needs years {a - 1}..{b}, panel covers {years[0]}..{years[-1]}")
