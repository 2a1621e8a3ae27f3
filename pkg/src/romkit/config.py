"""Run configuration: defaults, ``key=value`` config files and run manifests."""

from __future__ import annotations

import math
import platform
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .dmd import DEFAULT_LCURVE, DEFAULT_MU, DEFAULT_POINTS_PER_DECADE
from .errors import RomIOError, ValidationError
from .pod import DEFAULT_EPS, DEFAULT_MAX_RANK

__all__ = ["RunConfig", "SCHEMES", "parse_lcurve", "read_config_file", "write_manifest"]

SCHEMES = ("exact", "euler")


def parse_lcurve(text) -> tuple[float, float] | None:
    """``"1e-12:1e-5"`` -> ``(1e-12, 1e-5)``; empty/``none`` -> ``None``."""
    if text is None:
        return None
    if isinstance(text, (tuple, list)):
        lo, hi = text
    else:
        text = str(text).strip()
        if text.lower() in ("", "none", "off"):
            return None
        parts = text.split(":")
        if len(parts) != 2:
            raise ValidationError(f"expected MIN:MAX, got {text!r}", "lcurve")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise ValidationError(f"expected MIN:MAX, got {text!r}", "lcurve") from exc
    lo, hi = float(lo), float(hi)
    if not (0.0 < lo < hi and math.isfinite(hi)):
        raise ValidationError(f"need 0 < MIN < MAX, got {lo}:{hi}", "lcurve")
    return lo, hi


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings shared by the command-line tools.

    ``mu`` is used unless ``lcurve`` bounds are set, in which case ``mu`` is
    chosen at the L-curve corner.
    """

    eps: float = DEFAULT_EPS
    max_modes: int = DEFAULT_MAX_RANK
    mu: float = DEFAULT_MU
    lcurve: tuple[float, float] | None = None
    points_per_decade: int = DEFAULT_POINTS_PER_DECADE
    dt_out: float = 0.04
    t_end: float = 10.0
    scheme: str = "exact"
    initial_velocity: str = "backstep"
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValidationError(f"must lie in (0, 1), got {self.eps}", "eps")
        if int(self.max_modes) != self.max_modes or self.max_modes < 1:
            raise ValidationError(f"must be a positive integer, got {self.max_modes}",
                                  "max_modes")
        if not (math.isfinite(self.mu) and self.mu >= 0.0):
            raise ValidationError(f"must be finite and >= 0, got {self.mu}", "mu")
        object.__setattr__(self, "lcurve", parse_lcurve(self.lcurve))
        if self.points_per_decade < 1:
            raise ValidationError("must be >= 1", "points_per_decade")
        for name in ("dt_out", "t_end"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"must be > 0, got {value}", name)
        if self.scheme not in SCHEMES:
            raise ValidationError(f"expected one of {SCHEMES}, got {self.scheme!r}", "scheme")

    @property
    def default_lcurve(self) -> tuple[float, float]:
        return DEFAULT_LCURVE

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string or typed values; unknown keys are rejected."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in known or key == "paths":
                raise ValidationError(f"unknown configuration key {key!r}", "config")
            kw[key] = _convert(key, raw)
        return cls(**kw)

    def merged(self, overrides: dict) -> "RunConfig":
        """Copy with ``overrides`` applied (``None`` values are ignored)."""
        kw = {k.replace("-", "_"): _convert(k.replace("-", "_"), v)
              for k, v in overrides.items() if v is not None}
        return replace(self, **kw)

    def as_lines(self) -> list[str]:
        out = []
        for key, value in asdict(self).items():
            if key == "paths":
                for name, p in sorted(value.items()):
                    out.append(f"path.{name}={p}")
            elif key == "lcurve":
                out.append(f"lcurve={'none' if value is None else f'{value[0]:g}:{value[1]:g}'}")
            else:
                out.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
        return out


def _convert(key: str, raw):
    if key == "lcurve":
        return parse_lcurve(raw)
    if key == "paths":
        return dict(raw)
    if not isinstance(raw, str):
        return raw
    try:
        if key in ("max_modes", "points_per_decade"):
            return int(raw)
        if key in ("eps", "mu", "dt_out", "t_end"):
            return float(raw)
    except ValueError as exc:
        raise ValidationError(f"cannot parse {raw!r}", key) from exc
    return raw.strip()


def read_config_file(path) -> dict:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise RomIOError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value", "config")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def write_manifest(path, command: str, config: RunConfig, extra: dict | None = None) -> None:
    """Echo the resolved configuration and environment as ``key=value`` lines."""
    from . import __version__
    lines = [f"command={command}", f"romkit_version={__version__}",
             f"python={sys.version.split()[0]}", f"platform={platform.platform()}"]
    lines += config.as_lines()
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key}={value}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise RomIOError(f"cannot write manifest {path}: {exc.strerror or exc}") from exc
