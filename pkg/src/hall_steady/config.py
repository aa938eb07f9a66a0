"""Run configuration: a flat ``key = value`` text format.

Blank lines and ``#`` comments are ignored.  Unknown keys are errors so that
typos never silently fall back to defaults.  Example::

    n = 32
    q = 4
    forcing = coupled        # zero | coupled | stokes | maxwell
    amplitude = 1e-2
    modes = 1, 1, 1
    coeffs = 1, -1, 0
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

FORCING_FAMILIES = ("zero", "coupled", "stokes", "maxwell")
FORCING_MODES = ("analytic", "discrete")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration (exit code 2)."""


@dataclass(frozen=True)
class ForcingSpec:
    """Which manufactured solution generates ``(f, g)``.

    ``coeffs`` must satisfy ``modes . coeffs = 0`` so the magnetic eigenmode
    is divergence-free; ``potential`` scales the three stream-function
    components of the velocity.
    """

    family: str = "coupled"
    amplitude: float = 1e-2
    modes: tuple[int, int, int] = (1, 1, 1)
    coeffs: tuple[float, float, float] = (1.0, -1.0, 0.0)
    potential: tuple[float, float, float] = (1.0, 1.0, 1.0)
    mode: str = "analytic"

    def __post_init__(self):
        if self.family not in FORCING_FAMILIES:
            raise ConfigError(f"forcing must be one of {FORCING_FAMILIES}, got {self.family!r}")
        if self.mode not in FORCING_MODES:
            raise ConfigError(f"forcing_mode must be one of {FORCING_MODES}, got {self.mode!r}")
        if len(self.modes) != 3 or any(int(m) < 1 for m in self.modes):
            raise ConfigError("modes must be three positive integers")
        if len(self.coeffs) != 3 or len(self.potential) != 3:
            raise ConfigError("coeffs and potential need three entries")
        dot = sum(m * c for m, c in zip(self.modes, self.coeffs))
        if abs(dot) > 1e-12 * max(1.0, max(abs(c) for c in self.coeffs)):
            raise ConfigError(f"modes . coeffs must vanish for a divergence-free field (got {dot})")


@dataclass(frozen=True)
class SolverConfig:
    n: int = 16
    q: float = 4.0
    mu: float = 1.0
    kappa: float | None = None
    outer_tol: float = 1e-8
    inner_rtol: float = 1e-10
    max_outer: int = 200
    max_inner: int = 500
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    seed: int = 0
    probe_trials: int = 3

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 8:
            raise ConfigError(f"n must be an integer >= 8, got {self.n!r}")
        if not self.q > 3.0:
            raise ConfigError(f"q must exceed 3, got {self.q}")
        for name in ("outer_tol", "inner_rtol"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ConfigError("iteration caps must be >= 1")
        if self.kappa is not None and not self.kappa > 0.0:
            raise ConfigError("kappa must be positive when given")
        if self.probe_trials < 1:
            raise ConfigError("probe_trials must be >= 1")

    @property
    def q1(self) -> float:
        """Sobolev exponent of the magnetic bound, ``min(q, 6)``."""
        return min(self.q, 6.0)

    def with_(self, **changes) -> "SolverConfig":
        forcing_keys = {f.name for f in fields(ForcingSpec)}
        fc = {k: changes.pop(k) for k in list(changes) if k in forcing_keys}
        cfg = replace(self, **changes)
        if fc:
            cfg = replace(cfg, forcing=replace(cfg.forcing, **fc))
        return cfg


def _triple(text: str, cast):
    parts = [p for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ConfigError(f"expected three values, got {text!r}")
    return tuple(cast(p) for p in parts)


def _optional_float(text: str):
    return None if text.lower() in ("none", "off", "") else float(text)


_TOP = {
    "n": int,
    "q": float,
    "mu": float,
    "kappa": _optional_float,
    "outer_tol": float,
    "inner_rtol": float,
    "max_outer": int,
    "max_inner": int,
    "seed": int,
    "probe_trials": int,
}
_FORCING = {
    "forcing": ("family", str),
    "family": ("family", str),
    "amplitude": ("amplitude", float),
    "modes": ("modes", lambda s: _triple(s, int)),
    "coeffs": ("coeffs", lambda s: _triple(s, float)),
    "potential": ("potential", lambda s: _triple(s, float)),
    "forcing_mode": ("mode", str),
}


def parse_config(text: str) -> SolverConfig:
    top, forcing = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _TOP:
                top[key] = _TOP[key](value)
            elif key in _FORCING:
                name, cast = _FORCING[key]
                forcing[name] = cast(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return SolverConfig(forcing=ForcingSpec(**forcing), **top)


def load_config(path) -> SolverConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
