"""TOML run configuration: [grid], [potential], [source], [reconstruction], [noise], [output].

Unknown sections or keys are rejected with their dotted path. The hash is the
SHA-256 of the raw file bytes, so it can be reproduced with any external tool.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import tomli

from .cgo import CgoConstants
from .errors import InvlabError, ParameterError
from .experiments import DEFAULT_EPSILONS, NoiseModel, Scenario
from .grid import Grid


class ConfigError(InvlabError, ValueError):
    """Invalid or unknown configuration entry (message starts with the key path)."""


@dataclass(frozen=True)
class GridSection:
    dim: int = 3
    n: int = 32
    L: float = 0.5


@dataclass(frozen=True)
class PotentialSection:
    seed: int = 0
    s: int = 3
    M: float = 1.0
    bumps: int = 2
    reference_bumps: int = 1
    amplitude: float = 1.0
    width: tuple = (4.0, 6.0)
    fill: float = 0.9
    margin: float | None = None


@dataclass(frozen=True)
class SourceSection:
    amplitude: float = 2.0
    amplitude_imag: float = 0.0
    position: tuple | None = None
    enabled: bool = True


@dataclass(frozen=True)
class ReconstructionSection:
    mode: str = "born"
    rho: float | str = "auto"
    radius: float | str = "auto"
    C_log: float = 1.0
    C1: float = 4.0
    C2: float = 4.0
    C3: float = 8.0
    C4: float = 8.0


@dataclass(frozen=True)
class NoiseSection:
    mode: str = "both"
    seed: int = 0
    epsilons: tuple = DEFAULT_EPSILONS
    antithetic: bool = True


@dataclass(frozen=True)
class OutputSection:
    dir: str = "invlab-out"
    prefix: str = ""


_SECTIONS = {
    "grid": GridSection,
    "potential": PotentialSection,
    "source": SourceSection,
    "reconstruction": ReconstructionSection,
    "noise": NoiseSection,
    "output": OutputSection,
}

_NUMBER = (int, float)


def _coerce(path: str, value, default):
    """Check a TOML value against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, tuple) or default is None and isinstance(value, list):
        if not isinstance(value, list) or not all(isinstance(v, _NUMBER) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, str) and not isinstance(value, str):
        if path.endswith((".rho", ".radius")) and isinstance(value, _NUMBER) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if isinstance(default, float) or default is None:
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    return value


def _section(name: str, cls, table) -> object:
    if not isinstance(table, dict):
        raise ConfigError(f"{name}: expected a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key (allowed: {', '.join(sorted(known))})")
        default = cls.__dataclass_fields__[key].default
        kwargs[key] = _coerce(f"{name}.{key}", value, default)
    return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    grid: GridSection = field(default_factory=GridSection)
    potential: PotentialSection = field(default_factory=PotentialSection)
    source: SourceSection = field(default_factory=SourceSection)
    reconstruction: ReconstructionSection = field(default_factory=ReconstructionSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    output: OutputSection = field(default_factory=OutputSection)
    hash: str = ""
    path: str = ""

    # -- derived domain objects --

    def grid_object(self) -> Grid:
        try:
            return Grid(self.grid.dim, self.grid.n, self.grid.L)
        except ParameterError as exc:
            raise ConfigError(f"grid: {exc}") from exc

    @property
    def constants(self) -> CgoConstants:
        r = self.reconstruction
        return CgoConstants(r.C1, r.C2, r.C3, r.C4)

    @property
    def source_amplitude(self) -> complex | float:
        s = self.source
        return complex(s.amplitude, s.amplitude_imag) if s.amplitude_imag else s.amplitude

    def scenario(self) -> Scenario:
        p, r = self.potential, self.reconstruction
        rho = None if r.rho == "auto" else float(r.rho)
        return Scenario(seed=p.seed, n=self.grid.n, L=self.grid.L, s=p.s, M=p.M, bumps=p.bumps,
                        reference_bumps=p.reference_bumps, amplitude=p.amplitude, width=tuple(p.width),
                        fill=p.fill, source_amplitude=self.source_amplitude, source_position=self.source.position,
                        margin=p.margin, mode=r.mode, rho=rho, C_log=r.C_log, constants=self.constants)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(0.0, self.noise.mode, self.noise.seed, self.noise.antithetic)

    @property
    def radius(self) -> float | None:
        return None if self.reconstruction.radius == "auto" else float(self.reconstruction.radius)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.dir)

    def output_path(self, name: str) -> Path:
        return self.output_dir / f"{self.output.prefix}{name}"

    def provenance(self) -> dict:
        return {"config_hash": self.hash, "seed": self.potential.seed, "noise_seed": self.noise.seed}

    def validate(self):
        """Check every physical parameter against the module preconditions (no compute)."""
        g = self.grid_object()
        if g.dim != 3:
            raise ConfigError("grid.dim: the frequency-slicing geometry needs dim = 3")
        r = self.reconstruction
        if r.mode not in ("born", "oracle"):
            raise ConfigError(f"reconstruction.mode: expected 'born' or 'oracle', got {r.mode!r}")
        for key in ("rho", "radius"):
            val = getattr(r, key)
            if isinstance(val, str) and val != "auto":
                raise ConfigError(f"reconstruction.{key}: expected 'auto' or a number, got {val!r}")
            if not isinstance(val, str) and not val > 0:
                raise ConfigError(f"reconstruction.{key}: must be positive")
        if self.noise.mode not in ("operator", "trace", "both"):
            raise ConfigError(f"noise.mode: expected operator, trace or both, got {self.noise.mode!r}")
        for e in self.noise.epsilons:
            if not 0 < e < 1:
                raise ConfigError(f"noise.epsilons: every level must lie in (0, 1), got {e}")
        if self.source.position is not None and len(self.source.position) != g.dim:
            raise ConfigError(f"source.position: expected {g.dim} coordinates")
        if self.source.enabled and self.source_amplitude == 0:
            raise ConfigError("source.amplitude: must be nonzero")
        margin = self.potential.margin
        if margin is not None and not 0 < margin < g.L / 4:
            raise ConfigError(f"potential.margin: must lie in (0, L/4), got {margin}")
        try:
            sc = self.scenario()
            sc.params
        except ParameterError as exc:
            raise ConfigError(f"potential/reconstruction: {exc}") from exc
        return self


def load_config(path) -> RunConfig:
    raw = Path(path).read_bytes()
    try:
        doc = tomli.loads(raw.decode("utf-8"))
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: not valid TOML ({exc})") from exc
    return config_from_dict(doc, hashlib.sha256(raw).hexdigest(), str(path))


def config_from_dict(doc: dict, digest: str = "", path: str = "") -> RunConfig:
    sections = {}
    for name, table in doc.items():
        if name not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section (allowed: {', '.join(_SECTIONS)})")
        sections[name] = _section(name, _SECTIONS[name], table)
    return RunConfig(**sections, hash=digest, path=path).validate()
