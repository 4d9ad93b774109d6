"""
Run configuration: a TOML file with sections potential, grids, epsilon,
time, solver and io, validated by pydantic models that reject unknown keys.
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .confinement import PotentialSpec
from .data import CACHE_DIR
from .errors import ConfigError
from .spectral import Grid1D, Grid2D


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


class PotentialConfig(_Section):
    kind: Literal["harmonic", "power", "perturbed_harmonic", "tabulated"] = "harmonic"
    a: float = Field(1.0, ge=0.0)
    B: float = 1.0
    s: float = Field(4.0, ge=2.0)
    table: Optional[List[float]] = None
    v1_amplitude: float = 0.0
    v1_width: float = Field(1.0, gt=0.0)

    def spec(self) -> PotentialSpec:
        return PotentialSpec(kind=self.kind, a=self.a, B=self.B, s=self.s,
                             table=None if self.table is None else tuple(self.table),
                             v1_amplitude=self.v1_amplitude, v1_width=self.v1_width)


class GridsConfig(_Section):
    n_x: int = 64
    n_y: int = 64
    L_x: float = Field(16.0, gt=0.0)
    L_y: float = Field(16.0, gt=0.0)
    n_z: int = 256
    L_z: float = Field(8.0, gt=0.0)
    P: Optional[int] = Field(None, ge=1)
    P_z: Optional[int] = Field(None, ge=1)
    stencil_order: Literal[2, 4, 6, 8] = 8
    mode_ratio: float = Field(20.0, gt=1.0)

    @field_validator("n_x", "n_y")
    @classmethod
    def _fft_sizes(cls, v: int) -> int:
        if not _power_of_two(v):
            raise ValueError("must be a power of two (radix-2 transforms)")
        return v

    @field_validator("n_z")
    @classmethod
    def _even(cls, v: int) -> int:
        if v < 8 or v % 2:
            raise ValueError("must be even and >= 8")
        return v

    @model_validator(mode="after")
    def _resolution(self):
        if self.P is not None and self.P > self.n_z // 4:
            raise ValueError(f"P={self.P} violates P <= n_z/4 = {self.n_z // 4} (resolution safety margin)")
        if self.P_z is not None and self.P_z > self.n_z - 1:
            raise ValueError(f"P_z={self.P_z} exceeds the {self.n_z - 1} interior z points")
        return self

    def grid2d(self) -> Grid2D:
        return Grid2D(self.L_x, self.L_y, self.n_x, self.n_y)

    def grid1d(self) -> Grid1D:
        return Grid1D(self.L_z, self.n_z)


class EpsilonConfig(_Section):
    values: List[float] = [0.2, 0.1, 0.05]
    dispersion: float = 1e-2
    probe_xi: List[float] = [1.0]
    kernel_gap: List[float] = [0.4, 0.2, 0.1, 0.05, 0.025]

    @field_validator("values", "kernel_gap")
    @classmethod
    def _positive_decreasing(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("needs at least one value")
        if any(e <= 0 for e in v):
            raise ValueError("eps must be > 0")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps values must be strictly decreasing")
        return v

    @field_validator("dispersion")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("eps must be > 0")
        return v


class TimeConfig(_Section):
    T: float = Field(0.5, gt=0.0)
    dt: float = Field(1e-3, gt=0.0)
    full_dt: float = Field(1e-2, gt=0.0)
    snapshot_every: int = Field(50, ge=0)
    diag_every: int = Field(10, ge=0)

    @model_validator(mode="after")
    def _whole_steps(self):
        for name in ("dt", "full_dt"):
            dt = getattr(self, name)
            if dt > self.T:
                raise ValueError(f"{name}={dt} exceeds T={self.T}")
            n = round(self.T / dt)
            if abs(n * dt - self.T) > 1e-9 * self.T:
                raise ValueError(f"T={self.T} is not a whole number of {name}={dt} steps")
        return self


class InitialConfig(_Section):
    sigma_x: float = Field(1.0, gt=0.0)
    sigma_y: float = Field(1.0, gt=0.0)
    kx: float = 0.0
    mass: float = Field(1.0, gt=0.0)
    modes: List[float] = [1.0]


class SolverConfig(_Section):
    nonlinearity: Literal["F1", "F0", "none"] = "F1"
    limit_nonlinear: bool = True
    initial: InitialConfig = InitialConfig()
    threads: int = Field(1, ge=1)
    trust_margin: int = Field(4, ge=0)
    tail_threshold: float = Field(1e-6, gt=0.0)
    blowup_factor: float = Field(1e3, gt=1.0)
    point_cap: int = Field(2 ** 24, ge=1)
    override_negative_alpha: bool = False
    phase_fraction: float = Field(0.5, gt=0.0)


class IOConfig(_Section):
    out_dir: str = "runs/default"
    cache_dir: str = str(CACHE_DIR)
    use_cache: bool = True
    snapshots: bool = False


class RunConfig(_Section):
    potential: PotentialConfig = PotentialConfig()
    grids: GridsConfig = GridsConfig()
    epsilon: EpsilonConfig = EpsilonConfig()
    time: TimeConfig = TimeConfig()
    solver: SolverConfig = SolverConfig()
    io: IOConfig = IOConfig()

    @model_validator(mode="after")
    def _cross(self):
        g = self.grids
        if self.potential.kind in ("tabulated", "perturbed_harmonic") and self.potential.table is not None:
            if len(self.potential.table) != g.n_z:
                raise ValueError(f"potential.table has {len(self.potential.table)} samples, grids.n_z={g.n_z}")
        if self.solver.nonlinearity == "F1":
            padded = 8 * g.n_x * g.n_y * g.n_z
            if padded > self.solver.point_cap:
                raise ValueError(f"3D kernel needs {padded} padded points, solver.point_cap={self.solver.point_cap}")
        if len(self.solver.initial.modes) > (g.P or g.n_z // 4):
            raise ValueError("solver.initial.modes lists more modes than P")
        return self


def _error_from_validation(exc: ValidationError) -> ConfigError:
    err = exc.errors()[0]
    key = ".".join(str(p) for p in err["loc"]) or "<root>"
    msg = err["msg"]
    if err["type"] == "extra_forbidden":
        msg = "unknown key"
    return ConfigError(key, msg)


def config_from_dict(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise _error_from_validation(e) from e


def parse_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Read and validate a TOML config. No path gives the defaults.
    """
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as e:
        raise ConfigError("--config", f"file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<file>", f"not valid TOML: {e}") from e
    return config_from_dict(raw)
