"""Experiment configuration (JSON, versioned) and its translation to library objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import spectral
from .forward import SourceTime
from .inverse import INITIAL_STATE, SOURCE, SolverConfig

SCHEMA_VERSION = 1
STAGES = ("synthesize", "certify", "sweep", "reconstruct")


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration files."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainSpec(_Strict):
    bounds: list[tuple[float, float]] = Field(min_length=2, max_length=3)

    @field_validator("bounds")
    @classmethod
    def _contains_origin(cls, v):
        for a, b in v:
            if not a < 0 < b:
                raise ValueError(f"interval ({a}, {b}) must contain 0")
        return v


PRESETS = ("e1", "three_mode", "bump")


class UnknownSpec(_Strict):
    target: Literal["source", "initial_state"] = SOURCE
    preset: Literal["e1", "three_mode", "bump"] | None = None
    # 1-based mode ordinal -> coefficient
    coefficients: dict[int, float] | None = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.preset is None) == (self.coefficients is None):
            raise ValueError("give exactly one of 'preset' or 'coefficients'")
        if self.coefficients is not None and any(k < 1 for k in self.coefficients):
            raise ValueError("mode ordinals start at 1")
        return self


class SourceSpec(_Strict):
    kind: Literal["exponential"] = "exponential"
    rate: float = Field(1.0, gt=0)
    amplitude: float = 1.0
    c0: float | None = Field(None, gt=0)


class SolverSpec(_Strict):
    t_split: float = Field(2.0, gt=0)
    n_graded: int = Field(600, ge=10)
    T: float = Field(400.0, gt=0)
    n_geom: int = Field(900, ge=0)
    quad_order: int = Field(24, ge=2)


class ProbeSpec(_Strict):
    omegas: list[float] = Field(default_factory=lambda: [0.5, 1.0, 3.0, 10.0], min_length=1)
    n_dirs: int = Field(8, ge=1)

    @field_validator("omegas")
    @classmethod
    def _positive(cls, v):
        if any(w <= 0 for w in v):
            raise ValueError("omegas must be positive")
        return v


class CertifySpec(_Strict):
    n: int = Field(200, ge=2)
    lo: float = Field(1e-4, gt=0)
    hi: float = Field(1e2, gt=0)
    s_values: list[int] | None = None
    n_dirs: int = Field(8, ge=1)
    probe_tol: float = Field(1e-3, gt=0)


class SweepSpec(_Strict):
    count: int = Field(20, ge=0)
    amplitude: float = Field(1e-6, gt=0)
    k: int = Field(1, ge=1)
    theta: float = Field(0.5, gt=0, lt=1)


class ReconstructSpec(_Strict):
    omega_max: float = Field(10.0, gt=0.5)
    n_omega: int = Field(5, ge=1)
    n_dirs: int = Field(8, ge=1)
    noise_level: float = Field(0.0, ge=0)
    reg: float | None = Field(None, ge=0)
    k: int = Field(1, ge=1)


class MLTableSpec(_Strict):
    beta1: list[float] = Field(default_factory=lambda: [0.5], min_length=1)
    beta2: list[float] = Field(default_factory=lambda: [1.0], min_length=1)
    tau_min: float = Field(-100.0, lt=0)
    n: int = Field(101, ge=2)


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    domain: DomainSpec = DomainSpec(bounds=[(-0.5, 0.5), (-0.5, 0.5)])
    alpha: float = Field(0.5, gt=0, lt=1)
    basis_size: int = Field(10, ge=1)
    unknown: UnknownSpec = UnknownSpec(preset="e1")
    source_time: SourceSpec = SourceSpec()
    solver: SolverSpec = SolverSpec()
    probes: ProbeSpec = ProbeSpec()
    certify: CertifySpec = CertifySpec()
    sweep: SweepSpec = SweepSpec()
    reconstruct: ReconstructSpec = ReconstructSpec()
    ml_table: MLTableSpec = MLTableSpec()
    experiments: list[Literal["synthesize", "certify", "sweep", "reconstruct"]] = Field(
        default_factory=list)
    output_dir: str = "out"
    seed: int = Field(0, ge=0, lt=2**64)

    # {{{ builders

    def build_domain(self) -> spectral.BoxDomain:
        return spectral.BoxDomain(tuple(tuple(b) for b in self.domain.bounds))

    def build_basis(self) -> spectral.EigenBasis:
        return spectral.build_basis(self.build_domain(), self.basis_size)

    def build_unknown(self, basis: spectral.EigenBasis) -> spectral.SpectralField:
        spec = self.unknown
        c = np.zeros(len(basis))
        if spec.preset == "e1":
            c[0] = 1.0
        elif spec.preset == "three_mode":
            for j, v in ((0, 1.0), (1, 0.5), (3, 0.3)):
                if j < len(basis):
                    c[j] = v
        elif spec.preset == "bump":
            return spectral.project(lambda p: np.exp(-20.0 * np.sum(p**2, axis=1)), basis, 64)
        else:
            for j, v in spec.coefficients.items():
                if j > len(basis):
                    raise ConfigError(f"unknown.coefficients: mode {j} exceeds basis_size")
                c[j - 1] = v
        return spectral.SpectralField(basis, c)

    def build_source(self) -> SourceTime:
        s = self.source_time
        if self.unknown.target == INITIAL_STATE:
            return SourceTime.zero()
        return SourceTime.exponential(s.rate, s.amplitude, s.c0)

    def build_solver(self, threads: int = 1) -> SolverConfig:
        s = self.solver
        return SolverConfig(s.t_split, s.n_graded, s.T, s.n_geom, s.quad_order, threads)

    # }}}


def _format_loc(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except Exception as exc:
        errors = getattr(exc, "errors", None)
        if errors is None:
            raise ConfigError(f"{source}: {exc}") from exc
        lines = [f"{source}: field {_format_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("\n".join(lines)) from exc


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{p}: {exc.strerror}") from exc
    return parse_config(text, str(p))


def json_schema() -> dict:
    return ExperimentConfig.model_json_schema()
