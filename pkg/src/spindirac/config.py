"""Validated run configurations, one model per subcommand.

The JSON config file uses exactly these field names; unknown keys are
rejected before anything is computed.
"""

from __future__ import annotations

from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator

from .discrete import DEFAULT_TAU_CONSTANT
from .surgery import DEFAULT_R0, DEFAULT_R1, DEFAULT_R_MAX, DEFAULT_SPHERE_RADIUS

SpinFlag = Literal["bounding", "non_bounding"]


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    output_path: Optional[str] = None


class SpectrumConfig(_Base):
    command: Literal["spectrum"] = "spectrum"
    model: Literal["circle", "torus", "sphere"] = "torus"
    method: Literal["exact", "discrete"] = "exact"
    lattice: str = "2pi-square"
    spin: str = "00"
    length: float = Field(6.283185307179586, gt=0)
    n: int = Field(2, ge=1, le=8)
    cutoff: float = Field(3.0, gt=0)
    N: int = Field(256, ge=16)
    m_max: float = Field(8.0, ge=0)


class KernelConfig(_Base):
    command: Literal["kernel"] = "kernel"
    model: Literal["circle", "torus", "sphere"] = "torus"
    spin: str = "00"
    length: float = Field(6.283185307179586, gt=0)
    N: int = Field(512, ge=16)
    m_max: float = Field(8.0, ge=0)
    c_tau: float = Field(DEFAULT_TAU_CONSTANT, gt=0)


class BoundCheckConfig(_Base):
    command: Literal["bound-check"] = "bound-check"
    n: int = Field(ge=1)
    alpha: int = Field(0, ge=0, le=1)
    a_hat: int = 0
    kernel: int = Field(ge=0)


class ConformalTestConfig(_Base):
    command: Literal["conformal-test"] = "conformal-test"
    spin: SpinFlag = "non_bounding"
    length: float = Field(6.283185307179586, gt=0)
    trials: int = Field(20, ge=1)
    N: int = Field(256, ge=16)
    amplitude: float = Field(0.3, gt=0, le=1.0)
    c_tau: float = Field(DEFAULT_TAU_CONSTANT, gt=0)


class NeckSweepConfig(_Base):
    command: Literal["neck-sweep"] = "neck-sweep"
    rhos: list[float] = [0.2, 0.1, 0.05, 0.02]
    m_max: float = Field(8.5, ge=0)
    N: int = Field(512, ge=16)
    baseline_kernel: int = Field(0, ge=0)
    t_spin: SpinFlag = "bounding"
    R_max: float = DEFAULT_R_MAX
    r_0: float = DEFAULT_R0
    r_1: float = DEFAULT_R1
    sphere_radius: float = DEFAULT_SPHERE_RADIUS
    c_tau: float = Field(DEFAULT_TAU_CONSTANT, gt=0)

    @field_validator("rhos")
    @classmethod
    def _decreasing(cls, v):
        if not v or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("rhos must be nonempty and strictly decreasing")
        return v


class EnergyRatioConfig(_Base):
    command: Literal["energy-ratio"] = "energy-ratio"
    rho: float = Field(0.05, gt=0)
    s: Optional[float] = None
    spinor: Literal["constant", "gaussian", "bump", "eigen"] = "constant"
    mode: float = 0.5
    N: int = Field(1024, ge=16)
    t_spin: SpinFlag = "bounding"
    R_max: float = DEFAULT_R_MAX
    r_0: float = DEFAULT_R0
    r_1: float = DEFAULT_R1
    sphere_radius: float = DEFAULT_SPHERE_RADIUS
    c_tau: float = Field(DEFAULT_TAU_CONSTANT, gt=0)


class ListFixturesConfig(_Base):
    command: Literal["list-fixtures"] = "list-fixtures"
    fixtures: Optional[str] = None


class VerifyAllConfig(_Base):
    command: Literal["verify-all"] = "verify-all"
    fixtures: Optional[str] = None
    c_tau: float = Field(DEFAULT_TAU_CONSTANT, gt=0)


RunConfig = Annotated[
    Union[SpectrumConfig, KernelConfig, BoundCheckConfig, ConformalTestConfig, NeckSweepConfig,
          EnergyRatioConfig, ListFixturesConfig, VerifyAllConfig],
    Field(discriminator="command"),
]

_adapter = TypeAdapter(RunConfig)


def parse_config(data: dict):
    return _adapter.validate_python(data)


def resolved(cfg) -> dict:
    """The config as embedded in artifacts; the output location is not part of it."""
    return cfg.model_dump(mode="json", exclude={"output_path"})
