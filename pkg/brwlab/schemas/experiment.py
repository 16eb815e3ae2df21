"""
Pydantic models for experiment configuration and run manifests.

Graph, kernel and offspring fields stay in their text form so that a manifest
echoes exactly what was run; validators make sure they parse.
"""
from typing import Any, Dict, List, Literal, Optional

from pydantic import AliasChoices, BaseModel, ConfigDict, Field, field_validator, model_validator

from brwlab.converters.spec_parser import (
    format_config_text,
    parse_config_text,
    parse_graph,
    parse_kernel,
    parse_mu,
)

ExperimentKind = Literal[
    "return-series",
    "spectral-fit",
    "criticality-sum",
    "two-walk-sum",
    "simulate",
    "many-to-one",
    "purple",
    "ends",
    "fiber",
    "embedded-gw",
    "dirichlet",
    "reversibility",
]

EXPERIMENT_KINDS: List[str] = list(ExperimentKind.__args__)  # type: ignore[attr-defined]


# ==================== Configuration ====================

class ExperimentConfig(BaseModel):
    """One experiment: what to compute, on which walk, with which budgets."""
    model_config = ConfigDict(extra="forbid")

    kind: ExperimentKind
    graph: str
    kernel: str = "simple"
    mu: str = "critical"
    horizon: int = Field(default=4000, ge=1, validation_alias=AliasChoices("horizon", "n"))
    generations: int = Field(default=60, ge=0)
    replications: int = Field(default=1, ge=1, validation_alias=AliasChoices("replications", "reps"))
    radii: List[int] = Field(default_factory=lambda: [6])
    budgets: List[int] = Field(default_factory=list)
    seed: int = 0
    mode: Literal["float", "rational"] = "float"
    out_dir: Optional[str] = None
    source_i: Optional[str] = None
    source_j: Optional[str] = None
    target: Optional[str] = None
    fiber: Optional[str] = None
    lag: Optional[int] = Field(default=None, ge=1)
    z0: Literal["fiber", "spine"] = "fiber"
    levels: int = Field(default=6, ge=1)
    paired_kernel: Optional[str] = None
    rho: Optional[float] = Field(default=None, gt=0, le=1)
    rho_source: Optional[str] = None
    population_cap: Optional[int] = Field(default=None, ge=1)
    allow_truncation: bool = False
    retention: Literal["all", "final", "none"] = "final"
    numerics: Dict[str, float] = Field(default_factory=dict)
    preset: Optional[str] = None

    @field_validator("radii", "budgets", mode="before")
    @classmethod
    def split_int_list(cls, v):
        """Accept "4, 8, 12" as well as lists."""
        if isinstance(v, str):
            return [int(x) for x in v.replace(";", ",").split(",") if x.strip()]
        return v

    @field_validator("numerics", mode="before")
    @classmethod
    def split_numerics(cls, v):
        """Accept "support_cap: 1000, tail_tolerance: 1e-5"."""
        if isinstance(v, str):
            out = {}
            for item in v.split(","):
                if not item.strip():
                    continue
                key, _, value = item.partition(":")
                out[key.strip()] = float(value)
            return out
        return v

    @model_validator(mode="after")
    def validate_expressions(self):
        """Every expression must parse; a supplied rho needs its provenance."""
        parse_graph(self.graph)
        parse_kernel(self.kernel)
        parse_mu(self.mu)
        if self.paired_kernel:
            parse_kernel(self.paired_kernel)
        if self.rho is not None and not self.rho_source:
            raise ValueError("a supplied rho needs rho_source describing how it was obtained")
        return self

    @classmethod
    def from_text(cls, text: str, **overrides: Any) -> "ExperimentConfig":
        values: Dict[str, Any] = dict(parse_config_text(text))
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(values)

    def to_text(self) -> str:
        data = self.model_dump(exclude_none=True)
        rendered: Dict[str, Optional[str]] = {}
        for key, value in data.items():
            if isinstance(value, list):
                rendered[key] = ", ".join(str(v) for v in value)
            elif isinstance(value, dict):
                rendered[key] = ", ".join(f"{k}: {v!r}" for k, v in value.items())
            else:
                rendered[key] = str(value)
        return format_config_text(rendered)


# ==================== Manifest ====================

class TruncationEvent(BaseModel):
    """A run stopped at the population cap."""
    replication: int
    generation: int
    color: Optional[str] = None


class ErrorRecord(BaseModel):
    """Error that terminated a run."""
    code: str
    message: str
    exit_code: int
    type: str


class RunManifest(BaseModel):
    """Everything needed to re-run an experiment and audit its outputs."""
    config: ExperimentConfig
    artifact_version: str
    seed: int
    started_at: str
    wall_clock_seconds: float
    truncation_events: List[TruncationEvent] = Field(default_factory=list)
    derived: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    status: Literal["ok", "error"] = "ok"
    error: Optional[ErrorRecord] = None
