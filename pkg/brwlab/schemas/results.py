"""
Pydantic models for computed results.

Every model here is JSON-serializable and lands in a run manifest or in the
aggregate section of an experiment's output.
"""
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field


# ==================== Spectral ====================

class SpectralFit(BaseModel):
    """Fit of p_n ~ C rho^n / n^a over a window of positive terms."""
    rho: float
    exponent: float
    constant: float
    window_start: int
    window_end: int
    r_squared: float
    residual_max: float
    residual_rms: float
    method: Literal["quotient-dp-extrapolation", "dirichlet-power-iteration", "closed-form"]
    rho_ratio_estimate: Optional[float] = None  # ratio-regression value, when rho was fitted
    positive_terms: int
    period: int = 1


class DirichletEstimate(BaseModel):
    """Top eigenvalue of the kernel restricted to a ball with absorbing boundary."""
    rho: float
    radius: int
    ball_size: int
    iterations: int
    gap: float  # last change of the Rayleigh quotient
    residual: float
    converged: bool
    representation: Literal["quotient", "ball"]
    warning: Optional[str] = None


class RhoResolution(BaseModel):
    """A spectral radius together with how it was obtained."""
    value: float
    method: str
    detail: Dict[str, float] = Field(default_factory=dict)


class ConditionReport(BaseModel):
    """Partial sums of a convergence criterion with a verdict."""
    kind: Literal["criticality", "two-walk"]
    horizon: int
    partial_sums: List[float]
    verdict: Literal["converged", "diverging", "inconclusive"]
    exponent: float
    r_squared: float
    tail_estimate: Optional[float] = None
    tail_below_tolerance: bool = False
    divergence_model: Optional[Literal["log", "power"]] = None
    divergence_slope: Optional[float] = None
    divergence_r_squared: Optional[float] = None
    diagonal_max_relative_error: Optional[float] = None


class RegimeReport(BaseModel):
    """Transient / critical / recurrent classification of a BRW."""
    regime: Literal["transient", "critical", "recurrent"]
    transient: bool
    critical: bool
    m: float
    rho: float
    threshold: float  # 1 / rho


class AdditivityReport(BaseModel):
    """Product fit against weighted factor spectral radii and summed exponents."""
    product_fit: SpectralFit
    factor_fits: List[SpectralFit]
    weights: List[float]
    rho_weighted_sum: float
    exponent_sum: float
    rho_gap: float
    exponent_gap: float


# ==================== Kernels ====================

class ReversibilityReport(BaseModel):
    """Outcome of the degree-weighted detailed balance check."""
    kernel: str
    graph: str
    radius: int
    horizon: int
    mode: Literal["float", "rational"]
    ratio: float
    pairs_checked: int
    max_relative_violation: float = 0.0


# ==================== Simulation ====================

class ManyToOneResult(BaseModel):
    """Monte Carlo particle count at a target against m^n P_i(X_n = j)."""
    n: int
    target: str
    replications: int
    mc_mean: float
    mc_stderr: float
    exact: float
    z_score: float


# ==================== Topology ====================

class EndsProfile(BaseModel):
    """Far components of a trace that contain final-generation particles."""
    radii: List[int]
    counts: List[int]
    generations: int
    final_particles: int
    truncated: bool = False


class FiberHitStats(BaseModel):
    """Generations at which a fiber {v} x Z was occupied."""
    fiber: str
    hit_generations: List[int]
    last_hit: Optional[int]
    generations: int


class EmbeddedGWStats(BaseModel):
    """Galton-Watson process embedded along a copy of Z."""
    lag: int
    z0: str
    replications: int
    sequences: List[List[int]]
    mean_y1: float
    stderr_y1: float
    reference_mean: float
    z_score: float
    survival_fraction: float
    survival_ci_low: float
    survival_ci_high: float
    gw_survival_reference: float
    flag_generations: List[int]
    flag_batch_sizes: List[int]
    capped_replications: int
