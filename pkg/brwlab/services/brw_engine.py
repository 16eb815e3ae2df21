"""
Branching random walk simulation with vertex-aggregated populations.

A generation is a mapping vertex -> particle count. Each occupied vertex with c
particles draws the total offspring of its c particles in one go and dispatches
them with one multinomial draw over the kernel row. Particles are exchangeable,
so this has the same law as simulating them one by one; ``exact_generation_law``
checks that on small cases.
"""
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from itertools import product as cartesian
from math import factorial
from typing import Any, Callable, Dict, FrozenSet, List, Literal, Optional, Set, Tuple, TypeVar

import numpy as np

from brwlab.core.config import numerics, settings
from brwlab.core.exceptions import (
    ConfigurationError,
    DomainError,
    InternalConsistencyError,
    TruncationError,
)
from brwlab.core.logging import get_logger
from brwlab.core.metrics import record_simulation
from brwlab.core.utils import STREAM_MAIN, Number, spawn_rng, to_fraction
from brwlab.graphs.families import GraphFamily, VertexAddr
from brwlab.kernels.specs import ArithmeticMode
from brwlab.kernels.walks import Kernel
from brwlab.schemas.results import ManyToOneResult
from brwlab.services.chains import LumpedChain
from brwlab.services.spectral_lab import transition_probability

logger = get_logger(__name__)

Retention = Literal["all", "final", "none"]
T = TypeVar("T")

_executor: Optional[ThreadPoolExecutor] = None
_executor_lock = threading.Lock()


def _get_executor() -> ThreadPoolExecutor:
    """Get or create the replication worker pool."""
    global _executor
    if _executor is None:
        with _executor_lock:
            if _executor is None:
                _executor = ThreadPoolExecutor(
                    max_workers=settings.worker_pool_size,
                    thread_name_prefix="brw-replication",
                )
                logger.debug(f"[BRW] worker pool started with {settings.worker_pool_size} threads")
    return _executor


def run_replications(fn: Callable[[int], T], count: int, start: int = 0) -> List[T]:
    """
    Run ``fn(index)`` for ``count`` replication indices on the worker pool.

    Returns:
        Results in replication-index order, independent of the pool size
    """
    if count <= 0:
        return []
    return list(_get_executor().map(fn, range(start, start + count)))


# ==================== Offspring ====================

@dataclass(frozen=True)
class OffspringDist:
    """Offspring law with mu(0) = 0."""

    support: Tuple[int, ...]
    probs: Tuple[float, ...]
    exact_probs: Optional[Tuple[Fraction, ...]] = None

    def __post_init__(self):
        if not self.support or len(self.support) != len(self.probs):
            raise ConfigurationError("offspring law needs matching support and probabilities")
        if any(k < 1 for k in self.support):
            raise ConfigurationError(f"offspring support must be positive, got {self.support}")
        if any(p < 0 for p in self.probs):
            raise ConfigurationError(f"offspring probabilities must be non-negative, got {self.probs}")
        if abs(sum(self.probs) - 1.0) > numerics.row_sum_tolerance:
            raise ConfigurationError(f"offspring probabilities sum to {sum(self.probs)!r}, not 1")

    @property
    def mean(self) -> float:
        return float(sum(k * p for k, p in zip(self.support, self.probs)))

    @property
    def rational_probs(self) -> Tuple[Fraction, ...]:
        if self.exact_probs is not None:
            return self.exact_probs
        return tuple(to_fraction(p) for p in self.probs)

    @property
    def is_degenerate(self) -> bool:
        return sum(1 for p in self.probs if p > 0) == 1

    def _two_point(self) -> Optional[Tuple[int, float]]:
        if len(self.support) == 1:
            return self.support[0], 0.0
        if len(self.support) == 2 and self.support[1] == self.support[0] + 1:
            return self.support[0], self.probs[1]
        return None

    def sample_total(self, count, rng: np.random.Generator):
        """
        Total offspring of ``count`` independent particles.

        Args:
            count: Number of parents (int or integer ndarray)
            rng: Generator

        Returns:
            Same shape as ``count``
        """
        two_point = self._two_point()
        if two_point is not None:
            low, p_high = two_point
            if p_high <= 0:
                return count * low
            return count * low + rng.binomial(count, p_high)
        draws = rng.multinomial(count, np.asarray(self.probs))
        return draws @ np.asarray(self.support)

    def describe(self) -> str:
        return "law(" + ", ".join(f"{k}:{p!r}" for k, p in zip(self.support, self.probs)) + ")"


def offspring_with_mean(m) -> OffspringDist:
    """Two-point law on {floor(m), floor(m)+1} with mean m."""
    m_dec = m if isinstance(m, Decimal) else Decimal(str(m))
    if m_dec < 1:
        raise DomainError(f"offspring mean must be >= 1 when mu(0) = 0, got {m}")
    low = int(m_dec)
    p_high = float(m_dec - low)
    return OffspringDist(support=(low, low + 1), probs=(1.0 - p_high, p_high))


def critical_offspring(rho) -> OffspringDist:
    """
    Critical two-point law: mean exactly 1/rho on {floor(1/rho), floor(1/rho)+1}.

    Raises:
        DomainError: rho outside (0, 1)
    """
    rho_dec = rho if isinstance(rho, Decimal) else Decimal(str(rho))
    if not 0 < rho_dec < 1:
        raise DomainError(f"critical offspring needs rho in (0, 1), got {rho}")
    return offspring_with_mean(1 / rho_dec)


def supercritical_offspring(rho, factor) -> OffspringDist:
    """Two-point law with mean factor/rho."""
    rho_dec = rho if isinstance(rho, Decimal) else Decimal(str(rho))
    if not 0 < rho_dec <= 1:
        raise DomainError(f"offspring scaling needs rho in (0, 1], got {rho}")
    if isinstance(factor, Fraction):
        factor_dec = Decimal(factor.numerator) / Decimal(factor.denominator)
    else:
        factor_dec = Decimal(str(factor))
    return offspring_with_mean(factor_dec / rho_dec)


def fixed_offspring(k: int) -> OffspringDist:
    return OffspringDist(support=(k,), probs=(1.0,), exact_probs=(Fraction(1),))


def offspring_law(weights: Dict[int, Number]) -> OffspringDist:
    """Explicit law from a {k: probability} mapping."""
    items = sorted(weights.items())
    exact = None
    if all(isinstance(p, Fraction) for _, p in items):
        exact = tuple(p for _, p in items)
    return OffspringDist(
        support=tuple(k for k, _ in items),
        probs=tuple(float(p) for _, p in items),
        exact_probs=exact,
    )


# ==================== Runs and traces ====================

@dataclass
class GenerationState:
    """Particle counts per vertex at one generation."""

    generation: int
    counts: Dict[VertexAddr, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass
class RunConfig:
    """Everything needed to reproduce one simulated run."""

    kernel: Kernel
    offspring: OffspringDist
    generations: int
    seed: int
    population_cap: Optional[int] = None
    retention: Retention = "final"
    replication: int = 0
    stream: int = STREAM_MAIN
    origin: Optional[VertexAddr] = None
    allow_truncation: bool = False

    def __post_init__(self):
        if self.generations < 0:
            raise ConfigurationError(f"generation budget must be >= 0, got {self.generations}")
        if self.retention not in ("all", "final", "none"):
            raise ConfigurationError(f"unknown retention policy: {self.retention}")
        if not self.allow_truncation and self.expected_log_population > math.log(self.cap):
            raise ConfigurationError(
                f"population cap {self.cap} is below the expected final population "
                f"{self.offspring.mean:.6g}^{self.generations}; raise the cap or allow truncation"
            )

    @property
    def expected_log_population(self) -> float:
        """Log of m^generations, the mean population after the last generation."""
        mean = self.offspring.mean
        return self.generations * math.log(mean) if mean > 1 else 0.0

    @property
    def cap(self) -> int:
        return self.population_cap if self.population_cap is not None else numerics.population_cap

    @property
    def start(self) -> VertexAddr:
        return self.kernel.origin if self.origin is None else self.origin


@dataclass
class TraceRecord:
    """Visited vertices, traversed edges and populations of one run."""

    graph: GraphFamily
    origin: VertexAddr
    first_visit: Dict[VertexAddr, int]
    edges: Set[FrozenSet[VertexAddr]]
    populations: List[int]
    states: List[GenerationState] = field(default_factory=list)
    final_state: Optional[GenerationState] = None
    color: Optional[str] = None
    truncated: bool = False
    generations_completed: int = 0
    seed: Optional[int] = None
    replication: int = 0

    @property
    def visited(self) -> Set[VertexAddr]:
        return set(self.first_visit)


def simulate_brw(cfg: RunConfig, color: Optional[str] = None) -> TraceRecord:
    """
    Simulate a branching random walk from one particle at the start vertex.

    Args:
        cfg: Run configuration
        color: Optional label stamped on the trace

    Returns:
        TraceRecord of the completed run

    Raises:
        TruncationError: population above the cap; carries the partial trace
    """
    kernel = cfg.kernel
    start = cfg.start
    kernel.graph.validate(start)
    rng = spawn_rng(cfg.seed, cfg.replication, cfg.stream)
    counts: Dict[VertexAddr, int] = {start: 1}
    trace = TraceRecord(
        graph=kernel.graph,
        origin=start,
        first_visit={start: 0},
        edges=set(),
        populations=[1],
        color=color,
        seed=cfg.seed,
        replication=cfg.replication,
    )
    if cfg.retention == "all":
        trace.states.append(GenerationState(0, dict(counts)))
    dispatched = 0

    for n in range(1, cfg.generations + 1):
        nxt: Dict[VertexAddr, int] = {}
        for v, c in counts.items():
            total = int(cfg.offspring.sample_total(c, rng))
            dispatched += total
            for t, k in kernel.sample_targets(v, total, rng).items():
                nxt[t] = nxt.get(t, 0) + k
                if t != v:
                    trace.edges.add(frozenset((v, t)))
                if t not in trace.first_visit:
                    trace.first_visit[t] = n
        counts = nxt
        population = sum(counts.values())
        trace.populations.append(population)
        trace.generations_completed = n
        if cfg.retention == "all":
            trace.states.append(GenerationState(n, dict(counts)))
        if population > cfg.cap:
            trace.truncated = True
            trace.final_state = GenerationState(n, counts)
            record_simulation("truncated", n, dispatched)
            logger.warning(
                f"[BRW] population {population} above cap {cfg.cap} at generation {n} "
                f"(seed={cfg.seed}, replication={cfg.replication})"
            )
            raise TruncationError(
                f"population {population} exceeded the cap {cfg.cap} at generation {n}",
                partial_trace=trace,
                generation=n,
            )

    trace.final_state = GenerationState(cfg.generations, counts)
    record_simulation("completed", cfg.generations, dispatched)
    return trace


def simulate_or_partial(cfg: RunConfig, color: Optional[str] = None) -> TraceRecord:
    """``simulate_brw`` returning the truncated partial trace instead of raising."""
    try:
        return simulate_brw(cfg, color)
    except TruncationError as e:
        return e.partial_trace


def many_to_one_check(cfg: RunConfig, n: int, target: VertexAddr, replications: int) -> ManyToOneResult:
    """
    Monte Carlo E[#particles at target at generation n] against m^n P_i(X_n = target).

    Raises:
        InternalConsistencyError: particles observed where the exact probability is zero
    """
    kernel = cfg.kernel
    exact_p = transition_probability(kernel, cfg.start, target, n)
    exact = cfg.offspring.mean**n * float(exact_p)

    def count_at_target(replication: int) -> int:
        run = RunConfig(
            kernel=kernel,
            offspring=cfg.offspring,
            generations=n,
            seed=cfg.seed,
            population_cap=cfg.population_cap,
            retention="final",
            replication=replication,
            stream=cfg.stream,
            origin=cfg.origin,
            allow_truncation=cfg.allow_truncation,
        )
        return simulate_brw(run).final_state.counts.get(target, 0)

    samples = np.array(run_replications(count_at_target, replications), dtype=float)
    if exact_p == 0 and samples.any():
        raise InternalConsistencyError(
            f"{int(samples.sum())} particles reached {target!r} at generation {n} "
            f"where the exact probability is zero"
        )
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0
    if stderr > 0:
        z = (mean - exact) / stderr
    else:
        z = 0.0 if math.isclose(mean, exact, rel_tol=1e-12, abs_tol=1e-12) else math.inf
    logger.info(f"[BRW] many-to-one n={n} mc={mean:.6g} exact={exact:.6g} z={z:.3f}")
    return ManyToOneResult(
        n=n,
        target=repr(target),
        replications=replications,
        mc_mean=mean,
        mc_stderr=stderr,
        exact=exact,
        z_score=z,
    )


# ==================== Exact laws ====================

StateKey = Tuple[Tuple[VertexAddr, int], ...]


def _state_key(counts: Dict[VertexAddr, int]) -> StateKey:
    return tuple(sorted(((v, c) for v, c in counts.items() if c), key=lambda item: repr(item[0])))


def _merge(a: Dict[VertexAddr, int], b: Dict[VertexAddr, int]) -> Dict[VertexAddr, int]:
    out = dict(a)
    for v, c in b.items():
        out[v] = out.get(v, 0) + c
    return out


def _particle_law(kernel: Kernel, v: VertexAddr, offspring: OffspringDist) -> Dict[StateKey, Fraction]:
    """Law of the children placement of one particle, children stepping one at a time."""
    row = list(kernel.step_distribution(v).items())
    law: Dict[StateKey, Fraction] = {}
    for k, mu_k in zip(offspring.support, offspring.rational_probs):
        if not mu_k:
            continue
        placements: Dict[StateKey, Fraction] = {(): Fraction(1)}
        for _ in range(k):
            step: Dict[StateKey, Fraction] = {}
            for key, prob in placements.items():
                for t, p in row:
                    new = _state_key(_merge(dict(key), {t: 1}))
                    step[new] = step.get(new, Fraction(0)) + prob * p
            placements = step
        for key, prob in placements.items():
            law[key] = law.get(key, Fraction(0)) + mu_k * prob
    return law


def _vertex_law(kernel: Kernel, v: VertexAddr, c: int, offspring: OffspringDist) -> Dict[StateKey, Fraction]:
    """Law of the placement of all children of c particles at v by total count and multinomial."""
    row = list(kernel.step_distribution(v).items())
    totals: Dict[int, Fraction] = {0: Fraction(1)}
    for _ in range(c):
        nxt: Dict[int, Fraction] = {}
        for s, prob in totals.items():
            for k, mu_k in zip(offspring.support, offspring.rational_probs):
                if mu_k:
                    nxt[s + k] = nxt.get(s + k, Fraction(0)) + prob * mu_k
        totals = nxt
    law: Dict[StateKey, Fraction] = {}
    for total, prob in totals.items():
        for split in cartesian(range(total + 1), repeat=len(row)):
            if sum(split) != total:
                continue
            weight = Fraction(factorial(total))
            for (_, p), n_t in zip(row, split):
                weight = weight * p**n_t / factorial(n_t)
            key = _state_key({t: n_t for (t, _), n_t in zip(row, split) if n_t})
            law[key] = law.get(key, Fraction(0)) + prob * weight
    return law


def exact_generation_law(
    kernel: Kernel, offspring: OffspringDist, generations: int, aggregated: bool = True
) -> Dict[StateKey, Fraction]:
    """
    Exact law of the generation state after ``generations`` steps.

    Args:
        kernel: Kernel in rational mode
        offspring: Offspring law
        generations: Number of generations (small)
        aggregated: Dispatch per vertex (total + multinomial) instead of per particle

    Returns:
        Mapping canonical state -> probability
    """
    if kernel.mode is not ArithmeticMode.RATIONAL:
        raise ConfigurationError("exact generation laws need a rational-mode kernel")
    law: Dict[StateKey, Fraction] = {_state_key({kernel.origin: 1}): Fraction(1)}
    for _ in range(generations):
        nxt: Dict[StateKey, Fraction] = {}
        for key, prob in law.items():
            parts: List[Dict[StateKey, Fraction]] = []
            for v, c in key:
                if aggregated:
                    parts.append(_vertex_law(kernel, v, c, offspring))
                else:
                    parts.extend(_particle_law(kernel, v, offspring) for _ in range(c))
            combined: Dict[StateKey, Fraction] = {(): prob}
            for part in parts:
                step: Dict[StateKey, Fraction] = {}
                for a, pa in combined.items():
                    for b, pb in part.items():
                        merged = _state_key(_merge(dict(a), dict(b)))
                        step[merged] = step.get(merged, Fraction(0)) + pa * pb
                combined = step
            for merged, p in combined.items():
                nxt[merged] = nxt.get(merged, Fraction(0)) + p
        law = nxt
    return law


# ==================== Lumped batches ====================

@dataclass
class LumpedBatch:
    """Class counts of a BRW projected onto a lumped chain, one column per replication."""

    counts: Dict[Any, np.ndarray]
    capped: np.ndarray
    steps: int

    def at(self, state) -> np.ndarray:
        col = self.counts.get(state)
        return col if col is not None else np.zeros_like(self.capped, dtype=np.int64)

    @property
    def totals(self) -> np.ndarray:
        out = np.zeros_like(self.capped, dtype=np.int64)
        for col in self.counts.values():
            out += col
        return out


def simulate_lumped_batch(
    chain: LumpedChain,
    offspring: OffspringDist,
    steps: int,
    initial: np.ndarray,
    rng: np.random.Generator,
    target: Any = None,
    cap: Optional[int] = None,
) -> LumpedBatch:
    """
    Advance independent BRWs on a lumped chain for ``steps`` generations.

    All replications start with ``initial[r]`` particles in ``chain.start``. With
    a ``target``, classes that cannot reach it in the remaining steps are
    dropped, which is exact for counts at the target.

    Args:
        chain: Lumped chain
        offspring: Offspring law
        steps: Number of generations
        initial: Starting counts per replication
        rng: Generator shared by the batch
        target: Class whose final count matters, or None to keep everything
        cap: Total population above which a replication is frozen and flagged

    Returns:
        LumpedBatch with counts per class and the capped mask
    """
    initial = np.asarray(initial, dtype=np.int64)
    capped = np.zeros(len(initial), dtype=bool)
    counts: Dict[Any, np.ndarray] = {chain.start: initial.copy()}
    target_level = chain.level(target) if target is not None else 0
    for step in range(1, steps + 1):
        keep = None
        if target is not None:
            remaining = steps - step
            keep = lambda t, r=remaining: chain.level(t) - target_level <= r  # noqa: E731
        counts = advance_lumped(chain, offspring, counts, rng, keep)
        if cap is not None:
            over = LumpedBatch(counts, capped, step).totals > cap
            if over.any():
                capped |= over
                for col in counts.values():
                    col[over] = 0
    return LumpedBatch(counts, capped, steps)


def advance_lumped(
    chain: LumpedChain,
    offspring: OffspringDist,
    counts: Dict[Any, np.ndarray],
    rng: np.random.Generator,
    keep: Optional[Callable[[Any], bool]] = None,
) -> Dict[Any, np.ndarray]:
    """One generation of lumped class counts: offspring totals, then a multinomial split per class."""
    nxt: Dict[Any, np.ndarray] = {}
    for state, col in counts.items():
        if not col.any():
            continue
        totals = offspring.sample_total(col, rng)
        row = chain.row(state)
        probs = np.array([float(p) for _, p in row])
        split = rng.multinomial(totals, probs / probs.sum())
        for pos, (t, _) in enumerate(row):
            if keep is not None and not keep(t):
                continue
            moved = split[:, pos]
            if not moved.any():
                continue
            if t in nxt:
                nxt[t] += moved
            else:
                nxt[t] = moved.astype(np.int64)
    return nxt
