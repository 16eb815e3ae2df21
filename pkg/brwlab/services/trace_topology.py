"""
Topology of BRW traces: far components, red/blue intersections, fiber hits
and the Galton-Watson process embedded along a copy of Z.
"""
import math
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Set

import numpy as np
from scipy import stats

from brwlab.core.config import numerics
from brwlab.core.exceptions import (
    ConfigurationError,
    DomainError,
    InternalConsistencyError,
    SampleFailureError,
    UnavailableDataError,
)
from brwlab.core.logging import get_logger
from brwlab.core.utils import STREAM_BLUE, STREAM_LINEAGE, STREAM_RED, spawn_rng
from brwlab.graphs.families import HomTree, Line, Product, VertexAddr, product
from brwlab.kernels.specs import ArithmeticMode, BiasedLine, Lazy, ProductKernel, Simple
from brwlab.kernels.walks import Kernel, build_kernel
from brwlab.schemas.results import EmbeddedGWStats, EndsProfile, FiberHitStats
from brwlab.services.brw_engine import (
    OffspringDist,
    RunConfig,
    TraceRecord,
    advance_lumped,
    simulate_lumped_batch,
    simulate_or_partial,
)
from brwlab.services.chains import constrained_chain, exact_series, log_series, lumped_chain
from brwlab.services.spectral_lab import ReturnSeries, analytic_rho, return_series, supercritical_lag

logger = get_logger(__name__)

EXACT_LAG_LIMIT = 30
SURVIVAL_CONFIDENCE = 0.99


class DisjointSet:
    """Union-find with path compression and union by size."""

    def __init__(self, items: Iterable[Hashable] = ()):
        self.parent: Dict[Hashable, Hashable] = {}
        self.size: Dict[Hashable, int] = {}
        for item in items:
            self.add(item)

    def add(self, item: Hashable) -> None:
        if item not in self.parent:
            self.parent[item] = item
            self.size[item] = 1

    def find(self, item: Hashable) -> Hashable:
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: Hashable, b: Hashable) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def __contains__(self, item: Hashable) -> bool:
        return item in self.parent

    def __len__(self) -> int:
        return len(self.parent)


# ==================== Ends ====================

def ends_profile(
    trace: TraceRecord,
    radii: Sequence[int],
    final_particles: Optional[Dict[VertexAddr, int]] = None,
) -> EndsProfile:
    """
    Count trace components outside B(origin, r) that hold final-generation particles.

    Args:
        trace: Trace of a run
        radii: Radii r
        final_particles: Occupied vertices of the last generation (defaults to
            the trace's final state)

    Returns:
        EndsProfile with one count per radius

    Raises:
        InternalConsistencyError: a final particle sits on an unvisited vertex
    """
    g = trace.graph
    if final_particles is None:
        final_particles = trace.final_state.counts if trace.final_state else {}
    occupied = [v for v, c in final_particles.items() if c]
    for v in occupied:
        if v not in trace.first_visit:
            raise InternalConsistencyError(f"final particle at {v!r} is not in the trace")
    distance = {v: g.distance(v) for v in trace.first_visit}

    counts: List[int] = []
    for r in radii:
        far = DisjointSet(v for v, d in distance.items() if d > r)
        for edge in trace.edges:
            a, b = tuple(edge)
            if a in far and b in far:
                far.union(a, b)
        roots = {far.find(v) for v in occupied if distance[v] > r}
        counts.append(len(roots))
    return EndsProfile(
        radii=list(radii),
        counts=counts,
        generations=trace.generations_completed,
        final_particles=sum(final_particles.values()),
        truncated=trace.truncated,
    )


# ==================== Purple ====================

@dataclass
class ColoredTrace:
    """Red and blue visited sets and their intersection."""

    red: Set[VertexAddr]
    blue: Set[VertexAddr]
    purple: Set[VertexAddr]
    purple_curve: List[int]
    truncated: bool
    seed: int
    replication: int
    gap_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def purple_count(self) -> int:
        return len(self.purple)


def _fiber_gaps(red: TraceRecord, blue: TraceRecord) -> Dict[int, int]:
    """Distance from each red visit on the origin fiber to the nearest blue visit there."""
    g = red.graph
    if not isinstance(g, Product) or not isinstance(g.factors[-1], Line):
        return {}
    base = g.origin[:-1]
    red_z = sorted(v[-1] for v in red.first_visit if v[:-1] == base)
    blue_z = np.array(sorted(v[-1] for v in blue.first_visit if v[:-1] == base))
    if not red_z or not len(blue_z):
        return {}
    gaps: Counter = Counter()
    for z in red_z:
        pos = np.searchsorted(blue_z, z)
        near = [abs(z - blue_z[i]) for i in (pos - 1, pos) if 0 <= i < len(blue_z)]
        gaps[int(min(near))] += 1
    return dict(sorted(gaps.items()))


def purple_experiment(
    kernel: Kernel,
    offspring: OffspringDist,
    source_i: VertexAddr,
    source_j: VertexAddr,
    budget: int,
    seed: int,
    replication: int = 0,
    population_cap: Optional[int] = None,
    allow_truncation: bool = False,
) -> ColoredTrace:
    """
    Run independent red and blue BRWs from i and j and intersect their traces.

    Returns:
        ColoredTrace; ``purple_curve[t]`` counts vertices visited by both
        colours by generation t
    """
    runs = []
    for color, stream, source in (("red", STREAM_RED, source_i), ("blue", STREAM_BLUE, source_j)):
        cfg = RunConfig(
            kernel=kernel,
            offspring=offspring,
            generations=budget,
            seed=seed,
            population_cap=population_cap,
            retention="final",
            replication=replication,
            stream=stream,
            origin=source,
            allow_truncation=allow_truncation,
        )
        runs.append(simulate_or_partial(cfg, color))
    red, blue = runs
    purple = set(red.first_visit) & set(blue.first_visit)
    curve = [0] * (budget + 1)
    for v in purple:
        t = max(red.first_visit[v], blue.first_visit[v])
        if t <= budget:
            curve[t] += 1
    curve = np.cumsum(curve).tolist()
    return ColoredTrace(
        red=set(red.first_visit),
        blue=set(blue.first_visit),
        purple=purple,
        purple_curve=curve,
        truncated=red.truncated or blue.truncated,
        seed=seed,
        replication=replication,
        gap_histogram=_fiber_gaps(red, blue),
    )


# ==================== Fibers ====================

def fiber_hit_stats(trace: TraceRecord, fiber: VertexAddr) -> FiberHitStats:
    """
    Generations at which {fiber} x Z was occupied.

    Raises:
        ConfigurationError: the trace is not on Product(T_d, Z)
        UnavailableDataError: generation states were not retained
    """
    g = trace.graph
    if not (isinstance(g, Product) and g.arity == 2 and isinstance(g.factors[1], Line)):
        raise ConfigurationError(f"fiber hits need a Product(T, Z) trace, got {g.tag}")
    g.factors[0].validate(fiber)
    if len(trace.states) != trace.generations_completed + 1:
        raise UnavailableDataError("fiber hits need every generation state (retention = all)")
    hits = [state.generation for state in trace.states if any(v[0] == fiber for v in state.counts)]
    return FiberHitStats(
        fiber=repr(fiber),
        hit_generations=hits,
        last_hit=hits[-1] if hits else None,
        generations=trace.generations_completed,
    )


# ==================== Lag ====================

def lazy_tree_kernel(mode: ArithmeticMode = ArithmeticMode.FLOAT) -> Kernel:
    """Lazy simple walk on T_3 with stay 1/2: the tree projection of T_3 x Z walks."""
    return build_kernel(Lazy(Simple(), Fraction(1, 2)), HomTree(3), mode)


def biased_product_rho(p) -> Decimal:
    """rho of 1/2 Simple(T_3) + 1/2 BiasedLine(p)."""
    spec = ProductKernel(((Simple(), Fraction(1, 2)), (BiasedLine(p), Fraction(1, 2))))
    return analytic_rho(spec, product(HomTree(3), Line()))


def min_supercritical_lag(p, lazy_series: Optional[ReturnSeries] = None, horizon: int = 2000) -> int:
    """
    Smallest k >= 1 with p_k > rho(P(p))^k, p_k the lazy T_3 return probability.

    Args:
        p: Line bias
        lazy_series: Lazy T_3 return series (computed to ``horizon`` when omitted)
        horizon: Series length used when ``lazy_series`` is omitted

    Raises:
        DomainError: p = 1/2
        InsufficientDataError: no crossing within the series
        InternalConsistencyError: the exact recheck disagrees
    """
    if Fraction(str(p)) == Fraction(1, 2):
        raise DomainError("p = 1/2 has rho(P(p)) = rho(L); no lag exists")
    rho = biased_product_rho(p)
    series = lazy_series or return_series(lazy_tree_kernel(), horizon)
    k = supercritical_lag(series, float(rho))
    if k <= EXACT_LAG_LIMIT:
        exact = exact_series(lumped_chain(lazy_tree_kernel(ArithmeticMode.RATIONAL)), k)
        with localcontext() as ctx:
            ctx.prec = 50

            def crosses(n: int) -> bool:
                value = Decimal(exact[n].numerator) / Decimal(exact[n].denominator)
                return value > rho**n

            if not crosses(k) or any(crosses(n) for n in range(1, k)):
                raise InternalConsistencyError(f"exact recheck of lag {k} for p={p} failed")
    logger.info(f"[TOPOLOGY] supercritical lag for p={p}: k={k}")
    return k


# ==================== Embedded Galton-Watson ====================

def gw_survival_probability(samples: Sequence[int], iterations: int = 10000, tol: float = 1e-12) -> float:
    """
    Survival probability of a GW process with the empirical offspring law of ``samples``.

    The extinction probability is the smallest fixed point of the empirical pgf,
    reached by iterating from 0.
    """
    values, counts = np.unique(np.asarray(samples, dtype=np.int64), return_counts=True)
    weights = counts / counts.sum()
    s = 0.0
    for _ in range(iterations):
        nxt = float(np.sum(weights * np.power(s, values)))
        if abs(nxt - s) < tol:
            s = nxt
            break
        s = nxt
    return 1.0 - s


def wilson_interval(successes: int, trials: int, confidence: float = SURVIVAL_CONFIDENCE):
    if trials == 0:
        return 0.0, 1.0
    z = stats.norm.ppf(0.5 + confidence / 2)
    phat = successes / trials
    denom = 1 + z**2 / trials
    centre = (phat + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z**2 / (4 * trials**2)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def z0_constraints(kernel: Kernel, z0: str) -> List[str]:
    """Per-factor constraints describing the copy of Z used as Z_0."""
    g = kernel.graph
    if not isinstance(g, Product) or g.arity != 2:
        raise ConfigurationError(f"embedded GW needs a two-factor product, got {g.tag}")
    if z0 == "fiber":
        if not isinstance(g.factors[1], Line):
            raise ConfigurationError("fiber Z_0 needs a Z second factor")
        return ["point", "free"]
    if z0 == "spine":
        if not (isinstance(g.factors[0], HomTree) and g.factors[0].d == 3):
            raise ConfigurationError("spine Z_0 needs T_3 as first factor")
        return ["spine", "point"]
    raise ConfigurationError(f"unknown Z_0 kind: {z0}")


def embedded_gw_stats(
    kernel: Kernel,
    offspring: OffspringDist,
    z0: str,
    lag: Optional[int],
    budget: int,
    replications: int,
    seed: int,
    levels: int = 6,
    horizon: int = 4000,
) -> EmbeddedGWStats:
    """
    Galton-Watson process of flagged-particle descendants in Z_0 at times k, 2k, ...

    Runs in the lumped space of Z_0 membership, batched over replications. A
    search phase finds the first generation >= budget/4 with a particle in Z_0;
    from there the flagged particle's descendants in Z_0 are propagated k steps
    per level, each level starting from the previous level's count.
    The flagged particle is one member of the Z_0 batch at its flag generation.
    Its lumped state is the Z_0 state of the chain, so by the Markov property
    its descendants are simulated afresh from that state with their original law.

    Args:
        kernel: Product kernel
        offspring: Offspring law (mean m)
        z0: "fiber" or "spine"
        lag: k (computed as the least k with m^k p_k > 1 when None)
        budget: Generation budget of the search phase
        replications: Number of independent replications
        seed: Run seed
        levels: Number of GW generations observed
        horizon: Series length for the lag search

    Raises:
        SampleFailureError: some replication found no particle in Z_0 within the budget
    """
    chain = constrained_chain(kernel, z0_constraints(kernel, z0))
    if chain is None:
        raise ConfigurationError(f"no lumped chain for Z_0 = {z0} under {kernel.describe()}")
    m = offspring.mean
    log_p = log_series(chain, horizon if lag is None else lag)
    if lag is None:
        series = ReturnSeries(chain.start, log_p, None, 1, kernel.mode, "quotient")
        lag = supercritical_lag(series, 1.0 / m) if m > 1 else 1
    reference = float(np.exp(lag * math.log(m) + log_p[lag]))

    search_rng = spawn_rng(seed, 0, STREAM_LINEAGE, 0)
    ones = np.ones(replications, dtype=np.int64)
    warmup = max(budget // 4, 0)
    batch = simulate_lumped_batch(chain, offspring, warmup, ones, search_rng, target=None)
    flags = np.full(replications, -1, dtype=np.int64)
    batch_sizes = np.zeros(replications, dtype=np.int64)
    in_z0 = batch.at(chain.start)
    hit = in_z0 > 0
    flags[hit] = warmup
    batch_sizes[hit] = in_z0[hit]
    gen = warmup
    counts = batch.counts
    while (flags < 0).any() and gen < budget:
        gen += 1
        counts = advance_lumped(chain, offspring, counts, search_rng)
        in_z0 = counts.get(chain.start, np.zeros(replications, dtype=np.int64))
        newly = (flags < 0) & (in_z0 > 0)
        flags[newly] = gen
        batch_sizes[newly] = in_z0[newly]
    if (flags < 0).any():
        failed = int(np.nonzero(flags < 0)[0][0])
        raise SampleFailureError(f"no particle reached Z_0 within {budget} generations", replication=failed)

    gw_rng = spawn_rng(seed, 0, STREAM_LINEAGE, 1)
    cap = numerics.gw_extension_cap
    # one particle out of each flagged Z_0 batch
    current = np.minimum(batch_sizes, 1)
    frozen = np.zeros(replications, dtype=bool)
    sequences = [[1] for _ in range(replications)]
    y1 = None
    for _ in range(levels):
        active = (current > 0) & ~frozen
        if not active.any():
            break
        result = simulate_lumped_batch(chain, offspring, lag, np.where(active, current, 0), gw_rng, target=chain.start)
        nxt = result.at(chain.start)
        if y1 is None:
            y1 = nxt.copy()
        for r in np.nonzero(active)[0]:
            sequences[r].append(int(nxt[r]))
        frozen |= active & (nxt > cap)
        current = np.where(active, nxt, current)

    y1 = y1 if y1 is not None else np.zeros(replications, dtype=np.int64)
    mean = float(y1.mean())
    stderr = float(y1.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
    z = (mean - reference) / stderr if stderr > 0 else 0.0
    surviving = int(np.sum((current > 0) | frozen))
    low, high = wilson_interval(surviving, replications)
    logger.info(
        f"[TOPOLOGY] embedded GW z0={z0} k={lag} mean_y1={mean:.4f} reference={reference:.4f} "
        f"z={z:.3f} survival={surviving}/{replications}"
    )
    return EmbeddedGWStats(
        lag=lag,
        z0=z0,
        replications=replications,
        sequences=sequences,
        mean_y1=mean,
        stderr_y1=stderr,
        reference_mean=reference,
        z_score=z,
        survival_fraction=surviving / replications,
        survival_ci_low=low,
        survival_ci_high=high,
        gw_survival_reference=gw_survival_probability(y1),
        flag_generations=flags.tolist(),
        flag_batch_sizes=batch_sizes.tolist(),
        capped_replications=int(frozen.sum()),
    )

