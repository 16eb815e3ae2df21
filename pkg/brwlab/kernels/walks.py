"""
Random-walk kernels over lazily generated graphs.

A kernel produces one transition row per vertex: source first (lazy mass),
then targets in the graph's canonical neighbour order. Rows are memoised in a
bounded LRU cache; kernels are otherwise immutable and safe to share across
threads.
"""
import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
from cachetools import LRUCache

from brwlab.core.config import numerics
from brwlab.core.exceptions import ConfigurationError
from brwlab.core.logging import get_logger
from brwlab.core.utils import Number
from brwlab.graphs.families import GraphFamily, HomTree, Line, Product, VertexAddr
from brwlab.graphs.spine import SpineEmbedding
from brwlab.kernels.specs import (
    ArithmeticMode,
    BiasedLine,
    HeightBiased,
    KernelSpec,
    Lazy,
    ProductKernel,
    Simple,
)

logger = get_logger(__name__)

DistVector = Dict[VertexAddr, Number]


@dataclass(frozen=True)
class TransitionRow:
    """One row of a transition kernel."""

    source: VertexAddr
    targets: Tuple[VertexAddr, ...]
    probs: Tuple[Number, ...]

    def items(self) -> Iterator[Tuple[VertexAddr, Number]]:
        return zip(self.targets, self.probs)

    def total(self) -> Number:
        return sum(self.probs)

    @property
    def stay(self) -> Number:
        if self.targets and self.targets[0] == self.source:
            return self.probs[0]
        return 0


class Kernel(ABC):
    """Base class for walk kernels."""

    def __init__(self, spec: KernelSpec, graph: GraphFamily, mode: ArithmeticMode):
        self.spec = spec
        self.graph = graph
        self.mode = mode
        self._rows: LRUCache = LRUCache(maxsize=numerics.row_cache_size)
        self._lock = threading.Lock()

    @property
    def origin(self) -> VertexAddr:
        return self.graph.origin

    def describe(self) -> str:
        return self.spec.describe()

    @abstractmethod
    def _build_row(self, v: VertexAddr) -> List[Tuple[VertexAddr, Number]]:
        """Row entries for a validated vertex, source first."""

    def step_distribution(self, v: VertexAddr) -> TransitionRow:
        """
        Transition row at ``v``.

        Args:
            v: Vertex address

        Returns:
            TransitionRow with strictly positive probabilities summing to 1
        """
        with self._lock:
            row = self._rows.get(v)
        if row is not None:
            return row
        self.graph.validate(v)
        pairs = [(t, p) for t, p in self._build_row(v) if p]
        row = TransitionRow(v, tuple(t for t, _ in pairs), tuple(p for _, p in pairs))
        with self._lock:
            self._rows[v] = row
        return row

    def stay_probability(self, v: VertexAddr) -> Number:
        return self.step_distribution(v).stay

    def sample_targets(
        self, v: VertexAddr, count: int, rng: np.random.Generator
    ) -> Dict[VertexAddr, int]:
        """
        Dispatch ``count`` particles from ``v`` by one multinomial draw.

        Returns:
            Mapping target -> particle count (zero counts omitted)
        """
        if count <= 0:
            return {}
        row = self.step_distribution(v)
        probs = np.array([float(p) for p in row.probs])
        draws = rng.multinomial(count, probs / probs.sum())
        return {t: int(c) for t, c in zip(row.targets, draws) if c}

    def push(
        self, dist: DistVector, keep: Optional[Callable[[VertexAddr], bool]] = None
    ) -> DistVector:
        """
        One step of the distribution DP: returns dist @ P.

        Args:
            dist: Sparse vertex -> mass mapping
            keep: Optional predicate; targets failing it are dropped

        Returns:
            New sparse distribution
        """
        zero = self.mode.zero
        out: DistVector = {}
        for v, mass in dist.items():
            for t, p in self.step_distribution(v).items():
                if keep is not None and not keep(t):
                    continue
                out[t] = out.get(t, zero) + mass * p
        return out


class SimpleWalk(Kernel):
    """Each neighbour with probability 1/deg."""

    def _build_row(self, v):
        deg = self.graph.degree(v)
        p = self.mode.number(Fraction(1, deg))
        return [(u, p) for u in self.graph.neighbors(v)]

    def sample_targets(self, v, count, rng):
        return self.graph.sample_uniform_neighbors(v, count, rng)


class LazyWalk(Kernel):
    """Mixture of the identity (weight s) with a base kernel."""

    def __init__(self, spec: Lazy, graph, mode, base: Kernel):
        super().__init__(spec, graph, mode)
        self.base = base
        self.stay = mode.number(spec.stay)

    def _build_row(self, v):
        s = self.stay
        base_row = self.base.step_distribution(v)
        entries = [(v, s + (1 - s) * base_row.stay)]
        entries.extend((t, (1 - s) * q) for t, q in base_row.items() if t != v)
        return entries

    def sample_targets(self, v, count, rng):
        if count <= 0:
            return {}
        stayed = int(rng.binomial(count, float(self.stay)))
        out: Dict[VertexAddr, int] = {v: stayed} if stayed else {}
        for t, n in self.base.sample_targets(v, count - stayed, rng).items():
            out[t] = out.get(t, 0) + n
        return out


class BiasedLineWalk(Kernel):
    """Right with probability p, left with 1-p."""

    def __init__(self, spec: BiasedLine, graph, mode):
        super().__init__(spec, graph, mode)
        self.p = mode.number(spec.p)

    def _build_row(self, v):
        return [(v + 1, self.p), (v - 1, 1 - self.p)]


class HeightBiasedWalk(Kernel):
    """p to the distinguished neighbour (height h+1), (1-p)/2 to each of the other two."""

    def __init__(self, spec: HeightBiased, graph, mode):
        super().__init__(spec, graph, mode)
        self.p = mode.number(spec.p)
        self.embedding = SpineEmbedding(graph)

    def _build_row(self, v):
        up = self.embedding.distinguished_neighbor(v)
        side = (1 - self.p) / 2
        return [(u, self.p if u == up else side) for u in self.graph.neighbors(v)]


class ProductWalk(Kernel):
    """alpha_1 P^(1) + ... + alpha_d P^(d) on a Cartesian product."""

    def __init__(self, spec: KernelSpec, graph: Product, mode, factors: List[Kernel], weights):
        super().__init__(spec, graph, mode)
        self.factors = tuple(factors)
        self.weights = tuple(weights)

    def _build_row(self, v):
        stay = sum(
            (w * k.stay_probability(v[pos]) for pos, (k, w) in enumerate(zip(self.factors, self.weights))),
            self.mode.zero,
        )
        entries = [(v, stay)]
        for pos, (k, w) in enumerate(zip(self.factors, self.weights)):
            if not w:
                continue
            for t, q in k.step_distribution(v[pos]).items():
                if t != v[pos]:
                    entries.append((v[:pos] + (t,) + v[pos + 1 :], w * q))
        return entries

    def sample_targets(self, v, count, rng):
        if count <= 0:
            return {}
        weights = np.array([float(w) for w in self.weights])
        draws = rng.multinomial(count, weights / weights.sum())
        out: Dict[VertexAddr, int] = {}
        for pos, (k, c) in enumerate(zip(self.factors, draws)):
            if not c:
                continue
            for t, n in k.sample_targets(v[pos], int(c), rng).items():
                key = v if t == v[pos] else v[:pos] + (t,) + v[pos + 1 :]
                out[key] = out.get(key, 0) + n
        return out


def _check_probability(name: str, value) -> None:
    if not 0 < float(value) < 1:
        raise ConfigurationError(f"{name} must lie in (0, 1), got: {value}")


def _normalized_weights(spec: ProductKernel, mode: ArithmeticMode) -> List[Number]:
    raw = [float(w) for w in spec.weights]
    if any(w < 0 or math.isnan(w) for w in raw):
        raise ConfigurationError(f"product weights must be non-negative, got: {raw}")
    if abs(sum(raw) - 1.0) > numerics.row_sum_tolerance:
        raise ConfigurationError(f"product weights must sum to 1, got sum {sum(raw)!r}")
    weights = [mode.number(w) for w in spec.weights]
    if mode is ArithmeticMode.RATIONAL and sum(weights) != 1:
        weights[-1] = 1 - sum(weights[:-1])
    return weights


def build_kernel(
    spec: KernelSpec, g: GraphFamily, mode: ArithmeticMode = ArithmeticMode.FLOAT
) -> Kernel:
    """
    Build the walk kernel described by ``spec`` on ``g``.

    Args:
        spec: Kernel specification
        g: Graph family
        mode: Arithmetic mode for row probabilities

    Returns:
        Kernel object

    Raises:
        ConfigurationError: spec/graph mismatch or bad weights
    """
    if isinstance(spec, Simple):
        return SimpleWalk(spec, g, mode)
    if isinstance(spec, Lazy):
        _check_probability("lazy stay probability", spec.stay)
        return LazyWalk(spec, g, mode, build_kernel(spec.base, g, mode))
    if isinstance(spec, BiasedLine):
        if not isinstance(g, Line):
            raise ConfigurationError(f"biasedline needs the line z, got {g.tag}")
        _check_probability("biasedline p", spec.p)
        return BiasedLineWalk(spec, g, mode)
    if isinstance(spec, HeightBiased):
        if not (isinstance(g, HomTree) and g.d == 3):
            raise ConfigurationError(f"heightbiased needs t(3), got {g.tag}")
        _check_probability("heightbiased p", spec.p)
        return HeightBiasedWalk(spec, g, mode)
    if isinstance(spec, ProductKernel):
        if not isinstance(g, Product):
            raise ConfigurationError(f"product kernel needs a product graph, got {g.tag}")
        if len(spec.factors) != g.arity:
            raise ConfigurationError(
                f"product kernel has {len(spec.factors)} factors, graph has {g.arity}"
            )
        weights = _normalized_weights(spec, mode)
        factors = [build_kernel(s, f, mode) for (s, _), f in zip(spec.factors, g.factors)]
        return ProductWalk(spec, g, mode, factors, weights)
    raise ConfigurationError(f"unknown kernel spec: {spec!r}")


def as_product_walk(kernel: Kernel) -> Optional[ProductWalk]:
    """
    The product-walk form of ``kernel`` when it has one.

    Simple walk on a product of regular factors is the product walk with
    degree-proportional weights.
    """
    if isinstance(kernel, ProductWalk):
        return kernel
    if isinstance(kernel, SimpleWalk) and isinstance(kernel.graph, Product):
        g = kernel.graph
        if g.regular_degree is None:
            return None
        degrees = [f.regular_degree for f in g.factors]
        weights = [Fraction(d, sum(degrees)) for d in degrees]
        spec = ProductKernel(tuple((Simple(), w) for w in weights))
        return build_kernel(spec, g, kernel.mode)  # type: ignore[return-value]
    return None
