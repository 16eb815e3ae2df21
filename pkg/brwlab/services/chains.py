"""
Lumped (quotient) Markov chains and propagation engines.

A lumped chain tracks a symmetry class of the walker instead of its vertex:
distance from a tree vertex, position on the line, (type, level) on the
hammock, distance to the spine. Return probabilities to the starting class
are preserved exactly, which is what makes long horizons cheap.

Two engines run a chain forward:

- ``log_series``: float, log domain. Transitions are flattened into COO arrays
  sorted by destination and each step is one ``np.logaddexp.reduceat``.
- ``exact_series``: dict DP in whatever number type the rows carry (Fraction
  in rational mode).
"""
import math
import threading
from abc import ABC, abstractmethod
from collections import deque
from fractions import Fraction
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from cachetools import LRUCache

from brwlab.core.config import numerics
from brwlab.core.exceptions import ResourceError
from brwlab.core.logging import get_logger
from brwlab.core.utils import Number, safe_log
from brwlab.graphs.families import HAMMOCK_ARITY, Hammock, HomTree, Line
from brwlab.kernels.specs import ArithmeticMode
from brwlab.kernels.walks import (
    BiasedLineWalk,
    HeightBiasedWalk,
    Kernel,
    LazyWalk,
    ProductWalk,
    SimpleWalk,
)

logger = get_logger(__name__)

State = Hashable
Row = List[Tuple[State, Number]]


class LumpedChain(ABC):
    """Markov chain on symmetry classes with a designated start class."""

    def __init__(self, mode: ArithmeticMode):
        self.mode = mode
        self._rows: LRUCache = LRUCache(maxsize=numerics.row_cache_size)
        self._lock = threading.Lock()

    @property
    @abstractmethod
    def start(self) -> State:
        """Class of the starting vertex."""

    @abstractmethod
    def _build_row(self, state: State) -> Row:
        """Transitions out of ``state``; a stay entry, if any, comes first."""

    @abstractmethod
    def level(self, state: State) -> int:
        """Graph distance between the start class and ``state``."""

    @property
    def tag(self) -> str:
        return type(self).__name__

    def row(self, state: State) -> Row:
        with self._lock:
            cached = self._rows.get(state)
        if cached is not None:
            return cached
        built = [(t, p) for t, p in self._build_row(state) if p]
        with self._lock:
            self._rows[state] = built
        return built

    def stay(self, state: State) -> Number:
        for t, p in self.row(state):
            if t == state:
                return p
        return self.mode.zero

    def reachable(self, depth: int) -> List[State]:
        """States within ``depth`` transitions of the start, in BFS order."""
        seen = {self.start: 0}
        order = [self.start]
        queue = deque([self.start])
        while queue:
            s = queue.popleft()
            if seen[s] == depth:
                continue
            for t, _ in self.row(s):
                if t not in seen:
                    seen[t] = seen[s] + 1
                    if len(seen) > numerics.support_cap:
                        raise ResourceError(
                            f"{self.tag}: more than {numerics.support_cap} states within {depth} steps"
                        )
                    order.append(t)
                    queue.append(t)
        return order

    def push(self, dist: Dict[State, Number]) -> Dict[State, Number]:
        out: Dict[State, Number] = {}
        zero = self.mode.zero
        for s, mass in dist.items():
            for t, p in self.row(s):
                out[t] = out.get(t, zero) + mass * p
        return out

    def sample_targets(self, state: State, count: int, rng: np.random.Generator) -> Dict[State, int]:
        if count <= 0:
            return {}
        row = self.row(state)
        probs = np.array([float(p) for _, p in row])
        draws = rng.multinomial(count, probs / probs.sum())
        return {t: int(c) for (t, _), c in zip(row, draws) if c}


class PointChain(LumpedChain):
    """One class: an unconstrained coordinate."""

    @property
    def start(self):
        return 0

    def _build_row(self, state):
        return [(0, self.mode.one)]

    def level(self, state):
        return 0


class TreeDistanceChain(LumpedChain):
    """Distance from a fixed vertex of T_d under simple walk."""

    def __init__(self, d: int, mode: ArithmeticMode):
        super().__init__(mode)
        self.d = d

    @property
    def start(self):
        return 0

    def _build_row(self, r):
        if r == 0:
            return [(1, self.mode.one)]
        inward = self.mode.number(Fraction(1, self.d))
        return [(r - 1, inward), (r + 1, 1 - inward)]

    def level(self, state):
        return state


class SpineDepthChain(LumpedChain):
    """Distance to the spine of T_3 under HeightBiased(p); p = 1/3 is simple walk."""

    def __init__(self, p: Number, mode: ArithmeticMode):
        super().__init__(mode)
        self.p = mode.number(p)

    @property
    def start(self):
        return 0

    def _build_row(self, r):
        p = self.p
        if r == 0:
            return [(0, (1 + p) / 2), (1, (1 - p) / 2)]
        return [(r - 1, p), (r + 1, 1 - p)]

    def level(self, state):
        return state


class LineChain(LumpedChain):
    """Position on Z relative to the start: right with probability p."""

    def __init__(self, p: Number, mode: ArithmeticMode):
        super().__init__(mode)
        self.p = mode.number(p)

    @property
    def start(self):
        return 0

    def _build_row(self, x):
        return [(x + 1, self.p), (x - 1, 1 - self.p)]

    def level(self, state):
        return abs(state)


class HammockChain(LumpedChain):
    """Simple walk on the hammock lumped to (type, level) classes, started at the tree root.

    ("t", g) is tree generation g, ("s", k) is spine vertex k. Generation-g tree
    vertices are equivalent under automorphisms fixing the root, so the lumping
    is exact for walks started at the root.
    """

    @property
    def start(self):
        return ("t", 0)

    def _build_row(self, state):
        kind, level = state
        num = self.mode.number
        if kind == "t":
            if level == 0:
                return [(("t", 1), num(Fraction(4, 5))), (("s", 0), num(Fraction(1, 5)))]
            seventh = num(Fraction(1, 7))
            return [
                (("t", level - 1), seventh),
                (("t", level + 1), num(Fraction(4, 7))),
                (("s", level - 1), seventh),
                (("s", level), seventh),
            ]
        deg = (1 if level == 0 else 2) + HAMMOCK_ARITY**level + HAMMOCK_ARITY ** (level + 1)
        row = [(("s", level - 1), num(Fraction(1, deg)))] if level >= 1 else []
        row.append((("s", level + 1), num(Fraction(1, deg))))
        row.append((("t", level), num(Fraction(HAMMOCK_ARITY**level, deg))))
        row.append((("t", level + 1), num(Fraction(HAMMOCK_ARITY ** (level + 1), deg))))
        return row

    def level(self, state):
        kind, level = state
        return level if kind == "t" else level + 1

    @staticmethod
    def layer(state) -> int:
        """Layer index: tree generation k and spine vertex k share layer k."""
        return state[1]


class LazyChain(LumpedChain):
    """Stay with probability s, otherwise follow the base chain."""

    def __init__(self, base: LumpedChain, stay: Number):
        super().__init__(base.mode)
        self.base = base
        self.s = base.mode.number(stay)

    @property
    def start(self):
        return self.base.start

    def _build_row(self, state):
        s = self.s
        base_row = self.base.row(state)
        base_stay = self.base.stay(state)
        row = [(state, s + (1 - s) * base_stay)]
        row.extend((t, (1 - s) * p) for t, p in base_row if t != state)
        return row

    def level(self, state):
        return self.base.level(state)


class ProductChain(LumpedChain):
    """Product of lumped chains mixed with weights; one coordinate moves per step."""

    def __init__(self, chains: Sequence[LumpedChain], weights: Sequence[Number], mode: ArithmeticMode):
        super().__init__(mode)
        self.chains = tuple(chains)
        self.weights = tuple(mode.number(w) for w in weights)

    @property
    def start(self):
        return tuple(c.start for c in self.chains)

    def _build_row(self, state):
        stay = sum(
            (w * c.stay(state[pos]) for pos, (c, w) in enumerate(zip(self.chains, self.weights))),
            self.mode.zero,
        )
        row = [(state, stay)]
        for pos, (c, w) in enumerate(zip(self.chains, self.weights)):
            if not w:
                continue
            for t, p in c.row(state[pos]):
                if t != state[pos]:
                    row.append((state[:pos] + (t,) + state[pos + 1 :], w * p))
        return row

    def level(self, state):
        return sum(c.level(s) for c, s in zip(self.chains, state))


def lumped_chain(kernel: Kernel, at_origin: bool = True) -> Optional[LumpedChain]:
    """
    Lumped chain tracking returns of ``kernel`` to its starting vertex.

    Args:
        kernel: Walk kernel (products are handled by convolution, not here)
        at_origin: Whether the walk starts at the graph origin; the hammock
            lumping is only valid from the tree root

    Returns:
        The chain, or None when no lossless lumping is known
    """
    mode = kernel.mode
    if isinstance(kernel, LazyWalk):
        base = lumped_chain(kernel.base, at_origin)
        return LazyChain(base, kernel.spec.stay) if base is not None else None
    if isinstance(kernel, BiasedLineWalk):
        return LineChain(kernel.spec.p, mode)
    if isinstance(kernel, SimpleWalk):
        g = kernel.graph
        if isinstance(g, HomTree):
            return TreeDistanceChain(g.d, mode)
        if isinstance(g, Line):
            return LineChain(Fraction(1, 2), mode)
        if isinstance(g, Hammock) and at_origin:
            return HammockChain(mode)
    return None


def spine_depth_chain(kernel: Kernel) -> Optional[LumpedChain]:
    """Distance-to-spine chain for a walk on T_3 (height-biased or simple, possibly lazy)."""
    if isinstance(kernel, LazyWalk):
        base = spine_depth_chain(kernel.base)
        return LazyChain(base, kernel.spec.stay) if base is not None else None
    if isinstance(kernel, HeightBiasedWalk):
        return SpineDepthChain(kernel.spec.p, kernel.mode)
    if isinstance(kernel, SimpleWalk) and isinstance(kernel.graph, HomTree) and kernel.graph.d == 3:
        return SpineDepthChain(Fraction(1, 3), kernel.mode)
    return None


def constrained_chain(kernel: Kernel, constraints: Sequence[str]) -> Optional[LumpedChain]:
    """
    Lumped chain for membership in a subgraph given per-coordinate constraints.

    Args:
        kernel: Product walk (or a single-factor kernel with one constraint)
        constraints: Per factor, "free" (any value), "point" (the start value)
            or "spine" (on the T_3 spine)

    Returns:
        Chain whose start class is the subgraph, or None if some factor does
        not lump
    """
    if isinstance(kernel, ProductWalk):
        if len(constraints) != len(kernel.factors):
            return None
        chains = []
        for factor, constraint in zip(kernel.factors, constraints):
            chain = constrained_chain(factor, [constraint])
            if chain is None:
                return None
            chains.append(chain)
        return ProductChain(chains, kernel.weights, kernel.mode)
    (constraint,) = constraints
    if constraint == "free":
        return PointChain(kernel.mode)
    if constraint == "point":
        return lumped_chain(kernel, at_origin=True)
    if constraint == "spine":
        return spine_depth_chain(kernel)
    return None


def log_series(chain: LumpedChain, horizon: int, target: Optional[State] = None) -> np.ndarray:
    """
    log P(chain at ``target`` at time n), n = 0..horizon, started at ``chain.start``.

    States farther than horizon/2 transitions from the start cannot come back in
    time and are not enumerated.

    Args:
        chain: Lumped chain
        horizon: Largest time N
        target: Target class (defaults to the start class)

    Returns:
        Array of length horizon + 1 with -inf for zero probabilities
    """
    target = chain.start if target is None else target
    states = chain.reachable((horizon + 1) // 2 + chain.level(target))
    index = {s: i for i, s in enumerate(states)}
    src: List[int] = []
    dst: List[int] = []
    logp: List[float] = []
    for s in states:
        i = index[s]
        for t, p in chain.row(s):
            j = index.get(t)
            if j is not None:
                src.append(i)
                dst.append(j)
                logp.append(safe_log(p))
    order = np.argsort(np.asarray(dst), kind="stable")
    src_a = np.asarray(src, dtype=np.int64)[order]
    dst_a = np.asarray(dst, dtype=np.int64)[order]
    logp_a = np.asarray(logp, dtype=float)[order]
    dest, starts = np.unique(dst_a, return_index=True)

    out = np.full(horizon + 1, -np.inf)
    state = np.full(len(states), -np.inf)
    state[index[chain.start]] = 0.0
    t_idx = index.get(target)
    if t_idx is None:
        return out
    out[0] = state[t_idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        for n in range(1, horizon + 1):
            vals = state[src_a] + logp_a
            nxt = np.full(len(states), -np.inf)
            nxt[dest] = np.logaddexp.reduceat(vals, starts)
            state = nxt
            out[n] = state[t_idx]
    return out


def exact_series(chain: LumpedChain, horizon: int, target: Optional[State] = None) -> List[Number]:
    """P(chain at ``target`` at time n) by dict DP in the chain's number type."""
    target = chain.start if target is None else target
    dist = {chain.start: chain.mode.one}
    out = [dist.get(target, chain.mode.zero)]
    for n in range(1, horizon + 1):
        dist = chain.push(dist)
        limit = horizon - n + chain.level(target)
        dist = {s: m for s, m in dist.items() if chain.level(s) <= limit}
        out.append(dist.get(target, chain.mode.zero))
    return out


def distributions(chain: LumpedChain, horizon: int) -> List[Dict[State, Number]]:
    """Full class distributions at times 0..horizon."""
    dist = {chain.start: chain.mode.one}
    out = [dict(dist)]
    for _ in range(horizon):
        dist = chain.push(dist)
        out.append(dict(dist))
    return out


def log_to_float(values: Sequence[Number]) -> np.ndarray:
    return np.array([safe_log(v) for v in values], dtype=float)


def first_positive_gcd(log_p: np.ndarray) -> int:
    """gcd of the times n >= 1 with positive return probability (0 if none)."""
    period = 0
    for n in np.nonzero(np.isfinite(log_p))[0]:
        if n:
            period = math.gcd(period, int(n))
            if period == 1:
                break
    return period
