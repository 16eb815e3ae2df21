"""
Graph families with canonical vertex addressing and lazy adjacency.

Graphs are immutable value descriptors. Vertices are plain hashable values:

- ``HomTree``: tuple of child labels (``()`` is the root; the root has children
  ``0..d-1``, every other vertex has children ``0..d-2``).
- ``Line``: int.
- ``Hammock``: ``HammockAddr("s", k)`` for spine vertex k, ``HammockAddr("t", word)``
  for a vertex of the 4-ary tree.
- ``Product``: tuple with one factor address per factor.
- ``Glued``: ``GluedAddr(part, local)``; every basepoint is spelled
  ``GluedAddr(0, basepoints[0])``.

Canonical neighbour order (fixes sampling and DP iteration order):

- HomTree: parent first (if any), then children in label order.
- Line: right (v+1), then left (v-1).
- Hammock tree vertex in generation g: parent, the 4 children, spine g-1 (g >= 1),
  spine g. Spine vertex k: spine k-1 (k >= 1), spine k+1, generation-k words,
  generation-(k+1) words, words in lexicographic order.
- Product: factor by factor, each in the factor's order.
- Glued: the part's order; the glued origin lists the basepoint neighbourhoods
  of the parts in part order.
"""
import itertools
from abc import ABC, abstractmethod
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, Iterable, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from brwlab.core.config import numerics
from brwlab.core.exceptions import AddressError, ConfigurationError, ResourceError

TreeWord = Tuple[int, ...]
LineInt = int
VertexAddr = Hashable

HAMMOCK_ARITY = 4


class HammockAddr(NamedTuple):
    """Hammock vertex: ``kind`` is "s" (spine, index k) or "t" (tree, index word)."""

    kind: str
    index: Union[int, TreeWord]


class GluedAddr(NamedTuple):
    """Vertex of a glued graph: part index plus the part-local address."""

    part: int
    local: Any


def _is_int(value: Any) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _uniform_counts(
    targets: Tuple[VertexAddr, ...], count: int, rng: np.random.Generator
) -> Dict[VertexAddr, int]:
    draws = rng.multinomial(count, np.full(len(targets), 1.0 / len(targets)))
    return {t: int(c) for t, c in zip(targets, draws) if c}


class GraphFamily(ABC):
    """Base class of every graph family."""

    @property
    @abstractmethod
    def origin(self) -> VertexAddr:
        """Designated origin vertex."""

    @property
    @abstractmethod
    def tag(self) -> str:
        """Short name used in logs and manifests."""

    @abstractmethod
    def validate(self, v: VertexAddr) -> None:
        """Raise AddressError unless ``v`` is a canonical address of this graph."""

    @abstractmethod
    def degree(self, v: VertexAddr) -> int:
        """Number of neighbours of ``v``, computed without enumerating them."""

    @abstractmethod
    def _neighbors(self, v: VertexAddr) -> Tuple[VertexAddr, ...]:
        """Neighbours of a validated vertex in canonical order."""

    @abstractmethod
    def distance(self, v: VertexAddr) -> int:
        """Graph distance from the origin."""

    @property
    def is_bipartite(self) -> bool:
        return True

    @property
    def regular_degree(self) -> Optional[int]:
        """Common degree when the graph is regular, else None."""
        return None

    def neighbors(self, v: VertexAddr) -> Tuple[VertexAddr, ...]:
        """
        All neighbours of ``v``, each once, in canonical order.

        Args:
            v: Vertex address

        Returns:
            Tuple of neighbour addresses

        Raises:
            AddressError: malformed address
            ResourceError: neighbourhood larger than the row cap
        """
        self.validate(v)
        deg = self.degree(v)
        if deg > numerics.row_cap:
            raise ResourceError(
                f"{self.tag}: vertex {v!r} has {deg} neighbours, above the row cap "
                f"{numerics.row_cap}"
            )
        return self._neighbors(v)

    def distance_between(self, u: VertexAddr, v: VertexAddr) -> int:
        """Graph distance between two arbitrary vertices."""
        raise ConfigurationError(f"{self.tag} does not support arbitrary distances")

    def sample_uniform_neighbors(
        self, v: VertexAddr, count: int, rng: np.random.Generator
    ) -> Dict[VertexAddr, int]:
        """
        Send ``count`` particles to independent uniform neighbours of ``v``.

        Args:
            v: Source vertex
            count: Number of particles
            rng: Generator to draw from

        Returns:
            Mapping target -> number of particles (zero counts omitted)
        """
        if count <= 0:
            return {}
        return _uniform_counts(self.neighbors(v), count, rng)


@dataclass(frozen=True)
class HomTree(GraphFamily):
    """Homogeneous tree T_d."""

    d: int = 3

    def __post_init__(self):
        if not _is_int(self.d) or self.d < 3:
            raise ConfigurationError(f"HomTree requires d >= 3, got: {self.d}")

    @property
    def origin(self) -> TreeWord:
        return ()

    @property
    def tag(self) -> str:
        return f"t({self.d})"

    @property
    def regular_degree(self) -> Optional[int]:
        return self.d

    def validate(self, v: VertexAddr) -> None:
        if not isinstance(v, tuple):
            raise AddressError(f"T_{self.d} address must be a tuple word, got {v!r}", v)
        for pos, letter in enumerate(v):
            bound = self.d if pos == 0 else self.d - 1
            if not _is_int(letter) or not 0 <= letter < bound:
                raise AddressError(
                    f"T_{self.d} letter {letter!r} at position {pos} outside 0..{bound - 1}",
                    v,
                )

    def degree(self, v: VertexAddr) -> int:
        self.validate(v)
        return self.d

    def _neighbors(self, v: TreeWord) -> Tuple[TreeWord, ...]:
        if not v:
            return tuple((c,) for c in range(self.d))
        return (v[:-1],) + tuple(v + (c,) for c in range(self.d - 1))

    def distance(self, v: VertexAddr) -> int:
        self.validate(v)
        return len(v)

    def distance_between(self, u: VertexAddr, v: VertexAddr) -> int:
        self.validate(u)
        self.validate(v)
        common = 0
        for a, b in zip(u, v):
            if a != b:
                break
            common += 1
        return len(u) + len(v) - 2 * common


@dataclass(frozen=True)
class Line(GraphFamily):
    """The integer line Z."""

    @property
    def origin(self) -> LineInt:
        return 0

    @property
    def tag(self) -> str:
        return "z"

    @property
    def regular_degree(self) -> Optional[int]:
        return 2

    def validate(self, v: VertexAddr) -> None:
        if not _is_int(v):
            raise AddressError(f"Z address must be an int, got {v!r}", v)

    def degree(self, v: VertexAddr) -> int:
        self.validate(v)
        return 2

    def _neighbors(self, v: int) -> Tuple[int, ...]:
        return (v + 1, v - 1)

    def distance(self, v: VertexAddr) -> int:
        self.validate(v)
        return abs(int(v))

    def distance_between(self, u: VertexAddr, v: VertexAddr) -> int:
        self.validate(u)
        self.validate(v)
        return abs(int(u) - int(v))


@dataclass(frozen=True)
class Hammock(GraphFamily):
    """4-ary rooted tree with an N_0 spine; spine k joins tree generations k and k+1."""

    @property
    def origin(self) -> HammockAddr:
        return HammockAddr("t", ())

    @property
    def tag(self) -> str:
        return "hammock"

    @property
    def is_bipartite(self) -> bool:
        return False

    def validate(self, v: VertexAddr) -> None:
        if not isinstance(v, tuple) or len(v) != 2 or v[0] not in ("s", "t"):
            raise AddressError(f"hammock address must be ('s', k) or ('t', word), got {v!r}", v)
        kind, index = v
        if kind == "s":
            if not _is_int(index) or index < 0:
                raise AddressError(f"spine index must be a non-negative int, got {index!r}", v)
            return
        if not isinstance(index, tuple) or any(
            not _is_int(c) or not 0 <= c < HAMMOCK_ARITY for c in index
        ):
            raise AddressError(f"hammock tree word must use letters 0..3, got {index!r}", v)

    def degree(self, v: VertexAddr) -> int:
        self.validate(v)
        kind, index = v
        if kind == "t":
            return 5 if not index else 7
        k = int(index)
        return (1 if k == 0 else 2) + HAMMOCK_ARITY**k + HAMMOCK_ARITY ** (k + 1)

    @staticmethod
    def generation(g: int) -> Iterable[HammockAddr]:
        """Tree vertices of generation ``g`` in lexicographic order."""
        for word in itertools.product(range(HAMMOCK_ARITY), repeat=g):
            yield HammockAddr("t", word)

    def _neighbors(self, v: HammockAddr) -> Tuple[HammockAddr, ...]:
        kind, index = v
        if kind == "t":
            word = index
            g = len(word)
            out: List[HammockAddr] = []
            if g:
                out.append(HammockAddr("t", word[:-1]))
            out.extend(HammockAddr("t", word + (c,)) for c in range(HAMMOCK_ARITY))
            if g:
                out.append(HammockAddr("s", g - 1))
            out.append(HammockAddr("s", g))
            return tuple(out)
        k = int(index)
        out = [HammockAddr("s", k - 1)] if k >= 1 else []
        out.append(HammockAddr("s", k + 1))
        out.extend(self.generation(k))
        out.extend(self.generation(k + 1))
        return tuple(out)

    def distance(self, v: VertexAddr) -> int:
        self.validate(v)
        kind, index = v
        return len(index) if kind == "t" else int(index) + 1

    def distance_between(self, u: VertexAddr, v: VertexAddr) -> int:
        if u == self.origin:
            return self.distance(v)
        if v == self.origin:
            return self.distance(u)
        raise ConfigurationError("hammock distances are only available from the tree root")

    def sample_uniform_neighbors(
        self, v: VertexAddr, count: int, rng: np.random.Generator
    ) -> Dict[VertexAddr, int]:
        self.validate(v)
        kind, index = v
        if count <= 0:
            return {}
        if kind == "t":
            return _uniform_counts(self._neighbors(v), count, rng)
        # Spine k: sample the block (spine k-1, spine k+1, generation k, generation
        # k+1) first, then a uniform word inside the block.
        k = int(index)
        blocks: List[Tuple[str, int, float]] = []
        if k >= 1:
            blocks.append(("s", k - 1, 1.0))
        blocks.append(("s", k + 1, 1.0))
        blocks.append(("t", k, float(HAMMOCK_ARITY**k)))
        blocks.append(("t", k + 1, float(HAMMOCK_ARITY ** (k + 1))))
        weights = np.array([w for _, _, w in blocks])
        draws = rng.multinomial(count, weights / weights.sum())
        out: Dict[VertexAddr, int] = {}
        for (block_kind, level, _), c in zip(blocks, draws):
            if not c:
                continue
            if block_kind == "s":
                out[HammockAddr("s", level)] = int(c)
                continue
            letters = rng.integers(0, HAMMOCK_ARITY, size=(int(c), level))
            for word, n in Counter(map(tuple, letters.tolist())).items():
                out[HammockAddr("t", word)] = n
        return out


@dataclass(frozen=True)
class Product(GraphFamily):
    """Cartesian product; an edge changes exactly one coordinate along a factor edge."""

    factors: Tuple[GraphFamily, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.factors) < 2:
            raise ConfigurationError("product needs at least two factors")
        for f in self.factors:
            if isinstance(f, (Product, Glued)):
                raise ConfigurationError(
                    f"product factors must be base families, got {f.tag}"
                )

    @property
    def origin(self) -> tuple:
        return tuple(f.origin for f in self.factors)

    @property
    def tag(self) -> str:
        return "product(" + ", ".join(f.tag for f in self.factors) + ")"

    @property
    def arity(self) -> int:
        return len(self.factors)

    @property
    def is_bipartite(self) -> bool:
        return all(f.is_bipartite for f in self.factors)

    @property
    def regular_degree(self) -> Optional[int]:
        degrees = [f.regular_degree for f in self.factors]
        if any(d is None for d in degrees):
            return None
        return sum(degrees)

    def validate(self, v: VertexAddr) -> None:
        if not isinstance(v, tuple) or len(v) != self.arity:
            raise AddressError(
                f"product address must be a tuple of arity {self.arity}, got {v!r}", v
            )
        for f, coord in zip(self.factors, v):
            f.validate(coord)

    def degree(self, v: VertexAddr) -> int:
        self.validate(v)
        return sum(f.degree(c) for f, c in zip(self.factors, v))

    def _neighbors(self, v: tuple) -> Tuple[tuple, ...]:
        out = []
        for pos, f in enumerate(self.factors):
            for u in f._neighbors(v[pos]):
                out.append(v[:pos] + (u,) + v[pos + 1 :])
        return tuple(out)

    def distance(self, v: VertexAddr) -> int:
        self.validate(v)
        return sum(f.distance(c) for f, c in zip(self.factors, v))

    def distance_between(self, u: VertexAddr, v: VertexAddr) -> int:
        self.validate(u)
        self.validate(v)
        return sum(f.distance_between(a, b) for f, a, b in zip(self.factors, u, v))

    def sample_uniform_neighbors(
        self, v: VertexAddr, count: int, rng: np.random.Generator
    ) -> Dict[VertexAddr, int]:
        self.validate(v)
        if count <= 0:
            return {}
        degrees = np.array([f.degree(c) for f, c in zip(self.factors, v)], dtype=float)
        draws = rng.multinomial(count, degrees / degrees.sum())
        out: Dict[VertexAddr, int] = {}
        for pos, (f, c) in enumerate(zip(self.factors, draws)):
            if not c:
                continue
            for u, n in f.sample_uniform_neighbors(v[pos], int(c), rng).items():
                out[v[:pos] + (u,) + v[pos + 1 :]] = n
        return out


@dataclass(frozen=True)
class Glued(GraphFamily):
    """Parts glued at a single vertex: all basepoints become one origin."""

    parts: Tuple[GraphFamily, ...] = field(default_factory=tuple)
    basepoints: Tuple[VertexAddr, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.parts:
            raise ConfigurationError("glue needs at least one part")
        if len(self.parts) != len(self.basepoints):
            raise ConfigurationError(
                f"glue got {len(self.parts)} parts but {len(self.basepoints)} basepoints"
            )
        for part, bp in zip(self.parts, self.basepoints):
            if isinstance(part, Glued):
                raise ConfigurationError("nested gluing is not supported")
            part.validate(bp)
            if isinstance(part, Hammock) and bp != part.origin:
                raise ConfigurationError("hammock parts must be glued at the tree root")

    @property
    def origin(self) -> GluedAddr:
        return GluedAddr(0, self.basepoints[0])

    @property
    def tag(self) -> str:
        return "glue(" + ", ".join(p.tag for p in self.parts) + ")"

    @property
    def is_bipartite(self) -> bool:
        return all(p.is_bipartite for p in self.parts)

    def lift(self, part: int, local: VertexAddr) -> GluedAddr:
        """Canonical glued address of a part-local vertex."""
        if local == self.basepoints[part]:
            return self.origin
        return GluedAddr(part, local)

    def validate(self, v: VertexAddr) -> None:
        if not isinstance(v, tuple) or len(v) != 2 or not _is_int(v[0]):
            raise AddressError(f"glued address must be (part, local), got {v!r}", v)
        part, local = v
        if not 0 <= part < len(self.parts):
            raise AddressError(f"glued part index {part} out of range", v)
        self.parts[part].validate(local)
        if part != 0 and local == self.basepoints[part]:
            raise AddressError(
                f"basepoint of part {part} must be spelled as the glued origin", v
            )

    def degree(self, v: VertexAddr) -> int:
        self.validate(v)
        if v == self.origin:
            return sum(p.degree(bp) for p, bp in zip(self.parts, self.basepoints))
        return self.parts[v[0]].degree(v[1])

    def _neighbors(self, v: GluedAddr) -> Tuple[GluedAddr, ...]:
        if v == self.origin:
            return tuple(
                self.lift(k, u)
                for k, (p, bp) in enumerate(zip(self.parts, self.basepoints))
                for u in p._neighbors(bp)
            )
        part, local = v
        return tuple(self.lift(part, u) for u in self.parts[part]._neighbors(local))

    def distance(self, v: VertexAddr) -> int:
        self.validate(v)
        if v == self.origin:
            return 0
        part, local = v
        p, bp = self.parts[part], self.basepoints[part]
        if bp == p.origin:
            return p.distance(local)
        return p.distance_between(bp, local)

    def sample_uniform_neighbors(
        self, v: VertexAddr, count: int, rng: np.random.Generator
    ) -> Dict[VertexAddr, int]:
        self.validate(v)
        if count <= 0:
            return {}
        if v != self.origin:
            part, local = v
            sampled = self.parts[part].sample_uniform_neighbors(local, count, rng)
            return {self.lift(part, u): n for u, n in sampled.items()}
        degrees = np.array(
            [p.degree(bp) for p, bp in zip(self.parts, self.basepoints)], dtype=float
        )
        draws = rng.multinomial(count, degrees / degrees.sum())
        out: Dict[VertexAddr, int] = {}
        for k, c in enumerate(draws):
            if not c:
                continue
            sampled = self.parts[k].sample_uniform_neighbors(self.basepoints[k], int(c), rng)
            for u, n in sampled.items():
                key = self.lift(k, u)
                out[key] = out.get(key, 0) + n
        return out


def product(*factors: GraphFamily) -> Product:
    """Cartesian product, flattening nested products."""
    flat: List[GraphFamily] = []
    for f in factors:
        if isinstance(f, Product):
            flat.extend(f.factors)
        else:
            flat.append(f)
    return Product(tuple(flat))


def glue(parts: List[GraphFamily], basepoints: List[VertexAddr]) -> Glued:
    """
    Identify one basepoint per part into a single origin.

    Args:
        parts: Graph families to glue
        basepoints: One vertex per part

    Returns:
        Glued graph whose origin's neighbourhood concatenates the parts'
        basepoint neighbourhoods

    Raises:
        ConfigurationError: arity mismatch
    """
    return Glued(tuple(parts), tuple(basepoints))


def neighbors(g: GraphFamily, v: VertexAddr) -> Tuple[VertexAddr, ...]:
    return g.neighbors(v)


def ball_distance(g: GraphFamily, v: VertexAddr) -> int:
    return g.distance(v)


def ball(g: GraphFamily, radius: int, cap: Optional[int] = None) -> Dict[VertexAddr, int]:
    """
    Breadth-first enumeration of B(origin, radius).

    Args:
        g: Graph family
        radius: Ball radius
        cap: Maximum number of vertices (defaults to the support cap)

    Returns:
        Mapping vertex -> BFS distance, in BFS (canonical) order

    Raises:
        ResourceError: ball larger than the cap
    """
    limit = cap if cap is not None else numerics.support_cap
    seen: Dict[VertexAddr, int] = {g.origin: 0}
    queue = deque([g.origin])
    while queue:
        v = queue.popleft()
        dist = seen[v]
        if dist == radius:
            continue
        for u in g.neighbors(v):
            if u not in seen:
                seen[u] = dist + 1
                if len(seen) > limit:
                    raise ResourceError(
                        f"ball of radius {radius} in {g.tag} exceeds {limit} vertices"
                    )
                queue.append(u)
    return seen


def isotropic_weights(g: Product) -> Tuple[float, ...]:
    """
    Factor weights under which the product walk is simple walk on ``g``.

    Requires regular factors; e.g. (3/5, 2/5) for T_3 x Z.
    """
    degrees = [f.regular_degree for f in g.factors]
    if any(d is None for d in degrees):
        raise ConfigurationError(f"isotropic weights need regular factors, got {g.tag}")
    total = sum(degrees)
    return tuple(d / total for d in degrees)
