"""
Spine embedding of Z into T_3 and the induced height field.

phi(0) is the root, phi(n) is n zeros, phi(-n) is "1" followed by n-1 zeros.
The height of a vertex is the phi-label of its nearest spine vertex minus its
distance to the spine. Every vertex has exactly one neighbour at height h+1
(toward the spine, or along it in the + direction) and two at height h-1.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

from brwlab.core.exceptions import AddressError
from brwlab.graphs.families import HomTree, TreeWord


@dataclass(frozen=True)
class SpineEmbedding:
    """The fixed isometric embedding phi: Z -> T_3."""

    tree: HomTree = field(default_factory=lambda: HomTree(3))

    def __post_init__(self):
        if self.tree.d != 3:
            raise AddressError(f"spine embedding is defined on T_3, got T_{self.tree.d}")

    def phi(self, n: int) -> TreeWord:
        if n >= 0:
            return (0,) * n
        return (1,) + (0,) * (-n - 1)

    def label(self, v: TreeWord) -> Optional[int]:
        """phi^{-1}(v), or None when v is off the spine."""
        self.tree.validate(v)
        if not v:
            return 0
        head, rest = v[0], v[1:]
        if any(c != 0 for c in rest):
            return None
        if head == 0:
            return len(v)
        if head == 1:
            return -len(v)
        return None

    def nearest_spine(self, v: TreeWord) -> Tuple[int, int]:
        """
        Longest prefix of ``v`` on the spine.

        Returns:
            (prefix length, phi-label of the prefix)
        """
        self.tree.validate(v)
        if not v or v[0] == 2:
            return 0, 0
        run = 1
        while run < len(v) and v[run] == 0:
            run += 1
        return (run, run) if v[0] == 0 else (run, -run)

    def depth(self, v: TreeWord) -> int:
        """Distance from ``v`` to the spine."""
        prefix, _ = self.nearest_spine(v)
        return len(v) - prefix

    def height(self, v: TreeWord) -> int:
        prefix, lab = self.nearest_spine(v)
        return lab - (len(v) - prefix)

    def distinguished_neighbor(self, v: TreeWord) -> TreeWord:
        """The unique neighbour of ``v`` at height h(v)+1."""
        lab = self.label(v)
        if lab is not None:
            return self.phi(lab + 1)
        return v[:-1]


def height(emb: SpineEmbedding, v: TreeWord) -> int:
    """
    Height of a T_3 vertex under the spine embedding.

    Args:
        emb: Spine embedding
        v: T_3 word

    Returns:
        phi-label of the nearest spine vertex minus the distance to the spine
    """
    return emb.height(v)
