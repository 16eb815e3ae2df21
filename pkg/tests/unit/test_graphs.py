"""
Unit tests for graph families, balls, gluing and the spine embedding.
"""
import numpy as np
import pytest

from brwlab.core.exceptions import AddressError, ConfigurationError
from brwlab.graphs.families import (
    GluedAddr,
    Hammock,
    HammockAddr,
    HomTree,
    Line,
    ball,
    ball_distance,
    glue,
    isotropic_weights,
    neighbors,
    product,
)
from brwlab.graphs.spine import SpineEmbedding, height


class TestNeighbors:
    """Test canonical neighbourhoods."""

    def test_tree_root(self, tree):
        assert neighbors(tree, ()) == ((0,), (1,), (2,))

    def test_tree_inner_vertex_parent_first(self, tree):
        assert neighbors(tree, (1, 0)) == ((1,), (1, 0, 0), (1, 0, 1))

    def test_line(self, line):
        assert neighbors(line, -3) == (-2, -4)

    def test_hammock_spine_zero(self, hammock):
        result = set(neighbors(hammock, HammockAddr("s", 0)))
        expected = {HammockAddr("s", 1), HammockAddr("t", ())} | {
            HammockAddr("t", (c,)) for c in range(4)
        }
        assert result == expected
        assert hammock.degree(HammockAddr("s", 0)) == 6

    def test_hammock_generation_one_degree(self, hammock):
        v = HammockAddr("t", (2,))
        result = neighbors(hammock, v)
        assert len(result) == 7
        assert HammockAddr("t", ()) in result
        assert HammockAddr("s", 0) in result
        assert HammockAddr("s", 1) in result

    def test_hammock_spine_degree_without_enumeration(self, hammock):
        assert hammock.degree(HammockAddr("s", 10)) == 2 + 4**10 + 4**11

    def test_product(self, t3xz):
        result = neighbors(t3xz, ((), 0))
        assert len(result) == 5
        assert ((0,), 0) in result
        assert ((), 1) in result and ((), -1) in result

    def test_malformed_addresses(self, tree, t3xz, hammock):
        with pytest.raises(AddressError):
            neighbors(tree, (3,))
        with pytest.raises(AddressError):
            neighbors(tree, (0, 2))
        with pytest.raises(AddressError):
            neighbors(t3xz, ((),))
        with pytest.raises(AddressError):
            neighbors(hammock, ("x", 0))


class TestDistances:
    """Test distances from the origin."""

    def test_tree_word(self, tree):
        assert ball_distance(tree, (0, 1, 1)) == 3

    def test_hammock_spine(self, hammock):
        assert ball_distance(hammock, HammockAddr("s", 2)) == 3

    def test_hammock_spine_matches_bfs(self, hammock):
        bfs = ball(hammock, 5)
        for k in range(4):
            assert bfs[HammockAddr("s", k)] == ball_distance(hammock, HammockAddr("s", k))

    def test_product(self, t3xz):
        assert ball_distance(t3xz, ((0, 1), -2)) == 4

    def test_tree_ball_size(self, tree):
        assert len(ball(tree, 2)) == 1 + 3 + 6

    def test_ball_matches_distance(self, t3xz):
        for v, d in ball(t3xz, 3).items():
            assert d == t3xz.distance(v)

    def test_distance_between(self, tree):
        assert tree.distance_between((0, 1), (0, 0, 1)) == 3


FAMILIES = {
    "tree": lambda: HomTree(3),
    "line": Line,
    "hammock": Hammock,
    "t3xz": lambda: product(HomTree(3), Line()),
    "t3xt3": lambda: product(HomTree(3), HomTree(3)),
    "glued": lambda: glue([HomTree(3), product(HomTree(3), Line())], [(), ((), 0)]),
    "glued-hammock": lambda: glue([Line(), Hammock()], [0, Hammock().origin]),
}


@pytest.mark.parametrize("name", sorted(FAMILIES))
class TestFamilyInvariants:
    """Test adjacency and distance invariants on every family."""

    def setup_method(self):
        """Setup test fixtures."""
        self.families = {name: make() for name, make in FAMILIES.items()}

    def test_adjacency_symmetric(self, name):
        g = self.families[name]
        adjacent = {}
        for v in ball(g, 5):
            out = neighbors(g, v)
            assert len(out) == g.degree(v)
            for u in out:
                if u not in adjacent:
                    adjacent[u] = set(neighbors(g, u))
                assert v in adjacent[u]

    def test_distance_matches_bfs(self, name):
        g = self.families[name]
        for v, d in ball(g, 6).items():
            assert ball_distance(g, v) == d


class TestGlue:
    """Test gluing graphs at a point."""

    def test_two_lines(self):
        g = glue([Line(), Line()], [0, 0])
        assert g.degree(g.origin) == 4

    def test_mixed_parts(self):
        t3t3 = product(HomTree(3), HomTree(3))
        g = glue([Hammock(), Hammock(), t3t3], [Hammock().origin, Hammock().origin, t3t3.origin])
        assert g.degree(g.origin) == 5 + 5 + 6

    def test_identity_gluing(self, tree):
        g = glue([tree], [()])
        assert len(neighbors(g, g.origin)) == 3
        assert g.degree(GluedAddr(0, (1, 0))) == 3

    def test_arity_mismatch(self):
        with pytest.raises(ConfigurationError):
            glue([Line(), Line()], [0])

    def test_basepoint_must_use_origin_spelling(self):
        g = glue([Line(), Line()], [0, 0])
        with pytest.raises(AddressError):
            g.validate(GluedAddr(1, 0))

    def test_off_origin_basepoint_distance(self):
        g = glue([Line(), HomTree(3)], [5, ()])
        assert g.distance(GluedAddr(0, 8)) == 3


class TestSampling:
    """Test uniform neighbour sampling."""

    def test_hammock_spine_sampling_stays_adjacent(self, hammock):
        rng = np.random.default_rng(0)
        v = HammockAddr("s", 3)
        out = hammock.sample_uniform_neighbors(v, 1000, rng)
        assert sum(out.values()) == 1000
        for u in out:
            hammock.validate(u)
            assert abs(hammock.distance(u) - hammock.distance(v)) <= 1

    def test_product_sampling_total(self, t3xz):
        rng = np.random.default_rng(1)
        out = t3xz.sample_uniform_neighbors(((0,), 2), 500, rng)
        assert sum(out.values()) == 500
        assert set(out) <= set(neighbors(t3xz, ((0,), 2)))

    def test_isotropic_weights(self, t3xz):
        assert isotropic_weights(t3xz) == pytest.approx((0.6, 0.4))


class TestSpine:
    """Test the spine embedding and heights."""

    def setup_method(self):
        """Setup test fixtures."""
        self.emb = SpineEmbedding()

    def test_phi_is_a_path(self, tree):
        for n in range(-6, 6):
            a, b = self.emb.phi(n), self.emb.phi(n + 1)
            assert tree.distance_between(a, b) == 1

    def test_phi_injective(self):
        images = {self.emb.phi(n) for n in range(-8, 9)}
        assert len(images) == 17

    def test_heights_on_spine(self):
        for k in range(-5, 6):
            assert height(self.emb, self.emb.phi(k)) == k

    def test_off_spine_heights(self):
        assert height(self.emb, (2,)) == -1
        assert height(self.emb, (0, 0)) == 2
        assert height(self.emb, (1, 1)) == -2

    def test_one_neighbor_up_two_down(self, tree):
        for v in ball(tree, 8):
            h = height(self.emb, v)
            hs = sorted(height(self.emb, u) for u in neighbors(tree, v))
            assert hs == [h - 1, h - 1, h + 1]
            assert height(self.emb, self.emb.distinguished_neighbor(v)) == h + 1

    def test_requires_t3(self):
        with pytest.raises(AddressError):
            SpineEmbedding(HomTree(4))
