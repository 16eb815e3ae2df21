"""
Pytest configuration and fixtures.

Provides shared graphs, kernels and config texts for testing.
"""
from fractions import Fraction

import pytest

from brwlab.graphs.families import Hammock, HomTree, Line, product
from brwlab.kernels.specs import ArithmeticMode, BiasedLine, ProductKernel, Simple
from brwlab.kernels.walks import build_kernel

HALF = Fraction(1, 2)


@pytest.fixture
def tree():
    """T_3."""
    return HomTree(3)


@pytest.fixture
def line():
    return Line()


@pytest.fixture
def hammock():
    return Hammock()


@pytest.fixture
def t3xz():
    """Product(T_3, Z)."""
    return product(HomTree(3), Line())


@pytest.fixture
def t3xt3():
    return product(HomTree(3), HomTree(3))


@pytest.fixture
def half_product_spec():
    """1/2 Simple + 1/2 Simple on a two-factor product."""
    return ProductKernel(((Simple(), HALF), (Simple(), HALF)))


@pytest.fixture
def biased_product_spec():
    """1/2 Simple(T_3) + 1/2 BiasedLine(7/10)."""
    return ProductKernel(((Simple(), HALF), (BiasedLine(Fraction(7, 10)), HALF)))


@pytest.fixture
def t3xz_kernel(t3xz, half_product_spec):
    """Unbiased product walk on T_3 x Z in float mode."""
    return build_kernel(half_product_spec, t3xz)


@pytest.fixture
def t3xz_rational_kernel(t3xz, half_product_spec):
    return build_kernel(half_product_spec, t3xz, ArithmeticMode.RATIONAL)


@pytest.fixture
def return_series_config():
    """Small return-series config text."""
    return (
        "kind = return-series\n"
        "graph = t(3)\n"
        "kernel = simple\n"
        "n = 40\n"
        "mode = rational\n"
    )


@pytest.fixture
def simulate_config():
    """Small simulation config text on T_3 x Z."""
    return (
        "kind = simulate\n"
        "graph = product(t(3), z)\n"
        "kernel = product(1/2: simple@1, 1/2: simple@2)\n"
        "mu = critical\n"
        "generations = 12\n"
        "reps = 4\n"
        "seed = 11\n"
    )
