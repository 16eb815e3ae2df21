"""
Kernel specifications and arithmetic modes.

Specs are small immutable descriptions; ``build_kernel`` turns a spec plus a
graph into a walk object.
"""
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Tuple, Union

from brwlab.core.utils import Number, to_fraction


class ArithmeticMode(str, Enum):
    """Run-level arithmetic: exact rationals or double precision."""

    FLOAT = "float"
    RATIONAL = "rational"

    def number(self, value: Union[int, float, str, Fraction]) -> Number:
        if self is ArithmeticMode.RATIONAL:
            return to_fraction(value)
        return float(value)

    @property
    def zero(self) -> Number:
        return Fraction(0) if self is ArithmeticMode.RATIONAL else 0.0

    @property
    def one(self) -> Number:
        return Fraction(1) if self is ArithmeticMode.RATIONAL else 1.0


class KernelSpec:
    """Marker base class for kernel specs."""

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Simple(KernelSpec):
    """Isotropic walk: each neighbour with probability 1/deg."""

    def describe(self) -> str:
        return "simple"


@dataclass(frozen=True)
class Lazy(KernelSpec):
    """Stay put with probability ``stay``, otherwise step with ``base``."""

    base: KernelSpec
    stay: Union[float, Fraction] = 0.5

    def describe(self) -> str:
        return f"lazy({self.base.describe()}, {self.stay})"


@dataclass(frozen=True)
class BiasedLine(KernelSpec):
    """Walk on Z: right with probability p, left with 1-p."""

    p: Union[float, Fraction]

    def describe(self) -> str:
        return f"biasedline({self.p})"


@dataclass(frozen=True)
class HeightBiased(KernelSpec):
    """Walk on T_3: p to the distinguished (height h+1) neighbour, (1-p)/2 to each other."""

    p: Union[float, Fraction]

    def describe(self) -> str:
        return f"heightbiased({self.p})"


@dataclass(frozen=True)
class ProductKernel(KernelSpec):
    """Weighted mixture of factor kernels; exactly one coordinate moves per step."""

    factors: Tuple[Tuple[KernelSpec, Union[float, Fraction]], ...]

    @property
    def weights(self) -> Tuple[Union[float, Fraction], ...]:
        return tuple(w for _, w in self.factors)

    def describe(self) -> str:
        parts = [
            f"{w}: {spec.describe()}@{pos + 1}" for pos, (spec, w) in enumerate(self.factors)
        ]
        return "product(" + ", ".join(parts) + ")"
