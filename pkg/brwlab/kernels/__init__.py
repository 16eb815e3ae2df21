"""Random-walk kernels."""
from brwlab.kernels.specs import (
    ArithmeticMode,
    BiasedLine,
    HeightBiased,
    KernelSpec,
    Lazy,
    ProductKernel,
    Simple,
)
from brwlab.kernels.reversibility import reversibility_check
from brwlab.kernels.walks import (
    BiasedLineWalk,
    DistVector,
    HeightBiasedWalk,
    Kernel,
    LazyWalk,
    ProductWalk,
    SimpleWalk,
    TransitionRow,
    as_product_walk,
    build_kernel,
)


def step_distribution(kernel: Kernel, v) -> TransitionRow:
    return kernel.step_distribution(v)


__all__ = [
    "ArithmeticMode",
    "BiasedLine",
    "BiasedLineWalk",
    "DistVector",
    "HeightBiased",
    "HeightBiasedWalk",
    "Kernel",
    "KernelSpec",
    "Lazy",
    "LazyWalk",
    "ProductKernel",
    "ProductWalk",
    "Simple",
    "SimpleWalk",
    "TransitionRow",
    "as_product_walk",
    "build_kernel",
    "reversibility_check",
    "step_distribution",
]
