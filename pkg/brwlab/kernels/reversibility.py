"""
Degree-weighted detailed balance for simple and lazy-simple walks.

For a reversible simple walk, deg(i) P_i(X_m = j) = deg(j) P_j(X_m = i). The
check enumerates all i, j in B(origin, R) and all m <= n. Paths between two
vertices of B(R) of length m never leave B(R + m // 2), so the DP runs on that
region only.
"""
from typing import Dict, List

import numpy as np
from scipy import sparse

from brwlab.core.config import numerics
from brwlab.core.exceptions import ConfigurationError, InternalConsistencyError
from brwlab.core.logging import get_logger
from brwlab.graphs.families import VertexAddr, ball
from brwlab.kernels.specs import ArithmeticMode
from brwlab.kernels.walks import Kernel, LazyWalk, SimpleWalk
from brwlab.schemas.results import ReversibilityReport

logger = get_logger(__name__)


def _is_reversible_simple(kernel: Kernel) -> bool:
    while isinstance(kernel, LazyWalk):
        kernel = kernel.base
    return isinstance(kernel, SimpleWalk)


def _exact_tables(kernel: Kernel, sources: List[VertexAddr], region: Dict[VertexAddr, int], horizon: int):
    """P_i(X_m = j) for i, j in ``sources`` by sparse rational DP restricted to ``region``."""
    targets = set(sources)
    tables = {}
    keep = region.__contains__
    for i in sources:
        dist = {i: kernel.mode.one}
        rows = [{i: kernel.mode.one}]
        for _ in range(horizon):
            dist = kernel.push(dist, keep=keep)
            rows.append({j: dist[j] for j in targets if j in dist})
        tables[i] = rows
    return tables


def _float_tables(kernel: Kernel, sources: List[VertexAddr], region: Dict[VertexAddr, int], horizon: int):
    """Same tables from a scipy.sparse restriction of the kernel to ``region``."""
    index = {v: pos for pos, v in enumerate(region)}
    rows, cols, vals = [], [], []
    for v, pos in index.items():
        for t, p in kernel.step_distribution(v).items():
            col = index.get(t)
            if col is not None:
                rows.append(pos)
                cols.append(col)
                vals.append(float(p))
    size = len(index)
    op = sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))
    src_idx = np.array([index[v] for v in sources])
    state = np.zeros((len(sources), size))
    state[np.arange(len(sources)), src_idx] = 1.0
    tables = {i: [{i: 1.0}] for i in sources}
    for _ in range(horizon):
        state = (op.T @ state.T).T
        block = state[:, src_idx]
        for a, i in enumerate(sources):
            tables[i].append({j: block[a, b] for b, j in enumerate(sources) if block[a, b] > 0})
    return tables


def reversibility_check(kernel: Kernel, horizon: int, radius: int) -> ReversibilityReport:
    """
    Verify degree-weighted detailed balance on a ball and report the quasi-symmetry ratio.

    Args:
        kernel: Simple or Lazy(Simple) kernel
        horizon: Largest number of steps m checked
        radius: Ball radius R

    Returns:
        ReversibilityReport with C = max P_i(X_m=j) / P_j(X_m=i) over pairs with
        both directions positive

    Raises:
        ConfigurationError: kernel is not a reversible simple walk
        InternalConsistencyError: the identity fails
    """
    if not _is_reversible_simple(kernel):
        raise ConfigurationError(
            f"reversibility check needs a simple or lazy-simple kernel, got {kernel.describe()}"
        )
    g = kernel.graph
    sources = list(ball(g, radius))
    region = ball(g, radius + horizon // 2)
    exact = kernel.mode is ArithmeticMode.RATIONAL
    if exact:
        tables = _exact_tables(kernel, sources, region, horizon)
    else:
        tables = _float_tables(kernel, sources, region, horizon)
    degree = {v: g.degree(v) for v in sources}

    ratio = 1.0
    pairs = 0
    worst = 0.0
    for m in range(horizon + 1):
        for a, i in enumerate(sources):
            row_i = tables[i][m]
            for j in sources[a:]:
                fwd = row_i.get(j, 0)
                bwd = tables[j][m].get(i, 0)
                lhs, rhs = degree[i] * fwd, degree[j] * bwd
                if exact:
                    ok = lhs == rhs
                else:
                    scale = max(abs(float(lhs)), abs(float(rhs)))
                    gap = abs(float(lhs) - float(rhs))
                    worst = max(worst, gap / scale if scale else 0.0)
                    ok = gap <= numerics.row_sum_tolerance * scale
                if not ok:
                    raise InternalConsistencyError(
                        f"detailed balance fails for {i!r} -> {j!r} at m={m}: "
                        f"{lhs} != {rhs}"
                    )
                if fwd and bwd:
                    pairs += 1
                    ratio = max(ratio, float(fwd / bwd), float(bwd / fwd))

    logger.info(
        f"[KERNEL] reversibility ok: kernel={kernel.describe()} radius={radius} "
        f"horizon={horizon} pairs={pairs} C={ratio:.6g}"
    )
    return ReversibilityReport(
        kernel=kernel.describe(),
        graph=g.tag,
        radius=radius,
        horizon=horizon,
        mode=kernel.mode.value,
        ratio=ratio,
        pairs_checked=pairs,
        max_relative_violation=worst,
    )
