"""
Return-probability series, spectral radii and the convergence criteria.

Series strategies, in order of preference:

- ``quotient``: lumped distance/position chain (trees, the line, lazy variants)
- ``hammock-quotient``: (type, level) chain from the hammock root
- ``convolution``: product kernels, folded pairwise by a binomial split of the
  step count between factors
- ``sparse``: vertex-space DP with a support cap
"""
import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from math import comb
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse, stats
from scipy.special import gammaln, logsumexp, zeta

from brwlab.core.config import numerics
from brwlab.core.exceptions import (
    ConfigurationError,
    InsufficientDataError,
    ResourceError,
)
from brwlab.core.logging import get_logger
from brwlab.core.metrics import record_power_iterations, record_series
from brwlab.core.utils import Number
from brwlab.graphs.families import GraphFamily, Glued, HomTree, Line, Product, VertexAddr, ball
from brwlab.kernels.specs import (
    ArithmeticMode,
    BiasedLine,
    KernelSpec,
    Lazy,
    ProductKernel,
    Simple,
)
from brwlab.kernels.walks import Kernel, ProductWalk, as_product_walk, build_kernel
from brwlab.schemas.results import (
    AdditivityReport,
    ConditionReport,
    DirichletEstimate,
    RegimeReport,
    RhoResolution,
    SpectralFit,
)
from brwlab.services.chains import (
    HammockChain,
    LazyChain,
    LineChain,
    LumpedChain,
    TreeDistanceChain,
    constrained_chain,
    distributions,
    exact_series,
    first_positive_gcd,
    log_series,
    log_to_float,
    lumped_chain,
)

logger = get_logger(__name__)

RHO_DIGITS = 50


@dataclass
class ReturnSeries:
    """p_n = P_origin(X_n = origin) for n = 0..N, kept in the log domain."""

    origin: VertexAddr
    log_p: np.ndarray
    exact: Optional[List[Fraction]]
    period: int
    mode: ArithmeticMode
    strategy: str

    @property
    def horizon(self) -> int:
        return len(self.log_p) - 1

    @property
    def probabilities(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_p)

    def value(self, n: int) -> Number:
        if self.exact is not None:
            return self.exact[n]
        return float(np.exp(self.log_p[n]))

    def truncated(self, horizon: int) -> "ReturnSeries":
        return ReturnSeries(
            origin=self.origin,
            log_p=self.log_p[: horizon + 1].copy(),
            exact=None if self.exact is None else self.exact[: horizon + 1],
            period=self.period,
            mode=self.mode,
            strategy=self.strategy,
        )


# ==================== Series ====================

def _period(log_p: np.ndarray, kernel: Kernel, origin: VertexAddr) -> int:
    period = first_positive_gcd(log_p)
    if period:
        return period
    if kernel.graph.is_bipartite and not kernel.stay_probability(origin):
        return 2
    return 1


def _sparse_values(kernel: Kernel, origin: VertexAddr, horizon: int) -> List[Number]:
    g = kernel.graph
    prune = origin == g.origin
    dist: Dict[VertexAddr, Number] = {origin: kernel.mode.one}
    out = [kernel.mode.one]
    for n in range(1, horizon + 1):
        remaining = horizon - n
        keep = (lambda t, r=remaining: g.distance(t) <= r) if prune else None
        dist = kernel.push(dist, keep=keep)
        if len(dist) > numerics.support_cap:
            raise ResourceError(
                f"sparse series for {kernel.describe()} on {g.tag} exceeds {numerics.support_cap} "
                f"vertices at n={n}; use Dirichlet estimation instead"
            )
        out.append(dist.get(origin, kernel.mode.zero))
    return out


def _convolve_log(a: np.ndarray, b: np.ndarray, beta: float, horizon: int) -> np.ndarray:
    """log of sum_k C(n,k) beta^k (1-beta)^(n-k) e^a[k] e^b[n-k]."""
    gl = gammaln(np.arange(horizon + 2))
    log_beta, log_rest = math.log(beta), math.log1p(-beta)
    out = np.full(horizon + 1, -np.inf)
    for n in range(horizon + 1):
        k = np.arange(n + 1)
        terms = gl[n + 1] - gl[k + 1] - gl[n - k + 1] + k * log_beta + (n - k) * log_rest + a[k] + b[n - k]
        if np.isfinite(terms).any():
            out[n] = logsumexp(terms)
    return out


def _convolve_exact(a: Sequence[Fraction], b: Sequence[Fraction], beta: Fraction, horizon: int) -> List[Fraction]:
    rest = 1 - beta
    return [
        sum(
            (comb(n, k) * beta**k * rest ** (n - k) * a[k] * b[n - k] for k in range(n + 1)),
            Fraction(0),
        )
        for n in range(horizon + 1)
    ]


def _product_series(walk: ProductWalk, origin: tuple, horizon: int):
    exact = walk.mode is ArithmeticMode.RATIONAL
    acc = None
    acc_weight: Number = walk.mode.zero
    for pos, (factor, weight) in enumerate(zip(walk.factors, walk.weights)):
        if not weight:
            continue
        part = return_series(factor, horizon, origin[pos])
        values = part.exact if exact else part.log_p
        if acc is None:
            acc, acc_weight = values, weight
            continue
        beta = acc_weight / (acc_weight + weight)
        if exact:
            acc = _convolve_exact(acc, values, beta, horizon)
        else:
            acc = _convolve_log(acc, values, float(beta), horizon)
        acc_weight += weight
    return acc


def return_series(kernel: Kernel, horizon: int, origin: Optional[VertexAddr] = None) -> ReturnSeries:
    """
    Return probabilities P_i(X_n = i) for n = 0..horizon.

    Args:
        kernel: Walk kernel (carries its graph)
        horizon: N >= 1
        origin: Starting vertex i (defaults to the graph origin)

    Returns:
        ReturnSeries; ``exact`` holds Fractions in rational mode

    Raises:
        ConfigurationError: horizon < 1
        ResourceError: the sparse strategy exceeded the support cap
    """
    if horizon < 1:
        raise ConfigurationError(f"series horizon must be >= 1, got {horizon}")
    g = kernel.graph
    origin = g.origin if origin is None else origin
    g.validate(origin)
    exact = kernel.mode is ArithmeticMode.RATIONAL

    values = None
    strategy = "sparse"
    walk = as_product_walk(kernel)
    if walk is not None:
        values = _product_series(walk, origin, horizon)
        strategy = "convolution"
    else:
        chain = lumped_chain(kernel, at_origin=origin == g.origin)
        if chain is not None:
            strategy = "hammock-quotient" if _is_hammock(chain) else "quotient"
            values = exact_series(chain, horizon) if exact else log_series(chain, horizon)
    if values is None:
        raw = _sparse_values(kernel, origin, horizon)
        values = raw if exact else log_to_float(raw)

    exact_values = list(values) if exact else None
    log_p = log_to_float(values) if exact else np.asarray(values, dtype=float)
    record_series(strategy, horizon + 1)
    logger.debug(f"[SPECTRAL] series kernel={kernel.describe()} graph={g.tag} N={horizon} strategy={strategy}")
    return ReturnSeries(
        origin=origin,
        log_p=log_p,
        exact=exact_values,
        period=_period(log_p, kernel, origin),
        mode=kernel.mode,
        strategy=strategy,
    )


def _is_hammock(chain: LumpedChain) -> bool:
    while isinstance(chain, LazyChain):
        chain = chain.base
    return isinstance(chain, HammockChain)


def n_step_distribution(kernel: Kernel, source: VertexAddr, n: int) -> Dict[VertexAddr, Number]:
    """Exact distribution of X_n started at ``source`` by sparse DP."""
    kernel.graph.validate(source)
    dist: Dict[VertexAddr, Number] = {source: kernel.mode.one}
    for step in range(n):
        dist = kernel.push(dist)
        if len(dist) > numerics.support_cap:
            raise ResourceError(
                f"distribution of {kernel.describe()} exceeds {numerics.support_cap} vertices at step {step + 1}"
            )
    return dist


def transition_probability(kernel: Kernel, source: VertexAddr, target: VertexAddr, n: int) -> Number:
    """P_source(X_n = target)."""
    kernel.graph.validate(target)
    return n_step_distribution(kernel, source, n).get(target, kernel.mode.zero)


# ==================== Spectral radius ====================

def _decimal(value) -> Decimal:
    if isinstance(value, Fraction):
        return Decimal(value.numerator) / Decimal(value.denominator)
    return Decimal(str(value))


def analytic_rho(spec: KernelSpec, g: GraphFamily) -> Optional[Decimal]:
    """
    Closed-form spectral radius, or None when none is known.

    Args:
        spec: Kernel spec
        g: Graph the kernel runs on

    Returns:
        Decimal with 50 significant digits
    """
    with localcontext() as ctx:
        ctx.prec = RHO_DIGITS
        if isinstance(spec, Simple):
            if isinstance(g, HomTree):
                return 2 * Decimal(g.d - 1).sqrt() / g.d
            if isinstance(g, Line):
                return Decimal(1)
            if isinstance(g, Product) and g.regular_degree is not None:
                total = g.regular_degree
                parts = [analytic_rho(Simple(), f) for f in g.factors]
                if any(p is None for p in parts):
                    return None
                return sum((Decimal(f.regular_degree) / total * p for f, p in zip(g.factors, parts)), Decimal(0))
            return None
        if isinstance(spec, BiasedLine):
            p = _decimal(spec.p)
            return 2 * (p * (1 - p)).sqrt()
        if isinstance(spec, Lazy):
            base = analytic_rho(spec.base, g)
            if base is None:
                return None
            s = _decimal(spec.stay)
            return s + (1 - s) * base
        if isinstance(spec, ProductKernel) and isinstance(g, Product):
            total = Decimal(0)
            for (factor_spec, weight), factor_graph in zip(spec.factors, g.factors):
                w = _decimal(weight)
                if not w:
                    continue
                rho = analytic_rho(factor_spec, factor_graph)
                if rho is None:
                    return None
                total += w * rho
            return +total
    return None


def _window(horizon: int) -> Tuple[int, int]:
    return max(1, horizon // 2), horizon


def fit_spectral(
    series: ReturnSeries,
    known_rho: Optional[float] = None,
    window: Optional[Tuple[int, int]] = None,
) -> SpectralFit:
    """
    Fit p_n ~ C rho^n / n^a on positive terms of the window [N/2, N].

    Without ``known_rho``, rho is estimated first from the ratio regression
    (log p_{n+per} - log p_n)/per = log rho - a log((n+per)/n)/per.

    Raises:
        InsufficientDataError: fewer than the configured number of positive terms
    """
    log_p = series.log_p
    n_all = np.arange(len(log_p))
    positive = np.isfinite(log_p) & (n_all >= 1)
    if positive.sum() < numerics.min_positive_terms:
        raise InsufficientDataError(
            f"series has {int(positive.sum())} positive terms, need {numerics.min_positive_terms}"
        )
    lo, hi = window or _window(series.horizon)
    mask = positive & (n_all >= lo) & (n_all <= hi)
    if mask.sum() < 3:
        raise InsufficientDataError(f"fit window [{lo}, {hi}] has fewer than 3 positive terms")
    n = n_all[mask].astype(float)
    logs = log_p[mask]

    ratio_estimate = None
    method = "closed-form"
    if known_rho is None:
        per = max(series.period, 1)
        starts = n_all[mask]
        starts = starts[starts + per <= hi]
        starts = starts[np.isfinite(log_p[starts + per])]
        if len(starts) < 3:
            raise InsufficientDataError("not enough consecutive positive terms for a ratio fit")
        y = (log_p[starts + per] - log_p[starts]) / per
        x = np.log((starts + per) / starts) / per
        ratio = stats.linregress(x, y)
        ratio_estimate = float(math.exp(ratio.intercept))
        rho = ratio_estimate
        method = "quotient-dp-extrapolation"
    else:
        rho = float(known_rho)

    x = np.log(n)
    y = logs - n * math.log(rho)
    reg = stats.linregress(x, y)
    residuals = y - (reg.intercept + reg.slope * x)
    return SpectralFit(
        rho=rho,
        exponent=float(-reg.slope),
        constant=float(math.exp(reg.intercept)),
        window_start=int(lo),
        window_end=int(hi),
        r_squared=float(reg.rvalue**2),
        residual_max=float(np.abs(residuals).max()),
        residual_rms=float(np.sqrt(np.mean(residuals**2))),
        method=method,
        rho_ratio_estimate=ratio_estimate,
        positive_terms=int(positive.sum()),
        period=series.period,
    )


def _restricted_operator(kernel: Kernel, radius: int) -> Tuple[sparse.csr_matrix, str]:
    chain: Optional[LumpedChain] = None
    if isinstance(as_product_walk(kernel), ProductWalk):
        chain = constrained_chain(as_product_walk(kernel), ["point"] * kernel.graph.arity)
    else:
        chain = lumped_chain(kernel, at_origin=True)
    if chain is not None:
        states = chain.reachable(radius)
        index = {s: i for i, s in enumerate(states)}
        rows, cols, vals = [], [], []
        for s in states:
            for t, p in chain.row(s):
                j = index.get(t)
                if j is not None:
                    rows.append(index[s])
                    cols.append(j)
                    vals.append(float(p))
        size = len(states)
        return sparse.csr_matrix((vals, (rows, cols)), shape=(size, size)), "quotient"
    region = ball(kernel.graph, radius)
    index = {v: i for i, v in enumerate(region)}
    rows, cols, vals = [], [], []
    for v, i in index.items():
        for t, p in kernel.step_distribution(v).items():
            j = index.get(t)
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(float(p))
    size = len(index)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(size, size)), "ball"


def dirichlet_rho(
    kernel: Kernel,
    radius: int,
    iterations: Optional[int] = None,
    tol: Optional[float] = None,
) -> DirichletEstimate:
    """
    Top eigenvalue of the kernel restricted to B(origin, R), absorbing outside.

    Power iteration runs on (I + Q)/2, which has the same Perron vector and no
    negative eigenvalues to cancel against; rho_R = 2 mu - 1.

    Args:
        kernel: Walk kernel
        radius: Ball radius R
        iterations: Iteration budget (defaults to the numerics default)
        tol: Residual tolerance on ||Q x - rho x|| for unit x

    Returns:
        DirichletEstimate; ``converged`` False with a warning when the budget ran out
    """
    iterations = iterations or numerics.power_iterations
    tol = tol or numerics.power_tolerance
    if radius == 0:
        stay = float(kernel.stay_probability(kernel.origin))
        return DirichletEstimate(
            rho=stay, radius=0, ball_size=1, iterations=0, gap=0.0, residual=0.0,
            converged=True, representation="quotient",
        )
    op, representation = _restricted_operator(kernel, radius)
    size = op.shape[0]
    half = (op + sparse.identity(size, format="csr")) * 0.5
    x = np.ones(size) / math.sqrt(size)
    mu, prev, residual, gap = 0.0, 0.0, math.inf, math.inf
    steps = 0
    converged = False
    for steps in range(1, iterations + 1):
        y = half @ x
        mu = float(x @ y)
        residual = 2.0 * float(np.linalg.norm(y - mu * x))
        gap = abs(mu - prev)
        prev = mu
        if residual < tol:
            converged = True
            break
        x = y / np.linalg.norm(y)
    record_power_iterations(steps)
    warning = None if converged else f"power iteration stopped after {steps} steps with residual {residual:.3g}"
    if warning:
        logger.warning(f"[SPECTRAL] dirichlet R={radius}: {warning}")
    return DirichletEstimate(
        rho=2.0 * mu - 1.0,
        radius=radius,
        ball_size=size,
        iterations=steps,
        gap=2.0 * gap,
        residual=residual,
        converged=converged,
        representation=representation,
        warning=warning,
    )


def _dirichlet_extrapolation(kernel: Kernel, radii: Sequence[int]) -> RhoResolution:
    estimates = [dirichlet_rho(kernel, r) for r in radii]
    values = np.array([e.rho for e in estimates])
    x = 1.0 / (np.asarray(radii, dtype=float) + 1.0) ** 2
    reg = stats.linregress(x, values)
    value = float(min(max(reg.intercept, values.max()), 1.0))
    detail = {f"rho_R{r}": float(v) for r, v in zip(radii, values)}
    detail["r_squared"] = float(reg.rvalue**2)
    return RhoResolution(value=value, method="dirichlet-extrapolated", detail=detail)


def resolve_rho(kernel: Kernel, horizon: int = 4000, radii: Sequence[int] = (6, 8, 10, 12)) -> RhoResolution:
    """
    Best available spectral radius for ``kernel``.

    Closed form first, then series plus ratio fit on a lumped chain, then the
    weighted sum over product factors, then extrapolated Dirichlet radii.
    Glued graphs use the maximum over their parts.
    """
    g = kernel.graph
    closed = analytic_rho(kernel.spec, g)
    if closed is not None:
        return RhoResolution(value=float(closed), method="closed-form")
    if isinstance(g, Glued):
        if not isinstance(kernel.spec, Simple):
            raise ConfigurationError(f"glued graphs support the simple kernel only, got {kernel.describe()}")
        parts = [resolve_rho(build_kernel(Simple(), p, kernel.mode), horizon, radii) for p in g.parts]
        detail = {f"part{k}": r.value for k, r in enumerate(parts)}
        return RhoResolution(value=max(r.value for r in parts), method="glued-max-of-parts", detail=detail)
    if lumped_chain(kernel, at_origin=True) is not None:
        fit = fit_spectral(return_series(kernel, horizon))
        return RhoResolution(
            value=fit.rho, method="quotient-dp-extrapolation", detail={"exponent": fit.exponent}
        )
    walk = as_product_walk(kernel)
    if walk is not None:
        total = 0.0
        detail = {}
        for pos, (factor, weight) in enumerate(zip(walk.factors, walk.weights)):
            if not weight:
                continue
            part = resolve_rho(factor, horizon, radii)
            detail[f"factor{pos + 1}"] = part.value
            total += float(weight) * part.value
        return RhoResolution(value=total, method="product-weighted-sum", detail=detail)
    resolution = _dirichlet_extrapolation(kernel, radii)
    logger.info(f"[SPECTRAL] rho for {kernel.describe()} from Dirichlet radii {list(radii)}: {resolution.value:.10g}")
    return resolution


# ==================== Criteria ====================

def _verdict(exponent: float, r_squared: float) -> str:
    if not math.isfinite(exponent) or r_squared < numerics.fit_r_squared:
        return "inconclusive"
    if exponent > 2 + numerics.exponent_margin:
        return "converged"
    return "diverging"


def _divergence_fit(partial: np.ndarray, exponent: float, horizon: int) -> Tuple[str, float, float]:
    lo, hi = _window(horizon)
    n = np.arange(lo, hi + 1, dtype=float)
    s = partial[lo : hi + 1]
    if abs(exponent - 2) <= 0.25:
        reg = stats.linregress(np.log(n), s)
        return "log", float(reg.slope), float(reg.rvalue**2)
    reg = stats.linregress(np.log(n), np.log(s))
    return "power", float(reg.slope), float(reg.rvalue**2)


def criticality_sum(series: ReturnSeries, rho: float, horizon: Optional[int] = None) -> ConditionReport:
    """
    Partial sums of sum_n (n+1) rho^-n p_n with a convergence verdict.

    The verdict keys on the fitted exponent a of p_n ~ C rho^n / n^a: converged
    when a > 2 + margin with a good fit, diverging when a <= 2 + margin with a
    good fit. The extrapolated tail is reported for a > 2.
    """
    horizon = series.horizon if horizon is None else min(horizon, series.horizon)
    part = series.truncated(horizon)
    n = np.arange(horizon + 1, dtype=float)
    with np.errstate(over="ignore", under="ignore"):
        terms = np.exp(np.log(n + 1) - n * math.log(rho) + part.log_p)
    partial = np.cumsum(terms)

    try:
        fit = fit_spectral(part, known_rho=rho)
        exponent, r2 = fit.exponent, fit.r_squared
    except InsufficientDataError as e:
        logger.warning(f"[SPECTRAL] criticality fit unavailable: {e.error_message}")
        fit, exponent, r2 = None, math.nan, 0.0

    verdict = _verdict(exponent, r2)
    tail = None
    below = False
    model = slope = model_r2 = None
    if fit is not None and exponent > 2:
        per = max(series.period, 1)
        tail = float(fit.constant / per * (zeta(exponent - 1, horizon + 1) + zeta(exponent, horizon + 1)))
        below = tail < numerics.tail_tolerance
    if fit is not None and verdict != "converged":
        model, slope, model_r2 = _divergence_fit(partial, exponent, horizon)

    logger.info(
        f"[SPECTRAL] criticality N={horizon} S_N={partial[-1]:.6g} a={exponent:.4f} verdict={verdict}"
    )
    return ConditionReport(
        kind="criticality",
        horizon=horizon,
        partial_sums=partial.tolist(),
        verdict=verdict,
        exponent=exponent,
        r_squared=r2,
        tail_estimate=tail,
        tail_below_tolerance=below,
        divergence_model=model,
        divergence_slope=slope,
        divergence_r_squared=model_r2,
    )


def _binomial_weights(beta: float, horizon: int) -> np.ndarray:
    k = np.arange(horizon + 1)
    return stats.binom.pmf(k[None, :], k[:, None], beta)


def _radial_meeting(chain: LumpedChain, d: int, distance: int, horizon: int) -> np.ndarray:
    """P(X_k = X'_n) on T_d from the radial distributions of two walks."""
    dists = distributions(chain, horizon)
    width = horizon + 1
    radial = np.zeros((width, width))
    for k, dist in enumerate(dists):
        for r, mass in dist.items():
            radial[k, r] = float(mass)

    def log_sphere(r: int) -> float:
        return 0.0 if r == 0 else math.log(d) + (r - 1) * math.log(d - 1)

    kernel = np.zeros((width, width))
    for r in range(width):
        for s in range(width):
            twice_t = r - s + distance
            if twice_t % 2 or not 0 <= twice_t // 2 <= distance:
                continue
            t = twice_t // 2
            h = r - t
            if h < 0:
                continue
            if h == 0:
                log_count = 0.0
            elif distance == 0:
                log_count = math.log(d) + (h - 1) * math.log(d - 1)
            elif t in (0, distance):
                log_count = h * math.log(d - 1)
            else:
                log_count = math.log(d - 2) + (h - 1) * math.log(d - 1)
            kernel[r, s] = math.exp(log_count - log_sphere(r) - log_sphere(s))
    return radial @ kernel @ radial.T


def _line_meeting(chain: LumpedChain, offset: int, horizon: int) -> np.ndarray:
    """P(X_k = X'_n) on Z for walks started ``offset`` apart."""
    dists = distributions(chain, horizon)
    shift = horizon + abs(offset)
    width = 2 * shift + 1
    first = np.zeros((horizon + 1, width))
    second = np.zeros((horizon + 1, width))
    for k, dist in enumerate(dists):
        for x, mass in dist.items():
            first[k, x + shift] = float(mass)
            second[k, x + offset + shift] = float(mass)
    return first @ second.T


def _sparse_meeting(kernel: Kernel, i: VertexAddr, j: VertexAddr, horizon: int) -> np.ndarray:
    def run(source):
        dist = {source: kernel.mode.one}
        out = [dist]
        for _ in range(horizon):
            dist = kernel.push(dist)
            if len(dist) > numerics.support_cap:
                raise ResourceError(f"two-walk distributions exceed {numerics.support_cap} vertices")
            out.append(dist)
        return out

    f, g = run(i), run(j)
    meet = np.zeros((horizon + 1, horizon + 1))
    for k in range(horizon + 1):
        for n in range(horizon + 1 - k):
            small, large = (f[k], g[n]) if len(f[k]) <= len(g[n]) else (g[n], f[k])
            meet[k, n] = float(sum(m * large[v] for v, m in small.items() if v in large))
    return meet


def _factor_meeting(kernel: Kernel, i: VertexAddr, j: VertexAddr, horizon: int) -> np.ndarray:
    g = kernel.graph
    chain = lumped_chain(kernel, at_origin=True)
    base = chain.base if isinstance(chain, LazyChain) else chain
    if isinstance(g, HomTree) and isinstance(base, TreeDistanceChain):
        return _radial_meeting(chain, g.d, g.distance_between(i, j), horizon)
    if isinstance(g, Line) and isinstance(base, LineChain):
        return _line_meeting(chain, int(j) - int(i), horizon)
    return _sparse_meeting(kernel, i, j, horizon)


def meeting_matrix(kernel: Kernel, i: VertexAddr, j: VertexAddr, horizon: int) -> np.ndarray:
    """
    M[k, n] = P(X_k = X'_n) for independent walks from i and j, k + n <= horizon.

    Products fold factor matrices pairwise with binomial step allocations.
    """
    walk = as_product_walk(kernel)
    if walk is None:
        return _factor_meeting(kernel, i, j, horizon)
    acc = None
    acc_weight = 0.0
    constant = 1.0
    for pos, (factor, weight) in enumerate(zip(walk.factors, walk.weights)):
        if not weight:
            constant *= float(i[pos] == j[pos])
            continue
        part = _factor_meeting(factor, i[pos], j[pos], horizon)
        if acc is None:
            acc, acc_weight = part, float(weight)
            continue
        beta = acc_weight / (acc_weight + float(weight))
        w = _binomial_weights(beta, horizon)
        folded = np.zeros((horizon + 1, horizon + 1))
        for k in range(horizon + 1):
            wk = w[k, : k + 1]
            for n in range(horizon + 1 - k):
                block = acc[: k + 1, : n + 1] * part[k::-1, n::-1]
                folded[k, n] = wk @ block @ w[n, : n + 1]
        acc, acc_weight = folded, acc_weight + float(weight)
    return constant * acc


def two_walk_sum(
    kernel: Kernel,
    i: VertexAddr,
    j: VertexAddr,
    m: float,
    horizon: int,
    diagonal: Optional[ReturnSeries] = None,
) -> ConditionReport:
    """
    Partial sums of sum_{k+n<=N} m^(k+n) P(X_k = X'_n) with a verdict.

    The diagonal terms D_s = sum_{k+n=s} P(X_k = X'_n) are fitted as
    m^s D_s ~ c s^(1-a); ``exponent`` reports a so that verdicts match
    ``criticality_sum``. For i = j the terms are compared with (s+1) m^s p_s.
    """
    kernel.graph.validate(i)
    kernel.graph.validate(j)
    meet = meeting_matrix(kernel, i, j, horizon)
    s_terms = np.array([np.trace(np.fliplr(meet[: s + 1, : s + 1])) for s in range(horizon + 1)])
    with np.errstate(over="ignore"):
        terms = s_terms * np.power(float(m), np.arange(horizon + 1))
    partial = np.cumsum(terms)

    s = np.arange(horizon + 1)
    lo, hi = _window(horizon)
    mask = (terms > 0) & (s >= lo)
    exponent, r2 = math.nan, 0.0
    tail = None
    if mask.sum() >= 3:
        reg = stats.linregress(np.log(s[mask]), np.log(terms[mask]))
        exponent, r2 = 1.0 - float(reg.slope), float(reg.rvalue**2)
        positive = np.nonzero(terms[1:] > 0)[0] + 1
        per = math.gcd(*positive.tolist()) if len(positive) > 1 else 1
        if -reg.slope > 1:
            tail = float(math.exp(reg.intercept) / per * zeta(-reg.slope, horizon + 1))
    verdict = _verdict(exponent, r2)

    diag_error = None
    if i == j:
        series = diagonal or return_series(kernel, horizon, i)
        expected = (s + 1) * np.power(float(m), s) * series.probabilities[: horizon + 1]
        scale = np.where(expected > 0, expected, 1.0)
        diag_error = float(np.max(np.abs(terms - expected) / scale))

    model = slope = model_r2 = None
    if verdict != "converged" and math.isfinite(exponent):
        model, slope, model_r2 = _divergence_fit(partial, exponent, horizon)
    logger.info(f"[SPECTRAL] two-walk N={horizon} S_N={partial[-1]:.6g} a={exponent:.4f} verdict={verdict}")
    return ConditionReport(
        kind="two-walk",
        horizon=horizon,
        partial_sums=partial.tolist(),
        verdict=verdict,
        exponent=exponent,
        r_squared=r2,
        tail_estimate=tail,
        tail_below_tolerance=tail is not None and tail < numerics.tail_tolerance,
        divergence_model=model,
        divergence_slope=slope,
        divergence_r_squared=model_r2,
        diagonal_max_relative_error=diag_error,
    )


def classify_regime(m: float, rho: float, tol: Optional[float] = None) -> RegimeReport:
    """Transient if m < 1/rho, critical (and transient) within tolerance, recurrent above."""
    tol = numerics.critical_tolerance if tol is None else tol
    threshold = 1.0 / rho
    critical = abs(m - threshold) <= tol
    if critical:
        regime = "critical"
    elif m < threshold:
        regime = "transient"
    else:
        regime = "recurrent"
    return RegimeReport(
        regime=regime,
        transient=regime != "recurrent",
        critical=critical,
        m=m,
        rho=rho,
        threshold=threshold,
    )


# ==================== Supplements ====================

def hammock_level_bound(levels: int = 16) -> Fraction:
    """Smallest probability of moving from layer k to layer k+1 on the hammock chain."""
    chain = HammockChain(ArithmeticMode.RATIONAL)
    bound = Fraction(1)
    for kind in ("t", "s"):
        for level in range(levels):
            state = (kind, level)
            up = sum(
                (p for t, p in chain.row(state) if chain.layer(t) == chain.layer(state) + 1),
                Fraction(0),
            )
            bound = min(bound, up)
    return bound


def supercritical_lag(series: ReturnSeries, rho: float) -> int:
    """
    Smallest k >= 1 with p_k > rho^k.

    Raises:
        InsufficientDataError: no such k within the series
    """
    log_rho = math.log(rho)
    for k in range(1, series.horizon + 1):
        if series.log_p[k] > k * log_rho:
            return k
    raise InsufficientDataError(f"no k <= {series.horizon} with p_k > rho^k")


def exponent_additivity(kernel: Kernel, horizon: int = 4000) -> AdditivityReport:
    """
    Compare a product fit with the weighted factor spectral radii and summed exponents.

    Raises:
        ConfigurationError: kernel is not a product walk
    """
    walk = as_product_walk(kernel)
    if walk is None:
        raise ConfigurationError(f"additivity needs a product kernel, got {kernel.describe()}")
    factor_fits: List[SpectralFit] = []
    weights: List[float] = []
    for pos, (factor, weight) in enumerate(zip(walk.factors, walk.weights)):
        if not weight:
            continue
        known = analytic_rho(factor.spec, factor.graph)
        series = return_series(factor, horizon, walk.graph.origin[pos])
        factor_fits.append(fit_spectral(series, known_rho=float(known) if known is not None else None))
        weights.append(float(weight))
    product_fit = fit_spectral(return_series(walk, horizon))
    rho_sum = sum(w * f.rho for w, f in zip(weights, factor_fits))
    exponent_sum = sum(f.exponent for f in factor_fits)
    return AdditivityReport(
        product_fit=product_fit,
        factor_fits=factor_fits,
        weights=weights,
        rho_weighted_sum=rho_sum,
        exponent_sum=exponent_sum,
        rho_gap=abs(product_fit.rho - rho_sum),
        exponent_gap=abs(product_fit.exponent - exponent_sum),
    )
