"""
Experiment orchestration.

``run_experiment`` resolves the walk and offspring law of a config, dispatches
to the owning service, writes CSV data files plus ``manifest.json`` and returns
the manifest. Rows are written in canonical order (replication index, then
address strings), so equal configs give byte-identical CSV files.
"""
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from logging import LoggerAdapter
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
from uuid import uuid4

import numpy as np

from brwlab.converters.address_codec import AddressCodec
from brwlab.converters.records import edge_rows, series_rows, visit_rows, write_csv, write_json
from brwlab.converters.spec_parser import parse_graph, parse_kernel, parse_mu
from brwlab.core.config import numerics_overrides, settings
from brwlab.core.exceptions import ConfigurationError, error_record, exit_code_for
from brwlab.core.logging import get_logger_with_context
from brwlab.core.metrics import record_experiment, write_metrics
from brwlab.graphs.families import GraphFamily, Product, VertexAddr
from brwlab.kernels.reversibility import reversibility_check
from brwlab.kernels.specs import ArithmeticMode
from brwlab.kernels.walks import Kernel, as_product_walk, build_kernel
from brwlab.schemas.experiment import ErrorRecord, ExperimentConfig, RunManifest, TruncationEvent
from brwlab.schemas.results import RhoResolution
from brwlab.services.brw_engine import (
    OffspringDist,
    RunConfig,
    TraceRecord,
    critical_offspring,
    fixed_offspring,
    many_to_one_check,
    offspring_law,
    run_replications,
    simulate_or_partial,
    supercritical_offspring,
)
from brwlab.services.spectral_lab import (
    analytic_rho,
    classify_regime,
    criticality_sum,
    dirichlet_rho,
    exponent_additivity,
    fit_spectral,
    resolve_rho,
    return_series,
    two_walk_sum,
)
from brwlab.services.trace_topology import (
    embedded_gw_stats,
    ends_profile,
    fiber_hit_stats,
    purple_experiment,
)

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.json"
METRICS_NAME = "metrics.prom"

PRIMARY = "primary"
PAIRED = "paired"


# ==================== Context ====================

@dataclass
class WalkSetup:
    """A kernel together with its offspring law and the rho behind it."""

    label: str
    kernel: Kernel
    offspring: OffspringDist
    rho: Optional[RhoResolution]


@dataclass
class ExperimentContext:
    """Resolved objects and collected outputs of one run."""

    cfg: ExperimentConfig
    graph: GraphFamily
    kernel: Kernel
    codec: AddressCodec
    out_dir: Path
    derived: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    truncations: List[TruncationEvent] = field(default_factory=list)
    _setups: Dict[str, WalkSetup] = field(default_factory=dict)

    @property
    def mode(self) -> ArithmeticMode:
        return self.kernel.mode

    def csv(self, name: str, header: Sequence[str], rows) -> None:
        write_csv(self.out_dir / name, header, rows)
        self.outputs.append(name)

    def summary(self, payload: Dict[str, Any]) -> None:
        write_json(self.out_dir / SUMMARY_NAME, payload)
        self.outputs.append(SUMMARY_NAME)

    def address(self, text: Optional[str]) -> VertexAddr:
        """Decode an address of the experiment graph; None means the origin."""
        return self.graph.origin if text is None else self.codec.decode(text)

    def setup(self, label: str = PRIMARY) -> WalkSetup:
        """Kernel and offspring law for the primary or the paired walk."""
        if label not in self._setups:
            if label == PRIMARY:
                kernel = self.kernel
            else:
                if not self.cfg.paired_kernel:
                    raise ConfigurationError("no paired_kernel configured")
                kernel = build_kernel(parse_kernel(self.cfg.paired_kernel), self.graph, self.mode)
            offspring, rho = _resolve_offspring(self.cfg, kernel, use_supplied=label == PRIMARY)
            self._setups[label] = WalkSetup(label, kernel, offspring, rho)
            _stamp_setup(self.derived, self._setups[label])
        return self._setups[label]

    def setups(self) -> List[WalkSetup]:
        labels = [PRIMARY, PAIRED] if self.cfg.paired_kernel else [PRIMARY]
        return [self.setup(label) for label in labels]

    def note_truncation(self, trace: TraceRecord, replication: int) -> None:
        if trace.truncated:
            self.truncations.append(
                TruncationEvent(
                    replication=replication,
                    generation=trace.generations_completed,
                    color=trace.color,
                )
            )

    def run_config(self, setup: WalkSetup, generations: int, replication: int, **kwargs) -> RunConfig:
        return RunConfig(
            kernel=setup.kernel,
            offspring=setup.offspring,
            generations=generations,
            seed=self.cfg.seed,
            population_cap=self.cfg.population_cap,
            allow_truncation=self.cfg.allow_truncation,
            replication=replication,
            **kwargs,
        )

    def budgets(self) -> List[int]:
        return sorted(set(self.cfg.budgets)) if self.cfg.budgets else [self.cfg.generations]


# ==================== Offspring and rho ====================

def _resolve_rho(cfg: ExperimentConfig, kernel: Kernel, use_supplied: bool) -> Tuple[Any, RhoResolution]:
    if use_supplied and cfg.rho is not None:
        return cfg.rho, RhoResolution(value=cfg.rho, method=f"supplied: {cfg.rho_source}")
    closed = analytic_rho(kernel.spec, kernel.graph)
    if closed is not None:
        return closed, RhoResolution(value=float(closed), method="closed-form")
    resolution = resolve_rho(kernel, horizon=cfg.horizon)
    return resolution.value, resolution


def _resolve_offspring(
    cfg: ExperimentConfig, kernel: Kernel, use_supplied: bool = True
) -> Tuple[OffspringDist, Optional[RhoResolution]]:
    mu = parse_mu(cfg.mu)
    if mu.kind == "fixed":
        return fixed_offspring(mu.k), None
    if mu.kind == "law":
        return offspring_law(dict(mu.law)), None
    rho, resolution = _resolve_rho(cfg, kernel, use_supplied)
    if mu.factor == 1:
        return critical_offspring(rho), resolution
    return supercritical_offspring(rho, mu.factor), resolution


def _stamp_setup(derived: Dict[str, Any], setup: WalkSetup) -> None:
    prefix = "" if setup.label == PRIMARY else "paired_"
    derived[f"{prefix}kernel"] = setup.kernel.describe()
    derived[f"{prefix}mu"] = setup.offspring.describe()
    derived[f"{prefix}mu_mean"] = setup.offspring.mean
    if setup.rho is not None:
        derived[f"{prefix}rho"] = setup.rho.value
        derived[f"{prefix}rho_method"] = setup.rho.method
        if setup.rho.detail:
            derived[f"{prefix}rho_detail"] = setup.rho.detail
        derived[f"{prefix}regime"] = classify_regime(setup.offspring.mean, setup.rho.value).regime


def _win_rate(primary: Dict[int, float], paired: Dict[int, float]) -> float:
    keys = sorted(set(primary) & set(paired))
    if not keys:
        return math.nan
    return sum(1 for k in keys if primary[k] > paired[k]) / len(keys)


def _median(values: Sequence[float]) -> float:
    return float(np.median(values)) if len(values) else math.nan


# ==================== Numerics experiments ====================

def _return_series(ctx: ExperimentContext) -> None:
    series = return_series(ctx.kernel, ctx.cfg.horizon, ctx.address(ctx.cfg.source_i))
    rows = series_rows(series)
    header = ["n", "p_n", "log_p_n"]
    if series.exact is not None:
        header.append("p_n_exact")
        rows = [row + [str(series.exact[row[0]])] for row in rows]
    ctx.csv("series.csv", header, rows)
    ctx.derived["strategy"] = series.strategy
    ctx.derived["period"] = series.period


def _spectral_fit(ctx: ExperimentContext) -> None:
    kernel = ctx.kernel
    series = return_series(kernel, ctx.cfg.horizon)
    ctx.csv("series.csv", ["n", "p_n", "log_p_n"], series_rows(series))
    payload: Dict[str, Any] = {"strategy": series.strategy, "fit": fit_spectral(series).model_dump()}
    closed = analytic_rho(kernel.spec, kernel.graph)
    if closed is not None:
        payload["fit_known_rho"] = fit_spectral(series, known_rho=float(closed)).model_dump()
        payload["rho_closed_form"] = str(closed)
    if as_product_walk(kernel) is not None:
        payload["additivity"] = exponent_additivity(kernel, ctx.cfg.horizon).model_dump()
    ctx.summary(payload)
    ctx.derived["rho_fitted"] = payload["fit"]["rho"]
    ctx.derived["exponent_fitted"] = payload["fit"]["exponent"]


def _criticality_sum(ctx: ExperimentContext) -> None:
    rho, resolution = _resolve_rho(ctx.cfg, ctx.kernel, use_supplied=True)
    ctx.derived["rho"] = resolution.value
    ctx.derived["rho_method"] = resolution.method
    series = return_series(ctx.kernel, ctx.cfg.horizon)
    report = criticality_sum(series, float(rho))
    ctx.csv("partial_sums.csv", ["n", "partial_sum"], list(enumerate(report.partial_sums)))
    ctx.summary(report.model_dump(exclude={"partial_sums"}))
    ctx.derived["verdict"] = report.verdict


def _two_walk_sum(ctx: ExperimentContext) -> None:
    setup = ctx.setup()
    i = ctx.address(ctx.cfg.source_i)
    j = ctx.address(ctx.cfg.source_j)
    report = two_walk_sum(ctx.kernel, i, j, setup.offspring.mean, ctx.cfg.horizon)
    ctx.csv("partial_sums.csv", ["s", "partial_sum"], list(enumerate(report.partial_sums)))
    summary = report.model_dump(exclude={"partial_sums"})
    summary.update({"source_i": ctx.codec.encode(i), "source_j": ctx.codec.encode(j), "m": setup.offspring.mean})
    ctx.summary(summary)
    ctx.derived["verdict"] = report.verdict


def _dirichlet(ctx: ExperimentContext) -> None:
    estimates = [dirichlet_rho(ctx.kernel, r) for r in sorted(ctx.cfg.radii)]
    ctx.csv(
        "dirichlet.csv",
        ["radius", "rho_r", "ball_size", "iterations", "residual", "representation", "converged"],
        [[e.radius, e.rho, e.ball_size, e.iterations, e.residual, e.representation, e.converged] for e in estimates],
    )
    values = [e.rho for e in estimates]
    ctx.derived["nondecreasing"] = all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    ctx.derived["rho_largest_radius"] = values[-1]


def _reversibility(ctx: ExperimentContext) -> None:
    report = reversibility_check(ctx.kernel, ctx.cfg.horizon, ctx.cfg.radii[0])
    ctx.summary(report.model_dump())
    ctx.derived["quasi_symmetry_ratio"] = report.ratio


# ==================== Simulation experiments ====================

def _simulate(ctx: ExperimentContext) -> None:
    setup = ctx.setup()
    cfg = ctx.cfg

    def run(r: int) -> TraceRecord:
        return simulate_or_partial(ctx.run_config(setup, cfg.generations, r, retention=cfg.retention))

    traces = run_replications(run, cfg.replications)
    populations, edges, visits = [], [], []
    for r, trace in enumerate(traces):
        ctx.note_truncation(trace, r)
        populations.extend([r, n, p] for n, p in enumerate(trace.populations))
        edges.extend([r] + row for row in edge_rows(trace, ctx.codec))
        visits.extend([r] + row for row in visit_rows(trace.first_visit, ctx.codec))
    ctx.csv("populations.csv", ["replication", "generation", "population"], populations)
    ctx.csv("edges.csv", ["replication", "u", "v"], edges)
    ctx.csv("visits.csv", ["replication", "vertex", "first_generation"], visits)
    if cfg.retention == "all":
        states = []
        for r, trace in enumerate(traces):
            for state in trace.states:
                occupied = sorted((ctx.codec.encode(v), c) for v, c in state.counts.items())
                states.extend([r, state.generation, a, c] for a, c in occupied)
        ctx.csv("states.csv", ["replication", "generation", "vertex", "count"], states)


def _many_to_one(ctx: ExperimentContext) -> None:
    setup = ctx.setup()
    target = ctx.address(ctx.cfg.target)
    origin = ctx.address(ctx.cfg.source_i)
    rows = []
    worst = 0.0
    for n in ctx.budgets():
        run = ctx.run_config(setup, n, 0, origin=origin)
        result = many_to_one_check(run, n, target, ctx.cfg.replications)
        rows.append([n, ctx.codec.encode(target), result.replications, result.mc_mean,
                     result.mc_stderr, result.exact, result.z_score])
        worst = max(worst, abs(result.z_score))
    ctx.csv("many_to_one.csv", ["n", "target", "replications", "mc_mean", "mc_stderr", "exact", "z_score"], rows)
    ctx.derived["max_abs_z"] = worst


def _ends(ctx: ExperimentContext) -> None:
    cfg = ctx.cfg
    budgets = ctx.budgets()
    radii = sorted(cfg.radii)
    rows = []
    counts: Dict[Tuple[str, int, int], Dict[int, int]] = {}
    for setup in ctx.setups():
        for budget in budgets:

            def run(r: int, setup=setup, budget=budget):
                trace = simulate_or_partial(ctx.run_config(setup, budget, r))
                return trace, ends_profile(trace, radii)

            for r, (trace, profile) in enumerate(run_replications(run, cfg.replications)):
                ctx.note_truncation(trace, r)
                for radius, c in zip(radii, profile.counts):
                    rows.append([r, setup.label, budget, radius, c, profile.final_particles, profile.truncated])
                    counts.setdefault((setup.label, budget, radius), {})[r] = c
    ctx.csv(
        "ends.csv",
        ["replication", "kernel", "budget", "radius", "components", "final_particles", "truncated"],
        rows,
    )
    aggregates = []
    for (label, budget, radius), by_rep in sorted(counts.items()):
        values = list(by_rep.values())
        entry = {
            "kernel": label,
            "budget": budget,
            "radius": radius,
            "median_components": _median(values),
            "fraction_one_component": sum(1 for v in values if v == 1) / len(values),
        }
        if label == PRIMARY and cfg.paired_kernel:
            entry["win_rate_vs_paired"] = _win_rate(by_rep, counts[(PAIRED, budget, radius)])
        aggregates.append(entry)
    ctx.summary({"aggregates": aggregates})


def _purple(ctx: ExperimentContext) -> None:
    cfg = ctx.cfg
    budgets = ctx.budgets()
    horizon = max(budgets)
    i = ctx.address(cfg.source_i)
    j = ctx.address(cfg.source_j)
    rows, gaps = [], []
    counts: Dict[Tuple[str, int], Dict[int, int]] = {}
    for setup in ctx.setups():

        def run(r: int, setup=setup):
            return purple_experiment(
                setup.kernel, setup.offspring, i, j, horizon, cfg.seed,
                replication=r, population_cap=cfg.population_cap,
                allow_truncation=cfg.allow_truncation,
            )

        for r, colored in enumerate(run_replications(run, cfg.replications)):
            if colored.truncated:
                ctx.truncations.append(TruncationEvent(replication=r, generation=horizon, color="purple"))
            for budget in budgets:
                value = colored.purple_curve[budget]
                rows.append([r, setup.label, budget, value, colored.truncated])
                counts.setdefault((setup.label, budget), {})[r] = value
            gaps.extend([r, setup.label, gap, c] for gap, c in colored.gap_histogram.items())
    ctx.csv("purple.csv", ["replication", "kernel", "budget", "purple_count", "truncated"], rows)
    if gaps:
        ctx.csv("fiber_gaps.csv", ["replication", "kernel", "gap", "count"], gaps)

    aggregates = []
    first, last = budgets[0], budgets[-1]
    for setup in ctx.setups():
        entry: Dict[str, Any] = {
            "kernel": setup.label,
            "median_by_budget": {str(b): _median(list(counts[(setup.label, b)].values())) for b in budgets},
        }
        if last != first:
            entry["growth_fraction"] = _win_rate(counts[(setup.label, last)], counts[(setup.label, first)])
        if setup.label == PRIMARY and cfg.paired_kernel:
            entry["win_rate_vs_paired"] = _win_rate(counts[(PRIMARY, last)], counts[(PAIRED, last)])
        aggregates.append(entry)
    ctx.summary({
        "source_i": ctx.codec.encode(i),
        "source_j": ctx.codec.encode(j),
        "budgets": budgets,
        "aggregates": aggregates,
    })


def _fiber(ctx: ExperimentContext) -> None:
    cfg = ctx.cfg
    g = ctx.graph
    if not isinstance(g, Product):
        raise ConfigurationError(f"fiber experiments need a product graph, got {g.tag}")
    fiber = g.factors[0].origin if cfg.fiber is None else AddressCodec(g.factors[0]).decode(cfg.fiber)
    budgets = ctx.budgets()
    horizon = max(budgets)
    rows = []
    last_hits: Dict[Tuple[str, int], List[int]] = {}
    for setup in ctx.setups():

        def run(r: int, setup=setup):
            trace = simulate_or_partial(ctx.run_config(setup, horizon, r, retention="all"))
            return trace, fiber_hit_stats(trace, fiber)

        for r, (trace, stats) in enumerate(run_replications(run, cfg.replications)):
            ctx.note_truncation(trace, r)
            for budget in budgets:
                hits = [t for t in stats.hit_generations if t <= budget]
                last = hits[-1] if hits else None
                rows.append([r, setup.label, budget, len(hits), last, trace.truncated])
                last_hits.setdefault((setup.label, budget), []).append(-1 if last is None else last)
    ctx.csv("fiber.csv", ["replication", "kernel", "budget", "hits", "last_hit", "truncated"], rows)
    aggregates = []
    for (label, budget), values in sorted(last_hits.items()):
        late = sum(1 for v in values if v > budget - max(budget // 4, 1))
        aggregates.append({
            "kernel": label,
            "budget": budget,
            "median_last_hit": _median(values),
            "fraction_hit_in_last_quarter": late / len(values),
        })
    ctx.summary({"fiber": AddressCodec(g.factors[0]).encode(fiber), "aggregates": aggregates})


def _embedded_gw(ctx: ExperimentContext) -> None:
    cfg = ctx.cfg
    setup = ctx.setup()
    stats = embedded_gw_stats(
        setup.kernel,
        setup.offspring,
        cfg.z0,
        cfg.lag,
        budget=cfg.generations,
        replications=cfg.replications,
        seed=cfg.seed,
        levels=cfg.levels,
        horizon=cfg.horizon,
    )
    rows = [[r, level, y] for r, seq in enumerate(stats.sequences) for level, y in enumerate(seq)]
    ctx.csv("gw.csv", ["replication", "level", "count"], rows)
    flags = zip(stats.flag_generations, stats.flag_batch_sizes)
    ctx.csv(
        "gw_flags.csv",
        ["replication", "flag_generation", "z0_batch_size"],
        [[r, gen, size] for r, (gen, size) in enumerate(flags)],
    )
    ctx.summary(stats.model_dump(exclude={"sequences", "flag_generations", "flag_batch_sizes"}))
    ctx.derived["lag"] = stats.lag
    ctx.derived["mean_y1"] = stats.mean_y1
    ctx.derived["reference_mean"] = stats.reference_mean


HANDLERS: Dict[str, Callable[[ExperimentContext], None]] = {
    "return-series": _return_series,
    "spectral-fit": _spectral_fit,
    "criticality-sum": _criticality_sum,
    "two-walk-sum": _two_walk_sum,
    "simulate": _simulate,
    "many-to-one": _many_to_one,
    "purple": _purple,
    "ends": _ends,
    "fiber": _fiber,
    "embedded-gw": _embedded_gw,
    "dirichlet": _dirichlet,
    "reversibility": _reversibility,
}


# ==================== Entry points ====================

def _prepare(cfg: ExperimentConfig, out_dir: Optional[Path]) -> ExperimentContext:
    graph = parse_graph(cfg.graph)
    kernel = build_kernel(parse_kernel(cfg.kernel), graph, ArithmeticMode(cfg.mode))
    codec = AddressCodec(graph)
    for text in (cfg.source_i, cfg.source_j, cfg.target):
        if text is not None:
            codec.decode(text)
    directory = Path(out_dir or cfg.out_dir or settings.output_dir)
    return ExperimentContext(cfg=cfg, graph=graph, kernel=kernel, codec=codec, out_dir=directory)


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> RunManifest:
    """
    Run one experiment and write its outputs.

    Numerics overrides are in force from kernel construction on. Configuration
    problems found while applying them or while resolving graph, kernel and
    addresses raise before anything is written. Errors after that point are
    recorded in the manifest, which is written, and then re-raised.

    Args:
        cfg: Validated experiment config
        out_dir: Output directory (defaults to cfg.out_dir, then BRWLAB_OUTPUT_DIR)

    Returns:
        RunManifest of the completed run
    """
    log = get_logger_with_context(__name__, run_id=uuid4().hex[:12], experiment=cfg.kind, seed=cfg.seed)
    with numerics_overrides(cfg.numerics):
        return _execute(cfg, _prepare(cfg, out_dir), log)


def _execute(cfg: ExperimentConfig, ctx: ExperimentContext, log: LoggerAdapter) -> RunManifest:
    started_at = datetime.now(timezone.utc).isoformat()
    start = time.perf_counter()
    log.info(f"[HARNESS] starting {cfg.kind} on {cfg.graph} with {cfg.kernel} -> {ctx.out_dir}")

    failure: Optional[BaseException] = None
    try:
        HANDLERS[cfg.kind](ctx)
    except Exception as e:
        failure = e
        log.error(f"[HARNESS] {cfg.kind} failed: {e} (exit code {exit_code_for(e)})")

    elapsed = time.perf_counter() - start
    record_experiment(cfg.kind, elapsed)
    manifest = RunManifest(
        config=cfg,
        artifact_version=settings.app_version,
        seed=cfg.seed,
        started_at=started_at,
        wall_clock_seconds=elapsed,
        truncation_events=sorted(ctx.truncations, key=lambda t: (t.replication, t.color or "", t.generation)),
        derived=ctx.derived,
        outputs=sorted(ctx.outputs),
        status="ok" if failure is None else "error",
        error=None if failure is None else ErrorRecord(**error_record(failure)),
    )
    ctx.out_dir.mkdir(parents=True, exist_ok=True)
    if write_metrics(ctx.out_dir / METRICS_NAME):
        manifest.outputs = sorted(manifest.outputs + [METRICS_NAME])
    write_json(ctx.out_dir / MANIFEST_NAME, manifest.model_dump(mode="json"))

    if failure is not None:
        raise failure
    if manifest.truncation_events:
        log.warning(f"[HARNESS] {len(manifest.truncation_events)} runs truncated at the population cap")
    log.info(f"[HARNESS] finished {cfg.kind} in {elapsed:.2f}s, outputs: {', '.join(manifest.outputs)}")
    return manifest


def load_manifest(path: Path) -> RunManifest:
    """Read a manifest written by ``run_experiment``."""
    return RunManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


def rerun_manifest(path: Path, out_dir: Optional[Path] = None) -> RunManifest:
    """Re-execute the config recorded in a manifest."""
    return run_experiment(load_manifest(path).config, out_dir)
