"""
Preset experiments.

Each preset is a config text in the ``key = expression`` grammar, so a preset
file, a ``--config`` file and a manifest echo all read the same way.
"""
from typing import Any, Dict, List, NamedTuple, Optional

from brwlab.converters.spec_parser import parse_config_text
from brwlab.core.exceptions import ConfigurationError
from brwlab.schemas.experiment import ExperimentConfig

PRODUCT_SIMPLE = "product(1/2: simple@1, 1/2: simple@2)"
T3Z_BIASED = "product(1/2: simple@1, 1/2: biasedline(7/10)@2)"
T3T3_HEIGHT_BIASED = "product(1/2: heightbiased(7/10)@1, 1/2: simple@2)"


class Preset(NamedTuple):
    name: str
    description: str
    text: str


_PRESETS: List[Preset] = [
    Preset(
        "t3xz-critical-ends",
        "Critical BRW on T3 x Z, unbiased product walk: trace components beyond radius 6",
        f"""
        kind = ends
        graph = product(t(3), z)
        kernel = {PRODUCT_SIMPLE}
        paired_kernel = {T3Z_BIASED}
        mu = critical
        generations = 60
        radii = 6
        reps = 50
        """,
    ),
    Preset(
        "t3xz-biased-ends",
        "Critical BRW on T3 x Z with drift p = 0.7 along Z: expected to stay one-ended",
        f"""
        kind = ends
        graph = product(t(3), z)
        kernel = {T3Z_BIASED}
        paired_kernel = {PRODUCT_SIMPLE}
        mu = critical
        generations = 60
        radii = 6
        reps = 50
        """,
    ),
    Preset(
        "t3xt3-purple",
        "Red/blue critical BRWs on T3 x T3 from sources at distance 10: purple count saturates",
        f"""
        kind = purple
        graph = product(t(3), t(3))
        kernel = {PRODUCT_SIMPLE}
        mu = critical
        source_i = w:,w:
        source_j = w:0000000000,w:
        budgets = 20, 30
        reps = 50
        """,
    ),
    Preset(
        "t3xz-biased-purple",
        "Red/blue critical BRWs on T3 x Z with drift p = 0.7: purple count keeps growing",
        f"""
        kind = purple
        graph = product(t(3), z)
        kernel = {T3Z_BIASED}
        mu = critical
        source_i = w:,z:0
        source_j = w:,z:10
        budgets = 30, 60
        reps = 50
        """,
    ),
    Preset(
        "t3xt3-biased-ends",
        "Critical BRW on T3 x T3 with a height-biased first factor (p = 0.7) against the unbiased walk",
        f"""
        kind = ends
        graph = product(t(3), t(3))
        kernel = {T3T3_HEIGHT_BIASED}
        paired_kernel = {PRODUCT_SIMPLE}
        mu = critical
        generations = 40
        radii = 6
        reps = 50
        """,
    ),
    Preset(
        "t3xt3-heightbiased-gw",
        "Galton-Watson process embedded along the spine copy of Z under the height-biased walk",
        f"""
        kind = embedded-gw
        graph = product(t(3), t(3))
        kernel = {T3T3_HEIGHT_BIASED}
        mu = critical
        z0 = spine
        generations = 400
        levels = 4
        reps = 10000
        """,
    ),
    Preset(
        "hammock-one-end",
        "Critical BRW on the hammock graph with rho resolved numerically: a single end",
        """
        kind = ends
        graph = hammock
        kernel = simple
        mu = critical
        generations = 14
        radii = 4
        reps = 50
        """,
    ),
    Preset(
        "glued-mixed-ends",
        "Critical BRW on T3 glued at its root to T3 x Z: ends of the glued trace",
        """
        kind = ends
        graph = glue(t(3)@w:, product(t(3), z)@[w:,z:0])
        kernel = simple
        mu = critical
        generations = 30
        radii = 6
        reps = 50
        """,
    ),
    Preset(
        "t3-exponent",
        "Return series and fit on T3: rho = 2 sqrt(2)/3 with polynomial exponent 3/2",
        """
        kind = spectral-fit
        graph = t(3)
        kernel = simple
        n = 4000
        """,
    ),
    Preset(
        "cs2-additivity",
        "Product fit on T3 x Z against weighted factor radii and summed exponents",
        f"""
        kind = spectral-fit
        graph = product(t(3), z)
        kernel = {PRODUCT_SIMPLE}
        n = 4000
        """,
    ),
    Preset(
        "criticality-sum-converges",
        "Criticality sum on T3 x T3 (exponent 3): converges",
        f"""
        kind = criticality-sum
        graph = product(t(3), t(3))
        kernel = {PRODUCT_SIMPLE}
        n = 4000
        """,
    ),
    Preset(
        "criticality-sum-diverges",
        "Criticality sum on T3 x Z (exponent 2): diverges logarithmically",
        f"""
        kind = criticality-sum
        graph = product(t(3), z)
        kernel = {PRODUCT_SIMPLE}
        n = 4000
        """,
    ),
    Preset(
        "two-walk-sum",
        "Two-walk sum on T3 x T3 at the critical mean from sources at distance 10",
        f"""
        kind = two-walk-sum
        graph = product(t(3), t(3))
        kernel = {PRODUCT_SIMPLE}
        mu = critical
        source_i = w:,w:
        source_j = w:0000000000,w:
        n = 200
        """,
    ),
    Preset(
        "many-to-one",
        "Monte Carlo particle counts at the origin of T3 x Z against m^n p_n",
        f"""
        kind = many-to-one
        graph = product(t(3), z)
        kernel = {PRODUCT_SIMPLE}
        mu = critical
        budgets = 1, 2, 3, 4, 5, 6, 7, 8
        reps = 100000
        """,
    ),
    Preset(
        "t3xz-fiber",
        "Critical BRW on T3 x Z: visits to the origin fiber stop",
        f"""
        kind = fiber
        graph = product(t(3), z)
        kernel = {PRODUCT_SIMPLE}
        mu = critical
        budgets = 50, 100
        reps = 50
        population_cap = 2000000
        """,
    ),
    Preset(
        "t3xz-recurrent-fiber",
        "Recurrent BRW (mean 1.2/rho) on T3 x Z: the origin fiber keeps being visited",
        f"""
        kind = fiber
        graph = product(t(3), z)
        kernel = {PRODUCT_SIMPLE}
        mu = critical(6/5)
        budgets = 20, 40
        reps = 20
        """,
    ),
    Preset(
        "t3xz-biased-gw",
        "Galton-Watson process embedded along the origin fiber under drift p = 0.7",
        f"""
        kind = embedded-gw
        graph = product(t(3), z)
        kernel = {T3Z_BIASED}
        mu = critical
        z0 = fiber
        generations = 400
        levels = 6
        reps = 10000
        """,
    ),
    Preset(
        "hammock-spectral",
        "Dirichlet spectral radii of the hammock walk on balls of radius 4 to 16",
        """
        kind = dirichlet
        graph = hammock
        kernel = simple
        radii = 4, 8, 12, 16
        """,
    ),
    Preset(
        "reversibility",
        "Exact degree-weighted detailed balance for the simple walk on T3 x Z",
        """
        kind = reversibility
        graph = product(t(3), z)
        kernel = simple
        mode = rational
        radii = 4
        n = 10
        """,
    ),
    Preset(
        "open-problem-heightbiased",
        "Open problem: ends under a height-biased walk with p = 1/4 (no expected outcome)",
        """
        kind = ends
        graph = product(t(3), t(3))
        kernel = product(1/2: heightbiased(1/4)@1, 1/2: simple@2)
        mu = critical
        generations = 40
        radii = 6
        reps = 50
        """,
    ),
    Preset(
        "open-one-ended-quasi-symmetric",
        "Open problem: ends of a lazy simple walk on the one-ended hammock (no expected outcome)",
        """
        kind = ends
        graph = hammock
        kernel = lazy(simple, 1/2)
        mu = critical
        generations = 20
        radii = 4
        reps = 50
        """,
    ),
]

_BY_NAME: Dict[str, Preset] = {p.name: p for p in _PRESETS}


def list_presets() -> List[Preset]:
    """All presets in listing order."""
    return list(_PRESETS)


def preset_values(name: str) -> Dict[str, str]:
    """
    Raw ``key -> expression`` values of a preset.

    Raises:
        ConfigurationError: unknown preset
    """
    preset = _BY_NAME.get(name)
    if preset is None:
        raise ConfigurationError(f"unknown preset {name!r}; run 'brwlab presets' for the list")
    values = parse_config_text(preset.text)
    values["preset"] = name
    return values


def load_preset(name: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """Preset config with ``overrides`` applied on top."""
    values: Dict[str, Any] = dict(preset_values(name))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.model_validate(values)
