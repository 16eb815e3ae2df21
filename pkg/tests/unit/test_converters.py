"""
Unit tests for converters.

Tests address text, the expression grammar, config files and CSV/JSON writers.
"""
import json
import math
from fractions import Fraction

import pytest

from brwlab.converters.address_codec import AddressCodec, decode_address, encode_address
from brwlab.converters.records import edge_rows, series_rows, visit_rows, write_csv, write_json
from brwlab.converters.spec_parser import (
    MuSpec,
    format_config_text,
    parse_config_text,
    parse_graph,
    parse_kernel,
    parse_mu,
)
from brwlab.core.exceptions import AddressError, ConfigurationError
from brwlab.graphs.families import (
    Glued,
    GluedAddr,
    Hammock,
    HammockAddr,
    HomTree,
    Line,
    glue,
    product,
)
from brwlab.kernels import ArithmeticMode, BiasedLine, Lazy, ProductKernel, Simple, build_kernel
from brwlab.services.brw_engine import GenerationState, TraceRecord
from brwlab.services.spectral_lab import return_series


class TestAddressCodec:
    """Test address encoding and decoding."""

    @pytest.mark.parametrize(
        "graph, vertex, text",
        [
            (HomTree(3), (), "w:"),
            (HomTree(3), (0, 1, 1), "w:011"),
            (HomTree(12), (11, 3), "w:11.3"),
            (Line(), -3, "z:-3"),
            (Hammock(), HammockAddr("s", 2), "h:s2"),
            (Hammock(), HammockAddr("t", (0, 1, 3)), "h:t013"),
            (Hammock(), HammockAddr("t", ()), "h:t"),
            (product(HomTree(3), Line()), ((0, 1), -3), "w:01,z:-3"),
        ],
    )
    def test_encode_decode(self, graph, vertex, text):
        assert encode_address(graph, vertex) == text
        assert decode_address(graph, text) == vertex

    def test_glued(self):
        g = glue([Line(), Line()], [0, 0])
        codec = AddressCodec(g)
        assert codec.encode(GluedAddr(1, 4)) == "g1/z:4"
        assert codec.encode(g.origin) == "g0/z:0"
        assert codec.decode("g1/z:-2") == GluedAddr(1, -2)

    def test_glued_basepoint_has_one_spelling(self):
        g = glue([Line(), Line()], [0, 0])
        with pytest.raises(AddressError):
            decode_address(g, "g1/z:0")

    def test_whitespace_is_stripped(self):
        assert decode_address(product(HomTree(3), Line()), " w:2 , z:5 ") == ((2,), 5)

    @pytest.mark.parametrize(
        "graph, text",
        [
            (HomTree(3), "w:0a"),
            (HomTree(3), "w:3"),
            (HomTree(3), "w:03"),
            (HomTree(3), "012"),
            (Line(), "z:x"),
            (Line(), "w:1"),
            (Hammock(), "h:x3"),
            (Hammock(), "h:s-1"),
            (Hammock(), "h:t4"),
            (product(HomTree(3), Line()), "w:0"),
            (glue([Line(), Line()], [0, 0]), "z:1"),
            (glue([Line(), Line()], [0, 0]), "g5/z:1"),
            (glue([Line(), Line()], [0, 0]), "gx/z:1"),
        ],
    )
    def test_malformed(self, graph, text):
        with pytest.raises(AddressError):
            decode_address(graph, text)

    def test_encode_validates(self, tree):
        with pytest.raises(AddressError):
            encode_address(tree, (5,))


class TestParseGraph:
    """Test graph expressions."""

    def test_families(self):
        assert parse_graph("t(3)") == HomTree(3)
        assert parse_graph(" z ") == Line()
        assert parse_graph("hammock") == Hammock()
        assert parse_graph("product(t(3), z)") == product(HomTree(3), Line())

    def test_nested_products_flatten(self):
        g = parse_graph("product(product(t(3), z), z)")
        assert g == product(HomTree(3), Line(), Line())

    def test_glue(self):
        g = parse_graph("glue(z@z:5, t(3)@w:)")
        assert isinstance(g, Glued)
        assert g.parts == (Line(), HomTree(3))
        assert g.basepoints == (5, ())

    def test_glue_product_basepoint_in_brackets(self):
        g = parse_graph("glue(product(t(3), z)@[w:,z:0], t(3)@w:)")
        assert g.basepoints == (((), 0), ())

    @pytest.mark.parametrize(
        "text",
        ["t(2)", "q", "product(t(3), z", "z extra", "glue(z@w:)", "t(x)", "t(3/2)", ""],
    )
    def test_malformed(self, text):
        with pytest.raises(ConfigurationError):
            parse_graph(text)


class TestParseKernel:
    """Test kernel expressions."""

    def test_simple_and_lazy(self):
        assert parse_kernel("simple") == Simple()
        assert parse_kernel("lazy(simple)") == Lazy(Simple(), Fraction(1, 2))
        assert parse_kernel("lazy(simple, 1/4)") == Lazy(Simple(), Fraction(1, 4))

    def test_decimals_are_exact(self):
        assert parse_kernel("biasedline(0.7)") == BiasedLine(Fraction(7, 10))

    def test_product_factors_sorted_by_index(self):
        spec = parse_kernel("product(1/2: biasedline(7/10)@2, 1/2: simple@1)")
        assert spec == ProductKernel(
            ((Simple(), Fraction(1, 2)), (BiasedLine(Fraction(7, 10)), Fraction(1, 2)))
        )

    @pytest.mark.parametrize(
        "text",
        [
            "product(1/2: simple@1, 1/2: biasedline(7/10)@2)",
            "lazy(heightbiased(7/10), 1/3)",
            "product(3/5: lazy(simple, 1/2)@1, 2/5: simple@2)",
        ],
    )
    def test_describe_parses_back(self, text):
        spec = parse_kernel(text)
        assert parse_kernel(spec.describe()) == spec

    def test_parsed_kernel_builds(self, t3xz):
        kernel = build_kernel(
            parse_kernel("product(1/2: simple@1, 1/2: simple@2)"), t3xz, ArithmeticMode.RATIONAL
        )
        assert kernel.step_distribution(((), 0)).total() == 1

    @pytest.mark.parametrize(
        "text",
        ["walk", "product(1: simple@2)", "product(1/2: simple@1, 1/2: simple@1)", "lazy(simple", "biasedline()"],
    )
    def test_malformed(self, text):
        with pytest.raises(ConfigurationError):
            parse_kernel(text)


class TestParseMu:
    """Test offspring expressions."""

    def test_critical(self):
        assert parse_mu("critical") == MuSpec("critical")
        assert parse_mu("critical(6/5)").factor == Fraction(6, 5)

    def test_fixed(self):
        assert parse_mu("fixed(2)") == MuSpec("fixed", k=2)

    def test_law(self):
        spec = parse_mu("law(2: 1/2, 1: 1/2)")
        assert spec.law == ((1, Fraction(1, 2)), (2, Fraction(1, 2)))
        assert spec.describe() == "law(1: 1/2, 2: 1/2)"

    @pytest.mark.parametrize("text", ["critical", "critical(6/5)", "fixed(3)", "law(1: 1/4, 3: 3/4)"])
    def test_describe_parses_back(self, text):
        assert parse_mu(parse_mu(text).describe()) == parse_mu(text)

    @pytest.mark.parametrize(
        "text",
        ["law(0: 1/2, 2: 1/2)", "law(1: 1/2, 2: 1/3)", "fixed(0)", "binomial(2)", "critical(6/5) x"],
    )
    def test_rejected(self, text):
        with pytest.raises(ConfigurationError):
            parse_mu(text)


class TestConfigText:
    """Test key = expression files."""

    def test_parse(self):
        values = parse_config_text(
            "# header\n"
            "kind = ends\n"
            "\n"
            "Source-I = w:0   # comment\n"
            "kernel = product(1/2: simple@1, 1/2: simple@2)\n"
        )
        assert values == {
            "kind": "ends",
            "source_i": "w:0",
            "kernel": "product(1/2: simple@1, 1/2: simple@2)",
        }

    def test_duplicate_key(self):
        with pytest.raises(ConfigurationError):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigurationError):
            parse_config_text("seed 1\n")

    def test_format_skips_empty(self):
        text = format_config_text({"kind": "ends", "target": None, "fiber": "", "seed": "3"})
        assert text == "kind = ends\nseed = 3\n"
        assert parse_config_text(text) == {"kind": "ends", "seed": "3"}


class TestRecords:
    """Test CSV and JSON writers."""

    def test_csv_cells(self, tmp_path):
        path = write_csv(tmp_path / "sub" / "out.csv", ["a", "b", "c", "d"], [[1, 0.1, True, None]])
        assert path.read_text(encoding="utf-8") == "a,b,c,d\n1,0.10000000000000001,true,\n"

    def test_csv_float_round_trip(self, tmp_path):
        value = 1 / 3
        path = write_csv(tmp_path / "x.csv", ["x"], [[value], [-math.inf]])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert float(lines[1]) == value
        assert lines[2] == "-inf"

    def test_json_non_finite(self, tmp_path):
        path = write_json(tmp_path / "m.json", {"b": math.inf, "a": [1, 2.5], 3: "x"})
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data == {"a": [1, 2.5], "b": "inf", "3": "x"}

    def test_series_rows(self, tree):
        series = return_series(build_kernel(Simple(), tree, ArithmeticMode.RATIONAL), 4)
        rows = series_rows(series)
        assert [r[0] for r in rows] == [0, 1, 2, 3, 4]
        assert rows[1][1] == 0.0
        assert rows[1][2] == -math.inf
        assert rows[2][1] == pytest.approx(1 / 3)

    def test_trace_rows_sorted(self):
        trace = TraceRecord(
            graph=Line(),
            origin=0,
            first_visit={0: 0, 1: 1, -1: 1, 2: 2},
            edges={frozenset((0, 1)), frozenset((0, -1)), frozenset((1, 2))},
            populations=[1, 2, 2],
            final_state=GenerationState(2, {2: 1, 0: 1}),
            generations_completed=2,
        )
        codec = AddressCodec(Line())
        assert edge_rows(trace, codec) == [["z:-1", "z:0"], ["z:0", "z:1"], ["z:1", "z:2"]]
        assert visit_rows(trace.first_visit, codec) == [["z:-1", 1], ["z:0", 0], ["z:1", 1], ["z:2", 2]]
