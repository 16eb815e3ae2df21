"""
Parser for the experiment config grammar.

Expressions::

    graph  := t(d) | z | hammock | product(graph, graph, ...) | glue(graph@addr, ...)
    kernel := simple | lazy(kernel[, s]) | biasedline(p) | heightbiased(p)
            | product(w: kernel@i, ...)
    mu     := critical | critical(f) | fixed(k) | law(k: p, ...)

A glue address runs to the next top-level ``,`` or ``)``; product addresses,
which contain commas, go in brackets: ``glue(product(t(3), z)@[w:,z:0], t(3)@w:)``.
Numbers are decimals or ratios (``0.7``, ``7/10``) and are kept exact.

Config files are ``key = expression`` lines; ``#`` starts a comment.
"""
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from brwlab.converters.address_codec import decode_address
from brwlab.core.exceptions import AddressError, ConfigurationError
from brwlab.graphs.families import GraphFamily, Hammock, HomTree, Line, glue, product
from brwlab.kernels.specs import BiasedLine, HeightBiased, KernelSpec, Lazy, ProductKernel, Simple

_NAME = re.compile(r"[a-z_][a-z0-9_]*")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?(?:/\d+)?")


@dataclass(frozen=True)
class MuSpec:
    """Parsed offspring expression; ``critical`` is resolved once rho is known."""

    kind: str
    factor: Fraction = Fraction(1)
    k: int = 1
    law: Tuple[Tuple[int, Fraction], ...] = field(default_factory=tuple)

    def describe(self) -> str:
        if self.kind == "critical":
            return "critical" if self.factor == 1 else f"critical({self.factor})"
        if self.kind == "fixed":
            return f"fixed({self.k})"
        return "law(" + ", ".join(f"{k}: {p}" for k, p in self.law) + ")"


class _Cursor:
    def __init__(self, text: str, what: str):
        self.text = text
        self.pos = 0
        self.what = what

    def fail(self, message: str) -> ConfigurationError:
        return ConfigurationError(f"{self.what} {self.text!r}: {message} at position {self.pos}")

    def skip(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def accept(self, ch: str) -> bool:
        if self.peek() == ch:
            self.pos += 1
            return True
        return False

    def expect(self, ch: str) -> None:
        if not self.accept(ch):
            raise self.fail(f"expected {ch!r}")

    def name(self) -> str:
        self.skip()
        match = _NAME.match(self.text, self.pos)
        if not match:
            raise self.fail("expected a name")
        self.pos = match.end()
        return match.group()

    def number(self) -> Fraction:
        self.skip()
        match = _NUMBER.match(self.text, self.pos)
        if not match:
            raise self.fail("expected a number")
        self.pos = match.end()
        try:
            return Fraction(match.group())
        except (ValueError, ZeroDivisionError):
            raise self.fail(f"bad number {match.group()!r}")

    def integer(self) -> int:
        value = self.number()
        if value.denominator != 1:
            raise self.fail(f"expected an integer, got {value}")
        return int(value)

    def raw_address(self) -> str:
        self.skip()
        if self.accept("["):
            end = self.text.find("]", self.pos)
            if end < 0:
                raise self.fail("unterminated '['")
            body, self.pos = self.text[self.pos:end], end + 1
            return body.strip()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos] not in ",()":
            self.pos += 1
        return self.text[start:self.pos].strip()

    def end(self) -> None:
        if self.peek():
            raise self.fail("unexpected trailing text")


# ==================== Graphs ====================

def _graph(cur: _Cursor) -> GraphFamily:
    name = cur.name()
    if name == "t":
        cur.expect("(")
        d = cur.integer()
        cur.expect(")")
        return HomTree(d)
    if name == "z":
        return Line()
    if name == "hammock":
        return Hammock()
    if name == "product":
        cur.expect("(")
        factors = [_graph(cur)]
        while cur.accept(","):
            factors.append(_graph(cur))
        cur.expect(")")
        return product(*factors)
    if name == "glue":
        cur.expect("(")
        parts: List[GraphFamily] = []
        basepoints = []
        while True:
            part = _graph(cur)
            cur.expect("@")
            text = cur.raw_address()
            try:
                basepoints.append(decode_address(part, text))
            except AddressError as e:
                raise cur.fail(f"bad basepoint: {e.error_message}")
            parts.append(part)
            if not cur.accept(","):
                break
        cur.expect(")")
        return glue(parts, basepoints)
    raise cur.fail(f"unknown graph {name!r}")


def parse_graph(text: str) -> GraphFamily:
    """
    Parse a graph expression.

    Raises:
        ConfigurationError: malformed expression
    """
    cur = _Cursor(text, "graph")
    g = _graph(cur)
    cur.end()
    return g


# ==================== Kernels ====================

def _kernel(cur: _Cursor) -> KernelSpec:
    name = cur.name()
    if name == "simple":
        return Simple()
    if name == "lazy":
        cur.expect("(")
        base = _kernel(cur)
        stay = cur.number() if cur.accept(",") else Fraction(1, 2)
        cur.expect(")")
        return Lazy(base, stay)
    if name in ("biasedline", "heightbiased"):
        cur.expect("(")
        p = cur.number()
        cur.expect(")")
        return BiasedLine(p) if name == "biasedline" else HeightBiased(p)
    if name == "product":
        cur.expect("(")
        items: List[Tuple[int, KernelSpec, Fraction]] = []
        while True:
            weight = cur.number()
            cur.expect(":")
            spec = _kernel(cur)
            cur.expect("@")
            items.append((cur.integer(), spec, weight))
            if not cur.accept(","):
                break
        cur.expect(")")
        indices = sorted(i for i, _, _ in items)
        if indices != list(range(1, len(items) + 1)):
            raise cur.fail(f"factor indices must be 1..{len(items)}, got {indices}")
        return ProductKernel(tuple((spec, w) for _, spec, w in sorted(items, key=lambda t: t[0])))
    raise cur.fail(f"unknown kernel {name!r}")


def parse_kernel(text: str) -> KernelSpec:
    """
    Parse a kernel expression.

    Raises:
        ConfigurationError: malformed expression
    """
    cur = _Cursor(text, "kernel")
    spec = _kernel(cur)
    cur.end()
    return spec


# ==================== Offspring ====================

def parse_mu(text: str) -> MuSpec:
    """
    Parse an offspring expression.

    Raises:
        ConfigurationError: malformed expression or a law with mu(0) > 0
    """
    cur = _Cursor(text, "mu")
    name = cur.name()
    if name == "critical":
        factor = Fraction(1)
        if cur.accept("("):
            factor = cur.number()
            cur.expect(")")
        spec = MuSpec("critical", factor=factor)
    elif name == "fixed":
        cur.expect("(")
        k = cur.integer()
        cur.expect(")")
        if k < 1:
            raise cur.fail("fixed offspring count must be >= 1")
        spec = MuSpec("fixed", k=k)
    elif name == "law":
        cur.expect("(")
        pairs = []
        while True:
            k = cur.integer()
            cur.expect(":")
            pairs.append((k, cur.number()))
            if not cur.accept(","):
                break
        cur.expect(")")
        if any(k < 1 for k, _ in pairs):
            raise cur.fail("offspring law must put no mass on 0")
        if sum(p for _, p in pairs) != 1:
            raise cur.fail("offspring probabilities must sum to 1")
        spec = MuSpec("law", law=tuple(sorted(pairs)))
    else:
        raise cur.fail(f"unknown offspring law {name!r}")
    cur.end()
    return spec


# ==================== Config files ====================

def parse_config_text(text: str) -> Dict[str, str]:
    """
    Parse ``key = expression`` lines.

    Returns:
        Mapping key -> expression text; keys are lower-cased with '-' as '_'

    Raises:
        ConfigurationError: a line without '=' or a repeated key
    """
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = expression', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower().replace("-", "_")
        if not key:
            raise ConfigurationError(f"config line {lineno}: empty key")
        if key in values:
            raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def format_config_text(values: Dict[str, Optional[str]]) -> str:
    """Inverse of ``parse_config_text`` for non-empty values."""
    return "".join(f"{k} = {v}\n" for k, v in values.items() if v not in (None, ""))
