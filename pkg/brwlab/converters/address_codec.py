"""
Text form of vertex addresses.

- T_d words: ``w:012`` (``w:`` is the root); labels are dot-separated when any
  label has two digits, e.g. ``w:0.11.3``.
- Z: ``z:-3``.
- Hammock: ``h:s2`` for spine vertex 2, ``h:t013`` for a tree word, ``h:t`` for the root.
- Products: factor addresses joined by commas, e.g. ``w:01,z:-3``.
- Glued graphs: ``g<k>/<part address>``; every basepoint is spelled ``g0/<basepoint of part 0>``.
"""
from typing import List

from brwlab.core.exceptions import AddressError
from brwlab.graphs.families import (
    GluedAddr,
    GraphFamily,
    Glued,
    Hammock,
    HammockAddr,
    HomTree,
    Line,
    Product,
    VertexAddr,
)


class AddressCodec:
    """Encodes and decodes vertex addresses of one graph."""

    def __init__(self, graph: GraphFamily):
        self.graph = graph

    def encode(self, v: VertexAddr) -> str:
        self.graph.validate(v)
        return self._encode(self.graph, v)

    def decode(self, text: str) -> VertexAddr:
        v = self._decode(self.graph, text.strip())
        self.graph.validate(v)
        return v

    # ==================== Encoding ====================

    def _encode(self, g: GraphFamily, v: VertexAddr) -> str:
        if isinstance(g, HomTree):
            return "w:" + _word(v)
        if isinstance(g, Line):
            return f"z:{int(v)}"
        if isinstance(g, Hammock):
            kind, index = v
            return f"h:s{int(index)}" if kind == "s" else "h:t" + _word(index)
        if isinstance(g, Product):
            return ",".join(self._encode(f, c) for f, c in zip(g.factors, v))
        if isinstance(g, Glued):
            part, local = v
            return f"g{part}/" + self._encode(g.parts[part], local)
        raise AddressError(f"no address codec for {g.tag}", v)

    # ==================== Decoding ====================

    def _decode(self, g: GraphFamily, text: str) -> VertexAddr:
        if isinstance(g, HomTree):
            return _parse_word(_strip_prefix(text, "w:"), text)
        if isinstance(g, Line):
            body = _strip_prefix(text, "z:")
            try:
                return int(body)
            except ValueError:
                raise AddressError(f"bad Z address: {text!r}", text)
        if isinstance(g, Hammock):
            body = _strip_prefix(text, "h:")
            if body.startswith("s"):
                try:
                    return HammockAddr("s", int(body[1:]))
                except ValueError:
                    raise AddressError(f"bad hammock spine address: {text!r}", text)
            if body.startswith("t"):
                return HammockAddr("t", _parse_word(body[1:], text))
            raise AddressError(f"hammock address must start with h:s or h:t, got {text!r}", text)
        if isinstance(g, Product):
            pieces = text.split(",")
            if len(pieces) != g.arity:
                raise AddressError(
                    f"product address needs {g.arity} comma-separated parts, got {text!r}", text
                )
            return tuple(self._decode(f, p.strip()) for f, p in zip(g.factors, pieces))
        if isinstance(g, Glued):
            if not text.startswith("g") or "/" not in text:
                raise AddressError(f"glued address must look like g<k>/<address>, got {text!r}", text)
            head, body = text[1:].split("/", 1)
            try:
                part = int(head)
            except ValueError:
                raise AddressError(f"bad glued part index in {text!r}", text)
            if not 0 <= part < len(g.parts):
                raise AddressError(f"glued part index {part} out of range", text)
            return GluedAddr(part, self._decode(g.parts[part], body))
        raise AddressError(f"no address codec for {g.tag}", text)


def _word(word) -> str:
    if any(c >= 10 for c in word):
        return ".".join(str(c) for c in word)
    return "".join(str(c) for c in word)


def _strip_prefix(text: str, prefix: str) -> str:
    if not text.startswith(prefix):
        raise AddressError(f"address {text!r} must start with {prefix!r}", text)
    return text[len(prefix):]


def _parse_word(body: str, text: str) -> tuple:
    if not body:
        return ()
    pieces: List[str] = body.split(".") if "." in body else list(body)
    if not all(p.isdigit() for p in pieces):
        raise AddressError(f"tree word must be digits, got {text!r}", text)
    return tuple(int(p) for p in pieces)


def encode_address(g: GraphFamily, v: VertexAddr) -> str:
    return AddressCodec(g).encode(v)


def decode_address(g: GraphFamily, text: str) -> VertexAddr:
    """
    Parse an address string for ``g``.

    Raises:
        AddressError: malformed text or an address outside ``g``
    """
    return AddressCodec(g).decode(text)
