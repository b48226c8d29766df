"""FET and Contact output statements: data model, formatter, parser."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union


class StatementSyntaxError(ValueError):
    def __init__(self, line: str, pos: int, expected: str):
        self.line = line
        self.pos = pos
        super().__init__(f"column {pos + 1}: expected {expected} in {line!r}")


@dataclass(frozen=True)
class FetStatement:
    polarity: str
    id: int
    source: int
    drain: int
    gate: int
    length: int
    width: int
    time: int

    def __post_init__(self):
        if self.polarity not in ("NFET", "PFET"):
            raise ValueError(f"polarity must be NFET or PFET, not {self.polarity!r}")
        _check_counts(self.id, self.source, self.drain, self.gate, self.length, self.width, self.time)


@dataclass(frozen=True)
class ContactStatement:
    id: int
    node_a: int
    node_b: int
    time: int

    def __post_init__(self):
        _check_counts(self.id, self.node_a, self.node_b, self.time)


NetlistStatement = Union[FetStatement, ContactStatement]


def _check_counts(*values):
    for v in values:
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise ValueError(f"statement fields must be non-negative integers, got {v!r}")


def format_statement(s: NetlistStatement) -> str:
    if isinstance(s, FetStatement):
        return (
            f"{s.polarity} {s.id}: S - {s.source}, D - {s.drain}, G - {s.gate}, "
            f"L - {s.length}, W - {s.width}, Time = {s.time}"
        )
    return f"Contact {s.id}: Node {s.node_a} == Node {s.node_b}, Time = {s.time}"


_N = r"(0|[1-9][0-9]*)"
FET_RE = re.compile(
    rf"(NFET|PFET) {_N}: S - {_N}, D - {_N}, G - {_N}, L - {_N}, W - {_N}, Time = {_N}"
)
CONTACT_RE = re.compile(rf"Contact {_N}: Node {_N} == Node {_N}, Time = {_N}")

# literal pieces of each grammar, used only to locate where a bad line diverges
_FET_SHAPE = ["<FET>", " ", "#", ": S - ", "#", ", D - ", "#", ", G - ", "#", ", L - ", "#", ", W - ", "#", ", Time = ", "#"]
_CONTACT_SHAPE = ["Contact ", "#", ": Node ", "#", " == Node ", "#", ", Time = ", "#"]


def parse_statement(line: str) -> NetlistStatement:
    text = line.rstrip("\n")
    m = FET_RE.fullmatch(text)
    if m:
        pol, *nums = m.groups()
        i, s, d, g, length, width, t = map(int, nums)
        return FetStatement(pol, i, s, d, g, length, width, t)
    m = CONTACT_RE.fullmatch(text)
    if m:
        i, a, b, t = map(int, m.groups())
        return ContactStatement(i, a, b, t)
    shape = _CONTACT_SHAPE if text.startswith("C") else _FET_SHAPE
    pos, expected = _divergence(text, shape)
    raise StatementSyntaxError(text, pos, expected)


def _divergence(text: str, shape: list[str]) -> tuple[int, str]:
    pos = 0
    for piece in shape:
        if piece == "<FET>":
            if text.startswith(("NFET", "PFET")):
                pos += 4
                continue
            return pos, "NFET or PFET"
        if piece == "#":
            m = re.match(_N, text[pos:])
            if not m:
                return pos, "a non-negative integer"
            pos += m.end()
            continue
        if not text.startswith(piece, pos):
            return pos, repr(piece)
        pos += len(piece)
    return pos, "end of line"


def format_netlist(statements) -> str:
    return "".join(format_statement(s) + "\n" for s in statements)


def parse_netlist(text: str) -> list[NetlistStatement]:
    return [parse_statement(line) for line in text.splitlines() if line.strip()]
