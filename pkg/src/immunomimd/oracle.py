"""Serial reference extractor and the canonical form both paths are compared in.

A node id is the smallest (row-major cell index, layer) pair among the node's
cells. The layer is part of the id because two unrelated nodes on different
layers can share their first cell (e.g. a METAL2 route crossing a POLY line).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .layout import (
    CONDUCTING,
    Layer,
    LayoutGrid,
    channel_components,
    conducting_components,
    contact_layers,
    contact_regions,
)
from .netlist import ContactStatement, FetStatement

NodeId = tuple[int, int]  # (row-major cell index, layer)


class IntegrityError(ValueError):
    """A run emitted a statement that does not fit its own label planes."""


class UnionFind:
    """Disjoint sets over hashable keys, union by size with path halving."""

    def __init__(self, keys=()):
        self.parent = {}
        self.size = {}
        self.unions = 0  # union() calls
        self.merges = 0  # calls that joined two different sets
        for k in keys:
            self.add(k)

    def add(self, k):
        if k not in self.parent:
            self.parent[k] = k
            self.size[k] = 1

    def find(self, k):
        parent = self.parent
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    def union(self, a, b) -> bool:
        self.unions += 1
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.merges += 1
        return True

    def groups(self) -> dict:
        out = {}
        for k in self.parent:
            out.setdefault(self.find(k), []).append(k)
        return out


@dataclass(frozen=True)
class CanonicalFet:
    polarity: str
    gate: NodeId
    channel_ends: frozenset  # {source, drain}, unordered
    length: int
    width: int

    def sort_key(self):
        ends = sorted(self.channel_ends)
        return (self.gate, ends, self.polarity, self.length, self.width)


@dataclass(frozen=True)
class CanonicalNetlist:
    fets: tuple  # of CanonicalFet, sorted
    node_partition: dict  # (layer, x, y) -> NodeId

    def nodes(self) -> dict:
        out = {}
        for key, node in self.node_partition.items():
            out.setdefault(node, []).append(key)
        return out


def _canonical_ids(classes, width: int) -> dict:
    """Map every member (layer, x, y) of each class to the class's canonical id."""
    out = {}
    for members in classes:
        node = min((y * width + x, layer) for layer, x, y in members)
        for m in members:
            out[m] = node
    return out


def _make_fet(polarity, gate, source, drain, length, width) -> CanonicalFet:
    return CanonicalFet(polarity, gate, frozenset((source, drain)), length, width)


def _netlist(fets, partition) -> CanonicalNetlist:
    return CanonicalNetlist(tuple(sorted(fets, key=CanonicalFet.sort_key)), partition)


def oracle_extract(grid: LayoutGrid, *, stats: dict | None = None) -> CanonicalNetlist:
    """Flood-fill components, join them through contacts, measure the transistors.

    ``stats``, if given, receives the union-find counters and the contact count.
    """
    comps = conducting_components(grid)
    channels = channel_components(grid)
    lookup = {(c.layer, cell): c.id for c in comps for cell in c.cells}
    uf = UnionFind(c.id for c in comps)
    regions = contact_regions(grid)
    for region in regions:
        x, y = min(region.cells, key=lambda c: (c[1], c[0]))
        m1, other = contact_layers(grid, x, y)
        uf.union(lookup[(m1, (x, y))], lookup[(other, (x, y))])
    classes = [
        [(int(comps[cid].layer), x, y) for cid in members for x, y in comps[cid].cells]
        for members in uf.groups().values()
    ]
    partition = _canonical_ids(classes, grid.width)

    def node_of(cid):
        c = comps[cid]
        x, y = next(iter(c.cells))
        return partition[(int(c.layer), x, y)]

    fets = [
        _make_fet(ch.polarity, node_of(ch.gate), node_of(ch.source), node_of(ch.drain), ch.length, ch.width)
        for ch in channels
    ]
    if stats is not None:
        stats.update(unions=uf.unions, merges=uf.merges, contact_regions=len(regions))
    return _netlist(fets, partition)


def canonicalize_run(env) -> CanonicalNetlist:
    """Read a finished run back into canonical form.

    Label values are agent ids, so each identifies one wire; contact
    statements join labels and FET statements name them.
    """
    w = env.width
    members = {}
    for li, layer in enumerate(CONDUCTING):
        plane, wire = env.label[li], env.wire[li]
        for i in range(env.ncells):
            if wire[i]:
                v = plane[i]
                if v == 0:
                    raise IntegrityError(f"unlabelled {layer.name} cell at {(i % w, i // w)}")
                members.setdefault(v, []).append((int(layer), i % w, i // w))
    uf = UnionFind(members)

    def known(v, stmt):
        if v not in members:
            raise IntegrityError(f"label {v} in {stmt!r} is absent from the label planes")
        return v

    fet_stmts = []
    for s in env.emitted:
        if isinstance(s, ContactStatement):
            uf.union(known(s.node_a, s), known(s.node_b, s))
        elif isinstance(s, FetStatement):
            for v in (s.source, s.drain, s.gate):
                known(v, s)
            fet_stmts.append(s)
    classes = [[m for label in labels for m in members[label]] for labels in uf.groups().values()]
    partition = _canonical_ids(classes, w)

    def node_of(label):
        return partition[members[label][0]]

    fets = [
        _make_fet(s.polarity, node_of(s.gate), node_of(s.source), node_of(s.drain), s.length, s.width)
        for s in fet_stmts
    ]
    return _netlist(fets, partition)


def netlists_equal(a: CanonicalNetlist, b: CanonicalNetlist) -> tuple[bool, list[str]]:
    """Compare partitions cell by cell and fets as multisets; return (equal, diff lines)."""
    diff = []
    pa, pb = a.node_partition, b.node_partition
    for key in sorted(pa.keys() | pb.keys()):
        na, nb = pa.get(key), pb.get(key)
        if na != nb:
            layer, x, y = key
            diff.append(f"cell ({x}, {y}) {Layer(layer).name}: node {_fmt_node(na)} != {_fmt_node(nb)}")
    fa, fb = Counter(a.fets), Counter(b.fets)
    for fet in sorted((fa - fb).elements(), key=CanonicalFet.sort_key):
        diff.append(f"fet only in first: {format_fet(fet)}")
    for fet in sorted((fb - fa).elements(), key=CanonicalFet.sort_key):
        diff.append(f"fet only in second: {format_fet(fet)}")
    return not diff, diff


def _fmt_node(node) -> str:
    if node is None:
        return "-"
    return f"{node[0]}.{Layer(node[1]).name}"


def format_fet(fet: CanonicalFet) -> str:
    ends = sorted(fet.channel_ends)
    s, d = ends[0], ends[-1]  # a shorted device has one end node
    return (
        f"{fet.polarity} G={_fmt_node(fet.gate)} SD={_fmt_node(s)},{_fmt_node(d)} "
        f"L={fet.length} W={fet.width}"
    )


def format_canonical(net: CanonicalNetlist) -> str:
    """Sorted text form: one fet per line, then one node per line with its cells."""
    lines = [format_fet(f) for f in net.fets]
    for node, cells in sorted(net.nodes().items()):
        body = " ".join(
            f"{x},{y}/{Layer(l).name}" for l, x, y in sorted(cells, key=lambda c: (c[2], c[1], c[0]))
        )
        lines.append(f"NODE {_fmt_node(node)}: {body}")
    return "\n".join(lines) + "\n" if lines else ""
