"""Rectangle layout files, six-plane rasterization and derived geometry.

Cells are addressed as ``(x, y)`` with ``y`` growing downward; flat row-major
indices (``y * width + x``) are used wherever speed matters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class Layer(enum.IntEnum):
    METAL1 = 0
    METAL2 = 1
    POLY = 2
    DIFF = 3
    PSEL = 4
    CONTACT = 5


CONDUCTING = (Layer.METAL1, Layer.METAL2, Layer.POLY, Layer.DIFF)

# 4-connectivity everywhere
_FOUR = ndimage.generate_binary_structure(2, 1)


class LayoutError(ValueError):
    """Malformed layout text (syntax, bounds, unknown layer)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LayoutRuleError(ValueError):
    """Geometry the extractor's simple device model cannot interpret."""

    def __init__(self, message: str, cell: tuple[int, int]):
        self.cell = cell
        super().__init__(f"{message} at cell {cell}")


@dataclass(frozen=True)
class Rect:
    layer: Layer
    x0: int
    y0: int
    x1: int
    y1: int

    def format(self) -> str:
        return f"RECT {self.layer.name} {self.x0} {self.y0} {self.x1} {self.y1}"


@dataclass(eq=False)
class LayoutGrid:
    width: int
    height: int
    planes: np.ndarray  # (6, height, width) bool
    rects: tuple[Rect, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def bits(self) -> np.ndarray:
        """Per-cell 6-bit layer mask, bit ``i`` set when ``Layer(i)`` is present."""
        weights = (1 << np.arange(6, dtype=np.uint8)).reshape(6, 1, 1)
        return (self.planes.astype(np.uint8) * weights).sum(axis=0).astype(np.uint8)

    @property
    def channel_mask(self) -> np.ndarray:
        return self.planes[Layer.DIFF] & self.planes[Layer.POLY]

    @property
    def effective_diff_mask(self) -> np.ndarray:
        return self.planes[Layer.DIFF] & ~self.planes[Layer.POLY]

    def wire_mask(self, layer: Layer) -> np.ndarray:
        """Cells that belong to wires of a conducting layer (DIFF is split by channels)."""
        if layer == Layer.DIFF:
            return self.effective_diff_mask
        return self.planes[layer]

    @property
    def ncells(self) -> int:
        return self.width * self.height

    def index(self, x: int, y: int) -> int:
        return y * self.width + x

    def cell(self, index: int) -> tuple[int, int]:
        return index % self.width, index // self.width

    def __eq__(self, other):
        if not isinstance(other, LayoutGrid):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and bool(
            np.array_equal(self.planes, other.planes)
        )

    __hash__ = None


def parse_layout(text: str) -> LayoutGrid:
    header = None
    rects = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if header is None:
            if tokens[0] != "LAYOUT" or len(tokens) != 3:
                raise LayoutError("expected 'LAYOUT <width> <height>'", lineno)
            width, height = (_int(t, lineno) for t in tokens[1:])
            if width <= 0 or height <= 0:
                raise LayoutError(f"zero or negative size {width}x{height}", lineno)
            header = (width, height)
            continue
        if tokens[0] != "RECT" or len(tokens) != 6:
            raise LayoutError(f"expected 'RECT <LAYER> <x0> <y0> <x1> <y1>', got {line!r}", lineno)
        try:
            layer = Layer[tokens[1]]
        except KeyError:
            raise LayoutError(f"unknown layer {tokens[1]!r}", lineno) from None
        x0, y0, x1, y1 = (_int(t, lineno) for t in tokens[2:])
        if x0 > x1 or y0 > y1:
            raise LayoutError("rectangle corners out of order", lineno)
        if x0 < 0 or y0 < 0 or x1 >= header[0] or y1 >= header[1]:
            raise LayoutError(f"rectangle {x0},{y0}-{x1},{y1} outside {header[0]}x{header[1]} grid", lineno)
        rects.append(Rect(layer, x0, y0, x1, y1))
    if header is None:
        raise LayoutError("missing LAYOUT header", 1)
    return rasterize(header[0], header[1], rects)


def _int(token: str, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise LayoutError(f"expected integer, got {token!r}", lineno) from None


def rasterize(width: int, height: int, rects) -> LayoutGrid:
    planes = np.zeros((6, height, width), dtype=bool)
    for r in rects:
        planes[r.layer, r.y0 : r.y1 + 1, r.x0 : r.x1 + 1] = True
    return LayoutGrid(width, height, planes, tuple(rects))


def format_layout(width: int, height: int, rects) -> str:
    lines = [f"LAYOUT {width} {height}"] + [r.format() for r in rects]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class WireComponent:
    layer: Layer
    cells: frozenset  # of (x, y)
    id: int


@dataclass(frozen=True)
class ContactRegion:
    cells: frozenset
    id: int


@dataclass(frozen=True)
class ChannelRegion:
    cells: frozenset
    id: int
    polarity: str  # "NFET" | "PFET"
    length: int
    width: int
    gate: int
    source: int
    drain: int
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1


def label_plane(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labels numbered 1.. in row-major order of each component's first cell."""
    # ndimage.label already numbers components in raster order of first pixel
    labels, n = ndimage.label(mask, structure=_FOUR)
    return labels, n


def _cells_of(labels: np.ndarray, n: int) -> list[frozenset]:
    out = [[] for _ in range(n)]
    ys, xs = np.nonzero(labels)
    for x, y, k in zip(xs.tolist(), ys.tolist(), labels[ys, xs].tolist()):
        out[k - 1].append((x, y))
    return [frozenset(c) for c in out]


def conducting_components(grid: LayoutGrid) -> list[WireComponent]:
    if "wires" in grid._cache:
        return grid._cache["wires"]
    found = []
    for layer in CONDUCTING:
        labels, n = label_plane(grid.wire_mask(layer))
        for cells in _cells_of(labels, n):
            found.append((layer, cells))
    found.sort(key=lambda lc: (min((y, x) for x, y in lc[1]), lc[0]))
    comps = [WireComponent(layer, cells, i) for i, (layer, cells) in enumerate(found)]
    grid._cache["wires"] = comps
    return comps


def contact_regions(grid: LayoutGrid) -> list[ContactRegion]:
    labels, n = label_plane(grid.planes[Layer.CONTACT])
    return [ContactRegion(cells, i) for i, cells in enumerate(_cells_of(labels, n))]


def _component_lookup(grid: LayoutGrid) -> dict:
    lookup = {}
    for comp in conducting_components(grid):
        for c in comp.cells:
            lookup[(comp.layer, c)] = comp.id
    return lookup


def channel_components(grid: LayoutGrid) -> list[ChannelRegion]:
    labels, n = label_plane(grid.channel_mask)
    lookup = _component_lookup(grid)
    eff = grid.effective_diff_mask
    psel = grid.planes[Layer.PSEL]
    out = []
    for i, cells in enumerate(_cells_of(labels, n)):
        first = min(cells, key=lambda c: (c[1], c[0]))
        xs = [c[0] for c in cells]
        ys = [c[1] for c in cells]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        if (x1 - x0 + 1) * (y1 - y0 + 1) != len(cells):
            raise LayoutRuleError("non-rectangular transistor channel", first)
        sides = {}
        for name, side_cells in _rect_sides(x0, y0, x1, y1).items():
            comps = {
                lookup[(Layer.DIFF, c)]
                for c in side_cells
                if 0 <= c[0] < grid.width and 0 <= c[1] < grid.height and eff[c[1], c[0]]
            }
            if comps:
                sides[name] = comps
        if set(sides) == {"left", "right"}:
            length, width = x1 - x0 + 1, y1 - y0 + 1
        elif set(sides) == {"top", "bottom"}:
            length, width = y1 - y0 + 1, x1 - x0 + 1
        else:
            raise LayoutRuleError("channel must touch diffusion on exactly two opposite sides", first)
        diff_ids = sorted(set().union(*sides.values()))
        if len(diff_ids) != 2 or any(len(s) != 1 for s in sides.values()):
            raise LayoutRuleError("channel must join exactly two diffusion wires", first)
        covered = sum(bool(psel[y, x]) for x, y in cells)
        if covered == len(cells):
            polarity = "PFET"
        elif covered == 0:
            polarity = "NFET"
        else:
            raise LayoutRuleError("channel partially covered by PSEL", first)
        out.append(
            ChannelRegion(
                cells=cells,
                id=i,
                polarity=polarity,
                length=length,
                width=width,
                gate=lookup[(Layer.POLY, first)],
                source=diff_ids[0],
                drain=diff_ids[1],
                bbox=(x0, y0, x1, y1),
            )
        )
    return out


def _rect_sides(x0, y0, x1, y1):
    return {
        "top": [(x, y0 - 1) for x in range(x0, x1 + 1)],
        "bottom": [(x, y1 + 1) for x in range(x0, x1 + 1)],
        "left": [(x0 - 1, y) for y in range(y0, y1 + 1)],
        "right": [(x1 + 1, y) for y in range(y0, y1 + 1)],
    }


def contact_layers(grid: LayoutGrid, x: int, y: int) -> tuple[Layer, Layer]:
    """The (METAL1, other) conducting pair a contact cell joins; raises on rule violations."""
    if not grid.planes[Layer.METAL1, y, x]:
        raise LayoutRuleError("contact without METAL1", (x, y))
    if grid.planes[Layer.POLY, y, x] and grid.planes[Layer.DIFF, y, x]:
        raise LayoutRuleError("contact over poly and diff together", (x, y))
    others = [l for l in (Layer.METAL2, Layer.POLY, Layer.DIFF) if grid.wire_mask(l)[y, x]]
    if len(others) != 1:
        what = "dangling contact" if not others else "contact joining more than two layers"
        raise LayoutRuleError(what, (x, y))
    return Layer.METAL1, others[0]


def check_layout_rules(grid: LayoutGrid) -> None:
    """Raise LayoutRuleError for anything the extractor does not model.

    Covers the channel rules, the contact rules, and wires enclosing holes
    (boundary following only ever sees a wire's outer contour).
    """
    if grid._cache.get("checked"):
        return
    channel_components(grid)
    for region in contact_regions(grid):
        pairs = {contact_layers(grid, x, y)[1] for x, y in region.cells}
        if len(pairs) != 1:
            first = min(region.cells, key=lambda c: (c[1], c[0]))
            raise LayoutRuleError("contact region joins different layers across its area", first)
    for comp in conducting_components(grid):
        mask = np.zeros((grid.height, grid.width), dtype=bool)
        for x, y in comp.cells:
            mask[y, x] = True
        holes = ndimage.binary_fill_holes(mask, structure=_FOUR) & ~mask
        if holes.any():
            first = min(comp.cells, key=lambda c: (c[1], c[0]))
            raise LayoutRuleError(f"{comp.layer.name} wire encloses a hole", first)
    grid._cache["checked"] = True
