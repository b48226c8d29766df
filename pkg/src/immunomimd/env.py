"""The shared-memory blackboard that agents read and write.

Static geometry (layer bits, wire masks, region ids) is copied out of the
LayoutGrid into flat row-major buffers; the mutable planes hold labels and
marks. Label value 0 stands for "no label".
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import replace

import numpy as np

from .layout import (
    CONDUCTING,
    Layer,
    LayoutGrid,
    channel_components,
    check_layout_rules,
    contact_layers,
    contact_regions,
)
from .netlist import ContactStatement, FetStatement

NLAYERS = len(CONDUCTING)

CellView = namedtuple(
    "CellView",
    "x y layer_bits label boundary_mark director_mark fet_label fet_output_done contact_captured",
)


class Environment:
    def __init__(self, grid: LayoutGrid):
        check_layout_rules(grid)
        self.grid = grid
        self.width = w = grid.width
        self.height = h = grid.height
        self.ncells = n = w * h

        self.layer_bits = bytes(grid.bits.ravel().tolist())
        self.wire = [bytearray(grid.wire_mask(l).ravel().tolist()) for l in CONDUCTING]
        self.edge = [bytearray(_edge_cells(grid.wire_mask(l)).ravel().tolist()) for l in CONDUCTING]
        self.channel = bytearray(grid.channel_mask.ravel().tolist())
        self.psel = bytearray(grid.planes[Layer.PSEL].ravel().tolist())

        self.channels = channel_components(grid)
        self.channel_id = [-1] * n
        for ch in self.channels:
            for x, y in ch.cells:
                self.channel_id[y * w + x] = ch.id
        self.contacts = contact_regions(grid)
        self.contact_id = [-1] * n
        self.contact_other = [-1] * n
        self.contact_cells = []
        for region in self.contacts:
            idx = []
            for x, y in region.cells:
                i = y * w + x
                self.contact_id[i] = region.id
                self.contact_other[i] = int(contact_layers(grid, x, y)[1])
                idx.append(i)
            self.contact_cells.append(sorted(idx))

        self.label = [[0] * n for _ in CONDUCTING]
        self.boundary_mark = [bytearray(n) for _ in CONDUCTING]
        self.director_mark = [bytearray(n) for _ in CONDUCTING]
        # id of the node director or fet labeller that checked this cell's label (0 = none)
        self.verified = [[0] * n for _ in CONDUCTING]
        self.propagated = [bytearray(n) for _ in CONDUCTING]
        self.fet_label = [0] * n
        self.fet_output_done = bytearray(n)
        self.contact_captured = bytearray(n)

        self.sealed: set[int] = set()
        # ids of directors currently retracing their wire
        self.directing: set[int] = set()
        self.emitted: list = []
        self.emitted_contacts: set[int] = set()
        self.emitted_channels: set[int] = set()
        self.step = 0

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def cell_view(self, x: int, y: int) -> CellView:
        i = y * self.width + x
        return CellView(
            x,
            y,
            self.layer_bits[i],
            tuple(self.label[l][i] or None for l in range(NLAYERS)),
            tuple(bool(self.boundary_mark[l][i]) for l in range(NLAYERS)),
            tuple(bool(self.director_mark[l][i]) for l in range(NLAYERS)),
            self.fet_label[i] or None,
            bool(self.fet_output_done[i]),
            bool(self.contact_captured[i]),
        )

    def is_final(self, layer: int, i: int) -> bool:
        """The label on flat cell ``i`` belongs to a sealed wire and can no longer change.

        True where the sealing agent verified the value the cell still holds,
        or where a propagator copied such a value in.
        """
        lab = self.label[layer][i]
        if not lab:
            return False
        return bool(self.propagated[layer][i]) or (self.verified[layer][i] == lab and lab in self.sealed)

    def is_owned(self, layer: int, i: int) -> bool:
        """This cell's label has been verified and its wire is being sealed or is sealed."""
        lab = self.label[layer][i]
        if self.propagated[layer][i]:
            return True
        return bool(lab) and self.verified[layer][i] == lab and (lab in self.sealed or lab in self.directing)

    def snapshot(self) -> tuple:
        """Everything mutable, in a form suitable for equality checks."""
        return (
            self.step,
            tuple(tuple(p) for p in self.label),
            tuple(bytes(p) for p in self.boundary_mark),
            tuple(bytes(p) for p in self.director_mark),
            tuple(tuple(p) for p in self.verified),
            tuple(bytes(p) for p in self.propagated),
            tuple(self.fet_label),
            bytes(self.fet_output_done),
            bytes(self.contact_captured),
            tuple(sorted(self.sealed)),
            tuple(sorted(self.directing)),
            tuple(self.emitted),
        )


def _edge_cells(mask: np.ndarray) -> np.ndarray:
    """Cells of ``mask`` with at least one 4-neighbour outside it (grid edge counts as outside)."""
    padded = np.pad(mask, 1, constant_values=False)
    inner = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return mask & ~inner


def read_receptive_field(env: Environment, center: tuple[int, int]) -> list[list[CellView | None]]:
    """3x3 window around ``center``; positions off the grid are None."""
    cx, cy = center
    if not env.in_bounds(cx, cy):
        raise IndexError(f"receptive field centre {center} outside the grid")
    return [
        [env.cell_view(x, y) if env.in_bounds(x, y) else None for x in (cx - 1, cx, cx + 1)]
        for y in (cy - 1, cy, cy + 1)
    ]


def write_label(env: Environment, cell: tuple[int, int], layer, value: int) -> int | None:
    """Dominance write: the cell keeps the larger of its label and ``value``."""
    x, y = cell
    layer = int(layer)
    i = y * env.width + x
    if not env.wire[layer][i]:
        raise ValueError(f"no {Layer(layer).name} wire at {cell}")
    if value <= 0:
        raise ValueError("labels are positive agent ids")
    plane = env.label[layer]
    prev = plane[i]
    if value > prev:
        plane[i] = value
    return prev or None


def write_fet_label(env: Environment, cell: tuple[int, int], value: int) -> int | None:
    x, y = cell
    i = y * env.width + x
    if not env.channel[i]:
        raise ValueError(f"no transistor channel at {cell}")
    prev = env.fet_label[i]
    if value > prev:
        env.fet_label[i] = value
    return prev or None


def seal_label(env: Environment, value: int) -> None:
    env.sealed.add(value)


def set_boundary_mark(env: Environment, cell, layer) -> None:
    env.boundary_mark[int(layer)][cell[1] * env.width + cell[0]] = 1


def set_verified(env: Environment, cell, layer, value: int) -> None:
    """Record that agent ``value`` found its own label on this cell while retracing."""
    i = cell[1] * env.width + cell[0]
    env.verified[int(layer)][i] = value


def set_director_mark(env: Environment, cell, layer) -> None:
    i = cell[1] * env.width + cell[0]
    layer = int(layer)
    env.boundary_mark[layer][i] = 1
    env.director_mark[layer][i] = 1


def propagate_label(env: Environment, cell, layer, value: int) -> None:
    """Fill an unlabelled interior cell with a final label from a neighbour."""
    i = cell[1] * env.width + cell[0]
    layer = int(layer)
    if env.label[layer][i]:
        raise ValueError(f"cell {cell} already labelled")
    write_label(env, cell, layer, value)
    env.propagated[layer][i] = 1


def set_fet_output_done(env: Environment, cell) -> None:
    env.fet_output_done[cell[1] * env.width + cell[0]] = 1


def set_contact_captured(env: Environment, cell) -> None:
    env.contact_captured[cell[1] * env.width + cell[0]] = 1


def emit_statement(env: Environment, stmt, region: int | None = None):
    """Append ``stmt`` stamped with the current step.

    ``region`` names the channel (FET) or contact region the statement
    reports on, so completion can be judged without parsing ids.
    """
    stmt = replace(stmt, time=env.step)
    env.emitted.append(stmt)
    if region is not None:
        if isinstance(stmt, FetStatement):
            env.emitted_channels.add(region)
        elif isinstance(stmt, ContactStatement):
            env.emitted_contacts.add(region)
    return stmt


def wires_sealed(env: Environment) -> bool:
    """Every wire cell holds a final label."""
    if not env.sealed:
        return all(not any(w) for w in env.wire)
    sealed = np.fromiter(env.sealed, dtype=np.int64)
    for l in range(NLAYERS):
        mask = np.frombuffer(bytes(env.wire[l]), dtype=np.uint8).astype(bool)
        if not mask.any():
            continue
        labels = np.asarray(env.label[l], dtype=np.int64)
        final = np.frombuffer(bytes(env.propagated[l]), dtype=np.uint8).astype(bool) | (
            (np.asarray(env.verified[l], dtype=np.int64) == labels) & np.isin(labels, sealed)
        )
        if not (final[mask] & (labels[mask] > 0)).all():
            return False
    return True


def is_complete(env: Environment) -> bool:
    """All wires carry sealed labels, every contact and channel has been reported."""
    for region, cells in zip(env.contacts, env.contact_cells):
        if region.id not in env.emitted_contacts or not all(env.contact_captured[i] for i in cells):
            return False
    for ch in env.channels:
        if ch.id not in env.emitted_channels:
            return False
        if not all(env.fet_output_done[y * env.width + x] for x, y in ch.cells):
            return False
    return wires_sealed(env)
