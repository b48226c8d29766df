"""Agent characteristics, the type-transition graph and the serial scheduler.

Every agent runs the same five-stage cycle each global step::

    read -> update -> write -> alter -> move

``alter`` may hand the agent to a different characteristic; ``move`` is then
taken from the new one. Agents are served in ascending id order, so a run is
fully determined by (layout, agent count, seed).
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from .env import (
    NLAYERS,
    Environment,
    emit_statement,
    propagate_label,
    seal_label,
    set_boundary_mark,
    set_contact_captured,
    set_director_mark,
    set_verified,
    set_fet_output_done,
    write_fet_label,
    write_label,
    wires_sealed,
    is_complete,
)
from .layout import Layer, LayoutGrid
from .netlist import ContactStatement, FetStatement

DEFAULT_MAX_STEPS = 50_000

# fet label = agent id * FET_SERIAL + per-agent channel counter
FET_SERIAL = 1000
# finder patience, in whole-grid sweeps shared across the swarm
PATIENCE_SWEEPS = 10


class AgentType(enum.IntEnum):
    LAYER_FINDER = 0
    NODE_LABELLER = 1
    FET_LABELLER = 2
    FET_OUTPUT = 3
    CONTACT_FINDER = 4
    NODE_DIRECTOR = 5
    NODE_PROPAGATOR = 6


LF, NL, FL, FO, CF, ND, NP = AgentType

TRANSITIONS = frozenset(
    {
        (LF, NL), (LF, NP),
        (NL, LF), (NL, ND), (NL, FL),
        (FL, LF), (FL, NP),
        (FO, NP),
        (CF, NP),
        (ND, NP),
        (NP, CF), (NP, FO),
    }
)


class TransitionError(AssertionError):
    pass


# E, S, W, N with y growing downward
DX = (1, 0, -1, 0)
DY = (0, 1, 0, -1)


def _left(d):
    return (d + 3) % 4


@dataclass(eq=False)
class AgentState:
    id: int
    x: int
    y: int
    rng: random.Random
    type: AgentType = LF
    heading: int = 0
    layer: int = -1
    current_label: int = 0
    trace_start: tuple | None = None
    wait_counter: int = 0
    completed_labelling: bool = False
    prev_type: AgentType | None = None
    steps: int = 0
    hold: bool = False
    fet_serial: int = 0
    # per-cycle scratch, reset by the characteristic that uses it
    flag: str = ""
    memo: dict = field(default_factory=dict)

    @property
    def pos(self):
        return self.x, self.y

    def key(self) -> tuple:
        return (
            self.id, int(self.type), self.x, self.y, self.heading, self.layer,
            self.current_label, self.trace_start, self.wait_counter,
            self.completed_labelling, self.prev_type, self.steps,
        )


def agent_rng(seed: int, agent_id: int) -> random.Random:
    return random.Random(f"{seed}/agent/{agent_id}")


def init_population(grid: LayoutGrid, n: int, seed: int) -> list[AgentState]:
    """``n`` layer finders with ids 1..n at i.i.d. uniform random cells."""
    if n < 1:
        raise ValueError("need at least one agent")
    place = random.Random(f"{seed}/placement")
    agents = []
    for agent_id in range(1, n + 1):
        x = place.randrange(grid.width)
        y = place.randrange(grid.height)
        agents.append(AgentState(agent_id, x, y, agent_rng(seed, agent_id)))
    return agents


# --- boundary following -------------------------------------------------------


def in_wire(env: Environment, layer: int, x: int, y: int) -> bool:
    return 0 <= x < env.width and 0 <= y < env.height and env.wire[layer][y * env.width + x]


def start_heading(env: Environment, layer: int, x: int, y: int) -> int:
    """A heading that puts (x, y) on the wire's left-hand boundary cycle.

    Outside on the left and inside behind identifies the heading the follower
    arrives with; isolated cells fall back to any outside-left heading.
    """
    fallback = 0
    found_fallback = False
    for d in range(4):
        l = _left(d)
        if in_wire(env, layer, x + DX[l], y + DY[l]):
            continue
        b = (d + 2) % 4
        if in_wire(env, layer, x + DX[b], y + DY[b]):
            return d
        if not found_fallback:
            fallback, found_fallback = d, True
    return fallback


def follow_step(env: Environment, layer: int, x: int, y: int, d: int) -> tuple[int, int, int]:
    """One left-hand-rule move along the wire boundary (4-connected)."""
    for nd in (_left(d), d, (d + 1) % 4, (d + 2) % 4):
        nx, ny = x + DX[nd], y + DY[nd]
        if in_wire(env, layer, nx, ny):
            return nx, ny, nd
    return x, y, d


# --- characteristics ------------------------------------------------------------


class Characteristic:
    """Behaviour shared by every agent of one type; the five stages in cycle order."""

    type: AgentType

    def enter(self, sim, a: AgentState, **kw) -> None:
        """Initialise per-type state after a transition into this type."""

    def read(self, sim, a: AgentState) -> None:
        pass

    def update(self, sim, a: AgentState) -> None:
        pass

    def write(self, sim, a: AgentState) -> None:
        pass

    def alter(self, sim, a: AgentState):
        """Return ``None`` to keep the type, else ``(new_type, enter_kwargs)``."""
        return None

    def move(self, sim, a: AgentState) -> None:
        pass


class LayerFinder(Characteristic):
    """Raster-scans for wire boundaries nobody has finished with.

    ``wait_counter`` counts scan moves since the agent last had work; it can
    only be suppressed once that reaches ``sim.lf_patience``: this agent's
    share of ten sweeps of the grid, never more than a full pass.
    """

    type = LF

    def enter(self, sim, a, **kw):
        a.wait_counter = 0

    def read(self, sim, a):
        if a.wait_counter < sim.lf_patience:
            return
        env = sim.env
        saw_np = saw_director = False
        for j in sim.window[a.y * env.width + a.x]:
            if sim.np_count[j]:
                saw_np = True
            if not saw_director:
                for plane in env.director_mark:
                    if plane[j]:
                        saw_director = True
                        break
        a.memo["suppress"] = saw_np and saw_director

    def alter(self, sim, a):
        if a.memo.pop("suppress", False):
            return NP, {}
        env = sim.env
        i = a.y * env.width + a.x
        # coincident wires on several layers: pick one at random
        open_layers = [l for l in range(NLAYERS) if env.edge[l][i] and not env.is_owned(l, i)]
        if not open_layers:
            return None
        if len(open_layers) == 1:
            return NL, {"layer": open_layers[0]}
        return NL, {"layer": a.rng.choice(open_layers)}

    def move(self, sim, a):
        env = sim.env
        a.wait_counter += 1
        i = (a.y * env.width + a.x + 1) % env.ncells
        a.x, a.y = i % env.width, i // env.width


class NodeLabeller(Characteristic):
    type = NL

    def enter(self, sim, a, layer):
        a.layer = layer
        a.heading = start_heading(sim.env, layer, a.x, a.y)
        a.trace_start = (a.x, a.y, a.heading)
        a.current_label = a.id
        a.steps = 0
        a.hold = True
        a.flag = ""
        a.memo["written"] = []

    def write(self, sim, a):
        env = sim.env
        i = a.y * env.width + a.x
        existing = env.label[a.layer][i]
        if existing and (existing > a.id or existing != a.id and env.is_final(a.layer, i)):
            a.current_label = existing
            a.flag = "dominated"
            return
        write_label(env, (a.x, a.y), a.layer, a.id)
        set_boundary_mark(env, (a.x, a.y), a.layer)
        a.current_label = a.id
        a.memo["written"].append(i)

    def alter(self, sim, a):
        closed = a.steps and (a.x, a.y, a.heading) == a.trace_start
        if closed and a.flag != "dominated":
            # the loop only counts if our label survived everywhere on it
            plane = sim.env.label[a.layer]
            if any(plane[i] != a.id for i in a.memo["written"]):
                a.flag = "dominated"
        if a.flag == "dominated":
            a.flag = ""
            a.memo.pop("written", None)
            return LF, {}
        if closed:
            a.memo.pop("written", None)
            a.completed_labelling = True
            return (FL if a.layer == Layer.DIFF else ND), {}
        return None

    def move(self, sim, a):
        if a.hold:
            a.hold = False
            return
        a.x, a.y, a.heading = follow_step(sim.env, a.layer, a.x, a.y, a.heading)
        a.steps += 1


class NodeDirector(Characteristic):
    """Retraces a fully labelled wire, marking it; seals the label on closing the loop.

    A label that is not the agent's own means a higher id took the wire over
    after the loop closed; the retrace is abandoned without sealing.
    """

    type = ND

    def enter(self, sim, a):
        a.trace_start = (a.x, a.y, a.heading)
        a.steps = 0
        a.hold = True
        a.flag = ""
        a.memo["marked"] = []
        sim.env.directing.add(a.id)

    def write(self, sim, a):
        env = sim.env
        i = a.y * env.width + a.x
        if env.label[a.layer][i] != a.id:
            a.flag = "abort"
            return
        set_verified(env, (a.x, a.y), a.layer, a.id)
        if a.type == ND:
            set_director_mark(env, (a.x, a.y), a.layer)
        else:
            set_boundary_mark(env, (a.x, a.y), a.layer)
        a.memo["marked"].append(i)

    def alter(self, sim, a):
        env = sim.env
        closed = a.steps and (a.x, a.y, a.heading) == a.trace_start
        # a higher labeller may have overwritten cells behind us
        if closed and a.flag != "abort":
            plane = env.label[a.layer]
            if any(plane[i] != a.id for i in a.memo.get("marked", ())):
                a.flag = "abort"
        if a.flag == "abort":
            a.flag = ""
            a.memo.pop("marked", None)
            env.directing.discard(a.id)
            return NP, {}
        if closed:
            a.memo.pop("marked", None)
            seal_label(env, a.id)
            sim.env.directing.discard(a.id)
            return NP, {}
        return None

    move = NodeLabeller.move


class FetLabeller(NodeDirector):
    """Retraces a finished DIFF wire, tagging transistor channels in view and sealing the label."""

    type = FL

    def write(self, sim, a):
        super().write(sim, a)
        if a.flag == "abort":
            return
        env = sim.env
        w = env.width
        seen = [j for j in sim.window[a.y * w + a.x] if env.channel[j]]
        if not seen:
            return
        for group in _groups4(seen, w):
            own = [env.fet_label[j] for j in group if env.fet_label[j] // FET_SERIAL == a.id]
            if any(env.fet_label[j] // FET_SERIAL > a.id for j in group):
                continue
            if own:
                value = own[0]
            else:
                a.fet_serial += 1
                value = a.id * FET_SERIAL + a.fet_serial
            for j in group:
                write_fet_label(env, (j % w, j // w), value)


def _groups4(cells: list[int], w: int) -> list[list[int]]:
    """Split cells into 4-connected groups (each group is one channel)."""
    left = set(cells)
    groups = []
    while left:
        seed = min(left)
        stack, group = [seed], []
        left.discard(seed)
        while stack:
            c = stack.pop()
            group.append(c)
            x = c % w
            nbrs = [c - w, c + w]
            if x > 0:
                nbrs.append(c - 1)
            if x < w - 1:
                nbrs.append(c + 1)
            for n in nbrs:
                if n in left:
                    left.discard(n)
                    stack.append(n)
        groups.append(sorted(group))
    return groups


class NodePropagator(Characteristic):
    """Copies sealed labels into unlabelled wire cells; random walk when there is nothing to fill."""

    type = NP

    def read(self, sim, a):
        env = sim.env
        w = env.width
        found = []
        if env.sealed:
            for u in sim.window[a.y * w + a.x]:
                for l in range(NLAYERS):
                    if not env.wire[l][u] or env.label[l][u]:
                        continue
                    for v in sim.nb4[u]:
                        if abs(v % w - a.x) <= 1 and abs(v // w - a.y) <= 1 and env.is_final(l, v):
                            found.append((u, l, env.label[l][v]))
                            break
        a.memo["fill"] = found

    def write(self, sim, a):
        env = sim.env
        here = a.y * env.width + a.x
        for u, l, lab in a.memo["fill"]:
            if u == here and not env.label[l][u]:
                propagate_label(env, (a.x, a.y), l, lab)

    def alter(self, sim, a):
        env = sim.env
        i = a.y * env.width + a.x
        region = env.contact_id[i]
        # only settle on a contact once both of its labels are final, so
        # propagators are not parked on wires they still have to fill
        if region >= 0 and not env.contact_captured[i]:
            if env.is_final(Layer.METAL1, i) and env.is_final(env.contact_other[i], i):
                return CF, {}
        for j in (i, *sim.nb4[i]):
            if env.channel[j] and env.fet_label[j] and not env.fet_output_done[j]:
                return FO, {"target": j}
        return None

    def move(self, sim, a):
        env = sim.env
        w = env.width
        here = a.y * w + a.x
        targets = sorted({u for u, _, _ in a.memo.pop("fill", ()) if u != here})
        if targets:
            u = targets[a.rng.randrange(len(targets))] if len(targets) > 1 else targets[0]
        else:
            nbrs = sim.nb4[here]
            if not nbrs:
                return
            u = nbrs[a.rng.randrange(len(nbrs))]
        a.x, a.y = u % w, u // w


class ContactFinder(Characteristic):
    type = CF

    def enter(self, sim, a):
        env = sim.env
        a.memo = {"region": env.contact_id[a.y * env.width + a.x], "claimed": False}
        a.wait_counter = 0
        a.flag = ""

    def read(self, sim, a):
        env = sim.env
        i = a.y * env.width + a.x
        m = a.memo
        if not m["claimed"] and env.contact_captured[i]:
            a.flag = "lost"
            return
        other = env.contact_other[i]
        m["m1"] = env.label[Layer.METAL1][i]
        m["other"] = env.label[other][i]
        m["final"] = env.is_final(Layer.METAL1, i) and env.is_final(other, i)

    def update(self, sim, a):
        m = a.memo
        if a.flag:
            return
        m["stable"] = m["final"]
        if not m["stable"]:
            a.wait_counter += 1

    def write(self, sim, a):
        env = sim.env
        m = a.memo
        if a.flag:
            return
        if not m["claimed"]:
            for j in env.contact_cells[m["region"]]:
                set_contact_captured(env, (j % env.width, j // env.width))
            m["claimed"] = True
        if m["stable"]:
            other = m["m1"] if sim.corrupt else m["other"]
            emit_statement(env, ContactStatement(m["region"], m["m1"], other, 0), region=m["region"])
            a.flag = "done"

    def alter(self, sim, a):
        if a.flag in ("lost", "done"):
            a.flag = ""
            return NP, {}
        return None


class FetOutput(Characteristic):
    """Walks a tagged channel rectangle, waits for stable terminal labels, reports the transistor.

    The walk climbs to the channel's top-left corner, then sweeps it row by
    row collecting the labels seen across each edge. A sweep that finds any
    terminal label missing or unsealed counts as one wait and is repeated.
    """

    type = FO

    def enter(self, sim, a, target):
        here = a.y * sim.env.width + a.x
        a.memo = {"phase": "seek" if target == here else "enter", "target": target}
        a.wait_counter = 0
        a.flag = ""

    def update(self, sim, a):
        env = sim.env
        w = env.width
        m = a.memo
        if m["phase"] == "enter":
            return
        i = a.y * w + a.x
        if env.fet_output_done[i]:
            a.flag = "done"
            return
        if m["phase"] == "ready":
            report = self._evaluate(sim, m)
            if report is None:
                a.wait_counter += 1
                m["phase"] = "seek"
            else:
                m["report"] = report
                return
        if m["phase"] == "seek":
            if self._chan(env, a.x, a.y - 1) or self._chan(env, a.x - 1, a.y):
                return
            m.update(phase="scan", dir=1, cells=[], fet=0, psel=0, gate=set(), diff=[], unstable=0)
        if m["phase"] == "scan":
            self._collect(sim, a, m)

    @staticmethod
    def _chan(env, x, y):
        return 0 <= x < env.width and 0 <= y < env.height and env.channel[y * env.width + x]

    def _collect(self, sim, a, m):
        env = sim.env
        w = env.width
        i = a.y * w + a.x
        m["cells"].append((a.x, a.y))
        m["fet"] = max(m["fet"], env.fet_label[i])
        m["psel"] += env.psel[i]
        poly = env.label[Layer.POLY][i]
        if poly:
            m["gate"].add(poly)
            m["unstable"] += not env.is_final(Layer.POLY, i)
        for j in sim.nb4[i]:
            if env.wire[Layer.DIFF][j]:
                m["diff"].append((j % w, j // w, env.label[Layer.DIFF][j]))
                m["unstable"] += not env.is_final(Layer.DIFF, j)

    def _evaluate(self, sim, m):
        if m["unstable"]:
            return None
        cells = m["cells"]
        xs = [c[0] for c in cells]
        ys = [c[1] for c in cells]
        x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
        sides = {}
        for x, y, lab in m["diff"]:
            side = "left" if x < x0 else "right" if x > x1 else "top" if y < y0 else "bottom"
            sides.setdefault(side, set()).add(lab)
        if len(m["gate"]) != 1:
            return None
        if set(sides) == {"left", "right"}:
            length, width = x1 - x0 + 1, y1 - y0 + 1
        elif set(sides) == {"top", "bottom"}:
            length, width = y1 - y0 + 1, x1 - x0 + 1
        else:
            return None
        ends = []
        for labs in sides.values():
            if len(labs) != 1 or 0 in labs:
                return None
            ends.append(next(iter(labs)))
        polarity = "PFET" if m["psel"] == len(cells) else "NFET"
        return {
            "stmt": FetStatement(
                polarity, m["fet"], min(ends), max(ends), next(iter(m["gate"])), length, width, 0
            ),
            "cells": cells,
        }

    def write(self, sim, a):
        m = a.memo
        report = m.pop("report", None)
        if report is None or a.flag:
            return
        env = sim.env
        channel = env.channel_id[a.y * env.width + a.x]
        emit_statement(env, report["stmt"], region=channel)
        for c in report["cells"]:
            set_fet_output_done(env, c)
        a.flag = "done"

    def alter(self, sim, a):
        if a.flag == "done":
            a.flag = ""
            return NP, {}
        return None

    def move(self, sim, a):
        env = sim.env
        m = a.memo
        phase = m["phase"]
        if phase == "enter":
            t = m["target"]
            a.x, a.y = t % env.width, t // env.width
            m["phase"] = "seek"
        elif phase == "seek":
            if self._chan(env, a.x, a.y - 1):
                a.y -= 1
            elif self._chan(env, a.x - 1, a.y):
                a.x -= 1
        elif phase == "scan":
            if self._chan(env, a.x + m["dir"], a.y):
                a.x += m["dir"]
            elif self._chan(env, a.x, a.y + 1):
                a.y += 1
                m["dir"] = -m["dir"]
            else:
                m["phase"] = "ready"


CHARACTERISTICS = {
    c.type: c
    for c in (
        LayerFinder(),
        NodeLabeller(),
        FetLabeller(),
        FetOutput(),
        ContactFinder(),
        NodeDirector(),
        NodePropagator(),
    )
}


# --- scheduler ------------------------------------------------------------------


class Simulation:
    """One run: environment, agents and the per-step population trace."""

    def __init__(self, grid: LayoutGrid, n_agents: int, seed: int, *, corrupt: bool = False):
        self.env = Environment(grid)
        self.agents = init_population(grid, n_agents, seed)
        self.seed = seed
        self.corrupt = corrupt
        self.transitions: dict[tuple[AgentType, AgentType], int] = {}
        env = self.env
        w, h = env.width, env.height
        self.window = []
        self.nb4 = []
        for i in range(env.ncells):
            x, y = i % w, i // w
            self.window.append(
                [yy * w + xx for yy in (y - 1, y, y + 1) for xx in (x - 1, x, x + 1) if 0 <= xx < w and 0 <= yy < h]
            )
            self.nb4.append(
                [(y + dy) * w + x + dx for dx, dy in zip(DX, DY) if 0 <= x + dx < w and 0 <= y + dy < h]
            )
        self.np_count = [0] * env.ncells
        # each finder covers its share of ten sweeps before it may give up;
        # small swarms therefore always finish a full pass first
        self.lf_patience = min(env.ncells, (PATIENCE_SWEEPS * env.ncells) // max(n_agents, 1))
        self.has_work = any(any(p) for p in env.wire)
        self.trace = [self.population()]
        self.work_done_step = None
        self.completion_step = None
        self._check_complete()

    def population(self) -> tuple[int, ...]:
        counts = [0] * len(AgentType)
        for a in self.agents:
            counts[a.type] += 1
        return tuple(counts)

    def transition(self, a: AgentState, new: AgentType, **kw) -> None:
        old = a.type
        if (old, new) not in TRANSITIONS:
            raise TransitionError(f"agent {a.id}: illegal transition {old.name} -> {new.name}")
        if new == LF and a.completed_labelling:
            raise TransitionError(f"agent {a.id}: finished a wire, may not become LAYER_FINDER")
        a.prev_type = old
        a.type = new
        a.memo = {}
        a.flag = ""
        CHARACTERISTICS[new].enter(self, a, **kw)
        self.transitions[(old, new)] = self.transitions.get((old, new), 0) + 1

    def step(self) -> tuple[int, ...]:
        env = self.env
        w = env.width
        npc = self.np_count
        for a in self.agents:
            was_np = a.type == NP and a.completed_labelling
            before = a.y * w + a.x
            ch = CHARACTERISTICS[a.type]
            ch.read(self, a)
            ch.update(self, a)
            ch.write(self, a)
            change = ch.alter(self, a)
            if change is not None:
                self.transition(a, change[0], **change[1])
                ch = CHARACTERISTICS[a.type]
            ch.move(self, a)
            # only propagators descended from a finished labeller suppress
            if was_np:
                npc[before] -= 1
            if a.type == NP and a.completed_labelling:
                npc[a.y * w + a.x] += 1
        env.step += 1
        counts = self.population()
        self.trace.append(counts)
        self._check_complete()
        return counts

    def _check_complete(self) -> None:
        env = self.env
        if self.work_done_step is None:
            if (
                len(env.emitted_contacts) == len(env.contacts)
                and len(env.emitted_channels) == len(env.channels)
                and wires_sealed(env)
                and is_complete(env)
            ):
                self.work_done_step = env.step
        if self.work_done_step is not None and self.completion_step is None:
            settled = not self.has_work or self.trace[-1][NP] == len(self.agents)
            if settled:
                self.completion_step = env.step

    @property
    def done(self) -> bool:
        return self.completion_step is not None

    def run(self, max_steps: int = DEFAULT_MAX_STEPS) -> bool:
        """Step until the task is finished and the population has settled; False if capped."""
        while not self.done and self.env.step < max_steps:
            self.step()
        return self.done


def step_simulation(sim: Simulation) -> tuple[int, ...]:
    return sim.step()
