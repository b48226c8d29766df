import pytest
from scipy.stats import chisquare

from immunomimd import agents as agents_mod
from immunomimd.agents import (
    CF,
    CHARACTERISTICS,
    FET_SERIAL,
    FL,
    FO,
    LF,
    ND,
    NL,
    NP,
    TRANSITIONS,
    AgentState,
    AgentType,
    Simulation,
    TransitionError,
    agent_rng,
    follow_step,
    init_population,
    start_heading,
)
from immunomimd.env import propagate_label, seal_label, set_director_mark, set_verified, write_fet_label, write_label
from immunomimd.layout import Layer, conducting_components, parse_layout
from immunomimd.netlist import ContactStatement, FetStatement

from conftest import CROSS, load_fixture

BAR = "LAYOUT 6 4\nRECT METAL1 1 1 4 2\n"  # a 4x2 metal1 wire


def lone(text, agent_id, x, y):
    """A simulation holding a single hand-placed layer finder."""
    sim = Simulation(parse_layout(text), 1, 1)
    a = AgentState(agent_id, x, y, agent_rng(1, agent_id))
    sim.agents = [a]
    return sim, a


def force(sim, a, new, **kw):
    """Put an agent straight into a type, bypassing the transition graph (test set-up only)."""
    a.type = new
    a.memo = {}
    CHARACTERISTICS[new].enter(sim, a, **kw)


def run_until(sim, pred, limit=500):
    for _ in range(limit):
        if pred():
            return True
        sim.step()
    return pred()


def finalize_all(env):
    """Give every wire cell a final label: one value per component."""
    for comp in conducting_components(env.grid):
        for x, y in comp.cells:
            propagate_label(env, (x, y), comp.layer, 100 + comp.id)


# --- population ---------------------------------------------------------------


def test_init_population():
    grid = load_fixture("nand4")
    pop = init_population(grid, 175, 1)
    assert [a.id for a in pop] == list(range(1, 176))
    assert all(a.type == LF for a in pop)
    again = init_population(grid, 175, 1)
    assert [a.pos for a in pop] == [a.pos for a in again]
    assert [a.pos for a in init_population(grid, 175, 2)] != [a.pos for a in pop]
    with pytest.raises(ValueError):
        init_population(grid, 0, 1)


def test_init_population_uniform():
    grid = parse_layout("LAYOUT 16 16")
    counts = [0] * 16
    for a in init_population(grid, 10_000, 5):
        counts[(a.y // 4) * 4 + a.x // 4] += 1
    assert chisquare(counts).pvalue > 0.01


def test_zero_agents_only_advance_time():
    sim, _ = lone(CROSS, 1, 0, 0)
    sim.agents = []
    before = sim.env.snapshot()
    sim.step()
    assert sim.env.step == 1
    assert sim.env.snapshot()[1:] == before[1:]


def test_seven_types_and_graph():
    assert len(AgentType) == 7
    assert TRANSITIONS == {
        (LF, NL), (LF, NP),
        (NL, LF), (NL, ND), (NL, FL),
        (FL, LF), (FL, NP),
        (FO, NP), (CF, NP), (ND, NP),
        (NP, CF), (NP, FO),
    }  # fmt: skip


def test_transition_guards():
    sim, a = lone(BAR, 3, 1, 1)
    with pytest.raises(TransitionError):
        sim.transition(a, ND)
    sim.transition(a, NL, layer=int(Layer.METAL1))
    a.completed_labelling = True
    with pytest.raises(TransitionError):
        sim.transition(a, LF)


# --- boundary following -------------------------------------------------------


def test_follow_visits_whole_bar_boundary():
    sim, _ = lone(BAR, 1, 1, 1)
    env, l = sim.env, int(Layer.METAL1)
    x, y = 1, 1
    d = start_heading(env, l, x, y)
    start, seen = (x, y, d), {(x, y)}
    for _ in range(50):
        x, y, d = follow_step(env, l, x, y, d)
        seen.add((x, y))
        if (x, y, d) == start:
            break
    assert (x, y, d) == start
    assert seen == {(x, y) for x in range(1, 5) for y in (1, 2)}


def test_single_cell_wire():
    sim, a = lone("LAYOUT 3 3\nRECT POLY 1 1 1 1\n", 4, 1, 1)
    assert run_until(sim, lambda: a.type == NP)
    assert sim.env.label[Layer.POLY][4] == 4 and 4 in sim.env.sealed


# --- layer finder -------------------------------------------------------------


def test_layer_finder_finds_boundary():
    sim, a = lone(BAR, 5, 0, 1)
    sim.step()
    assert a.type == LF and a.pos == (1, 1)
    sim.step()
    assert a.type == NL and a.layer == Layer.METAL1


def test_layer_finder_on_empty_layout_forever():
    sim, a = lone("LAYOUT 3 2", 1, 2, 1)
    for _ in range(20):
        sim.step()
    assert a.type == LF and a.pos == (1, 0)  # 20 raster moves from the last cell wrap round


def _suppression_setup(patience):
    sim, a = lone(BAR, 9, 0, 0)
    sim.lf_patience = patience
    helper = AgentState(2, 5, 3, agent_rng(1, 2), type=NP, completed_labelling=True)
    sim.agents = [helper, a]
    sim.np_count[0] = 1  # the helper counts as standing next to the finder
    set_director_mark(sim.env, (1, 1), Layer.METAL1)
    return sim, a


def test_layer_finder_suppressed_by_propagator_and_director_mark():
    sim, a = _suppression_setup(0)
    CHARACTERISTICS[LF].read(sim, a)
    assert CHARACTERISTICS[LF].alter(sim, a) == (NP, {})


def test_suppression_waits_for_patience():
    sim, a = _suppression_setup(5)
    CHARACTERISTICS[LF].read(sim, a)
    assert CHARACTERISTICS[LF].alter(sim, a) is None
    a.wait_counter = 5
    CHARACTERISTICS[LF].read(sim, a)
    assert CHARACTERISTICS[LF].alter(sim, a) == (NP, {})


# --- node labeller and director -----------------------------------------------


def test_lone_labeller_then_director():
    sim, a = lone(BAR, 7, 1, 1)
    force(sim, a, NL, layer=int(Layer.METAL1))
    assert run_until(sim, lambda: a.type != NL)
    env = sim.env
    cells = [y * 6 + x for x in range(1, 5) for y in (1, 2)]
    assert a.type == ND and a.completed_labelling
    assert all(env.label[Layer.METAL1][i] == 7 for i in cells)
    assert run_until(sim, lambda: a.type != ND)
    assert a.type == NP and env.sealed == {7}
    assert all(env.director_mark[Layer.METAL1][i] for i in cells)


def test_labeller_meets_higher_label():
    sim, a = lone(BAR, 7, 1, 1)
    write_label(sim.env, (4, 1), Layer.METAL1, 12)
    force(sim, a, NL, layer=int(Layer.METAL1))
    assert run_until(sim, lambda: a.type != NL)
    assert a.type == LF and not a.completed_labelling
    assert sim.env.label[Layer.METAL1][1 * 6 + 4] == 12


def test_labeller_overwrites_lower_label():
    sim, a = lone(BAR, 12, 1, 1)
    write_label(sim.env, (4, 1), Layer.METAL1, 7)
    force(sim, a, NL, layer=int(Layer.METAL1))
    assert run_until(sim, lambda: a.type != NL)
    assert a.type == ND
    assert sim.env.label[Layer.METAL1][1 * 6 + 4] == 12


def test_labeller_yields_to_sealed_lower_label():
    sim, a = lone(BAR, 12, 1, 1)
    write_label(sim.env, (4, 1), Layer.METAL1, 7)
    set_verified(sim.env, (4, 1), Layer.METAL1, 7)
    seal_label(sim.env, 7)
    force(sim, a, NL, layer=int(Layer.METAL1))
    assert run_until(sim, lambda: a.type != NL)
    assert a.type == LF
    assert sim.env.label[Layer.METAL1][1 * 6 + 4] == 7


def test_director_aborts_when_overwritten():
    sim, a = lone(BAR, 7, 1, 1)
    force(sim, a, NL, layer=int(Layer.METAL1))
    assert run_until(sim, lambda: a.type == ND)
    write_label(sim.env, (3, 2), Layer.METAL1, 30)
    assert run_until(sim, lambda: a.type != ND)
    assert a.type == NP and 7 not in sim.env.sealed and not sim.env.directing


# --- fet labeller and output --------------------------------------------------


def test_fet_labeller_on_cross():
    sim, a = lone(CROSS, 5, 0, 3)
    force(sim, a, NL, layer=int(Layer.DIFF))
    assert run_until(sim, lambda: a.type != NL)
    assert a.type == FL
    assert run_until(sim, lambda: a.type != FL)
    env = sim.env
    assert a.type == NP and 5 in env.sealed
    seen = {env.fet_label[y * 8 + x] for x, y in ((3, 3), (3, 4))}
    assert seen == {5 * FET_SERIAL + 1}


def test_fet_labeller_without_channel():
    sim, a = lone(BAR.replace("METAL1", "DIFF"), 5, 1, 1)
    force(sim, a, NL, layer=int(Layer.DIFF))
    assert run_until(sim, lambda: a.type == NP)
    assert not any(sim.env.fet_label)


def _fo_at_cross(final):
    sim, a = lone(CROSS, 1, 3, 3)
    env = sim.env
    for x, y in ((3, 3), (4, 3), (3, 4), (4, 4)):
        write_fet_label(env, (x, y), 4001)
    if final:
        finalize_all(env)
    force(sim, a, FO, target=3 * 8 + 3)
    return sim, a


def test_fet_output_waits_for_stable_labels():
    sim, a = _fo_at_cross(final=False)
    for _ in range(30):
        sim.step()
    assert a.type == FO and a.wait_counter > 0 and not sim.env.emitted


def test_fet_output_reports_cross_transistor():
    sim, a = _fo_at_cross(final=True)
    assert run_until(sim, lambda: a.type != FO, 50)
    comps = {c.id: c for c in conducting_components(sim.env.grid)}
    gate = next(100 + c.id for c in comps.values() if c.layer == Layer.POLY)
    ends = sorted(100 + c.id for c in comps.values() if c.layer == Layer.DIFF)
    (stmt,) = sim.env.emitted
    assert isinstance(stmt, FetStatement)
    assert (stmt.polarity, stmt.id, stmt.source, stmt.drain, stmt.gate, stmt.length, stmt.width) == (
        "NFET", 4001, ends[0], ends[1], gate, 2, 2,
    )  # fmt: skip
    assert all(sim.env.fet_output_done[y * 8 + x] for x in (3, 4) for y in (3, 4))


def test_fet_output_on_done_channel_leaves():
    sim, a = _fo_at_cross(final=True)
    for x in (3, 4):
        for y in (3, 4):
            sim.env.fet_output_done[y * 8 + x] = 1
    sim.step()
    assert a.type == NP and not sim.env.emitted


# --- contact finder and propagator --------------------------------------------

CONTACT = "LAYOUT 5 3\nRECT METAL1 0 0 2 2\nRECT POLY 2 1 4 1\nRECT CONTACT 2 1 2 1\n"


def test_propagator_becomes_contact_finder_and_reports():
    sim, a = lone(CONTACT, 1, 2, 1)
    env = sim.env
    finalize_all(env)
    force(sim, a, NP)
    sim.step()
    assert a.type == CF
    assert run_until(sim, lambda: a.type == NP, 10)
    (stmt,) = env.emitted
    m1 = env.label[Layer.METAL1][1 * 5 + 2]
    poly = env.label[Layer.POLY][1 * 5 + 2]
    assert stmt == ContactStatement(0, m1, poly, stmt.time)
    assert env.contact_captured[1 * 5 + 2]


def test_contact_finder_on_captured_region_leaves():
    sim, a = lone(CONTACT, 1, 2, 1)
    env = sim.env
    finalize_all(env)
    force(sim, a, CF)
    env.contact_captured[1 * 5 + 2] = 1
    sim.step()
    assert a.type == NP and not env.emitted


def test_propagators_fill_interior():
    text = "LAYOUT 6 6\nRECT METAL1 1 1 4 4\n"
    sim, _ = lone(text, 1, 0, 0)
    env = sim.env
    l = int(Layer.METAL1)
    for x in range(1, 5):
        for y in range(1, 5):
            if x in (1, 4) or y in (1, 4):
                write_label(env, (x, y), l, 7)
                set_verified(env, (x, y), l, 7)
    seal_label(env, 7)
    sim.agents = [AgentState(i, 0, i % 6, agent_rng(1, i), type=NP) for i in range(1, 5)]
    assert run_until(sim, lambda: all(env.label[l][y * 6 + x] for x in (2, 3) for y in (2, 3)), 400)
    assert {env.label[l][y * 6 + x] for x in (2, 3) for y in (2, 3)} == {7}


def test_propagator_on_empty_layout_stays():
    sim, a = lone("LAYOUT 5 5", 1, 2, 2)
    force(sim, a, NP)
    for _ in range(50):
        sim.step()
    assert a.type == NP


# --- whole runs ---------------------------------------------------------------


@pytest.mark.parametrize("name", ["cross", "nand4"])
def test_determinism(name):
    grid = load_fixture(name)
    runs = []
    for _ in range(2):
        sim = Simulation(grid, 40, 3)
        sim.run()
        runs.append((sim.env.snapshot(), [a.key() for a in sim.agents], sim.trace))
    assert runs[0] == runs[1]


@pytest.mark.parametrize("seed", range(1, 6))
def test_each_wire_sealed_once(seed):
    grid = load_fixture("nand4")
    sim = Simulation(grid, 50, seed)
    assert sim.run()
    env = sim.env
    per_wire = []
    for comp in conducting_components(grid):
        (v,) = {env.label[comp.layer][y * env.width + x] for x, y in comp.cells}
        per_wire.append(v)
    assert len(set(per_wire)) == len(per_wire)
    assert set(per_wire) == env.sealed


def test_final_label_is_largest_writer(monkeypatch):
    grid = load_fixture("inverter")
    writes = {}
    real = agents_mod.write_label

    def spy(env, cell, layer, value):
        key = (int(layer), cell)
        writes[key] = max(writes.get(key, 0), value)
        return real(env, cell, layer, value)

    monkeypatch.setattr(agents_mod, "write_label", spy)
    sim = Simulation(grid, 60, 8)
    assert sim.run()
    env = sim.env
    for comp in conducting_components(grid):
        boundary_max = max(writes.get((int(comp.layer), c), 0) for c in comp.cells)
        (v,) = {env.label[comp.layer][y * env.width + x] for x, y in comp.cells}
        assert v == boundary_max


def test_fet_ids_are_dominant_labels():
    grid = load_fixture("nand4")
    sim = Simulation(grid, 175, 2)
    assert sim.run()
    env = sim.env
    fets = [s for s in env.emitted if isinstance(s, FetStatement)]
    for ch in env.channels:
        top = max(env.fet_label[y * env.width + x] for x, y in ch.cells)
        assert top in {s.id for s in fets}


def test_population_conserved_and_ends_all_propagators():
    sim = Simulation(load_fixture("inverter"), 80, 5)
    assert sim.run()
    assert all(sum(row) == 80 for row in sim.trace)
    assert sim.trace[0][LF] == 80 and sim.trace[-1][NP] == 80
