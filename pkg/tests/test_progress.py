import pytest
from hypothesis import given, settings, strategies as st

from helpers import latent_states, progress_violations
from stephrl.exceptions import Malformed, OverLength, RuleViolation
from stephrl.progress import (EXISTENCE_TOKENS, LP_MAX, SEP, SUB_MAX, TEMPLATES, EpisodeProgress,
                              GlobalProgress, LocalProgress, Subtask, init_progress,
                              oracle_update, parse, render)
from stephrl.worldsim import (OBJECT_KINDS, RECEPTACLE_SPECS, ROOMS, Action, object_ids,
                              parse_observation)

CONTAINERS = [r for r, s in RECEPTACLE_SPECS.items() if s.container]


def obs(*tokens):
    return parse_observation(("ok",) + tokens)


def test_init_progress_is_empty():
    p = init_progress()
    assert render(p) == ()
    assert p.checked == ()
    assert parse(()) == p


def test_open_drawer_without_apple_extends_checked():
    prev = LocalProgress("locate", "searching", ("apple", "closed"), ("cabinet_1",))
    o = obs("at", "bedroom", "bed_1", "empty", "drawer_2", "mug_1", "hold", "nothing")
    new = oracle_update(Subtask("Locate", "apple"), Action("open", "drawer_2"), o, prev)
    assert new.checked == ("cabinet_1", "drawer_2")
    assert new.template == "searching"


def test_goto_checks_every_open_container_in_view():
    prev = LocalProgress("locate", "searching", ("apple", "opened"), ("box_1",))
    o = obs("at", "kitchen", "countertop_1", "egg_1", "cabinet_1", "closed",
            "sinkbasin_1", "empty", "hold", "nothing")
    new = oracle_update(Subtask("Locate", "apple"), Action("goto", "kitchen"), o, prev)
    assert new.checked == ("box_1", "countertop_1", "sinkbasin_1")
    assert new.slots == ("apple", "closed")


def test_found_then_take_is_terminal_and_freezes_checked():
    sub = Subtask("Locate", "apple")
    prev = LocalProgress("locate", "searching", ("apple", "opened"), ("box_1",))
    seen = obs("at", "kitchen", "countertop_1", "apple_1", "hold", "nothing")
    found = oracle_update(sub, Action("goto", "kitchen"), seen, prev)
    assert found.template == "found" and found.is_terminal
    assert found.checked == ("box_1",)
    held = obs("at", "kitchen", "countertop_1", "empty", "hold", "apple_1")
    picked = oracle_update(sub, Action("take", "apple_1", "countertop_1"), held, found)
    assert picked.sentence == ("picked", "apple_1")
    assert picked.checked == found.checked
    later = oracle_update(sub, Action("goto", "bedroom"),
                          obs("at", "bedroom", "drawer_2", "empty", "hold", "apple_1"), picked)
    assert later.checked == found.checked


def test_excluded_instance_is_not_a_find():
    sub = Subtask("Locate", "apple", excluded="apple_1")
    o = obs("at", "livingroom", "box_1", "apple_1", "hold", "nothing")
    new = oracle_update(sub, Action("goto", "livingroom"), o, init_progress())
    assert new.template == "searching"


def test_heat_reports_operation_only():
    sub = Subtask("Heat", "apple", "microwave_1")
    o = obs("at", "kitchen", "microwave_1", "empty", "hold", "apple_1")
    new = oracle_update(sub, Action("heat", "apple_1", "microwave_1"), o, init_progress())
    assert new.sentence == ("heated", "apple_1")
    assert new.checked == ()
    assert not EXISTENCE_TOKENS & set(new.tokens)


def test_navigate_tracks_route():
    sub = Subtask("Navigate", target_room="bathroom")
    p = init_progress()
    for room in ("kitchen", "bathroom"):
        p = oracle_update(sub, Action("goto", room), obs("at", room, "hold", "nothing"), p)
    assert p.route == ("kitchen", "bathroom")
    assert parse(p.tokens) == p


def test_invalid_action_keeps_progress():
    prev = LocalProgress("locate", "searching", ("apple", "opened"), ("box_1",))
    bad = parse_observation(("nothing", "happens", "at", "kitchen", "hold", "nothing"))
    assert oracle_update(Subtask("Locate", "apple"), Action("open", "box_1"), bad, prev) == prev


def test_rule_violations():
    plain = LocalProgress("plain", "moved", ("kitchen",))
    o = obs("at", "kitchen", "hold", "nothing")
    with pytest.raises(RuleViolation):
        oracle_update(Subtask("Locate", "apple"), Action("goto", "kitchen"), o, plain)
    carrying = LocalProgress("locate", "searching", ("apple", "opened"), ("box_1",))
    with pytest.raises(RuleViolation):
        oracle_update(Subtask("Place", "apple", "box_1"), Action("goto", "kitchen"), o, carrying)


def test_render_checked_of_size_three():
    p = LocalProgress("locate", "searching", ("mug", "opened"), ("box_1", "bed_1", "desk_1"))
    toks = render(p)
    assert toks[toks.index(SEP) + 1:] == ("box_1", "bed_1", "desk_1")


def test_worst_case_checked_fits_budget():
    p = LocalProgress("locate", "searching", ("cellphone", "closed"), tuple(CONTAINERS))
    assert len(render(p)) <= LP_MAX


def test_overlength_is_reported():
    p = LocalProgress("route", "moved", ("kitchen",), route=tuple(ROOMS) * 12)
    with pytest.raises(OverLength):
        render(p)


@pytest.mark.parametrize("tokens", [
    ("garbage",), ("found",), ("searching", "apple", "unchecked", "remain", "opened"),
    ("moved", "to", "kitchen", SEP, "box_1"), ("found", "apple", SEP, "box_1", "box_1"),
    ("found", "apple", SEP, "desklamp_1"), ("heated", "apple_1", "route:", "attic"),
])
def test_parse_rejects_off_grammar(tokens):
    with pytest.raises(Malformed):
        parse(tokens)


def test_subtask_tokens_round_trip_and_fit():
    subs = [Subtask("Locate", "apple"), Subtask("Locate", "mug", excluded="mug_2"),
            Subtask("Place", "mug", "box_1"), Subtask("Clean", "plate", "sinkbasin_1"),
            Subtask("Navigate", target_room="kitchen"), Subtask("Examine", "book", "desklamp_1")]
    for sub in subs:
        assert len(sub.tokens) <= SUB_MAX
        assert Subtask.parse(sub.tokens) == sub
    assert Subtask("Locate", "apple").tokens[:2] == ("locate", "pickup")
    with pytest.raises(Malformed):
        Subtask.parse(("locate", "pickup", "new", "apple", "except", "mug_1"))


def test_global_progress_is_append_only():
    g = GlobalProgress()
    g2 = g.append(Subtask("Locate", "apple"))
    assert len(g) == 0 and len(g2) == 1
    assert g2.tokens == ("locate", "pickup", "apple", ";")


def test_episode_progress_drops_oldest_parts():
    parts = [LocalProgress("locate", "searching", ("apple", "opened"), tuple(CONTAINERS[:16])),
             LocalProgress("plain", "placed", ("apple_1", "box_1")),
             LocalProgress("locate", "searching", ("apple", "opened"), tuple(CONTAINERS[2:]))]
    ep = EpisodeProgress.compose(parts[:2], parts[2])
    assert len(ep.tokens) <= LP_MAX
    assert ep.parts[-1] == parts[2]
    assert parts[0] not in ep.parts
    assert EpisodeProgress.parse(ep.tokens) == ep


# -- generated progresses ------------------------------------------------------

def _slot_value(slot):
    return {"{kind}": st.sampled_from(OBJECT_KINDS), "{obj}": st.sampled_from(object_ids()),
            "{rec}": st.sampled_from(sorted(RECEPTACLE_SPECS)), "{room}": st.sampled_from(ROOMS),
            "{doors}": st.sampled_from(["opened", "closed"])}[slot]


@st.composite
def progresses(draw):
    template = draw(st.sampled_from(sorted(TEMPLATES)))
    slots = tuple(draw(_slot_value(w)) for w in TEMPLATES[template] if w.startswith("{"))
    if template in ("searching", "found", "picked"):
        checked = draw(st.lists(st.sampled_from(CONTAINERS), unique=True, max_size=len(CONTAINERS)))
        return LocalProgress("locate", template, slots, tuple(checked))
    if draw(st.booleans()):
        route = draw(st.lists(st.sampled_from(ROOMS), unique=True, max_size=4))
        return LocalProgress("route", template, slots, route=tuple(route))
    return LocalProgress("plain", template, slots)


@settings(max_examples=1000, deadline=None)
@given(progresses())
def test_render_parse_round_trip(p):
    toks = render(p)
    assert len(toks) <= LP_MAX
    assert parse(toks) == p
    assert render(parse(toks)) == toks


def test_oracle_invariants_on_noisy_rollouts(noisy_records):
    totals = {}
    for rec in noisy_records:
        for k, v in progress_violations(rec, latent_states(rec)).items():
            totals[k] = totals.get(k, 0) + v
    assert totals == {k: 0 for k in totals}


def test_non_locate_progress_is_pure(noisy_records):
    for rec in noisy_records:
        for s in rec.steps:
            sub = Subtask.parse(rec.subtasks[s.k].tokens)
            if sub.kind != "Locate":
                assert not EXISTENCE_TOKENS & set(s.progress)
