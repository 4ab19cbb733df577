"""Scripted expert that acts from step-level inputs only.

Each decision reads the same tokens a learned head would see (subtask,
local progress and current observation for the low level; instruction,
completed subtasks and observation for the high level) plus the fixed
floorplan. Keeping the expert inside the step-level interface means its
demonstrations are a function of the policy input, so cloning them is a
well-posed supervised problem.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .progress import SUBTASK_SEP, Malformed, Subtask, parse as parse_progress
from .worldsim import (APPLIANCES, PROCESS_APPLIANCE, RECEPTACLE_SPECS, ROOMS, Action,
                       kind_of, parse_observation)

_PROCESS_SUBTASK = {"CleanPlace": "Clean", "HeatPlace": "Heat", "CoolPlace": "Cool"}


def parse_instruction(tokens: Sequence[str]) -> tuple:
    """``(family, kind, receptacle)`` from canonical instruction tokens."""
    t = tuple(tokens)
    if t[0] == "examine":
        return "ExamineInLight", t[2], t[4]
    if t[1] == "two":
        return "PickTwoPlace", t[2], t[4]
    if len(t) == 6:
        family = {"clean": "CleanPlace", "hot": "HeatPlace", "cool": "CoolPlace"}[t[2]]
        return family, t[3], t[5]
    return "PickPlace", t[2], t[4]


def family_plan(family: str, kind: str, rec: str) -> list:
    """Subtask skeleton per family; the second PickTwo locate is filled in at run time."""
    if family == "PickPlace":
        return [Subtask("Locate", kind), Subtask("Place", kind, rec)]
    if family == "ExamineInLight":
        return [Subtask("Locate", kind), Subtask("Examine", kind, rec)]
    if family in _PROCESS_SUBTASK:
        appliance = APPLIANCES[PROCESS_APPLIANCE[family]]
        return [Subtask("Locate", kind), Subtask(_PROCESS_SUBTASK[family], kind, appliance),
                Subtask("Place", kind, rec)]
    return [Subtask("Locate", kind), Subtask("Place", kind, rec),
            Subtask("Locate", kind, excluded="?"), Subtask("Place", kind, rec)]


class ScriptedExpert:
    """Agent protocol: ``high``, ``low`` and ``progress`` over ``PolicyInput``."""

    def high(self, inp) -> tuple:
        first = inp.segments[0][1]
        family, kind, rec = parse_instruction(first)
        n_done = inp.segment("completed").count(SUBTASK_SEP)
        plan = family_plan(family, kind, rec)
        sub = plan[min(n_done, len(plan) - 1)]
        if sub.excluded == "?":
            obs = parse_observation(inp.segment("obs"))
            placed = [o for e in obs.view if e.receptacle == rec for o in e.contents
                      if kind_of(o) == kind]
            sub = Subtask("Locate", kind, excluded=placed[0] if placed else None)
        return sub.tokens

    def low(self, inp) -> tuple:
        """Returns ``(action_tokens, done_flag)``."""
        tag, sub_tokens = inp.segments[0]
        obs = parse_observation(inp.segment("obs"))
        try:
            progress = parse_progress(inp.segment("progress"))
        except (KeyError, Malformed):
            progress = None
        sub = Subtask.parse(sub_tokens)
        action, done = expert_action(sub, obs, progress.checked if progress else ())
        return action.tokens, done

    def progress(self, inp) -> tuple:
        raise NotImplementedError("the expert relies on the oracle summarizer")


def expert_action(sub: Subtask, obs, checked: Sequence[str]) -> tuple:
    """Next action and whether it completes ``sub``."""
    room = obs.room
    held = obs.holding
    if sub.kind == "Locate":
        def eligible(oid):
            return kind_of(oid) == sub.target_object and oid != sub.excluded

        for entry in obs.view:
            for oid in entry.contents:
                if eligible(oid) and held is None:
                    return Action("take", oid, entry.receptacle), True
        for entry in obs.view:
            if entry.closed:
                return Action("open", entry.receptacle), False
        return Action("goto", _next_room(room, checked)), False
    if sub.kind == "Navigate":
        return Action("goto", sub.target_room), True
    target = sub.target_receptacle
    target_room = RECEPTACLE_SPECS[target].room
    if room != target_room:
        return Action("goto", target_room), False
    obj = held or sub.target_object
    if sub.kind == "Place":
        for entry in obs.view:
            if entry.receptacle == target and entry.closed:
                return Action("open", target), False
        return Action("put", obj, target), True
    verb = {"Clean": "clean", "Heat": "heat", "Cool": "cool", "Examine": "examine"}[sub.kind]
    return Action(verb, obj, target), True


def _next_room(room: str, checked: Sequence[str]) -> str:
    visited = {RECEPTACLE_SPECS[r].room for r in checked}
    for r in ROOMS:
        if r != room and r not in visited:
            return r
    return ROOMS[(ROOMS.index(room) + 1) % len(ROOMS)]
