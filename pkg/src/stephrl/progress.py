"""Subtasks and the local-progress grammar.

A ``LocalProgress`` is a structured value with one canonical token rendering:

* Locate subtasks:  ``<sentence> || <checked receptacles...>``
* Navigate:         ``<sentence> route: <rooms...>``
* everything else:  ``<sentence>``

``oracle_update`` is the rule-based summarizer used to label expert data.
It reads only the subtask, the previous action, the new observation and
the previous progress, never the latent world state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .exceptions import Malformed, OverLength, RuleViolation
from .worldsim import (
    OBJECT_KINDS,
    RECEPTACLE_SPECS,
    ROOMS,
    Action,
    Observation,
    kind_of,
    object_ids,
)

LP_MAX = 48
SUB_MAX = 16

SEP = "||"
ROUTE = "route:"
NEXT = "<next>"
SUBTASK_SEP = ";"

SUBTASK_KINDS = ("Locate", "Place", "Clean", "Heat", "Cool", "Navigate", "Examine")
_PROCESS_WORD = {"Clean": "clean", "Heat": "heat", "Cool": "cool", "Examine": "examine"}
_WORD_PROCESS = {v: k for k, v in _PROCESS_WORD.items()}

_OBJECTS = frozenset(object_ids())
_CONTAINERS = frozenset(s for s, spec in RECEPTACLE_SPECS.items() if spec.container)


@dataclass(frozen=True)
class Subtask:
    kind: str
    target_object: Optional[str] = None
    target_receptacle: Optional[str] = None
    excluded: Optional[str] = None
    target_room: Optional[str] = None

    @property
    def is_locate(self) -> bool:
        return self.kind == "Locate"

    @property
    def tokens(self) -> tuple:
        if self.kind == "Locate":
            if self.excluded:
                return ("locate", "pickup", "new", self.target_object, "except", self.excluded)
            return ("locate", "pickup", self.target_object)
        if self.kind == "Place":
            return ("place", self.target_object, "in", self.target_receptacle)
        if self.kind == "Navigate":
            return ("navigate", "to", self.target_room)
        return (_PROCESS_WORD[self.kind], self.target_object, "with", self.target_receptacle)

    @classmethod
    def parse(cls, tokens: Sequence[str]) -> "Subtask":
        t = tuple(tokens)
        if len(t) == 3 and t[:2] == ("locate", "pickup") and t[2] in OBJECT_KINDS:
            return cls("Locate", t[2])
        if (len(t) == 6 and t[:3] == ("locate", "pickup", "new") and t[3] in OBJECT_KINDS
                and t[4] == "except" and t[5] in _OBJECTS and kind_of(t[5]) == t[3]):
            return cls("Locate", t[3], excluded=t[5])
        if len(t) == 4 and t[0] == "place" and t[1] in OBJECT_KINDS and t[2] == "in" \
                and t[3] in _CONTAINERS:
            return cls("Place", t[1], t[3])
        if len(t) == 4 and t[0] in _WORD_PROCESS and t[1] in OBJECT_KINDS and t[2] == "with" \
                and t[3] in RECEPTACLE_SPECS:
            return cls(_WORD_PROCESS[t[0]], t[1], t[3])
        if len(t) == 3 and t[:2] == ("navigate", "to") and t[2] in ROOMS:
            return cls("Navigate", target_room=t[2])
        raise Malformed(f"not a subtask: {' '.join(t)}")


@dataclass(frozen=True)
class GlobalProgress:
    """Ordered list of completed subtasks; append-only within an episode."""

    completed: tuple = ()

    def append(self, subtask: Subtask) -> "GlobalProgress":
        return GlobalProgress(self.completed + (subtask,))

    @property
    def tokens(self) -> tuple:
        out: list = []
        for sub in self.completed:
            # raw tuples stand in for subtasks a learned head emitted off-grammar
            out.extend(sub if isinstance(sub, tuple) else sub.tokens)
            out.append(SUBTASK_SEP)
        return tuple(out)

    def __len__(self):
        return len(self.completed)


# --------------------------------------------------------------------------
# sentence templates

# slot markers: {kind} {obj} {rec} {room} {doors}
TEMPLATES = {
    "searching": ("searching", "{kind}", "unchecked", "remain", "{doors}"),
    "found": ("found", "{kind}"),
    "picked": ("picked", "{obj}"),
    "moved": ("moved", "to", "{room}"),
    "opened": ("opened", "{rec}"),
    "shut": ("shut", "{rec}"),
    "took": ("took", "{obj}"),
    "placed": ("placed", "{obj}", "in", "{rec}"),
    "cleaned": ("cleaned", "{obj}"),
    "heated": ("heated", "{obj}"),
    "cooled": ("cooled", "{obj}"),
    "examined": ("examined", "{obj}", "under", "{rec}"),
    "waited": ("waited",),
}
LOCATE_TEMPLATES = frozenset({"searching", "found", "picked"})
TERMINAL_TEMPLATES = frozenset({"found", "picked"})
# tokens that state existence or search status; banned outside Locate
EXISTENCE_TOKENS = frozenset({"searching", "unchecked", "remain", "found", "picked", SEP})

_SLOT_VALUES = {
    "{kind}": frozenset(OBJECT_KINDS),
    "{obj}": _OBJECTS,
    "{rec}": frozenset(RECEPTACLE_SPECS),
    "{room}": frozenset(ROOMS),
    "{doors}": frozenset({"opened", "closed"}),
}
_VERB_TEMPLATE = {
    "goto": "moved", "open": "opened", "close": "shut", "take": "took", "put": "placed",
    "clean": "cleaned", "heat": "heated", "cool": "cooled", "examine": "examined",
    "wait": "waited",
}


def template_words() -> list:
    words = []
    for pattern in TEMPLATES.values():
        for w in pattern:
            if not w.startswith("{") and w not in words:
                words.append(w)
    return words


def _fill(template: str, slots: tuple) -> tuple:
    out, it = [], iter(slots)
    for w in TEMPLATES[template]:
        out.append(next(it) if w.startswith("{") else w)
    return tuple(out)


# --------------------------------------------------------------------------
# local progress


@dataclass(frozen=True)
class LocalProgress:
    form: str = "empty"  # empty | locate | plain | route
    template: Optional[str] = None
    slots: tuple = ()
    checked: tuple = ()
    route: tuple = ()

    @property
    def sentence(self) -> tuple:
        return _fill(self.template, self.slots) if self.template else ()

    @property
    def tokens(self) -> tuple:
        return render(self)

    @property
    def is_terminal(self) -> bool:
        return self.template in TERMINAL_TEMPLATES


def init_progress() -> LocalProgress:
    return LocalProgress()


def render(progress: LocalProgress) -> tuple:
    if progress.form == "empty":
        return ()
    out = progress.sentence
    if progress.form == "locate":
        out = out + (SEP,) + tuple(progress.checked)
    elif progress.form == "route":
        out = out + (ROUTE,) + tuple(progress.route)
    if len(out) > LP_MAX:
        raise OverLength(f"progress renders to {len(out)} tokens (LP_MAX={LP_MAX})")
    return out


def _parse_sentence(tokens: tuple):
    if not tokens or tokens[0] not in TEMPLATES:
        raise Malformed("unknown progress sentence")
    template = tokens[0]
    pattern = TEMPLATES[template]
    if len(tokens) != len(pattern):
        raise Malformed(f"bad length for template {template}")
    slots = []
    for w, tok in zip(pattern, tokens):
        if w.startswith("{"):
            if tok not in _SLOT_VALUES[w]:
                raise Malformed(f"bad slot value {tok!r} for {w}")
            slots.append(tok)
        elif w != tok:
            raise Malformed(f"expected {w!r}, got {tok!r}")
    return template, tuple(slots)


def parse(tokens: Sequence[str]) -> LocalProgress:
    """Inverse of ``render``; raises ``Malformed`` outside the grammar."""
    t = tuple(tokens)
    if not t:
        return init_progress()
    if t.count(SEP) + t.count(ROUTE) > 1:
        raise Malformed("more than one list marker")
    if SEP in t:
        i = t.index(SEP)
        template, slots = _parse_sentence(t[:i])
        if template not in LOCATE_TEMPLATES:
            raise Malformed("checked list after a non-locate sentence")
        checked = t[i + 1:]
        if any(r not in _CONTAINERS for r in checked) or len(set(checked)) != len(checked):
            raise Malformed("bad checked list")
        return LocalProgress("locate", template, slots, tuple(checked))
    if ROUTE in t:
        i = t.index(ROUTE)
        template, slots = _parse_sentence(t[:i])
        if template in LOCATE_TEMPLATES:
            raise Malformed("route after a locate sentence")
        route = t[i + 1:]
        if any(r not in ROOMS for r in route) or len(set(route)) != len(route):
            raise Malformed("bad route")
        return LocalProgress("route", template, slots, route=route)
    template, slots = _parse_sentence(t)
    if template in LOCATE_TEMPLATES:
        raise Malformed("locate sentence without checked list")
    return LocalProgress("plain", template, slots)


def _as_action(prev_action) -> Optional[Action]:
    if prev_action is None or isinstance(prev_action, Action):
        return prev_action
    return Action.parse(prev_action)


def oracle_update(subtask: Subtask, prev_action, obs: Observation,
                  prev: LocalProgress) -> LocalProgress:
    """Rule-based progress update for one step.

    Unsuccessful actions (``obs.valid`` false) leave the progress unchanged.
    """
    action = _as_action(prev_action)
    if subtask.kind == "Locate":
        if prev.form not in ("empty", "locate"):
            raise RuleViolation("Locate progress must use the locate form")
        if action is None or not obs.valid:
            return prev
        new = _locate_update(subtask, action, obs, prev)
        if not set(prev.checked) <= set(new.checked):
            raise RuleViolation("checked set would shrink")
        return new
    if prev.checked:
        raise RuleViolation("Non-Locate progress must not carry a checked list")
    if action is None or not obs.valid:
        return prev
    template = _VERB_TEMPLATE[action.verb]
    slots = _slots_for(template, action)
    if subtask.kind == "Navigate":
        route = prev.route
        if obs.room not in route:
            route = route + (obs.room,)
        return LocalProgress("route", template, slots, route=route)
    return LocalProgress("plain", template, slots)


def _slots_for(template: str, action: Action) -> tuple:
    if template in ("moved", "opened", "shut"):
        return (action.arg1,)
    if template in ("placed", "examined"):
        return (action.arg1, action.arg2)
    if template == "waited":
        return ()
    return (action.arg1,)


def _locate_update(subtask: Subtask, action: Action, obs: Observation,
                   prev: LocalProgress) -> LocalProgress:
    kind, excluded = subtask.target_object, subtask.excluded

    def eligible(oid):
        return oid is not None and kind_of(oid) == kind and oid != excluded

    if prev.is_terminal:
        if action.verb == "take" and eligible(action.arg1) and obs.holding == action.arg1:
            return LocalProgress("locate", "picked", (action.arg1,), prev.checked)
        return prev
    if eligible(obs.holding):
        return LocalProgress("locate", "picked", (obs.holding,), prev.checked)
    for entry in obs.view:
        for oid in entry.contents:
            if eligible(oid):
                return LocalProgress("locate", "found", (kind,), prev.checked)

    # append order: previously checked receptacles keep their positions
    checked = list(prev.checked)
    if action.verb == "goto":
        fresh = [e.receptacle for e in obs.view if not e.closed and e.receptacle in _CONTAINERS]
    elif action.verb == "open" and action.arg1 in _CONTAINERS:
        fresh = [action.arg1]
    else:
        fresh = []
    checked += [r for r in fresh if r not in checked]
    doors = "closed" if any(e.closed for e in obs.view) else "opened"
    return LocalProgress("locate", "searching", (kind, doors), tuple(checked))


# --------------------------------------------------------------------------
# whole-episode progress for the flat (no hierarchy) variant


@dataclass(frozen=True)
class EpisodeProgress:
    """Concatenated subtask summaries under the LP_MAX budget."""

    parts: tuple = ()

    @classmethod
    def compose(cls, finished: Sequence[LocalProgress], current: LocalProgress) -> "EpisodeProgress":
        parts = [p for p in list(finished) + [current] if p.form != "empty"]
        while parts and _joined_len(parts) > LP_MAX:
            parts.pop(0)
        return cls(tuple(parts))

    @property
    def tokens(self) -> tuple:
        out: list = []
        for i, part in enumerate(self.parts):
            if i:
                out.append(NEXT)
            out.extend(render(part))
        return tuple(out)

    @classmethod
    def parse(cls, tokens: Sequence[str]) -> "EpisodeProgress":
        t = tuple(tokens)
        if not t:
            return cls()
        if len(t) > LP_MAX:
            raise Malformed("episode progress too long")
        chunks, cur = [], []
        for tok in t:
            if tok == NEXT:
                chunks.append(tuple(cur))
                cur = []
            else:
                cur.append(tok)
        chunks.append(tuple(cur))
        parts = []
        for chunk in chunks:
            if not chunk:
                raise Malformed("empty episode-progress part")
            parts.append(parse(chunk))
        return cls(tuple(parts))


def _joined_len(parts) -> int:
    return sum(len(render(p)) for p in parts) + max(len(parts) - 1, 0)
