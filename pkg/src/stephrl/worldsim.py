"""Deterministic household text-world.

Four rooms with a fixed receptacle floorplan; each episode samples which
receptacles are present, where objects start, and which openables start
open. Every string the world emits is a canonical token so that
observations, actions and instructions live in one closed vocabulary.
"""

from __future__ import annotations

import configparser
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .exceptions import EpisodeFinished, InvalidTask

STEP_LIMIT = 50
OBS_MAX = 64
ACT_MAX = 8

ROOMS = ("kitchen", "livingroom", "bedroom", "bathroom")


@dataclass(frozen=True)
class ReceptacleSpec:
    name: str
    room: str
    openable: bool
    container: bool = True
    appliance: Optional[str] = None


LAYOUT = (
    ReceptacleSpec("countertop_1", "kitchen", False),
    ReceptacleSpec("cabinet_1", "kitchen", True),
    ReceptacleSpec("cabinet_2", "kitchen", True),
    ReceptacleSpec("fridge_1", "kitchen", True, appliance="cool"),
    ReceptacleSpec("microwave_1", "kitchen", True, appliance="heat"),
    ReceptacleSpec("sinkbasin_1", "kitchen", False, appliance="clean"),
    ReceptacleSpec("sofa_1", "livingroom", False),
    ReceptacleSpec("coffeetable_1", "livingroom", False),
    ReceptacleSpec("drawer_1", "livingroom", True),
    ReceptacleSpec("box_1", "livingroom", True),
    ReceptacleSpec("bed_1", "bedroom", False),
    ReceptacleSpec("desk_1", "bedroom", False),
    ReceptacleSpec("drawer_2", "bedroom", True),
    ReceptacleSpec("shelf_1", "bedroom", False),
    ReceptacleSpec("desklamp_1", "bedroom", False, container=False, appliance="light"),
    ReceptacleSpec("bathtubbasin_1", "bathroom", False),
    ReceptacleSpec("cabinet_3", "bathroom", True),
    ReceptacleSpec("countertop_2", "bathroom", False),
    ReceptacleSpec("garbagecan_1", "bathroom", False),
)
RECEPTACLE_SPECS = {spec.name: spec for spec in LAYOUT}
RECEPTACLE_ORDER = {spec.name: i for i, spec in enumerate(LAYOUT)}
APPLIANCES = {spec.appliance: spec.name for spec in LAYOUT if spec.appliance}
# appliances are not valid placement goals
PLACE_TARGETS = tuple(s.name for s in LAYOUT if s.container and s.appliance is None)

OBJECT_KINDS = (
    "apple", "tomato", "potato", "egg", "mug", "cup",
    "plate", "bowl", "book", "cellphone", "pen", "soapbar",
)
MAX_INSTANCES = 3

TASK_KINDS = (
    "PickPlace", "ExamineInLight", "CleanPlace", "HeatPlace", "CoolPlace", "PickTwoPlace",
)
FAMILY_KINDS = {
    "PickPlace": OBJECT_KINDS,
    "ExamineInLight": ("book", "cellphone", "pen", "bowl", "cup"),
    "CleanPlace": ("apple", "tomato", "potato", "mug", "cup", "plate", "bowl", "soapbar"),
    "HeatPlace": ("apple", "tomato", "potato", "egg", "mug", "cup"),
    "CoolPlace": ("apple", "tomato", "potato", "egg", "mug", "cup", "plate", "bowl"),
    "PickTwoPlace": OBJECT_KINDS,
}
PROCESS_APPLIANCE = {"CleanPlace": "clean", "HeatPlace": "heat", "CoolPlace": "cool"}

# optional held-out (family:kind) combinations; the default split is by scene only
DEFAULT_UNSEEN: tuple = ()
N_SCENES = 40

VERBS = ("goto", "open", "close", "take", "put", "clean", "heat", "cool", "examine", "wait")
# second-argument connective per verb
CONNECTIVE = {"take": "from", "put": "in", "clean": "with", "heat": "with",
              "cool": "with", "examine": "with"}

FEEDBACK_START = ("start",)
FEEDBACK_OK = ("ok",)
FEEDBACK_INVALID = ("nothing", "happens")
OBS_WORDS = ("start", "ok", "nothing", "happens", "at", "closed", "empty", "hold")
INSTRUCTION_WORDS = ("put", "a", "two", "in", "clean", "hot", "cool", "examine", "with")


def object_ids(kinds: Iterable[str] = OBJECT_KINDS) -> list[str]:
    return [f"{k}_{i}" for k in kinds for i in range(1, MAX_INSTANCES + 1)]


def kind_of(object_id: str) -> str:
    return object_id.rsplit("_", 1)[0]


def world_tokens() -> list[str]:
    """Every token the world can emit, in a fixed order."""
    words: list[str] = []
    for group in (ROOMS, [s.name for s in LAYOUT], OBJECT_KINDS, object_ids(), VERBS,
                  CONNECTIVE.values(), OBS_WORDS, INSTRUCTION_WORDS):
        for w in group:
            if w not in words:
                words.append(w)
    return words


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class WorldConfig:
    object_kinds: tuple[str, ...] = OBJECT_KINDS
    task_kinds: tuple[str, ...] = TASK_KINDS
    unseen: tuple[str, ...] = DEFAULT_UNSEEN
    n_receptacles: tuple[int, int] = (8, 12)
    n_objects: tuple[int, int] = (6, 10)
    step_limit: int = STEP_LIMIT
    open_prob: float = 0.25
    n_scenes: int = N_SCENES

    def combos(self, split: str) -> list[tuple[str, str]]:
        """Task/object pairs of a split; without held-out pairs both splits share all of them."""
        unseen = {tuple(item.split(":")) for item in self.unseen}
        out = []
        for family in self.task_kinds:
            for kind in FAMILY_KINDS[family]:
                if kind not in self.object_kinds:
                    continue
                is_unseen = (family, kind) in unseen
                if split == "Seen" and not is_unseen:
                    out.append((family, kind))
                elif split == "Unseen" and (is_unseen or not unseen):
                    out.append((family, kind))
        return out

    def scene_range(self, split: str) -> range:
        """Scene ids of a split; unseen scenes never appear in the seen pool."""
        if split == "Seen":
            return range(0, self.n_scenes)
        return range(self.n_scenes, 2 * self.n_scenes)

    @classmethod
    def from_file(cls, path) -> "WorldConfig":
        text = Path(path).read_text()
        return cls.from_mapping(_parse_key_values(text))

    @classmethod
    def from_mapping(cls, values: dict) -> "WorldConfig":
        kwargs = {}
        for key, raw in values.items():
            if key in ("object_kinds", "task_kinds", "unseen"):
                kwargs[key] = tuple(x.strip() for x in raw.split(",") if x.strip())
            elif key in ("n_receptacles", "n_objects"):
                lo, _, hi = raw.partition("-")
                kwargs[key] = (int(lo), int(hi or lo))
            elif key in ("step_limit", "n_scenes"):
                kwargs[key] = int(raw)
            elif key == "open_prob":
                kwargs[key] = float(raw)
            elif key == "rooms":
                if tuple(x.strip() for x in raw.split(",")) != ROOMS:
                    raise InvalidTask(f"rooms are fixed by the floorplan: {','.join(ROOMS)}")
            else:
                raise InvalidTask(f"unknown world config key: {key}")
        cfg = cls(**kwargs)
        for k in cfg.object_kinds:
            if k not in OBJECT_KINDS:
                raise InvalidTask(f"unknown object kind: {k}")
        for t in cfg.task_kinds:
            if t not in TASK_KINDS:
                raise InvalidTask(f"unknown task kind: {t}")
        return cfg

    def to_text(self) -> str:
        lines = [
            f"rooms = {','.join(ROOMS)}",
            f"object_kinds = {','.join(self.object_kinds)}",
            f"task_kinds = {','.join(self.task_kinds)}",
            f"unseen = {','.join(self.unseen)}",
            f"n_receptacles = {self.n_receptacles[0]}-{self.n_receptacles[1]}",
            f"n_objects = {self.n_objects[0]}-{self.n_objects[1]}",
            f"step_limit = {self.step_limit}",
            f"open_prob = {self.open_prob}",
            f"n_scenes = {self.n_scenes}",
        ]
        return "\n".join(lines) + "\n"


def _parse_key_values(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string("[root]\n" + text)
    return dict(parser["root"])


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Goal:
    object_kind: str
    target_receptacle: str
    count: int = 1


@dataclass(frozen=True)
class TaskInstance:
    task_kind: str
    goal: Goal
    split: str = "Seen"
    task_id: str = ""
    scene: int = 0

    @property
    def instruction(self) -> tuple[str, ...]:
        kind, rec = self.goal.object_kind, self.goal.target_receptacle
        if self.task_kind == "PickPlace":
            return ("put", "a", kind, "in", rec)
        if self.task_kind == "ExamineInLight":
            return ("examine", "a", kind, "with", rec)
        if self.task_kind == "PickTwoPlace":
            return ("put", "two", kind, "in", rec)
        adjective = {"CleanPlace": "clean", "HeatPlace": "hot", "CoolPlace": "cool"}[self.task_kind]
        return ("put", "a", adjective, kind, "in", rec)


@dataclass(frozen=True)
class Receptacle:
    room: str
    openable: bool
    is_open: bool
    contents: frozenset = frozenset()


@dataclass(frozen=True)
class ObjectState:
    kind: str
    clean: bool = False
    hot: bool = False
    cold: bool = False


@dataclass(frozen=True)
class WorldState:
    task: TaskInstance
    receptacles: dict
    objects: dict
    room: str
    holding: Optional[str] = None
    step_count: int = 0
    rng_seed: int = 0
    lit_examined: frozenset = frozenset()
    finished: bool = False
    step_limit: int = STEP_LIMIT
    rooms: tuple = ROOMS

    def location_of(self, object_id: str) -> Optional[str]:
        for rid, rec in self.receptacles.items():
            if object_id in rec.contents:
                return rid
        return None

    def accessible(self, rid: str) -> bool:
        rec = self.receptacles[rid]
        return (not rec.openable) or rec.is_open


@dataclass(frozen=True)
class ViewEntry:
    receptacle: str
    closed: bool
    contents: tuple


@dataclass(frozen=True)
class Observation:
    tokens: tuple
    room: str
    visible: frozenset
    view: tuple = ()
    holding: Optional[str] = None
    valid: bool = True


@dataclass(frozen=True)
class Action:
    verb: str
    arg1: Optional[str] = None
    arg2: Optional[str] = None

    @property
    def tokens(self) -> tuple:
        if self.verb == "wait":
            return ("wait",)
        if self.arg2 is None:
            return (self.verb, self.arg1)
        return (self.verb, self.arg1, CONNECTIVE[self.verb], self.arg2)

    @classmethod
    def parse(cls, tokens: Sequence[str]) -> Optional["Action"]:
        """Inverse of ``tokens``; None for anything outside the action grammar."""
        tokens = tuple(tokens)
        if not tokens or tokens[0] not in VERBS:
            return None
        verb = tokens[0]
        if verb == "wait":
            return cls("wait") if len(tokens) == 1 else None
        if verb in ("goto", "open", "close"):
            return cls(verb, tokens[1]) if len(tokens) == 2 else None
        if len(tokens) == 4 and tokens[2] == CONNECTIVE[verb]:
            return cls(verb, tokens[1], tokens[3])
        return None


# --------------------------------------------------------------------------
# generator


def _rng(*parts) -> random.Random:
    return random.Random("|".join(str(p) for p in parts))


def generate_tasks(config: WorldConfig, split: str, n: int, seed: int) -> list[TaskInstance]:
    """Deterministic list of ``n`` task instances from the given split."""
    combos = config.combos(split)
    if not combos:
        raise InvalidTask(f"split {split} has no (task, object) combinations")
    tasks = []
    for i in range(n):
        rng = _rng("task", split, seed, i)
        family, kind = combos[rng.randrange(len(combos))]
        if family == "ExamineInLight":
            target = APPLIANCES["light"]
        else:
            target = PLACE_TARGETS[rng.randrange(len(PLACE_TARGETS))]
        count = 2 if family == "PickTwoPlace" else 1
        scenes = config.scene_range(split)
        scene = scenes[rng.randrange(len(scenes))]
        tasks.append(TaskInstance(family, Goal(kind, target, count), split,
                                  f"{split}-{seed}-{i}", scene))
    return tasks


def _required_receptacles(task: TaskInstance) -> set:
    req = {task.goal.target_receptacle}
    if task.task_kind in PROCESS_APPLIANCE:
        req.add(APPLIANCES[PROCESS_APPLIANCE[task.task_kind]])
    return req


def _validate_task(task: TaskInstance, config: WorldConfig) -> None:
    goal = task.goal
    if task.task_kind not in TASK_KINDS:
        raise InvalidTask(f"unknown task kind {task.task_kind}")
    if goal.object_kind not in config.object_kinds:
        raise InvalidTask(f"goal object kind {goal.object_kind!r} absent from generator inventory")
    if goal.object_kind not in FAMILY_KINDS[task.task_kind]:
        raise InvalidTask(f"{task.task_kind} does not accept {goal.object_kind}")
    if goal.target_receptacle not in RECEPTACLE_SPECS:
        raise InvalidTask(f"unknown receptacle {goal.target_receptacle}")
    if not 1 <= goal.count <= MAX_INSTANCES:
        raise InvalidTask("goal count out of range")


def scene_layout(scene: int, config: WorldConfig = WorldConfig()) -> dict:
    """Receptacles present in a scene and whether each starts open.

    Every room keeps at least one container. Task-specific receptacles are
    added on top of the scene by ``reset``.
    """
    rng = _rng("scene", scene)
    present = set()
    for room in ROOMS:
        containers = [s.name for s in LAYOUT if s.room == room and s.container]
        present.add(rng.choice(containers))
    lo, hi = config.n_receptacles
    # leave room for the (at most two) receptacles a task adds
    target_n = rng.randint(lo, max(lo, hi - 2))
    pool = [s.name for s in LAYOUT if s.name not in present]
    rng.shuffle(pool)
    while len(present) < target_n and pool:
        present.add(pool.pop())
    opened = {s.name: (not s.openable) or rng.random() < config.open_prob for s in LAYOUT}
    return {name: opened[name] for name in sorted(present, key=RECEPTACLE_ORDER.__getitem__)}


def reset(task: TaskInstance, seed: int, config: WorldConfig = WorldConfig()):
    """Build the scene for ``task``, place objects, and return ``(state, o0)``."""
    _validate_task(task, config)
    rng = _rng("reset", task, seed)
    goal = task.goal

    layout = scene_layout(task.scene, config)
    present = set(layout) | _required_receptacles(task)
    present_order = sorted(present, key=RECEPTACLE_ORDER.__getitem__)

    start_room = ROOMS[rng.randrange(len(ROOMS))]
    containers = [r for r in present_order if RECEPTACLE_SPECS[r].container]

    # goal objects start outside the start room and outside the target
    goal_spots = [r for r in containers
                  if RECEPTACLE_SPECS[r].room != start_room and r != goal.target_receptacle]
    # exactly ``count`` instances of the goal kind exist
    n_goal = goal.count
    lo, hi = config.n_objects
    n_total = max(rng.randint(lo, hi), n_goal)

    placement: dict[str, str] = {}
    for i in range(1, n_goal + 1):
        placement[f"{goal.object_kind}_{i}"] = rng.choice(goal_spots)
    others = [o for o in object_ids(k for k in config.object_kinds if k != goal.object_kind)]
    rng.shuffle(others)
    for oid in others[: n_total - n_goal]:
        placement[oid] = rng.choice(containers)

    contents = {r: set() for r in present_order}
    for oid, rid in placement.items():
        contents[rid].add(oid)
    receptacles = {}
    for rid in present_order:
        spec = RECEPTACLE_SPECS[rid]
        is_open = layout.get(rid, not spec.openable)
        receptacles[rid] = Receptacle(spec.room, spec.openable, is_open, frozenset(contents[rid]))
    objects = {oid: ObjectState(kind_of(oid)) for oid in sorted(placement)}

    state = WorldState(
        task=task, receptacles=receptacles, objects=objects, room=start_room,
        rng_seed=seed, step_limit=config.step_limit,
    )
    return state, render(state, FEEDBACK_START)


# --------------------------------------------------------------------------
# observation


def render(state: WorldState, feedback: tuple = FEEDBACK_OK) -> Observation:
    """Feedback prefix followed by the view of the agent's room."""
    tokens = list(feedback) + ["at", state.room]
    view = []
    visible = set()
    for rid, rec in state.receptacles.items():
        if rec.room != state.room:
            continue
        spec = RECEPTACLE_SPECS[rid]
        tokens.append(rid)
        if not spec.container:
            view.append(ViewEntry(rid, False, ()))
            continue
        if rec.openable and not rec.is_open:
            tokens.append("closed")
            view.append(ViewEntry(rid, True, ()))
            continue
        items = tuple(sorted(rec.contents))
        tokens.extend(items or ("empty",))
        visible.update(items)
        view.append(ViewEntry(rid, False, items))
    tokens += ["hold", state.holding or "nothing"]
    if state.holding:
        visible.add(state.holding)
    assert len(tokens) <= OBS_MAX, "observation exceeds OBS_MAX"
    return Observation(
        tuple(tokens), state.room, frozenset(visible), tuple(view), state.holding,
        feedback != FEEDBACK_INVALID,
    )


def parse_observation(tokens: Sequence[str]) -> Observation:
    """Rebuild the structured observation from its canonical tokens."""
    t = tuple(tokens)
    i = t.index("at")
    feedback, room = t[:i], t[i + 1]
    j = i + 2
    view, visible = [], set()
    while t[j] != "hold":
        rid = t[j]
        j += 1
        if not RECEPTACLE_SPECS[rid].container:
            view.append(ViewEntry(rid, False, ()))
            continue
        if t[j] == "closed":
            view.append(ViewEntry(rid, True, ()))
            j += 1
            continue
        if t[j] == "empty":
            view.append(ViewEntry(rid, False, ()))
            j += 1
            continue
        items = []
        while t[j] != "hold" and t[j] not in RECEPTACLE_SPECS:
            items.append(t[j])
            j += 1
        view.append(ViewEntry(rid, False, tuple(items)))
        visible.update(items)
    holding = None if t[j + 1] == "nothing" else t[j + 1]
    if holding:
        visible.add(holding)
    return Observation(t, room, frozenset(visible), tuple(view), holding,
                       feedback != FEEDBACK_INVALID)


# --------------------------------------------------------------------------
# dynamics


def _apply(state: WorldState, action: Optional[Action]) -> Optional[WorldState]:
    """Successor state, or None when the action is not applicable."""
    if action is None:
        return None
    verb, a1, a2 = action.verb, action.arg1, action.arg2
    recs = state.receptacles

    def here(rid):
        return rid in recs and recs[rid].room == state.room

    if verb == "wait":
        return state
    if verb == "goto":
        if a1 in state.rooms and a1 != state.room:
            return replace(state, room=a1)
        return None
    if verb in ("open", "close"):
        if not here(a1) or not recs[a1].openable:
            return None
        want_open = verb == "open"
        if recs[a1].is_open == want_open:
            return None
        return _with_receptacle(state, a1, replace(recs[a1], is_open=want_open))
    if verb == "take":
        if state.holding is not None or not here(a2) or not state.accessible(a2):
            return None
        if a1 not in recs[a2].contents:
            return None
        rec = replace(recs[a2], contents=recs[a2].contents - {a1})
        return replace(_with_receptacle(state, a2, rec), holding=a1)
    if verb == "put":
        if state.holding != a1 or a1 is None or not here(a2):
            return None
        if not RECEPTACLE_SPECS[a2].container or not state.accessible(a2):
            return None
        rec = replace(recs[a2], contents=recs[a2].contents | {a1})
        return replace(_with_receptacle(state, a2, rec), holding=None)
    if verb in ("clean", "heat", "cool", "examine"):
        if state.holding != a1 or a1 is None or not here(a2):
            return None
        needed = "light" if verb == "examine" else verb
        if RECEPTACLE_SPECS[a2].appliance != needed:
            return None
        if verb == "examine":
            return replace(state, lit_examined=state.lit_examined | {a1})
        obj = state.objects[a1]
        if verb == "clean":
            obj = replace(obj, clean=True)
        elif verb == "heat":
            obj = replace(obj, hot=True, cold=False)
        else:
            obj = replace(obj, cold=True, hot=False)
        objects = dict(state.objects)
        objects[a1] = obj
        return replace(state, objects=objects)
    return None


def _with_receptacle(state: WorldState, rid: str, rec: Receptacle) -> WorldState:
    recs = dict(state.receptacles)
    recs[rid] = rec
    return replace(state, receptacles=recs)


def step(state: WorldState, action: Optional[Action]):
    """Advance one step. ``action=None`` stands for unparseable output.

    Returns ``(state, observation, extrinsic_reward, done)``.
    """
    if state.finished or state.step_count >= state.step_limit:
        raise EpisodeFinished("step() called after the episode ended")
    nxt = _apply(state, action)
    feedback = FEEDBACK_OK
    if nxt is None:
        nxt, feedback = state, FEEDBACK_INVALID
    nxt = replace(nxt, step_count=state.step_count + 1)
    success = goal_satisfied(nxt, nxt.task)
    reward = 1.0 if success else 0.0
    done = success or nxt.step_count >= nxt.step_limit
    nxt = replace(nxt, finished=done)
    return nxt, render(nxt, feedback), reward, done


def step_tokens(state: WorldState, tokens: Sequence[str]):
    return step(state, Action.parse(tokens))


# --------------------------------------------------------------------------
# predicates


def _kind_in(state: WorldState, kind: str, rid: str) -> list:
    if rid not in state.receptacles:
        return []
    return [o for o in state.receptacles[rid].contents if state.objects[o].kind == kind]


def goal_satisfied(state: WorldState, task: TaskInstance) -> bool:
    goal = task.goal
    if task.task_kind == "ExamineInLight":
        return any(state.objects[o].kind == goal.object_kind for o in state.lit_examined)
    inside = _kind_in(state, goal.object_kind, goal.target_receptacle)
    if task.task_kind == "CleanPlace":
        inside = [o for o in inside if state.objects[o].clean]
    elif task.task_kind == "HeatPlace":
        inside = [o for o in inside if state.objects[o].hot]
    elif task.task_kind == "CoolPlace":
        inside = [o for o in inside if state.objects[o].cold]
    return len(inside) >= goal.count


def subtask_completed(state: WorldState, subtask) -> bool:
    """Ground-truth completion of a subtask (see ``progress.Subtask``)."""
    kind, target = subtask.target_object, subtask.target_receptacle
    held = state.holding
    held_kind = state.objects[held].kind if held else None
    if subtask.kind == "Locate":
        return held_kind == kind and held != subtask.excluded
    if subtask.kind == "Place":
        return held_kind != kind and bool(_kind_in(state, kind, target))
    if subtask.kind in ("Clean", "Heat", "Cool"):
        flag = {"Clean": "clean", "Heat": "hot", "Cool": "cold"}[subtask.kind]
        return any(getattr(o, flag) for o in state.objects.values() if o.kind == kind)
    if subtask.kind == "Examine":
        return any(state.objects[o].kind == kind for o in state.lit_examined)
    if subtask.kind == "Navigate":
        return state.room == subtask.target_room
    return False


# --------------------------------------------------------------------------
# traces


def write_trace(path, steps: Iterable[dict], vocab=None) -> None:
    """One JSON record per step: ``{t, obs_tokens, action_tokens, reward, done}``.

    Token fields are written as ids when a vocabulary is given.
    """
    with open(path, "w") as fh:
        for rec in steps:
            row = dict(rec)
            if vocab is not None:
                row["obs_tokens"] = vocab.encode(row["obs_tokens"])
                row["action_tokens"] = vocab.encode(row["action_tokens"])
            else:
                row["obs_tokens"] = list(row["obs_tokens"])
                row["action_tokens"] = list(row["action_tokens"])
            fh.write(json.dumps(row) + "\n")


def replay(task: TaskInstance, seed: int, actions: Iterable, config: WorldConfig = WorldConfig()):
    """Run an action sequence from reset; returns the per-step trace records."""
    state, obs = reset(task, seed, config)
    trace = []
    for t, act in enumerate(actions):
        if state.finished:
            break
        act_tokens = act.tokens if isinstance(act, Action) else tuple(act)
        state, obs, reward, done = step_tokens(state, act_tokens)
        trace.append({"t": t, "obs_tokens": obs.tokens, "action_tokens": act_tokens,
                      "reward": reward, "done": done})
    return trace
