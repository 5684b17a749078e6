"""Deterministic grid platformer used as the learning environment.

Rows grow downwards (row 0 is the top of the level).  The agent's position is
the cell of its lower block; Big and Fire agents also occupy the cell above
unless crouching.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Union

from .tree import (
    ALL_CONDITIONS,
    Action,
    BehaviorTree,
    Blackboard,
    ConditionId,
    FIELD_SIZE,
    Predicate,
    tick_root,
)

JUMP_VELOCITY = 2
MAX_PROJECTILES = 2
PROJECTILE_SPEED = 2
WALKER_PERIOD = 2
FLYER_DRIFT_PERIOD = 3
FLYER_WAVE = (0, 1, 2, 1, 0, -1, -2, -1)

_HALF = FIELD_SIZE // 2
_COND = {(c.row, c.col, c.predicate): c for c in ALL_CONDITIONS}


class LevelError(ValueError):
    pass


class EnvError(RuntimeError):
    pass


class Form(str, enum.Enum):
    SMALL = "small"
    BIG = "big"
    FIRE = "fire"


_DEGRADE = {Form.FIRE: Form.BIG, Form.BIG: Form.SMALL}


class EnemyKind(str, enum.Enum):
    WALKER = "walker"
    FLYER = "flyer"


class Terminal(str, enum.Enum):
    NONE = "None"
    REACHED_FINISH = "ReachedFinish"
    DIED = "Died"
    TIMED_OUT = "TimedOut"


@dataclass(frozen=True)
class EnemySpawn:
    kind: EnemyKind
    row: int
    col: int


@dataclass(frozen=True)
class Level:
    rows: tuple[str, ...]
    start_row: int
    start_col: int
    finish_col: int
    tick_limit: int
    enemies: tuple[EnemySpawn, ...] = ()
    form: Form = Form.FIRE
    name: str = "level"

    @property
    def height(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        return len(self.rows[0])

    @property
    def direction(self) -> int:
        return 1 if self.finish_col > self.start_col else -1

    def solid(self, row: int, col: int) -> bool:
        """True for Solid cells; everything outside the grid is open."""
        if 0 <= row < len(self.rows) and 0 <= col < len(self.rows[0]):
            return self.rows[row][col] == "#"
        return False

    def blocked(self, row: int, col: int) -> bool:
        """Movement test: Solid cells and the left/right grid borders block."""
        if col < 0 or col >= len(self.rows[0]):
            return True
        return 0 <= row < len(self.rows) and self.rows[row][col] == "#"


_GLYPHS = set(".#MFew")


def load_level(text: str, name: str = "level") -> Level:
    """Parse the ASCII level format (``ticks=<N>`` header, then grid rows)."""
    lines = text.replace("\r\n", "\n").split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise LevelError("empty level")
    header = {}
    for item in lines[0].split():
        key, sep, value = item.partition("=")
        if not sep:
            raise LevelError(f"malformed header item {item!r}")
        header[key] = value
    if "ticks" not in header:
        raise LevelError("header must define ticks=<N>")
    try:
        tick_limit = int(header["ticks"])
    except ValueError:
        raise LevelError(f"ticks must be an integer, got {header['ticks']!r}") from None
    try:
        form = Form(header.get("form", "fire"))
    except ValueError:
        raise LevelError(f"unknown form {header['form']!r}") from None

    grid = lines[1:]
    if not grid:
        raise LevelError("level has no rows")
    width = len(grid[0])
    start = None
    finish_cols = set()
    enemies = []
    rows = []
    for r, line in enumerate(grid):
        if len(line) != width:
            raise LevelError(f"row {r} has width {len(line)}, expected {width}")
        out = []
        for c, ch in enumerate(line):
            if ch not in _GLYPHS:
                raise LevelError(f"unknown glyph {ch!r} at {r},{c}")
            if ch == "M":
                if start is not None:
                    raise LevelError(f"multiple starts: {start} and {(r, c)}")
                start = (r, c)
            elif ch == "F":
                finish_cols.add(c)
            elif ch == "e":
                enemies.append(EnemySpawn(EnemyKind.WALKER, r, c))
            elif ch == "w":
                enemies.append(EnemySpawn(EnemyKind.FLYER, r, c))
            out.append("#" if ch == "#" else ("F" if ch == "F" else "."))
        rows.append("".join(out))
    if start is None:
        raise LevelError("missing start 'M'")
    if not finish_cols:
        raise LevelError("missing finish 'F'")
    if len(finish_cols) > 1:
        raise LevelError(f"finish markers in several columns: {sorted(finish_cols)}")
    finish_col = finish_cols.pop()
    sr, sc = start
    if finish_col == sc:
        raise LevelError("finish column coincides with the start column")
    if not any(rows[r][sc] == "#" for r in range(sr + 1, len(rows))):
        raise LevelError(f"spawn at {sr},{sc} is over a hole")
    if tick_limit < width:
        raise LevelError(f"ticks={tick_limit} is below the level width {width}")
    return Level(tuple(rows), sr, sc, finish_col, tick_limit, tuple(enemies), form, name)


def read_level(path: Union[str, Path]) -> Level:
    p = Path(path)
    return load_level(p.read_text(encoding="utf-8"), name=p.stem)


class AgentState(NamedTuple):
    row: int
    col: int
    form: Form
    vy: int = 0
    grounded: bool = True
    crouching: bool = False
    facing: int = 1
    hurt_count: int = 0
    alive: bool = True

    @property
    def height(self) -> int:
        return 1 if self.form is Form.SMALL or self.crouching else 2


class Enemy(NamedTuple):
    id: int
    kind: EnemyKind
    row: int
    col: int
    alive: bool = True
    phase: int = 0
    base_row: int = 0
    direction: int = -1


class Projectile(NamedTuple):
    row: int
    col: int
    direction: int


@dataclass(frozen=True)
class EnvState:
    level: Level
    agent: AgentState
    enemies: tuple[Enemy, ...]
    projectiles: tuple[Projectile, ...] = ()
    tick: int = 0
    kills: int = 0
    despawned: int = 0
    max_progress: int = 0
    terminal: Terminal = Terminal.NONE

    @property
    def initial_enemy_count(self) -> int:
        return len(self.level.enemies)

    @property
    def live_enemies(self) -> int:
        return sum(1 for e in self.enemies if e.alive)


def initial_state(level: Level) -> EnvState:
    enemies = tuple(
        Enemy(i, s.kind, s.row, s.col, True, 0, s.row, -1) for i, s in enumerate(level.enemies)
    )
    agent = AgentState(level.start_row, level.start_col, level.form, facing=level.direction)
    agent = agent._replace(grounded=level.solid(agent.row + 1, agent.col))
    return EnvState(level, agent, enemies)


def feasible_actions(state: EnvState) -> frozenset[Action]:
    """Actions whose actuation would have an effect this tick."""
    level, a = state.level, state.agent
    out = {Action.WALK_RIGHT, Action.WALK_LEFT}
    if level.blocked(a.row, a.col + 1):
        out.discard(Action.WALK_RIGHT)
    if level.blocked(a.row, a.col - 1):
        out.discard(Action.WALK_LEFT)
    if level.solid(a.row + 1, a.col):
        out.add(Action.JUMP)
    if a.form is not Form.SMALL:
        out.add(Action.CROUCH)
    live_shots = len(state.projectiles)
    if a.form is Form.FIRE and live_shots < MAX_PROJECTILES:
        out.add(Action.SHOOT)
    return frozenset(out)


def _sign(x: int) -> int:
    return (x > 0) - (x < 0)


def step(state: EnvState, action: Optional[Action]) -> EnvState:
    """Advance the world by one tick."""
    if state.terminal is not Terminal.NONE:
        raise EnvError(f"cannot step a terminal state ({state.terminal.value})")
    level = state.level
    a = state.agent
    prev_row, prev_col = a.row, a.col
    row, col, vy, facing = a.row, a.col, a.vy, a.facing
    form = a.form
    projectiles = list(state.projectiles)

    # (1) action
    if action is Action.WALK_RIGHT or action is Action.WALK_LEFT:
        d = 1 if action is Action.WALK_RIGHT else -1
        facing = d
        # a tall agent ducks into a low passage, so only the lower cell must be free
        if not level.blocked(row, col + d):
            col += d
    crouching = form is not Form.SMALL and (action is Action.CROUCH or level.solid(row - 1, col))
    height = 1 if form is Form.SMALL or crouching else 2
    if action is Action.JUMP:
        if level.solid(row + 1, col):
            vy = JUMP_VELOCITY
    elif action is Action.SHOOT:
        if form is Form.FIRE and len(projectiles) < MAX_PROJECTILES:
            projectiles.append(Projectile(row, col, facing))

    # (2) vertical physics
    if vy > 0:
        for _ in range(vy):
            if level.solid(row - height, col):
                vy = 0
                break
            row -= 1
        vy = max(vy - 1, -1) if vy > 0 else 0
    elif level.solid(row + 1, col):
        vy = 0
    else:
        vy = max(vy - 1, -1)
        for _ in range(-vy):
            if level.solid(row + 1, col):
                break
            row += 1
    grounded = level.solid(row + 1, col)
    if grounded and vy < 0:
        vy = 0
    crouching = form is not Form.SMALL and (action is Action.CROUCH or level.solid(row - 1, col))

    enemies = list(state.enemies)
    kills = state.kills
    despawned = state.despawned

    def enemy_at(r: int, c: int) -> Optional[int]:
        for k, e in enumerate(enemies):
            if e.alive and e.row == r and e.col == c:
                return k
        return None

    # (3) projectiles
    moved = []
    for p in projectiles:
        pc = p.col
        gone = False
        for _ in range(PROJECTILE_SPEED):
            pc += p.direction
            if level.blocked(p.row, pc):
                gone = True
                break
            k = enemy_at(p.row, pc)
            if k is not None:
                enemies[k] = enemies[k]._replace(alive=False)
                kills += 1
                gone = True
                break
        if not gone:
            moved.append(Projectile(p.row, pc, p.direction))
    projectiles = moved

    # (4) enemies
    t = state.tick
    old_pos = {e.id: (e.row, e.col) for e in enemies}
    for k, e in enumerate(enemies):
        if not e.alive:
            continue
        if e.kind is EnemyKind.WALKER:
            if not level.solid(e.row + 1, e.col):
                e = e._replace(row=e.row + 1)
                if e.row >= level.height:
                    e = e._replace(alive=False)
                    despawned += 1
            elif (t + 1) % WALKER_PERIOD == 0:
                d = _sign(col - e.col) or e.direction
                if level.blocked(e.row, e.col + d):
                    d = -d
                if not level.blocked(e.row, e.col + d):
                    e = e._replace(col=e.col + d)
                e = e._replace(direction=d)
        else:
            phase = e.phase + 1
            ec = e.col
            if (t + 1) % FLYER_DRIFT_PERIOD == 0:
                ec += _sign(col - e.col)
            e = e._replace(phase=phase, col=ec, row=e.base_row - FLYER_WAVE[phase % len(FLYER_WAVE)])
        enemies[k] = e

    survivors = []
    for p in projectiles:
        k = enemy_at(p.row, p.col)
        if k is not None:
            enemies[k] = enemies[k]._replace(alive=False)
            kills += 1
        else:
            survivors.append(p)
    projectiles = survivors

    # (5) contacts
    alive = True
    hurt = a.hurt_count
    body = {(row - k, col) for k in range(height)}
    for k, e in enumerate(enemies):
        if not e.alive:
            continue
        cell = (e.row, e.col)
        if cell == (row, col) and prev_row < e.row:
            enemies[k] = e._replace(alive=False)
            kills += 1
            continue
        ore, oce = old_pos[e.id]
        crossed = (
            e.row == ore
            and col != prev_col
            and any(r == e.row for r, _ in body)
            and oce == col
            and e.col == prev_col
        )
        if cell in body or crossed:
            enemies[k] = e._replace(alive=False)
            despawned += 1
            hurt += 1
            if form is Form.SMALL:
                alive = False
                break
            form = _DEGRADE[form]
            height = 1 if form is Form.SMALL or crouching else 2
            body = {(row - j, col) for j in range(height)}

    # (6) falling out of the world, (7) finish and clock
    if row >= level.height:
        alive = False
    progress = max(state.max_progress, (col - level.start_col) * level.direction)
    terminal = Terminal.NONE
    if not alive:
        terminal = Terminal.DIED
    elif col == level.finish_col:
        terminal = Terminal.REACHED_FINISH
    next_tick = t + 1
    if terminal is Terminal.NONE and next_tick >= level.tick_limit:
        terminal = Terminal.TIMED_OUT

    agent = AgentState(row, col, form, vy, grounded, crouching, facing, hurt, alive)
    return EnvState(
        level, agent, tuple(enemies), tuple(projectiles), next_tick, kills, despawned, progress, terminal
    )


def observed_conditions(state: EnvState) -> frozenset[ConditionId]:
    """The true conditions of the 5x5 receptive field around the agent."""
    level, a = state.level, state.agent
    enemy_cells = {(e.row, e.col) for e in state.enemies if e.alive}
    height, width = level.height, level.width
    out = []
    for i in range(FIELD_SIZE):
        r = a.row - _HALF + i
        for j in range(FIELD_SIZE):
            c = a.col - _HALF + j
            if (r, c) in enemy_cells:
                out.append(_COND[(i, j, Predicate.ENEMY)])
            if c < 0 or c >= width or r >= height:
                out.append(_COND[(i, j, Predicate.OBSTACLE)])
            elif r >= 0 and level.rows[r][c] == "#":
                out.append(_COND[(i, j, Predicate.OBSTACLE)])
    return frozenset(out)


def observe(state: EnvState) -> Blackboard:
    return Blackboard(observed_conditions(state), feasible_actions(state))


@dataclass(frozen=True)
class FitnessWeights:
    progress: float = 0.90
    kill: float = 0.05
    time: float = 0.04
    hurt: float = 0.02
    cap: float = 0.99

    def __post_init__(self):
        for name in ("progress", "kill", "time", "hurt", "cap"):
            if getattr(self, name) < 0:
                raise ValueError(f"fitness weight {name} must be non-negative")


def evaluate_fitness(state: EnvState, weights: FitnessWeights = FitnessWeights()) -> float:
    """Goal-satisfaction score in [0, 1]; exactly 1 only at the finish."""
    if state.terminal is Terminal.REACHED_FINISH:
        return 1.0
    level = state.level
    span = abs(level.finish_col - level.start_col)
    score = (
        weights.progress * state.max_progress / span
        + weights.kill * state.kills / max(1, state.initial_enemy_count)
        - weights.hurt * state.agent.hurt_count
    )
    return min(max(score, 0.0), weights.cap)


class TraceStep(NamedTuple):
    tick: int
    action: Optional[Action]
    gamma: float
    conditions: frozenset  # observation the tree was ticked with

    def record(self) -> dict:
        return {"t": self.tick, "a": self.action.value if self.action else None, "g": self.gamma}


@dataclass
class Episode:
    trace: list[TraceStep]
    final: EnvState
    initial_gamma: float = 0.0

    @property
    def gamma(self) -> float:
        return self.trace[-1].gamma if self.trace else self.initial_gamma

    @property
    def terminal(self) -> Terminal:
        return self.final.terminal

    def trace_lines(self) -> str:
        return "".join(json.dumps(s.record()) + "\n" for s in self.trace)


def run_episode(
    tree: Optional[BehaviorTree],
    level: Level,
    seed: int = 0,
    weights: FitnessWeights = FitnessWeights(),
    frames: Optional[list[str]] = None,
) -> Episode:
    """Tick ``tree`` against ``level`` until the episode ends.

    ``tree=None`` runs the agent with no actions at all.  The simulator has
    no stochastic elements, so ``seed`` does not change the outcome.
    """
    state = initial_state(level)
    g0 = evaluate_fitness(state, weights)
    trace: list[TraceStep] = []
    while state.terminal is Terminal.NONE:
        bb = observe(state)
        if tree is not None:
            tick_root(tree, bb)
        if frames is not None:
            frames.append(render_ascii(state))
        t = state.tick
        state = step(state, bb.requested)
        trace.append(TraceStep(t, bb.requested, evaluate_fitness(state, weights), bb.conditions))
    if frames is not None:
        frames.append(render_ascii(state))
    return Episode(trace, state, g0)


def run_actions(level: Level, actions: Iterable[Optional[Action]], weights=FitnessWeights()):
    """Replay a fixed action sequence, yielding every intermediate state."""
    state = initial_state(level)
    yield state
    for action in actions:
        if state.terminal is not Terminal.NONE:
            return
        state = step(state, action)
        yield state


def render_ascii(state: EnvState) -> str:
    level, a = state.level, state.agent
    grid = [list(r) for r in level.rows]
    for p in state.projectiles:
        if 0 <= p.row < level.height and 0 <= p.col < level.width:
            grid[p.row][p.col] = "*"
    for e in state.enemies:
        if e.alive and 0 <= e.row < level.height and 0 <= e.col < level.width:
            grid[e.row][e.col] = "e" if e.kind is EnemyKind.WALKER else "w"
    for k in range(a.height):
        r = a.row - k
        if a.alive and 0 <= r < level.height and 0 <= a.col < level.width:
            grid[r][a.col] = "M" if k == 0 else "m"
    head = f"t={state.tick} form={a.form.value} hurts={a.hurt_count} kills={state.kills}"
    return head + "\n" + "\n".join("".join(r) for r in grid)
