"""Incremental behavior-tree learning: greedy actions first, GP as fallback.

Each phase runs the current tree, finds where its fitness stops improving,
turns the conditions that flipped over the preceding window into a trigger
subtree and learns what to do when that trigger fires.  The increment is
prepended with ``selector(sequence(trigger, behavior), previous_tree)``.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional

from .bloat import PruneReport, prune
from .env import Episode, FitnessWeights, Level, Terminal, TraceStep, run_episode
from .genetics import GpConfig, evolve, random_binary_tree
from .tree import (
    Action,
    BehaviorTree,
    ConditionId,
    act,
    cond,
    inv,
    is_valid,
    sel,
    seq,
)

log = logging.getLogger(__name__)

GREEDY_ORDER = (Action.WALK_RIGHT, Action.JUMP, Action.SHOOT, Action.WALK_LEFT, Action.CROUCH)


def substream(seed: int, name: str) -> random.Random:
    """Independent, named RNG stream derived from the run seed."""
    return random.Random(f"btforge:{seed}:{name}")


@dataclass(frozen=True)
class LearnerConfig:
    tau: int = 60
    epsilon: float = 1e-3
    max_phases: int = 64
    gp: GpConfig = field(default_factory=GpConfig)
    seed: int = 0
    weights: FitnessWeights = field(default_factory=FitnessWeights)
    prune: bool = True

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.max_phases < 1:
            raise ValueError("max_phases must be at least 1")

    def to_dict(self) -> dict:
        w = self.weights
        return {
            "tau": self.tau,
            "epsilon": self.epsilon,
            "max_phases": self.max_phases,
            "seed": self.seed,
            "prune": self.prune,
            "gp": self.gp.to_dict(),
            "weights": {"progress": w.progress, "kill": w.kill, "time": w.time, "hurt": w.hurt, "cap": w.cap},
        }

    @classmethod
    def from_dict(cls, data: dict) -> LearnerConfig:
        data = dict(data)
        gp = GpConfig.from_dict(data.pop("gp", {}))
        weights = FitnessWeights(**data.pop("weights", {}))
        return cls(gp=gp, weights=weights, **data)


class ConditionDelta(NamedTuple):
    became_true: frozenset
    became_false: frozenset
    window_start: int
    window_end: int

    def __bool__(self) -> bool:
        return bool(self.became_true or self.became_false)


def monitor_window(trace: list[TraceStep], tau: int, epsilon: float = 1e-3, initial_gamma: float = 0.0):
    """Verdict over the last ``min(tau, len(trace))`` ticks.

    Returns ``(improving, delta)``.  Fitness is compared from just before the
    window's first tick to after its last tick; conditions are compared
    between the observations at the window's first and last ticks, so flips
    that revert inside the window do not count.
    """
    if not trace:
        raise ValueError("trace must contain at least one step")
    start = max(0, len(trace) - tau)
    g_before = trace[start - 1].gamma if start > 0 else initial_gamma
    improving = trace[-1].gamma - g_before > epsilon
    first, last = trace[start].conditions, trace[-1].conditions
    delta = ConditionDelta(
        frozenset(last - first), frozenset(first - last), trace[start].tick, trace[-1].tick
    )
    return improving, delta


def _cond_key(c: ConditionId):
    return (c.row, c.col, c.predicate.value)


def compose_condition_tree(delta: ConditionDelta) -> BehaviorTree:
    """Sequence that succeeds exactly when the flipped conditions hold their new values."""
    if not delta:
        raise ValueError("cannot build a trigger from an empty condition delta")
    children = [cond(c.predicate, c.row, c.col) for c in sorted(delta.became_true, key=_cond_key)]
    children += [inv(cond(c.predicate, c.row, c.col)) for c in sorted(delta.became_false, key=_cond_key)]
    return seq(*children)


def failure_point(episode: Episode, tau: int, epsilon: float) -> Optional[int]:
    """Index of the observation at which the episode stops doing well.

    That is the tick before the first fitness drop, the arrival tick of the
    first plateau lasting ``tau`` ticks, or the last tick of an episode that
    ended without reaching the goal.  ``None`` when the goal was reached.
    """
    trace = episode.trace
    if episode.terminal is Terminal.REACHED_FINISH:
        return None
    prev = episode.initial_gamma
    for k, s in enumerate(trace):
        if s.gamma < prev - 1e-12:
            return k
        prev = s.gamma
        if k + 1 >= tau:
            improving, _ = monitor_window(trace[: k + 1], tau, epsilon, episode.initial_gamma)
            if not improving:
                level = s.gamma
                q = next(i for i in range(k + 1) if trace[i].gamma >= level - epsilon)
                return min(q + 1, k)
    return len(trace) - 1


class EpisodeCache:
    """Memoized episodes keyed by tree structure for one (level, seed, weights)."""

    def __init__(self, level: Level, seed: int, weights: FitnessWeights):
        self.level = level
        self.seed = seed
        self.weights = weights
        self._cache: dict = {}
        self.misses = 0

    def episode(self, tree: Optional[BehaviorTree]) -> Episode:
        key = None if tree is None else tree.shape()
        ep = self._cache.get(key)
        if ep is None:
            ep = run_episode(tree, self.level, self.seed, self.weights)
            self._cache[key] = ep
            self.misses += 1
        return ep

    def fitness(self, tree: Optional[BehaviorTree]) -> float:
        return self.episode(tree).gamma


Installer = Callable[[BehaviorTree], BehaviorTree]


def _identity(t: BehaviorTree) -> BehaviorTree:
    return t


def learn_single_action(
    install: Installer,
    baseline: float,
    cache: EpisodeCache,
    config: LearnerConfig,
) -> Optional[BehaviorTree]:
    """First action, in fixed order, whose installed tree beats ``baseline``."""
    for action in GREEDY_ORDER:
        candidate = act(action)
        if cache.fitness(install(candidate)) - baseline > config.epsilon:
            return candidate
    return None


@dataclass
class GpOutcome:
    tree: BehaviorTree
    fitness: float
    improved: bool
    generations: int


def learn_bt_gp(
    install: Installer,
    baseline: float,
    cache: EpisodeCache,
    config: LearnerConfig,
    rng: random.Random,
    initial: Optional[list[BehaviorTree]] = None,
    mutation_rng: Optional[random.Random] = None,
) -> GpOutcome:
    """Evolve a small subtree for the insertion point described by ``install``."""
    gp = config.gp
    if initial is None:
        initial = [random_binary_tree(rng, gp.node_pool) for _ in range(gp.population_size)]
    result = evolve(
        initial,
        lambda t: cache.fitness(install(t)),
        gp,
        rng,
        target=baseline + config.epsilon,
        mutation_rng=mutation_rng,
    )
    if not result.improved:
        log.warning("GP budget exhausted without improvement (best %.4f)", result.best.fitness)
    return GpOutcome(result.best.tree, result.best.fitness, result.improved, result.generations)


@dataclass
class PhaseRecord:
    phase: int
    method: str
    gamma: float
    nodes: int

    def to_json(self) -> str:
        return json.dumps({"phase": self.phase, "method": self.method, "gamma": self.gamma, "nodes": self.nodes})


@dataclass
class LearnResult:
    tree: BehaviorTree
    gamma: float
    solved: bool
    phases: list[PhaseRecord]
    unpruned: BehaviorTree
    prune_report: Optional[PruneReport] = None
    gp_calls: int = 0
    attempts: int = 0
    history: list[BehaviorTree] = field(default_factory=list)

    @property
    def increments(self) -> int:
        return len(self.phases) - 1

    def phase_log(self) -> str:
        return "".join(p.to_json() + "\n" for p in self.phases)


def _learn_behavior(install, baseline, cache, config, rngs, counters):
    action = learn_single_action(install, baseline, cache, config)
    if action is not None:
        return action, "greedy", True
    counters["gp"] += 1
    out = learn_bt_gp(install, baseline, cache, config, rngs[0], mutation_rng=rngs[1])
    return out.tree, "gp", out.improved


def learn(level: Level, config: LearnerConfig = LearnerConfig()) -> LearnResult:
    """Grow a tree for ``level`` until it reaches the goal or the phase budget ends."""
    cache = EpisodeCache(level, config.seed, config.weights)
    rngs = (substream(config.seed, "gp"), substream(config.seed, "mutation"))
    counters = {"gp": 0}

    nil_gamma = cache.fitness(None)
    t0, method, improved = _learn_behavior(_identity, nil_gamma, cache, config, rngs, counters)
    tree = t0
    history = [tree]
    gamma = cache.fitness(tree)
    phases = [PhaseRecord(0, method, gamma, len(tree))]
    log.info("phase 0: %s gamma=%.4f nodes=%d", method, gamma, len(tree))

    retreat = 0
    attempts = 0
    while gamma < 1.0 and attempts < config.max_phases:
        attempts += 1
        episode = cache.episode(tree)
        e = failure_point(episode, config.tau, config.epsilon)
        if e is None:
            break
        e -= retreat
        if e < 0:
            log.info("no earlier window left to try; giving up")
            break
        _, delta = monitor_window(episode.trace[: e + 1], config.tau, config.epsilon, episode.initial_gamma)
        if not delta:
            retreat += 1
            continue
        trigger = compose_condition_tree(delta)
        current = tree

        def install(behavior: BehaviorTree, trigger=trigger, current=current) -> BehaviorTree:
            return sel(seq(trigger, behavior), current)

        behavior, method, improved = _learn_behavior(install, gamma, cache, config, rngs, counters)
        candidate = install(behavior)
        new_gamma = cache.fitness(candidate)
        if improved and new_gamma - gamma > config.epsilon:
            tree, gamma = candidate, new_gamma
            history.append(tree)
            phases.append(PhaseRecord(len(phases), method, gamma, len(tree)))
            log.info("phase %d: %s gamma=%.4f nodes=%d", len(phases) - 1, method, gamma, len(tree))
            retreat = 0
        else:
            log.debug("attempt %d at tick %d did not improve; moving the window back", attempts, e)
            retreat += 1

    assert is_valid(tree)
    unpruned = tree
    report = None
    if config.prune:
        tree, report = prune(tree, cache.fitness)
        gamma = cache.fitness(tree)
    return LearnResult(
        tree, gamma, gamma >= 1.0, phases, unpruned, report, counters["gp"], attempts, history
    )
