"""Genetic-programming operators over behavior trees.

All operators take an explicit ``random.Random`` so that a run is fully
determined by its seed.
"""

from __future__ import annotations

import enum
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence as Seq, Union

from .tree import (
    ALL_CONDITIONS,
    Action,
    ActionLeaf,
    BehaviorTree,
    ConditionLeaf,
    CONTROL_TYPES,
    Decorator,
    DecoratorPolicy,
    EXECUTION_TYPES,
    NodeType,
    Parallel,
    Selector,
    Sequence,
    Shape,
    labels,
)

DEFAULT_POOL = frozenset(
    {NodeType.SELECTOR, NodeType.SEQUENCE, NodeType.ACTION, NodeType.CONDITION}
)
FULL_POOL = frozenset(NodeType)


class SelectionMethod(str, enum.Enum):
    NAIVE = "naive"
    RANK = "rank"
    DIVERSITY = "diversity"


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 16
    max_generations: int = 12
    crossover_probability: float = 0.5
    anneal_initial_mutations: int = 4
    anneal_decay: float = 0.5
    selection: SelectionMethod = SelectionMethod.RANK
    rank_pc: float = 2 / 3
    elitism: int = 1
    seed: int = 0
    node_pool: frozenset = DEFAULT_POOL
    strict_mutation: bool = False
    max_nodes: int = 200

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be at least 1")
        if self.max_generations < 0:
            raise ValueError("max_generations must be non-negative")
        if not 0 <= self.crossover_probability <= 1:
            raise ValueError("crossover_probability must lie in [0, 1]")
        if self.anneal_initial_mutations < 1:
            raise ValueError("anneal_initial_mutations must be at least 1")
        if not 0 < self.anneal_decay < 1:
            raise ValueError("anneal_decay must lie in (0, 1)")
        if not 0 < self.rank_pc < 1:
            raise ValueError("rank_pc must lie in (0, 1)")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be smaller than population_size")
        if not self.node_pool & EXECUTION_TYPES:
            raise ValueError("node_pool needs at least one execution node type")
        object.__setattr__(self, "selection", SelectionMethod(self.selection))
        object.__setattr__(self, "node_pool", frozenset(NodeType(t) for t in self.node_pool))

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "max_generations": self.max_generations,
            "crossover_probability": self.crossover_probability,
            "anneal_initial_mutations": self.anneal_initial_mutations,
            "anneal_decay": self.anneal_decay,
            "selection": self.selection.value,
            "rank_pc": self.rank_pc,
            "elitism": self.elitism,
            "seed": self.seed,
            "node_pool": sorted(t.value for t in self.node_pool),
            "strict_mutation": self.strict_mutation,
            "max_nodes": self.max_nodes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> GpConfig:
        data = dict(data)
        if "node_pool" in data:
            data["node_pool"] = frozenset(NodeType(t) for t in data["node_pool"])
        return cls(**data)


@dataclass
class Individual:
    tree: BehaviorTree
    fitness: Optional[float] = None
    probability: Optional[float] = None

    def __post_init__(self):
        if self.fitness is not None and not 0 <= self.fitness <= 1:
            raise ValueError(f"fitness {self.fitness} outside [0, 1]")


@dataclass
class Population:
    individuals: list[Individual]
    generation: int = 0

    def __len__(self) -> int:
        return len(self.individuals)

    def trees(self) -> list[BehaviorTree]:
        return [ind.tree for ind in self.individuals]

    def best(self) -> Individual:
        return self.individuals[ranking(self)[0]]


# -- random trees -----------------------------------------------------------

_ACTIONS = tuple(Action)


def random_leaf(rng: random.Random, pool=DEFAULT_POOL, only: Optional[NodeType] = None):
    """A random execution-node kind: leaf type first, then its parameter."""
    types = [t for t in (NodeType.ACTION, NodeType.CONDITION) if t in pool]
    if only is not None:
        types = [only]
    t = rng.choice(types)
    if t is NodeType.ACTION:
        return ActionLeaf(rng.choice(_ACTIONS))
    return ConditionLeaf(rng.choice(ALL_CONDITIONS))


def _random_control(rng: random.Random, pool, n_children: int):
    options = [t for t in (NodeType.SELECTOR, NodeType.SEQUENCE, NodeType.PARALLEL) if t in pool]
    if n_children == 1 and NodeType.DECORATOR in pool:
        options.append(NodeType.DECORATOR)
    if not options:
        options = [NodeType.SELECTOR, NodeType.SEQUENCE]
    t = rng.choice(options)
    if t is NodeType.SELECTOR:
        return Selector()
    if t is NodeType.SEQUENCE:
        return Sequence()
    if t is NodeType.PARALLEL:
        return Parallel(rng.randint(1, n_children))
    return Decorator(rng.choice(tuple(DecoratorPolicy)))


def random_binary_tree(rng: random.Random, pool=DEFAULT_POOL) -> BehaviorTree:
    """A Sequence or Selector (coin flip) over two random leaves."""
    root = Sequence() if rng.random() < 0.5 else Selector()
    return BehaviorTree.from_shape(
        (root, ((random_leaf(rng, pool), ()), (random_leaf(rng, pool), ())))
    )


def random_tree(rng: random.Random, max_nodes: int = 30, pool=FULL_POOL) -> BehaviorTree:
    """A random valid tree with at most ``max_nodes`` nodes (used for testing)."""
    budget = [max(1, max_nodes) - 1]

    def grow(depth: int) -> Shape:
        if budget[0] < 1 or depth > 6 or rng.random() < 0.35 + 0.08 * depth:
            return (random_leaf(rng, pool), ())
        n = min(budget[0], rng.randint(1, 4))
        budget[0] -= n
        kids = tuple(grow(depth + 1) for _ in range(n))
        return (_random_control(rng, pool, n), kids)

    return BehaviorTree.from_shape(grow(0))


# -- operators --------------------------------------------------------------


def _swap(a: BehaviorTree, i: int, b: BehaviorTree, j: int) -> tuple[BehaviorTree, BehaviorTree]:
    sa, sb = a.shape(i), b.shape(j)

    def graft(t: BehaviorTree, at: int, new: Shape) -> Shape:
        def rebuild(k: int) -> Shape:
            if k == at:
                return new
            rec = t.nodes[k]
            return (rec.kind, tuple(rebuild(c) for c in rec.children))

        return rebuild(t.root)

    return (
        BehaviorTree.from_shape(graft(a, i, sb)),
        BehaviorTree.from_shape(graft(b, j, sa)),
    )


def crossover(
    parent_a: BehaviorTree,
    parent_b: BehaviorTree,
    rng: random.Random,
    max_nodes: int = 200,
    retries: int = 10,
) -> tuple[BehaviorTree, BehaviorTree]:
    """Exchange one uniformly chosen subtree of each parent (roots allowed)."""
    for _ in range(retries):
        i = rng.randrange(len(parent_a.nodes))
        j = rng.randrange(len(parent_b.nodes))
        child_a, child_b = _swap(parent_a, i, parent_b, j)
        if len(child_a) <= max_nodes and len(child_b) <= max_nodes:
            return child_a, child_b
    return parent_a, parent_b


def _mutant_kind(kind, n_children: int, rng: random.Random, pool, strict: bool):
    if kind.type in EXECUTION_TYPES:
        return random_leaf(rng, pool, only=kind.type if strict else None)
    return _random_control(rng, pool, n_children)


def mutate(
    tree: BehaviorTree,
    k: int,
    rng: random.Random,
    pool=DEFAULT_POOL,
    strict: bool = False,
) -> BehaviorTree:
    """Replace ``min(k, size)`` distinct nodes by random nodes of the same category.

    Execution nodes become execution nodes and control nodes become control
    nodes that keep the original children.  ``strict`` keeps actions as
    actions and conditions as conditions.
    """
    if k <= 0:
        return tree
    chosen = set(rng.sample(range(len(tree.nodes)), min(k, len(tree.nodes))))
    kinds = {}
    for i in sorted(chosen):
        rec = tree.nodes[i]
        kinds[i] = _mutant_kind(rec.kind, len(rec.children), rng, pool, strict)

    def rebuild(i: int) -> Shape:
        rec = tree.nodes[i]
        return (kinds.get(i, rec.kind), tuple(rebuild(c) for c in rec.children))

    return BehaviorTree.from_shape(rebuild(tree.root))


def anneal_schedule(generation: int, config: GpConfig) -> int:
    """Number of nodes to mutate in ``generation``; decays geometrically to 1."""
    k = config.anneal_initial_mutations * config.anneal_decay ** generation
    return max(1, int(math.floor(k + 0.5)))


# -- selection --------------------------------------------------------------


def ranking(population: Population) -> list[int]:
    """Indices by descending fitness; ties go to the smaller tree, then the earlier index."""
    inds = population.individuals
    return sorted(
        range(len(inds)),
        key=lambda i: (-(inds[i].fitness or 0.0), len(inds[i].tree), i),
    )


def tree_distance(a: BehaviorTree, b: BehaviorTree) -> float:
    """Size of the symmetric difference of node-label multisets over total size."""
    ca, cb = Counter(labels(a)), Counter(labels(b))
    diff = sum(((ca - cb) + (cb - ca)).values())
    return diff / (len(a) + len(b))


def diversity_scores(population: Population) -> list[float]:
    trees = population.trees()
    n = len(trees)
    if n == 1:
        return [0.0]
    dist = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            dist[i][j] = dist[j][i] = tree_distance(trees[i], trees[j])
    return [sum(dist[i]) / (n - 1) for i in range(n)]


Number = Union[float, Fraction]


def selection_probabilities(
    population: Population,
    method: Union[SelectionMethod, str],
    pc: Number = 2 / 3,
    diversity: Optional[Seq[float]] = None,
) -> tuple[list[Number], bool]:
    """Survival probabilities and a flag set when a uniform fallback was used."""
    method = SelectionMethod(method)
    fitness = [ind.fitness for ind in population.individuals]
    if any(f is None for f in fitness):
        raise ValueError("every individual needs a fitness before selection")
    n = len(fitness)
    if n == 0:
        return [], False

    if method is SelectionMethod.NAIVE:
        total = sum(fitness)
        if total <= 0:
            return [1 / n] * n, True
        return [f / total for f in fitness], False

    if method is SelectionMethod.RANK:
        if not 0 < pc < 1:
            raise ValueError("rank-space P_c must lie in (0, 1)")
        one = Fraction(1) if isinstance(pc, Fraction) else 1.0
        probs: list[Number] = [one * 0] * n
        for k, idx in enumerate(ranking(population), start=1):
            probs[idx] = (1 - pc) ** (k - 1) * pc if k < n else (1 - pc) ** (n - 1) * one
        return probs, False

    d = list(diversity) if diversity is not None else diversity_scores(population)
    d_max, f_max = max(d), max(fitness)
    ref_norm = math.hypot(d_max, f_max)
    if ref_norm == 0:
        return [1 / n] * n, True
    raw = [max(0.0, 1 - math.hypot(di - d_max, fi - f_max) / ref_norm) for di, fi in zip(d, fitness)]
    total = sum(raw)
    if total <= 0:
        return [1 / n] * n, True
    return [r / total for r in raw], False


def sample_index(probabilities: Seq[float], rng: random.Random) -> int:
    u = rng.random()
    acc = 0.0
    for i, p in enumerate(probabilities):
        acc += float(p)
        if u < acc:
            return i
    # rounding slack: fall back to the last index with non-zero mass
    return max(i for i, p in enumerate(probabilities) if p > 0)


def select_next_population(
    population: Population,
    probabilities: Seq[float],
    config: GpConfig,
    rng: random.Random,
    mutations: Optional[int] = None,
    mutation_rng: Optional[random.Random] = None,
) -> Population:
    """Elites survive unchanged; the rest are sampled, crossed over and mutated.

    ``mutations`` overrides the annealed mutation count.  Mutation draws from
    ``mutation_rng`` when given, so it can run on its own stream.
    """
    mrng = rng if mutation_rng is None else mutation_rng
    inds = population.individuals
    size = config.population_size
    elite_ids = ranking(population)[: config.elitism]
    nxt = [Individual(inds[i].tree, inds[i].fitness) for i in elite_ids]
    k = anneal_schedule(population.generation, config) if mutations is None else mutations
    while len(nxt) < size:
        a = inds[sample_index(probabilities, rng)].tree
        b = inds[sample_index(probabilities, rng)].tree
        if rng.random() < config.crossover_probability:
            a, b = crossover(a, b, rng, config.max_nodes)
        for child in (a, b):
            if len(nxt) >= size:
                break
            child = mutate(child, k, mrng, config.node_pool, config.strict_mutation)
            nxt.append(Individual(child))
    return Population(nxt, population.generation + 1)


@dataclass
class GpResult:
    best: Individual
    improved: bool
    generations: int
    history: list[float] = field(default_factory=list)
    evaluations: int = 0


def evolve(
    initial: Seq[BehaviorTree],
    fitness_fn: Callable[[BehaviorTree], float],
    config: GpConfig,
    rng: random.Random,
    target: Optional[float] = None,
    mutation_rng: Optional[random.Random] = None,
) -> GpResult:
    """Run generations until the best fitness exceeds ``target`` or the budget ends."""
    population = Population([Individual(t) for t in initial])
    best: Optional[Individual] = None
    history: list[float] = []
    evaluations = 0
    generation = 0
    while True:
        for ind in population.individuals:
            if ind.fitness is None:
                ind.fitness = fitness_fn(ind.tree)
                evaluations += 1
        champion = population.best()
        if best is None or champion.fitness > best.fitness:
            best = Individual(champion.tree, champion.fitness)
        history.append(champion.fitness)
        if target is not None and best.fitness > target:
            return GpResult(best, True, generation, history, evaluations)
        if generation >= config.max_generations:
            break
        if config.selection is SelectionMethod.RANK:
            probs, _ = selection_probabilities(population, config.selection, config.rank_pc)
        else:
            probs, _ = selection_probabilities(population, config.selection)
        for ind, p in zip(population.individuals, probs):
            ind.probability = float(p)
        population = select_next_population(population, probs, config, rng, mutation_rng=mutation_rng)
        generation += 1
    improved = target is None or best.fitness > target
    return GpResult(best, improved, generation, history, evaluations)
