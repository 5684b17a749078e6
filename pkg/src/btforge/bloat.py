"""Post-hoc anti-bloat control: drop subtrees whose removal costs no fitness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .tree import BehaviorTree, SurgeryError, enumerate_subtrees, remove_subtree


@dataclass
class PruneReport:
    removed: list[tuple[str, int]] = field(default_factory=list)
    initial_nodes: int = 0
    final_nodes: int = 0
    initial_fitness: float = 0.0
    final_fitness: float = 0.0
    oracle_calls: int = 0

    def to_dict(self) -> dict:
        return {
            "removed": [{"subtree": s, "nodes_saved": n} for s, n in self.removed],
            "initial_nodes": self.initial_nodes,
            "final_nodes": self.final_nodes,
            "initial_fitness": self.initial_fitness,
            "final_fitness": self.final_fitness,
        }


def prune(
    tree: BehaviorTree, fitness: Callable[[BehaviorTree], float]
) -> tuple[BehaviorTree, PruneReport]:
    """Breadth-first removal scan, restarted from the top after every commit.

    A removal is kept when the pruned tree scores at least as well as the
    current one.  The root is never a candidate.
    """
    from .text import format_compact

    current = tree
    best = fitness(current)
    report = PruneReport(initial_nodes=len(tree), initial_fitness=best, oracle_calls=1)
    committed = True
    while committed:
        committed = False
        for i in enumerate_subtrees(current)[1:]:
            try:
                candidate = remove_subtree(current, i)
            except SurgeryError:
                continue
            f = fitness(candidate)
            report.oracle_calls += 1
            if f >= best:
                report.removed.append((format_compact(current, i), len(current) - len(candidate)))
                current, best = candidate, f
                committed = True
                break
    report.final_nodes = len(current)
    report.final_fitness = best
    return current, report
