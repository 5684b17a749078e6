import random

import pytest

from btforge.env import FitnessWeights, TraceStep, load_level, run_episode
from btforge.genetics import GpConfig
from btforge.learning import (
    ConditionDelta,
    EpisodeCache,
    LearnerConfig,
    compose_condition_tree,
    failure_point,
    learn,
    learn_bt_gp,
    learn_single_action,
    monitor_window,
    substream,
)
from btforge.tree import (
    Action,
    Blackboard,
    ConditionId,
    NodeType,
    Predicate,
    Selector,
    Sequence,
    Status,
    act,
    cond,
    inv,
    is_valid,
    sel,
    seq,
    tick_root,
)

from conftest import flat_level, flat_level_text

E = lambda r, c: ConditionId(r, c, Predicate.ENEMY)  # noqa: E731
O = lambda r, c: ConditionId(r, c, Predicate.OBSTACLE)  # noqa: E731


def trace_of(gammas, conds=None):
    conds = conds or [frozenset()] * len(gammas)
    return [TraceStep(t, None, g, c) for t, (g, c) in enumerate(zip(gammas, conds))]


def identity(t):
    return t


def test_monitor_window_verdicts():
    assert monitor_window(trace_of([0.1, 0.2, 0.3]), tau=3)[0]
    assert not monitor_window(trace_of([0.3, 0.3, 0.3]), tau=3, initial_gamma=0.3)[0]
    assert not monitor_window(trace_of([0.1, 0.2, 0.2, 0.2]), tau=2)[0]
    with pytest.raises(ValueError):
        monitor_window([], tau=3)


def test_monitor_window_endpoint_net_change():
    c = O(2, 3)
    conds = [frozenset({c}), frozenset(), frozenset({c}), frozenset({E(1, 1)})]
    _, delta = monitor_window(trace_of([0, 0, 0, 0], conds[:3]), tau=3)
    assert not delta
    _, delta = monitor_window(trace_of([0, 0, 0, 0], conds), tau=4)
    assert delta.became_true == {E(1, 1)} and delta.became_false == {c}
    assert not (delta.became_true & delta.became_false)
    assert (delta.window_start, delta.window_end) == (0, 3)


def test_compose_examples():
    t = compose_condition_tree(ConditionDelta(frozenset({O(2, 3)}), frozenset(), 0, 1))
    assert t == seq(cond("obstacle", 2, 3))
    t = compose_condition_tree(ConditionDelta(frozenset(), frozenset({E(2, 1)}), 0, 1))
    assert t == seq(inv(cond("enemy", 2, 1)))
    with pytest.raises(ValueError):
        compose_condition_tree(ConditionDelta(frozenset(), frozenset(), 0, 0))


def test_compose_matches_snapshot_exactly():
    delta = ConditionDelta(frozenset({E(2, 3)}), frozenset({O(1, 1)}), 0, 5)
    t = compose_condition_tree(delta)
    assert t == seq(cond("enemy", 2, 3), inv(cond("obstacle", 1, 1)))
    others = [O(0, 0), E(4, 4)]
    for e23 in (False, True):
        for o11 in (False, True):
            for noise in (False, True):
                truth = set(others if noise else [])
                if e23:
                    truth.add(E(2, 3))
                if o11:
                    truth.add(O(1, 1))
                got = tick_root(t, Blackboard(truth))
                assert (got is Status.SUCCESS) == (e23 and not o11)


def test_compose_sorted_order():
    delta = ConditionDelta(frozenset({O(3, 1), E(1, 2), O(1, 2)}), frozenset({E(0, 4), O(0, 1)}), 0, 1)
    t = compose_condition_tree(delta)
    from btforge.text import format_compact

    assert format_compact(t) == (
        "(seq (cond enemy@1,2) (cond obstacle@1,2) (cond obstacle@3,1)"
        " (inv (cond obstacle@0,1)) (inv (cond enemy@0,4)))"
    )


def test_greedy_walks_right_on_flat_level():
    lv = flat_level(width=15)
    cache = EpisodeCache(lv, 0, FitnessWeights())
    got = learn_single_action(identity, cache.fitness(None), cache, LearnerConfig())
    assert got == act("right")
    # oracle: the episode progresses one column per tick
    ep = run_episode(got, lv)
    assert [s.gamma for s in ep.trace][:3] == pytest.approx([0.9 * k / 12 for k in (1, 2, 3)])


def test_greedy_walks_left_when_finish_is_left():
    text = "ticks=40\nF..........\nF........M.\n###########\n###########\n"
    lv = load_level(text)
    cache = EpisodeCache(lv, 0, FitnessWeights())
    tried = []

    class Spy(EpisodeCache):
        def fitness(self, tree):
            tried.append(tree)
            return cache.fitness(tree)

    spy = Spy(lv, 0, FitnessWeights())
    got = learn_single_action(identity, cache.fitness(None), spy, LearnerConfig())
    assert got == act("left")
    assert tried == [act("right"), act("jump"), act("shoot"), act("left")]


def test_greedy_returns_none_when_nothing_helps():
    lv = flat_level(width=15)
    cache = EpisodeCache(lv, 0, FitnessWeights())
    dead_end = lambda t: sel(act("crouch"), t)  # noqa: E731  crouch always wins
    assert learn_single_action(dead_end, cache.fitness(None), cache, LearnerConfig()) is None


def test_gp_converges_on_seeded_population():
    lv = flat_level(width=15)
    cache = EpisodeCache(lv, 0, FitnessWeights())
    rng = random.Random(0)
    initial = [seq(act("right"))] + [seq(cond("enemy", 0, 0), cond("enemy", 1, 1))] * 7
    out = learn_bt_gp(identity, 0.0, cache, LearnerConfig(gp=GpConfig(population_size=8)), rng, initial)
    assert out.improved and out.generations == 0
    assert out.tree == seq(act("right"))


def test_gp_is_deterministic():
    lv = load_level(flat_level_text(width=15, extra={(1, 6): "#", (0, 6): "#"}))
    cfg = LearnerConfig(gp=GpConfig(population_size=8, max_generations=4))
    results = []
    for _ in range(2):
        cache = EpisodeCache(lv, 0, FitnessWeights())
        results.append(learn_bt_gp(identity, 0.5, cache, cfg, substream(3, "gp")).tree)
    assert results[0] == results[1]


def test_gp_exhausts_without_actions():
    lv = flat_level(width=15)
    cache = EpisodeCache(lv, 0, FitnessWeights())
    pool = frozenset({NodeType.SEQUENCE, NodeType.SELECTOR, NodeType.CONDITION})
    cfg = LearnerConfig(gp=GpConfig(population_size=6, max_generations=3, node_pool=pool))
    out = learn_bt_gp(identity, 0.0, cache, cfg, random.Random(1))
    assert not out.improved and out.fitness == 0


def test_trivial_level_single_action():
    lv = load_level("ticks=10\n....F.\n...MF.\n######\n")
    result = learn(lv, LearnerConfig())
    assert result.tree == act("right")
    assert result.increments == 0 and result.solved
    assert result.gp_calls == 0


def test_finish_left_learned():
    lv = load_level("ticks=40\nF..........\nF........M.\n###########\n###########\n")
    result = learn(lv, LearnerConfig())
    assert result.tree == act("left") and result.solved


def test_guarded_jump_on_obstacle_level():
    lv = load_level(flat_level_text(width=20, ticks=20, extra={(1, 8): "#"}))
    result = learn(lv, LearnerConfig(seed=1))
    assert result.solved
    t = result.tree
    root = t.nodes[t.root]
    assert isinstance(root.kind, Selector)
    assert t.nodes[root.children[-1]].kind.label() == "act right"
    assert len(t) <= 12


def test_learning_invariants():
    lv = load_level(flat_level_text(width=24, ticks=30, extra={(1, 7): "#", (1, 15): "#", (0, 15): "#"}))
    result = learn(lv, LearnerConfig(seed=5, prune=False))
    assert result.solved
    gammas = [p.gamma for p in result.phases]
    assert all(a < b for a, b in zip(gammas, gammas[1:]))
    for i, tree in enumerate(result.history):
        assert is_valid(tree)
        spine, node = 0, tree.nodes[tree.root]
        while isinstance(node.kind, Selector) and len(node.children) == 2 and isinstance(tree.nodes[node.children[0]].kind, Sequence):
            spine += 1
            node = tree.nodes[node.children[1]]
        assert spine == i
    assert result.gp_calls == 0  # all phases greedy
    assert result.unpruned == result.tree
    t0_gamma = run_episode(result.history[0], lv).gamma
    assert result.gamma >= t0_gamma


def test_learn_is_deterministic():
    from btforge.cli import bundled_levels
    from btforge.env import read_level

    lv = read_level(bundled_levels()["testbed2"])
    a = learn(lv, LearnerConfig(seed=9))
    b = learn(lv, LearnerConfig(seed=9))
    assert a.tree == b.tree and a.phase_log() == b.phase_log()


def test_failure_point_cases():
    lv = flat_level(width=15)
    assert failure_point(run_episode(act("right"), lv), 60, 1e-3) is None
    idle = run_episode(cond("enemy", 0, 0), lv)
    assert failure_point(idle, 10, 1e-3) == 1  # flat from the start


def test_config_round_trip_and_checks():
    cfg = LearnerConfig(tau=12, seed=2**63, gp=GpConfig(population_size=5))
    assert LearnerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        LearnerConfig(tau=0)
    with pytest.raises(ValueError):
        LearnerConfig(max_phases=0)


def test_phase_log_format():
    import json

    result = learn(flat_level(width=12), LearnerConfig())
    records = [json.loads(line) for line in result.phase_log().splitlines()]
    assert records == [{"phase": 0, "method": "greedy", "gamma": 1.0, "nodes": 1}]


def test_substreams_independent():
    assert substream(1, "gp").random() != substream(1, "mutation").random()
    assert substream(1, "gp").random() == substream(1, "gp").random()
