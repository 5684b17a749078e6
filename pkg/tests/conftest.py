import pytest

from btforge.env import load_level


def flat_level_text(width=12, start=1, finish=None, ticks=None, rows=4, extra=None, form="fire"):
    """A level with a two-row floor; ``extra`` maps (row, col) to a glyph."""
    finish = width - 2 if finish is None else finish
    ticks = max(width, 40) if ticks is None else ticks
    grid = [["."] * width for _ in range(rows)]
    for r in (rows - 2, rows - 1):
        grid[r] = ["#"] * width
    for r in range(rows - 2):
        grid[r][finish] = "F"
    grid[rows - 3][start] = "M"
    for (r, c), ch in (extra or {}).items():
        grid[r][c] = ch
    return f"ticks={ticks} form={form}\n" + "\n".join("".join(r) for r in grid) + "\n"


def flat_level(**kw):
    return load_level(flat_level_text(**kw))


@pytest.fixture
def flat():
    return flat_level()


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    name = request.node.name
    notes = []
    yield notes
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed
    detail = "; ".join(notes)
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
