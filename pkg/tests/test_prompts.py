import pytest

from tactic_expert.errors import ValidationError
from tactic_expert.prompts import (GRAPH_TOKEN, RESPONSE_HEADER, RESPONSE_PREFIX, TASKS, PromptContext,
                                   context_from_sequence, render_prompt)
from tactic_expert.synth import generate, template


@pytest.fixture
def ctx():
    return context_from_sequence(generate(template(0), 6, seed=0), 4)


def response(text):
    return text.rstrip().split("\n")[-1]


def test_node_response(ctx):
    assert response(render_prompt("node", ["p7", "p3", "p1"], ctx)) == f"{RESPONSE_PREFIX} p7, p3, p1."


def test_link_yes_and_no(ctx):
    assert response(render_prompt("link", (True, ["p2", "p5"]), ctx)) == f"{RESPONSE_PREFIX} yes, p2, p5."
    assert response(render_prompt("link", (False, ["p2"]), ctx)) == f"{RESPONSE_PREFIX} no."


def test_graph_response(ctx):
    assert response(render_prompt("graph", True, ctx)) == f"{RESPONSE_PREFIX} yes."
    assert response(render_prompt("graph", False, ctx)) == f"{RESPONSE_PREFIX} no."


def test_empty_ranking_rejected(ctx):
    with pytest.raises(ValidationError):
        render_prompt("node", [], ctx)
    with pytest.raises(ValidationError):
        render_prompt("link", (True, []), ctx)


def test_graph_needs_bool(ctx):
    with pytest.raises(ValidationError):
        render_prompt("graph", "yes", ctx)


def test_unknown_task(ctx):
    with pytest.raises(ValidationError):
        render_prompt("edge", [], ctx)


@pytest.mark.parametrize("task,pred", [("node", ["p1"]), ("link", (True, ["p1"])), ("graph", True)])
def test_four_blocks(ctx, task, pred):
    blocks = render_prompt(task, pred, ctx).rstrip("\n").split("\n\n")
    assert len(blocks) == 4
    assert blocks[0].split(":")[0].endswith("Task")
    assert blocks[1].startswith("Input: ") and blocks[2].startswith("Question: ")
    assert blocks[3].startswith(RESPONSE_HEADER + "\n" + RESPONSE_PREFIX)


def test_slices_listed(ctx):
    text = render_prompt("node", ["p1"], ctx)
    assert "with 5 historical consecutive time slices" in text
    assert text.count(GRAPH_TOKEN) == 5
    assert len(ctx.players) == 10
    for _, pid, info in ctx.players:
        assert f"{pid} {info}" in text


def test_graph_uses_single_token(ctx):
    assert render_prompt("graph", True, ctx).count(GRAPH_TOKEN) == 1


def test_context_range():
    seq = generate(template(1), 4, seed=0)
    with pytest.raises(ValidationError):
        context_from_sequence(seq, 4)
    with pytest.raises(ValidationError):
        render_prompt("node", ["p1"], PromptContext([]))


def test_tasks():
    assert TASKS == ("node", "link", "graph")
