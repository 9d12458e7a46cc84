"""Text rendering of the three downstream-task prompts.

Each prompt has four blocks: the task title, Input, Question and the
response line, which always opens with RESPONSE_PREFIX.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ValidationError

RESPONSE_PREFIX = "Based on the provided information,"
RESPONSE_HEADER = "TacticExpert Response:"
GRAPH_TOKEN = "<graph>"

_GUIDE_NODE = ("Analyze the given time and player information thoroughly to generate the prediction. "
               "Follow a step-by-step approach to avoid incorrect associations.")
_GUIDE = ("Analyze the time slice based on the provided time and player information, then generate predictions. "
          "Think step by step to avoid incorrect assumptions.")

TEMPLATES = {
    "node": {
        "title": "Node Classification Task: Who is most likely to hold the ball at a specific moment?",
        "input": ("Given a Graph Transformer encoding graph with {n_slices} historical consecutive time slices: "
                  "[{slices}], with player node information on the field described as [{players}]."),
        "question": ("Starting from the last time slice, who is most likely to have possession in the next "
                     "{horizon} time slices? Arrange in order from most likely to least likely, in the format "
                     "\"{{player_id}}\" separated by commas. Please answer strictly according to the answer "
                     "template. " + _GUIDE_NODE),
    },
    "link": {
        "title": "Link Prediction Task: Will the current ball handler pass the ball? "
                 "To whom is s/he most likely to pass?",
        "input": ("Given the Graph Transformer encoded graphs for {n_slices} time slices: [{slices}], and player "
                  "node information on the field described as [{players}]."),
        "question": ("Starting from the last time slice, will the player with the highest probability of holding "
                     "the ball pass it? If so, to whom? Rank from most likely to least likely, in the format "
                     "\"{{yes}} or {{no}}, {{player_id}}\", separated by commas. " + _GUIDE),
    },
    "graph": {
        "title": "Graph Classification Task: Will the ball handler attempt a shot at a specific moment?",
        "input": ("Given the Graph Transformer encoded graph at {timestamp}: " + GRAPH_TOKEN + ", and player node "
                  "information on the field described as [{players}]."),
        "question": ("Starting from this time slice, will the player with the highest probability of holding the "
                     "ball in the next {horizon} time slices take a shot? Answer in the format "
                     "\"{{yes}} or {{no}}\". " + _GUIDE),
    },
}

TASKS = tuple(TEMPLATES)


@dataclass
class PromptContext:
    timestamps: list  # one per time slice, oldest first
    players: list = field(default_factory=list)  # (timestamp, player_id, info) triples
    horizon: int = 1


def _fmt_time(t) -> str:
    return f"{t:.2f}" if isinstance(t, float) else str(t)


def player_information(frame) -> str:
    side = "offense" if frame.team else "defense"
    hx, hy, _ = frame.head
    return (f"team={side} position={frame.position} x={hx:.2f} y={hy:.2f} "
            f"speed={frame.speed_mps:.2f} ball={'yes' if frame.has_ball else 'no'}")


def context_from_sequence(seq, t_end: int | None = None, horizon: int = 1) -> PromptContext:
    """Slices 0..t_end of a GameSequence; the player list describes slice t_end."""
    t_end = seq.T - 1 if t_end is None else t_end
    if not 0 <= t_end < seq.T:
        raise ValidationError(f"slice {t_end} outside [0, {seq.T})")
    stamps = [seq.frames[t][0].relative_time for t in range(t_end + 1)]
    last = seq.frames[t_end]
    players = [(last[0].relative_time, f.id, player_information(f)) for f in last]
    return PromptContext(stamps, players, horizon)


def _response(task: str, predictions) -> str:
    if task == "graph":
        if not isinstance(predictions, bool):
            raise ValidationError("graph task expects a yes/no boolean")
        return f"{RESPONSE_PREFIX} {'yes' if predictions else 'no'}."
    if task == "node":
        ranking = list(predictions)
        if not ranking:
            raise ValidationError("node task needs a non-empty ranking")
        return f"{RESPONSE_PREFIX} {', '.join(map(str, ranking))}."
    will_pass, ranking = predictions
    ranking = list(ranking)
    if not will_pass:
        return f"{RESPONSE_PREFIX} no."
    if not ranking:
        raise ValidationError("link task answered yes needs a non-empty ranking")
    return f"{RESPONSE_PREFIX} yes, {', '.join(map(str, ranking))}."


def render_prompt(task: str, predictions, context: PromptContext) -> str:
    """Fill one template.

    ``predictions``: node -> ranked player ids; link -> (will_pass, ranked ids);
    graph -> bool.
    """
    if task not in TEMPLATES:
        raise ValidationError(f"unknown task {task!r}; expected one of {TASKS}")
    if not context.timestamps:
        raise ValidationError("context has no time slices")
    tmpl = TEMPLATES[task]
    if task == "graph":
        players = ", ".join(f"{pid} {info}" for _, pid, info in context.players)
    else:
        players = " ".join(f"{_fmt_time(ts)} {pid} {info}" for ts, pid, info in context.players)
    fields = {
        "n_slices": len(context.timestamps),
        "slices": ", ".join(f"{_fmt_time(ts)} {GRAPH_TOKEN}" for ts in context.timestamps),
        "players": players,
        "horizon": context.horizon,
        "timestamp": _fmt_time(context.timestamps[-1]),
    }
    blocks = [
        tmpl["title"],
        "Input: " + tmpl["input"].format(**fields),
        "Question: " + tmpl["question"].format(**fields),
        RESPONSE_HEADER + "\n" + _response(task, predictions),
    ]
    return "\n\n".join(blocks) + "\n"
