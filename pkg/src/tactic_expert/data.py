"""Player frames, ball-transition labels and JSONL ingestion.

Coordinates inside a :class:`GameSequence` are expressed relative to the
court midpoint (x along the long side, y along the short side, z up).
Use :func:`recenter` for data captured with the origin at a corner.
"""
from __future__ import annotations

import dataclasses
import json
import math
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DuplicateFrameError, IntegrityError, NumericError, SchemaError

N_PLAYERS = 10
POSITIONS = ("PG", "SG", "SF", "PF", "C", "OTHER")
ID_BUCKETS = 16

FRAME_KEYS = (
    "id",
    "team",
    "position",
    "relative_time",
    "head",
    "headOrientation",
    "hips",
    "foot1",
    "foot2",
    "foot1_at_the_ground",
    "foot2_at_the_ground",
    "speed_mps",
    "has_ball",
)
RECORD_KEYS = ("sequence_id", "frame_index") + FRAME_KEYS
# Sequence-level fields repeated on every line of a sequence; all optional.
OPTIONAL_KEYS = ("tactic_label", "shot", "venue", "date")

# (channel name, width) in encoded order.
CHANNELS = (
    ("id", ID_BUCKETS),
    ("team", 1),
    ("position", len(POSITIONS)),
    ("relative_time", 1),
    ("head", 3),
    ("headOrientation", 2),  # (sin, cos)
    ("hips", 2),
    ("foot1", 2),
    ("foot2", 2),
    ("foot1_at_the_ground", 1),
    ("foot2_at_the_ground", 1),
    ("speed_mps", 1),
    ("has_ball", 1),
)


def _channel_slices():
    out, start = {}, 0
    for name, width in CHANNELS:
        out[name] = slice(start, start + width)
        start += width
    return out, start


CHANNEL_SLICES, FEATURE_WIDTH = _channel_slices()


@dataclass(frozen=True)
class Court:
    length: float = 28.0
    width: float = 15.0

    @property
    def center(self) -> tuple[float, float]:
        return (self.length / 2.0, self.width / 2.0)


@dataclass(frozen=True)
class PlayerFrame:
    id: str
    team: bool
    position: str
    relative_time: float
    head: tuple[float, float, float]
    headOrientation: float
    hips: tuple[float, float]
    foot1: tuple[float, float]
    foot2: tuple[float, float]
    foot1_at_the_ground: bool
    foot2_at_the_ground: bool
    speed_mps: float
    has_ball: bool

    def __post_init__(self):
        if not self.speed_mps >= 0:
            raise DataError(f"player {self.id}: speed_mps must be >= 0, got {self.speed_mps}")

    def to_record(self) -> dict:
        rec = dataclasses.asdict(self)
        for key in ("head", "hips", "foot1", "foot2"):
            rec[key] = list(rec[key])
        return rec


@dataclass(frozen=True)
class BallTransitionTensor:
    """T x N labels: -1 pass, +1 receive, 0 otherwise.

    ``dead_ball[t]`` marks slices where the ball is out of play at t or t-1;
    those rows are all zero.
    """

    values: np.ndarray
    dead_ball: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)
        self.dead_ball.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, BallTransitionTensor):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.dead_ball, other.dead_ball)

    def events(self) -> list[tuple[int, int, int]]:
        """(t, passer, receiver) for every pass recorded in the tensor."""
        out = []
        for t in range(self.values.shape[0]):
            row = self.values[t]
            src = np.flatnonzero(row == -1)
            dst = np.flatnonzero(row == 1)
            if len(src) and len(dst):
                out.append((t, int(src[0]), int(dst[0])))
        return out


@dataclass(frozen=True, eq=False)
class GameSequence:
    sequence_id: str
    frames: tuple[tuple[PlayerFrame, ...], ...]
    transitions: BallTransitionTensor
    tactic_label: int | None = None
    shot: bool | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def N(self) -> int:
        return len(self.frames[0])

    @property
    def player_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.frames[0])

    def holders(self) -> list[int | None]:
        return holders_of(self.frames)

    def __eq__(self, other):
        if not isinstance(other, GameSequence):
            return NotImplemented
        return (
            self.sequence_id == other.sequence_id
            and self.frames == other.frames
            and self.transitions == other.transitions
            and self.tactic_label == other.tactic_label
            and self.shot == other.shot
            and self.metadata == other.metadata
        )


def holders_of(frames: Sequence[Sequence[PlayerFrame]]) -> list[int | None]:
    out = []
    for t, frame in enumerate(frames):
        idx = [n for n, p in enumerate(frame) if p.has_ball]
        if len(idx) > 1:
            raise IntegrityError(f"frame {t}: {len(idx)} players have has_ball=true")
        out.append(idx[0] if idx else None)
    return out


def derive_transitions(seq) -> BallTransitionTensor:
    """Ball transition labels from the per-frame ``has_ball`` flags.

    Accepts a :class:`GameSequence` or a T x N grid of frames.
    """
    frames = seq.frames if isinstance(seq, GameSequence) else seq
    holders = holders_of(frames)
    T, N = len(frames), len(frames[0])
    values = np.zeros((T, N), dtype=np.int8)
    dead = np.zeros(T, dtype=bool)
    dead[0] = holders[0] is None
    for t in range(1, T):
        prev, cur = holders[t - 1], holders[t]
        if prev is None or cur is None:
            dead[t] = True
        elif prev != cur:
            values[t, prev] = -1
            values[t, cur] = 1
    return BallTransitionTensor(values, dead)


def make_sequence(sequence_id, frames, tactic_label=None, shot=None, metadata=None, n_players=N_PLAYERS):
    """Validate a frame grid and wrap it with its derived transitions."""
    frames = tuple(tuple(f) for f in frames)
    if not frames:
        raise DataError(f"sequence {sequence_id!r} has no frames")
    ids = tuple(p.id for p in frames[0])
    if n_players is not None and len(ids) != n_players:
        raise IntegrityError(f"sequence {sequence_id!r}: expected {n_players} players per frame, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise DuplicateFrameError(f"sequence {sequence_id!r}: duplicate player ids in frame 0")
    for t, frame in enumerate(frames):
        if tuple(p.id for p in frame) != ids:
            raise IntegrityError(f"sequence {sequence_id!r}, frame {t}: player set differs from frame 0")
    if tactic_label is not None and not 0 <= tactic_label < 12:
        raise DataError(f"sequence {sequence_id!r}: tactic_label {tactic_label} outside [0, 12)")
    transitions = derive_transitions(frames)
    return GameSequence(
        sequence_id=sequence_id,
        frames=frames,
        transitions=transitions,
        tactic_label=tactic_label,
        shot=shot,
        metadata=dict(metadata or {}),
    )


def recenter(seq: GameSequence, court: Court = Court()) -> GameSequence:
    """Shift corner-origin coordinates so the court midpoint is the origin."""
    cx, cy = court.center

    def shift(p: PlayerFrame) -> PlayerFrame:
        return dataclasses.replace(
            p,
            head=(p.head[0] - cx, p.head[1] - cy, p.head[2]),
            hips=(p.hips[0] - cx, p.hips[1] - cy),
            foot1=(p.foot1[0] - cx, p.foot1[1] - cy),
            foot2=(p.foot2[0] - cx, p.foot2[1] - cy),
        )

    frames = tuple(tuple(shift(p) for p in frame) for frame in seq.frames)
    return dataclasses.replace(seq, frames=frames)


# ---------------------------------------------------------------- JSONL


def _parse_vec(value, width, key, line):
    if not isinstance(value, (list, tuple)) or len(value) != width:
        raise SchemaError(key, line)
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise SchemaError(key, line) from None


def _parse_bool(value, key, line):
    if not isinstance(value, bool):
        raise SchemaError(key, line)
    return value


def _parse_float(value, key, line):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(key, line)
    return float(value)


def _frame_from_record(rec, line) -> PlayerFrame:
    for key in RECORD_KEYS:
        if key not in rec:
            raise SchemaError(key, line)
    if not isinstance(rec["id"], str):
        raise SchemaError("id", line)
    if not isinstance(rec["position"], str):
        raise SchemaError("position", line)
    speed = _parse_float(rec["speed_mps"], "speed_mps", line)
    if speed < 0:
        raise DataError(f"line {line}: speed_mps must be >= 0")
    return PlayerFrame(
        id=rec["id"],
        team=_parse_bool(rec["team"], "team", line),
        position=rec["position"],
        relative_time=_parse_float(rec["relative_time"], "relative_time", line),
        head=_parse_vec(rec["head"], 3, "head", line),
        headOrientation=_parse_float(rec["headOrientation"], "headOrientation", line),
        hips=_parse_vec(rec["hips"], 2, "hips", line),
        foot1=_parse_vec(rec["foot1"], 2, "foot1", line),
        foot2=_parse_vec(rec["foot2"], 2, "foot2", line),
        foot1_at_the_ground=_parse_bool(rec["foot1_at_the_ground"], "foot1_at_the_ground", line),
        foot2_at_the_ground=_parse_bool(rec["foot2_at_the_ground"], "foot2_at_the_ground", line),
        speed_mps=speed,
        has_ball=_parse_bool(rec["has_ball"], "has_ball", line),
    )


def ingest_jsonl(path, n_players=N_PLAYERS) -> list[GameSequence]:
    """Read one-frame-per-line records into validated sequences.

    Sequences come back in order of first appearance; frames are sorted by
    ``frame_index`` and players within a frame by ``id``.
    """
    groups: OrderedDict[str, dict] = OrderedDict()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {line_no}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"line {line_no}: expected a JSON object")
            unknown = set(rec) - set(RECORD_KEYS) - set(OPTIONAL_KEYS)
            if unknown:
                raise DataError(f"line {line_no}: unknown keys {sorted(unknown)}")
            frame = _frame_from_record(rec, line_no)
            seq_id = rec["sequence_id"]
            if not isinstance(seq_id, str):
                raise SchemaError("sequence_id", line_no)
            idx = rec["frame_index"]
            if isinstance(idx, bool) or not isinstance(idx, int) or idx < 0:
                raise SchemaError("frame_index", line_no)
            g = groups.setdefault(seq_id, {"frames": {}, "extra": {}})
            players = g["frames"].setdefault(idx, {})
            if frame.id in players:
                raise DuplicateFrameError(
                    f"line {line_no}: duplicate (sequence_id, frame_index, id) = ({seq_id!r}, {idx}, {frame.id!r})"
                )
            players[frame.id] = frame
            for key in OPTIONAL_KEYS:
                if key in rec:
                    prev = g["extra"].setdefault(key, rec[key])
                    if prev != rec[key]:
                        raise IntegrityError(f"line {line_no}: inconsistent {key!r} within sequence {seq_id!r}")

    sequences = []
    for seq_id, g in groups.items():
        frames = []
        for idx in sorted(g["frames"]):
            players = g["frames"][idx]
            frame = tuple(players[pid] for pid in sorted(players))
            if sum(p.has_ball for p in frame) > 1:
                raise IntegrityError(f"sequence {seq_id!r}, frame_index {idx}: more than one ball holder")
            frames.append(frame)
        extra = g["extra"]
        metadata = {k: str(extra[k]) for k in ("venue", "date") if k in extra}
        label = extra.get("tactic_label")
        if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
            raise DataError(f"sequence {seq_id!r}: tactic_label must be an integer")
        shot = extra.get("shot")
        if shot is not None and not isinstance(shot, bool):
            raise DataError(f"sequence {seq_id!r}: shot must be a boolean")
        sequences.append(make_sequence(seq_id, frames, label, shot, metadata, n_players=n_players))
    return sequences


def write_jsonl(sequences: Iterable[GameSequence], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            extra = {}
            if seq.tactic_label is not None:
                extra["tactic_label"] = int(seq.tactic_label)
            if seq.shot is not None:
                extra["shot"] = bool(seq.shot)
            extra.update({k: seq.metadata[k] for k in ("venue", "date") if k in seq.metadata})
            for t, frame in enumerate(seq.frames):
                for p in frame:
                    rec = {"sequence_id": seq.sequence_id, "frame_index": t}
                    rec.update(p.to_record())
                    rec.update(extra)
                    fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    return path


# ------------------------------------------------------------- encoding


def id_bucket(player_id: str) -> int:
    return zlib.crc32(player_id.encode("utf-8")) % ID_BUCKETS


def encode_frame(p: PlayerFrame) -> np.ndarray:
    """Numeric encoding: one-hot categoricals, {0,1} booleans, (sin, cos) angle."""
    v = np.zeros(FEATURE_WIDTH)
    s = CHANNEL_SLICES
    v[s["id"].start + id_bucket(p.id)] = 1.0
    v[s["team"]] = float(p.team)
    pos = p.position if p.position in POSITIONS else "OTHER"
    v[s["position"].start + POSITIONS.index(pos)] = 1.0
    v[s["relative_time"]] = p.relative_time
    v[s["head"]] = p.head
    v[s["headOrientation"]] = (math.sin(p.headOrientation), math.cos(p.headOrientation))
    v[s["hips"]] = p.hips
    v[s["foot1"]] = p.foot1
    v[s["foot2"]] = p.foot2
    v[s["foot1_at_the_ground"]] = float(p.foot1_at_the_ground)
    v[s["foot2_at_the_ground"]] = float(p.foot2_at_the_ground)
    v[s["speed_mps"]] = p.speed_mps
    v[s["has_ball"]] = float(p.has_ball)
    return v


def channel_of(column: int) -> str:
    for name, sl in CHANNEL_SLICES.items():
        if sl.start <= column < sl.stop:
            return name
    raise IndexError(column)


def encode_frames(frames) -> np.ndarray:
    """T x N x FEATURE_WIDTH array; raises NumericError on non-finite input."""
    if isinstance(frames, GameSequence):
        frames = frames.frames
    out = np.stack([np.stack([encode_frame(p) for p in frame]) for frame in frames])
    bad = np.argwhere(~np.isfinite(out))
    if len(bad):
        t, n, c = (int(x) for x in bad[0])
        raise NumericError(f"non-finite input at t={t}, n={n}, channel={channel_of(c)!r}")
    return out
