"""Deterministic labeled synthetic half-court possessions.

Twelve hand-authored offensive sets.  Each set fixes the starting spots
of the five attackers, a rotation of those spots over the possession, and
a ball schedule; defenders shadow their man from the basket side.  A
sequence generated from a set is a piecewise-linear interpolation of the
waypoints plus optional Gaussian jitter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .data import GameSequence, PlayerFrame, make_sequence
from .errors import ValidationError
from .symmetry import D2, augment_d2

BASKET = (12.75, 0.0)
OFFENSE_IDS = ("A0", "A1", "A2", "A3", "A4")
DEFENSE_IDS = ("B0", "B1", "B2", "B3", "B4")
SLOT_POSITIONS = ("PG", "SG", "SF", "PF", "C")
HEIGHTS = (1.85, 1.93, 2.01, 2.06, 2.12)
SHADOW_GAP = 1.2
FRACTIONS = (0.0, 0.5, 1.0)

# name, starting attacker spots, slot rotation, ball schedule
_SETS = (
    ("pick_and_roll", [(6.5, 0.0), (9.0, 5.5), (9.0, -5.5), (7.8, 1.2), (11.5, -2.5)], (0, 3, 2, 1, 4),
     [(0.0, 0), (0.45, 3), (0.8, 0)]),
    ("give_and_go", [(7.0, 2.0), (8.5, -4.0), (11.0, 6.0), (11.0, -5.5), (10.0, 0.5)], (1, 0, 2, 3, 4),
     [(0.0, 0), (0.3, 1), (0.65, 0)]),
    ("isolation", [(7.5, 4.5), (12.5, -6.8), (8.0, -5.5), (12.0, 6.5), (10.5, -2.0)], (0, 1, 2, 3, 4),
     [(0.0, 1), (0.25, 0)]),
    ("horns", [(6.0, 0.0), (12.5, 6.5), (12.5, -6.5), (8.2, 2.5), (8.2, -2.5)], (0, 3, 4, 1, 2),
     [(0.0, 0), (0.4, 3), (0.75, 1)]),
    ("flex", [(6.5, -1.0), (12.5, 3.0), (8.0, 5.0), (12.0, -3.0), (9.0, -4.5)], (2, 3, 0, 1, 4),
     [(0.0, 0), (0.35, 2), (0.7, 3)]),
    ("motion_weak", [(6.5, 3.0), (9.5, 6.0), (12.0, 5.0), (11.0, -1.0), (9.0, -5.0)], (1, 2, 0, 4, 3),
     [(0.0, 0), (0.5, 4)]),
    ("triangle", [(7.0, 5.0), (12.5, 6.8), (11.0, 3.0), (8.0, -3.0), (11.5, -2.0)], (0, 2, 1, 3, 4),
     [(0.0, 0), (0.3, 2), (0.6, 1), (0.85, 4)]),
    ("princeton", [(7.0, 0.0), (8.5, 5.8), (8.5, -5.8), (9.2, 1.0), (12.3, -1.0)], (3, 1, 2, 0, 4),
     [(0.0, 0), (0.4, 3), (0.7, 2)]),
    ("box", [(7.0, 0.0), (9.0, 2.5), (9.0, -2.5), (12.0, 2.5), (12.0, -2.5)], (0, 3, 1, 4, 2),
     [(0.0, 0), (0.55, 1)]),
    ("stack", [(6.5, -4.0), (10.0, 5.5), (10.8, 5.0), (11.6, 4.5), (12.4, 4.0)], (0, 4, 1, 2, 3),
     [(0.0, 0), (0.45, 1), (0.8, 2)]),
    ("five_out", [(6.0, 0.0), (8.5, 5.5), (8.5, -5.5), (12.5, 6.8), (12.5, -6.8)], (1, 2, 0, 3, 4),
     [(0.0, 0), (0.3, 1), (0.6, 0), (0.9, 2)]),
    ("floppy", [(6.5, 0.0), (12.5, 1.5), (12.5, -1.5), (11.2, 3.0), (11.2, -3.0)], (0, 3, 4, 2, 1),
     [(0.0, 0), (0.6, 3)]),
)
N_TACTICS = len(_SETS)


@dataclass(frozen=True)
class TacticTemplate:
    tactic_id: int
    name: str
    waypoints: tuple[tuple[tuple[float, float, float], ...], ...]  # per player: (fraction, x, y)
    possession_schedule: tuple[tuple[float, int], ...]

    def __post_init__(self):
        if not 0 <= self.tactic_id < N_TACTICS:
            raise ValidationError(f"tactic_id {self.tactic_id} outside [0, {N_TACTICS})")
        if len(self.waypoints) != 10:
            raise ValidationError("waypoints must cover 10 players")
        for wp in self.waypoints:
            fr = [w[0] for w in wp]
            if any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] < 0 or fr[-1] > 1:
                raise ValidationError("waypoint time-fractions must be strictly increasing in [0, 1]")
        for _, holder in self.possession_schedule:
            if not 0 <= holder < 10:
                raise ValidationError(f"holder index {holder} outside [0, 10)")

    @property
    def start_positions(self) -> np.ndarray:
        return np.array([[wp[0][1], wp[0][2]] for wp in self.waypoints])

    @property
    def descriptor(self) -> np.ndarray:
        return normalize_descriptor(raw_descriptor(self.start_positions, TEAMS))

    def final_holder(self) -> int:
        return self.possession_schedule[-1][1]


TEAMS = np.array([True] * 5 + [False] * 5)


def _shadow(off_xy):
    bx, by = BASKET
    dx, dy = bx - off_xy[0], by - off_xy[1]
    norm = math.hypot(dx, dy) or 1.0
    return (off_xy[0] + SHADOW_GAP * dx / norm, off_xy[1] + SHADOW_GAP * dy / norm)


def _build_template(tactic_id, name, spots, rotation, schedule, shot=False):
    rot = list(rotation)
    offense = []
    for i in range(5):
        path = [spots[i], spots[rot[i]], spots[rot[rot[i]]]]
        offense.append(path)
    if shot:
        holder = schedule[-1][1]
        side = 1.0 if offense[holder][1][1] >= 0 else -1.0
        offense[holder][2] = (BASKET[0] - 1.6, side * 0.6)
    waypoints = []
    for path in offense:
        waypoints.append(tuple((f, x, y) for f, (x, y) in zip(FRACTIONS, path)))
    for path in offense:
        waypoints.append(tuple((f,) + _shadow(p) for f, p in zip(FRACTIONS, path)))
    return TacticTemplate(
        tactic_id=tactic_id,
        name=name,
        waypoints=tuple(waypoints),
        possession_schedule=tuple((float(f), int(h)) for f, h in schedule),
    )


@lru_cache(maxsize=None)
def _templates(shot: bool):
    return tuple(_build_template(i, *spec, shot=shot) for i, spec in enumerate(_SETS))


def templates() -> tuple[TacticTemplate, ...]:
    return _templates(False)


def template(tactic_id: int, shot: bool = False) -> TacticTemplate:
    if not 0 <= tactic_id < N_TACTICS:
        raise ValidationError(f"tactic_id {tactic_id} outside [0, {N_TACTICS})")
    return _templates(bool(shot))[tactic_id]


# ----------------------------------------------------------- descriptor


def raw_descriptor(xy: np.ndarray, team: np.ndarray) -> np.ndarray:
    """Sorted pairwise distances plus |team centroid| offsets from court center."""
    xy = np.asarray(xy, dtype=float)
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    iu = np.triu_indices(len(xy), k=1)
    dists = np.sort(dist[iu])
    team = np.asarray(team, dtype=bool)
    c_a = np.abs(xy[team].mean(0))
    c_b = np.abs(xy[~team].mean(0))
    return np.concatenate([dists, c_a, c_b])


@lru_cache(maxsize=1)
def _descriptor_stats():
    raw = np.stack([raw_descriptor(t.start_positions, TEAMS) for t in _templates(False)])
    mean = raw.mean(0)
    std = raw.std(0)
    return mean, np.maximum(std, 0.5)


def normalize_descriptor(raw: np.ndarray) -> np.ndarray:
    mean, std = _descriptor_stats()
    return (raw - mean) / std


def sequence_descriptor(seq: GameSequence) -> np.ndarray:
    frame = seq.frames[0]
    xy = np.array([[p.head[0], p.head[1]] for p in frame])
    team = np.array([p.team for p in frame])
    return normalize_descriptor(raw_descriptor(xy, team))


# ------------------------------------------------------------ generation


def _orientation(dx, dy):
    if dx == 0.0 and dy == 0.0:
        return 0.0
    return math.atan2(dy, dx) % (2.0 * math.pi)


def generate(tmpl: TacticTemplate, T: int, noise_sigma: float = 0.0, seed: int = 0,
             shot: bool | None = None, duration: float = 6.0, sequence_id: str | None = None) -> GameSequence:
    """Sample ``T`` frames of a template.

    ``shot`` selects the variant whose final ball handler drives to the
    rim; it defaults to the variant ``tmpl`` was built as.
    """
    if T < 2:
        raise ValidationError(f"T must be >= 2, got {T}")
    if noise_sigma < 0:
        raise ValidationError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if shot is not None:
        tmpl = template(tmpl.tactic_id, shot=shot)
        is_shot = bool(shot)
    else:
        is_shot = tmpl == template(tmpl.tactic_id, shot=True)
    rng = np.random.default_rng(seed)
    fractions = np.arange(T) / (T - 1)
    base = np.empty((T, 10, 2))
    for n, wp in enumerate(tmpl.waypoints):
        fr = [w[0] for w in wp]
        base[:, n, 0] = np.interp(fractions, fr, [w[1] for w in wp])
        base[:, n, 1] = np.interp(fractions, fr, [w[2] for w in wp])
    xy = base + rng.normal(0.0, noise_sigma, size=base.shape) if noise_sigma > 0 else base

    sched = tmpl.possession_schedule
    holders = []
    for f in fractions:
        h = sched[0][1]
        for sf, sh in sched:
            if sf <= f + 1e-12:
                h = sh
        holders.append(h)

    dt = duration / (T - 1)
    vel = np.diff(xy, axis=0) / dt
    speed = np.linalg.norm(np.concatenate([vel[:1], vel], axis=0), axis=-1)
    ids = OFFENSE_IDS + DEFENSE_IDS
    frames = []
    for t in range(T):
        hx, hy = xy[t, holders[t]]
        frame = []
        for n in range(10):
            x, y = float(xy[t, n, 0]), float(xy[t, n, 1])
            if n == holders[t]:
                theta = _orientation(BASKET[0] - x, BASKET[1] - y)
            else:
                theta = _orientation(hx - x, hy - y)
            px, py = -math.sin(theta) * 0.15, math.cos(theta) * 0.15
            frame.append(PlayerFrame(
                id=ids[n],
                team=n < 5,
                position=SLOT_POSITIONS[n % 5],
                relative_time=t * dt,
                head=(x, y, HEIGHTS[n % 5]),
                headOrientation=theta,
                hips=(x, y),
                foot1=(x + px, y + py),
                foot2=(x - px, y - py),
                foot1_at_the_ground=(t + n) % 3 != 0,
                foot2_at_the_ground=(t + n) % 3 != 1,
                speed_mps=float(speed[t, n]),
                has_ball=n == holders[t],
            ))
        frames.append(frame)
    sid = sequence_id if sequence_id is not None else f"{tmpl.name}-{seed}"
    return make_sequence(sid, frames, tactic_label=tmpl.tactic_id, shot=is_shot)


def make_dataset(n_sequences: int, tactics=(0, 1, 2, 3, 4), T: int = 20, noise_sigma: float = 0.25,
                 seed: int = 0, augment: bool = True) -> list[GameSequence]:
    """Round-robin over ``tactics`` with random shot variants and court orientation."""
    if n_sequences < 1:
        raise ValidationError("n_sequences must be >= 1")
    tactics = list(tactics)
    root = np.random.SeedSequence(seed)
    out = []
    for i, child in enumerate(root.spawn(n_sequences)):
        rng = np.random.default_rng(child)
        tactic = tactics[i % len(tactics)]
        shot = bool(rng.integers(2))
        gen_seed = int(rng.integers(2**31))
        seq = generate(template(tactic), T, noise_sigma, gen_seed, shot=shot, sequence_id=f"seq{i:04d}")
        if augment:
            seq = augment_d2(seq, D2[int(rng.integers(4))])
        out.append(seq)
    return out
