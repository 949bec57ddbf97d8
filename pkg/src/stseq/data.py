"""Synthetic temporal tasks with provably order-sensitive labels.

The reversal task is the workhorse: a 2x2 bright square sits still for the
first half of the video, then moves along one axis (wrapping) at two pixels
per frame, and the sample shows either the frames in order ("forward") or
exactly reversed ("backward"). Both classes share the same frame multiset,
so any frame-order-invariant summary of the video (temporal mean pooling
included) carries zero label information; the still-then-moving profile
makes the order itself learnable, and redundantly so, which keeps it
learnable when a random half of the tokens is dropped. Pixel values are
only 0.0 or 1.0, which keeps frame sums exact and order-independent in
floating point.

Direction, count and static-scene tasks round out the suite. Train/test
membership is decided by hashing each task's trajectory key, so the splits
are disjoint by construction.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tokens import END_ID, PAD_ID, START_ID, SyntheticVideo

WORDS = [
    "<start>", "<end>", "<pad>",
    "order?", "direction?", "count?", "where?",
    "forward", "backward",
    "left", "right", "up", "down",
    "one", "two", "three", "four",
    "topleft", "topright", "bottomleft", "bottomright",
]

TEST_SPLIT_MOD = 4  # ~25% of trajectory keys land in the test split


@dataclass
class Vocab:
    words: list[str] = field(default_factory=lambda: list(WORDS))

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise ConfigError("vocabulary words must be unique")
        self._ids = {w: i for i, w in enumerate(self.words)}
        for rid, name in ((START_ID, "<start>"), (END_ID, "<end>"), (PAD_ID, "<pad>")):
            if self._ids.get(name) != rid:
                raise ConfigError(f"reserved id {rid} must map to {name}")

    def id(self, word: str) -> int:
        return self._ids[word]

    def word(self, i: int) -> str:
        return self.words[i]

    def __len__(self) -> int:
        return len(self.words)


_DEFAULT_VOCAB = None


def default_vocab() -> Vocab:
    global _DEFAULT_VOCAB
    if _DEFAULT_VOCAB is None:
        _DEFAULT_VOCAB = Vocab()
    return _DEFAULT_VOCAB


@dataclass
class Task:
    kind: str
    video: SyntheticVideo
    prompt_ids: list[int]
    answer_ids: list[int]
    key: str = ""
    seed: int = 0


def split_of(key: str) -> str:
    return "test" if zlib.crc32(key.encode()) % TEST_SPLIT_MOD == 0 else "train"


def _paint(frames: np.ndarray, t: int, r: int, c: int) -> None:
    frames[t, r:r + 2, c:c + 2] = 1.0


def _accel_offsets(t: int) -> list[int]:
    """Cumulative displacement: still for the first half, two px/frame after."""
    out, c = [0], 0
    for i in range(1, t):
        c += 0 if i <= t // 2 else 2
        out.append(c)
    return out


def gen_reversal(rng: np.random.Generator, t: int, g: int) -> Task:
    if t < 3:
        raise ConfigError(f"reversal task needs T >= 3, got {t}")
    v = default_vocab()
    m = g - 2
    offsets = _accel_offsets(t)
    while True:
        axis = int(rng.integers(2))
        direction = int(rng.integers(2)) * 2 - 1
        p0 = int(rng.integers(m))
        f0 = int(rng.integers(m))
        frames = np.zeros((t, g, g))
        for i, off in enumerate(offsets):
            mov = (p0 + direction * off) % m
            r, c = (mov, f0) if axis == 0 else (f0, mov)
            _paint(frames, i, r, c)
        if not np.array_equal(frames, frames[::-1]):
            break
    backward = bool(rng.integers(2))
    if backward:
        frames = frames[::-1].copy()
    key = f"reversal:{t}:{g}:{axis}:{direction}:{p0}:{f0}"
    return Task("reversal", SyntheticVideo(frames),
                [v.id("order?")], [v.id("backward" if backward else "forward")], key)


_DIRECTION_MOVES = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}


def gen_direction(rng: np.random.Generator, t: int, g: int) -> Task:
    if t < 2:
        raise ConfigError(f"direction task needs T >= 2, got {t}")
    v = default_vocab()
    m = g - 2
    word = ("left", "right", "up", "down")[int(rng.integers(4))]
    dr, dc = _DIRECTION_MOVES[word]
    r0, c0 = int(rng.integers(m)), int(rng.integers(m))
    frames = np.zeros((t, g, g))
    for i in range(t):
        _paint(frames, i, (r0 + i * dr) % m, (c0 + i * dc) % m)
    key = f"direction:{t}:{g}:{word}:{r0}:{c0}"
    return Task("direction", SyntheticVideo(frames), [v.id("direction?")], [v.id(word)], key)


def gen_count(rng: np.random.Generator, t: int, g: int) -> Task:
    if t < 1:
        raise ConfigError(f"count task needs T >= 1, got {t}")
    v = default_vocab()
    m = g - 2
    n = int(rng.integers(1, 5))
    bands = rng.choice(g // 2, size=n, replace=False)
    starts = [int(rng.integers(m)) for _ in range(n)]
    dirs = [int(rng.integers(2)) * 2 - 1 for _ in range(n)]
    frames = np.zeros((t, g, g))
    for i in range(t):
        for band, c0, d in zip(bands, starts, dirs):
            _paint(frames, i, 2 * int(band), (c0 + d * i) % m)
    key = f"count:{t}:{g}:{n}:" + ",".join(f"{b}:{c}:{d}" for b, c, d in zip(bands, starts, dirs))
    word = ("one", "two", "three", "four")[n - 1]
    return Task("count", SyntheticVideo(frames), [v.id("count?")], [v.id(word)], key)


def gen_static(rng: np.random.Generator, t: int, g: int) -> Task:
    if t < 1:
        raise ConfigError(f"static task needs T >= 1, got {t}")
    v = default_vocab()
    m = g - 2
    r0, c0 = int(rng.integers(m)), int(rng.integers(m))
    frames = np.zeros((t, g, g))
    for i in range(t):
        _paint(frames, i, r0, c0)
    vert = "top" if r0 + 1 < g // 2 else "bottom"
    horiz = "left" if c0 + 1 < g // 2 else "right"
    key = f"static:{t}:{g}:{r0}:{c0}"
    return Task("static", SyntheticVideo(frames), [v.id("where?")], [v.id(vert + horiz)], key)


GENERATORS = {
    "reversal": gen_reversal,
    "direction": gen_direction,
    "count": gen_count,
    "static": gen_static,
}


def gen_batch(kind: str, batch_size: int, t: int, rng: np.random.Generator,
              g: int = 16, split: str = "all") -> list[Task]:
    """i.i.d. tasks, deterministic under the generator's state.

    split="train"/"test" resamples until the trajectory key hashes into the
    requested split; "all" takes every draw.
    """
    gen = GENERATORS.get(kind)
    if gen is None:
        raise ConfigError(f"unknown task kind {kind!r}; expected one of {sorted(GENERATORS)}")
    if split not in ("train", "test", "all"):
        raise ConfigError(f"split must be train|test|all, got {split!r}")
    out = []
    for _ in range(batch_size):
        while True:
            seed = int(rng.integers(2 ** 63))
            task = gen(np.random.default_rng(seed), t, g)
            if split == "all" or split_of(task.key) == split:
                break
        task.seed = seed
        out.append(task)
    return out


def dump_tasks(path, tasks: list[Task]) -> None:
    """JSON-lines dump: kind, frames, prompt/answer ids, seed — one task per line."""
    with open(path, "w") as f:
        for task in tasks:
            f.write(json.dumps({
                "kind": task.kind,
                "frames": task.video.frames.tolist(),
                "prompt_ids": task.prompt_ids,
                "answer_ids": task.answer_ids,
                "seed": task.seed,
            }) + "\n")


def load_tasks(path) -> list[Task]:
    out = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(Task(rec["kind"], SyntheticVideo(np.asarray(rec["frames"], dtype=np.float64)),
                            list(rec["prompt_ids"]), list(rec["answer_ids"]), seed=rec["seed"]))
    return out
