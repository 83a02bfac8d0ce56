"""Corpus handling: column-format parsing, task schedules, stage
reorganization (ToA/ToF/EoA/EoF), and greedy K-shot episode sampling.

All functions here are pure: they never mutate their inputs, and any
randomness comes from an explicit seed.
"""
from __future__ import annotations

import io
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    DisjointnessViolationError,
    EmptyCorpusError,
    EmptyTaskError,
    InsufficientSupportError,
    MalformedTagError,
)

TRAIN_MODES = ("ToA", "ToF")
EVAL_MODES = ("EoA", "EoF")

DOCSTART = "-DOCSTART-"


@dataclass(frozen=True)
class LabeledSentence:
    """One sentence: surface tokens plus a tag per token (BIO or bare type)."""

    tokens: tuple[str, ...]
    labels: tuple[str, ...]
    source_id: str = ""

    def __post_init__(self):
        if len(self.tokens) == 0:
            raise ValueError("sentence must contain at least one token")
        if len(self.tokens) != len(self.labels):
            raise ValueError(
                f"{len(self.tokens)} tokens vs {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class TaskSchedule:
    """Ordered, pairwise-disjoint entity-type sets, one per task."""

    tasks: tuple[tuple[str, ...], ...]
    permutation_id: str = "custom"

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def types_at(self, t: int) -> tuple[str, ...]:
        """Types introduced by task t (1-based)."""
        self._check_step(t)
        return self.tasks[t - 1]

    def seen_at(self, t: int) -> tuple[str, ...]:
        """All types introduced by tasks 1..t, in schedule order."""
        self._check_step(t)
        seen: list[str] = []
        for task in self.tasks[:t]:
            seen.extend(task)
        return tuple(seen)

    @property
    def all_types(self) -> tuple[str, ...]:
        return self.seen_at(self.num_tasks)

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.num_tasks:
            raise ValueError(f"step {t} outside 1..{self.num_tasks}")


@dataclass(frozen=True)
class StageDataset:
    """Sentences prepared for one stage under one reorganization mode."""

    step: int
    mode: str
    sentences: tuple[LabeledSentence, ...]

    def __len__(self) -> int:
        return len(self.sentences)


def _tag_type(tag: str) -> str | None:
    """Entity type named by a tag, or None for 'O'."""
    if tag == "O":
        return None
    if tag.startswith(("B-", "I-")):
        return tag[2:]
    return tag  # bare type label, e.g. decoder output


def _check_tag(tag: str, where: str) -> None:
    if tag == "O":
        return
    if tag.startswith(("B-", "I-")) and len(tag) > 2:
        return
    raise MalformedTagError(f"{where}: bad tag {tag!r} (expected O, B-*, I-*)")


def spans_of(labels: Sequence[str]) -> list[tuple[int, int, str]]:
    """Entity spans as (start, end_exclusive, type) from a label sequence.

    Handles both BIO tags and bare type labels: a B- prefix always opens a
    new span; an I- tag or bare type continues a same-type span and opens
    one otherwise.
    """
    spans: list[tuple[int, int, str]] = []
    start = -1
    current: str | None = None

    def close(end: int) -> None:
        nonlocal start, current
        if current is not None:
            spans.append((start, end, current))
        start, current = -1, None

    for i, tag in enumerate(labels):
        if tag == "O":
            close(i)
            continue
        etype = _tag_type(tag)
        opens = tag.startswith("B-") or etype != current
        if opens:
            close(i)
            start, current = i, etype
    close(len(labels))
    return spans


def sentence_types(sentence: LabeledSentence) -> set[str]:
    """Entity types mentioned at least once in the sentence."""
    return {t for _, _, t in spans_of(sentence.labels)}


def mention_counts(
    sentence: LabeledSentence, types: Sequence[str]
) -> dict[str, int]:
    counts = {t: 0 for t in types}
    for _, _, etype in spans_of(sentence.labels):
        if etype in counts:
            counts[etype] += 1
    return counts


def parse_conll(source) -> list[LabeledSentence]:
    """Parse column-format text into sentences.

    One token per line, tag in the last whitespace-separated column, blank
    line between sentences. Document separator lines are skipped. Accepts
    bytes, str, or a line iterable. Sentence-initial or type-switching I-
    tags are normalized to B- (IOB1 input is accepted and converted).
    """
    if isinstance(source, bytes):
        lines: Iterable[str] = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        lines = io.StringIO(source)
    else:
        lines = source

    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush() -> None:
        if tokens:
            sentences.append(
                LabeledSentence(
                    tokens=tuple(tokens),
                    labels=_normalize_bio(tags),
                    source_id=f"s{len(sentences)}",
                )
            )
            tokens.clear()
            tags.clear()

    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            flush()
            continue
        parts = line.split()
        if parts[0] == DOCSTART:
            flush()
            continue
        tag = parts[-1]
        _check_tag(tag, f"line {lineno}")
        tokens.append(parts[0])
        tags.append(tag)
    flush()

    if not sentences:
        raise EmptyCorpusError("no sentences in input")
    return sentences


def _normalize_bio(tags: Sequence[str]) -> tuple[str, ...]:
    """Rewrite I- tags that open a span as B- so BIO continuity holds."""
    out: list[str] = []
    prev_type: str | None = None
    for tag in tags:
        if tag == "O":
            out.append(tag)
            prev_type = None
            continue
        etype = tag[2:]
        if tag.startswith("I-") and prev_type != etype:
            out.append("B-" + etype)
        else:
            out.append(tag)
        prev_type = etype
    return tuple(out)


def to_conll(sentences: Sequence[LabeledSentence]) -> str:
    """Serialize sentences back to column format (inverse of parse_conll)."""
    blocks = []
    for sent in sentences:
        blocks.append(
            "\n".join(f"{tok} {tag}" for tok, tag in zip(sent.tokens, sent.labels))
        )
    return "\n\n".join(blocks) + "\n"


def read_conll_file(path: str | Path) -> list[LabeledSentence]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        sentences = parse_conll(handle)
    stem = path.stem
    return [
        LabeledSentence(s.tokens, s.labels, source_id=f"{stem}:{i}")
        for i, s in enumerate(sentences)
    ]


def build_schedule(
    permutation_spec: Sequence[Sequence[str]], permutation_id: str = "custom"
) -> TaskSchedule:
    """Validate and freeze an ordered list of entity-type sets."""
    tasks: list[tuple[str, ...]] = []
    seen: set[str] = set()
    for i, task in enumerate(permutation_spec, 1):
        types = tuple(task)
        if not types:
            raise EmptyTaskError(f"task {i} is empty")
        if len(set(types)) != len(types):
            raise DisjointnessViolationError(f"task {i} repeats a type")
        overlap = seen.intersection(types)
        if overlap:
            raise DisjointnessViolationError(
                f"task {i} reuses {sorted(overlap)} from an earlier task"
            )
        seen.update(types)
        tasks.append(types)
    if not tasks:
        raise EmptyTaskError("schedule has no tasks")
    return TaskSchedule(tasks=tuple(tasks), permutation_id=permutation_id)


def load_schedules(path: str | Path) -> dict[str, TaskSchedule]:
    """Load a JSON object mapping permutation ids to lists of type arrays."""
    with Path(path).open("r", encoding="utf-8") as handle:
        raw = json.load(handle)
    return {pid: build_schedule(spec, pid) for pid, spec in raw.items()}


def _relabel(sentence: LabeledSentence, keep: set[str]) -> LabeledSentence:
    """Rewrite labels of types outside `keep` to O, preserving tokens."""
    labels = tuple(
        tag if (_tag_type(tag) in keep) else "O" for tag in sentence.labels
    )
    return LabeledSentence(sentence.tokens, labels, sentence.source_id)


def reorganize_train(
    sentences: Sequence[LabeledSentence],
    schedule: TaskSchedule,
    t: int,
    mode: str,
) -> StageDataset:
    """Training data for stage t.

    ToA keeps every sentence; ToF keeps only sentences with at least one
    current-task mention. Either way, labels of types outside task t are
    rewritten to O.
    """
    if mode not in TRAIN_MODES:
        raise ValueError(f"mode must be one of {TRAIN_MODES}, got {mode!r}")
    current = set(schedule.types_at(t))
    pool = list(sentences)
    if mode == "ToF":
        pool = [s for s in pool if sentence_types(s) & current]
    relabeled = tuple(_relabel(s, current) for s in pool)
    return StageDataset(step=t, mode=mode, sentences=relabeled)


def build_eval(
    sentences: Sequence[LabeledSentence],
    schedule: TaskSchedule,
    t: int,
    mode: str,
) -> StageDataset:
    """Test data for stage t.

    EoA keeps every sentence; EoF keeps only sentences with at least one
    mention of a type seen by step t. Labels of unseen types become O.
    """
    if mode not in EVAL_MODES:
        raise ValueError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    seen = set(schedule.seen_at(t))
    pool = list(sentences)
    if mode == "EoF":
        pool = [s for s in pool if sentence_types(s) & seen]
    relabeled = tuple(_relabel(s, seen) for s in pool)
    return StageDataset(step=t, mode=mode, sentences=relabeled)


def greedy_sample(
    sentences: Sequence[LabeledSentence],
    types: Sequence[str],
    k: int,
    seed: int,
) -> tuple[LabeledSentence, ...]:
    """Greedy episode sampling: at least k mentions of every requested type.

    Types are processed in ascending order of pool frequency (ties broken
    by their position in `types`); while a type is short of k mentions, one
    unused sentence containing it is drawn uniformly at random. Counts of
    all requested types are credited on every pick, so frequent types are
    usually covered for free by the time their turn comes.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_sentence = [mention_counts(s, types) for s in sentences]
    pool_totals = {t: sum(c[t] for c in per_sentence) for t in types}
    for etype in types:
        if pool_totals[etype] < k:
            raise InsufficientSupportError(
                f"type {etype!r} has {pool_totals[etype]} mentions in the "
                f"pool, fewer than k={k}"
            )

    order = sorted(types, key=lambda t: (pool_totals[t], list(types).index(t)))
    rng = random.Random(seed)
    chosen: set[int] = set()
    have = {t: 0 for t in types}
    for etype in order:
        while have[etype] < k:
            candidates = [
                i
                for i in range(len(sentences))
                if i not in chosen and per_sentence[i][etype] > 0
            ]
            if not candidates:
                raise InsufficientSupportError(
                    f"ran out of unused sentences containing {etype!r}"
                )
            pick = candidates[rng.randrange(len(candidates))]
            chosen.add(pick)
            for other in types:
                have[other] += per_sentence[pick][other]
    return tuple(sentences[i] for i in sorted(chosen))
