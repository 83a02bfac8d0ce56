"""Anchor-word registry.

Each entity type owns one virtual anchor token (``A-<TYPE>``) appended to
the model vocabulary, a list of representative entity words, and an
initialization vector: the mean embedding of those words. The registry is
append-only so anchor ids stay stable as tasks accumulate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateTypeError,
    EmptyListError,
    MissingRepWordsError,
    UnknownAnchorError,
    UnknownTypeError,
)

ANCHOR_PREFIX = "A-"


def anchor_token_for(entity_type: str) -> str:
    return ANCHOR_PREFIX + entity_type


@dataclass
class AnchorRecord:
    anchor_token: str
    entity_type: str
    task_index: int
    rep_words: tuple[str, ...]
    init_vector: np.ndarray | None = None


@dataclass
class AnchorVocabulary:
    """Append-only map between entity types and anchor vocabulary rows.

    Record i occupies vocabulary id ``base_size + i``; registering later
    tasks never moves or rewrites earlier records.
    """

    base_size: int
    records: list[AnchorRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def extended_size(self) -> int:
        return self.base_size + len(self.records)

    def is_registered(self, entity_type: str) -> bool:
        return any(r.entity_type == entity_type for r in self.records)

    def record_for_type(self, entity_type: str) -> AnchorRecord:
        for record in self.records:
            if record.entity_type == entity_type:
                return record
        raise UnknownTypeError(f"type {entity_type!r} not registered")

    def record_for_anchor(self, anchor_token: str) -> AnchorRecord:
        for record in self.records:
            if record.anchor_token == anchor_token:
                return record
        raise UnknownAnchorError(f"anchor {anchor_token!r} not registered")

    def anchor_of(self, entity_type: str) -> str:
        return self.record_for_type(entity_type).anchor_token

    def type_of(self, anchor_token: str) -> str:
        return self.record_for_anchor(anchor_token).entity_type

    def anchor_id(self, entity_type: str) -> int:
        for i, record in enumerate(self.records):
            if record.entity_type == entity_type:
                return self.base_size + i
        raise UnknownTypeError(f"type {entity_type!r} not registered")

    def anchor_ids(self) -> list[int]:
        return [self.base_size + i for i in range(len(self.records))]

    def registered_types(self) -> tuple[str, ...]:
        return tuple(r.entity_type for r in self.records)

    def types_before(self, task_index: int) -> tuple[str, ...]:
        return tuple(
            r.entity_type for r in self.records if r.task_index < task_index
        )

    def is_anchor_id(self, vocab_id: int) -> bool:
        return self.base_size <= vocab_id < self.extended_size

    def type_of_id(self, vocab_id: int) -> str:
        if not self.is_anchor_id(vocab_id):
            raise UnknownAnchorError(f"id {vocab_id} is not an anchor row")
        return self.records[vocab_id - self.base_size].entity_type


def register_task(
    vocab: AnchorVocabulary,
    types: Sequence[str],
    rep_word_table: Mapping[str, Sequence[str]],
    task_index: int,
) -> AnchorVocabulary:
    """Append one anchor record per type, in the given order.

    ``rep_word_table`` may be keyed by anchor token (the on-disk format) or
    by bare type name. Representative-word lists are used as supplied; no
    padding or truncation.
    """
    for entity_type in types:
        if vocab.is_registered(entity_type):
            raise DuplicateTypeError(f"type {entity_type!r} already registered")
        token = anchor_token_for(entity_type)
        words = rep_word_table.get(token) or rep_word_table.get(entity_type)
        if not words:
            raise MissingRepWordsError(
                f"no representative words for type {entity_type!r}"
            )
        vocab.records.append(
            AnchorRecord(
                anchor_token=token,
                entity_type=entity_type,
                task_index=task_index,
                rep_words=tuple(words),
            )
        )
    return vocab


def anchor_embedding_init(word_vectors: Sequence) -> np.ndarray:
    """Arithmetic mean of the representative-word embedding vectors."""
    if len(word_vectors) == 0:
        raise EmptyListError("no vectors to average")
    arrays = [np.asarray(v, dtype=np.float64) for v in word_vectors]
    dim = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != dim:
            raise DimensionMismatchError(f"mixed dimensions {dim} vs {a.shape}")
    return np.mean(np.stack(arrays, axis=0), axis=0)


def load_rep_words(path: str | Path) -> dict[str, list[str]]:
    """Load a JSON object mapping anchor tokens to word lists."""
    with Path(path).open("r", encoding="utf-8") as handle:
        table = json.load(handle)
    return {str(k): [str(w) for w in v] for k, v in table.items()}
