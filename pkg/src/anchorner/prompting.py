"""Training instances for anchor prediction, plus replay demonstrations.

A labeled sentence becomes a masked-LM style instance: every token inside a
gold mention is supervised to produce the anchor token of its type, every
other token is supervised to reproduce itself. For types learned in earlier
tasks, short demonstration templates built from the anchor's representative
words are appended to the token stream, so the model keeps seeing old
anchors in context without storing any past sentences. Demonstrations are
a training-time device only; inference never appends them.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Sequence

from .anchor_vocab import AnchorVocabulary
from .corpus import LabeledSentence, _tag_type
from .errors import UnknownTypeError

# Surface glue of the demonstration template; must be in the tokenizer.
GLUE_TOKENS = ("belongs", "to", ".")

TEMPLATE_FORMATS = ("anchor", "entity")


class Role(IntEnum):
    """Why a position is in the stream; drives loss masking.

    CONTENT_O              sentence token outside any gold mention
    CONTENT_CURRENT_ENTITY sentence token inside a gold mention of the
                           current task (distillation skips it)
    TEMPLATE_FILLER        fixed token of an appended demonstration
    TEMPLATE_ANCHOR_SLOT   demonstration position supervised to an anchor
    """

    CONTENT_O = 0
    CONTENT_CURRENT_ENTITY = 1
    TEMPLATE_FILLER = 2
    TEMPLATE_ANCHOR_SLOT = 3


@dataclass(frozen=True)
class PromptInstance:
    """One training example: ids in, ids out, a role per position."""

    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    roles: tuple[int, ...]
    step: int
    origin: str

    def __post_init__(self):
        if not self.input_ids:
            raise ValueError("empty instance")
        if not (
            len(self.input_ids) == len(self.target_ids) == len(self.roles)
        ):
            raise ValueError("input_ids, target_ids and roles must align")

    def __len__(self) -> int:
        return len(self.input_ids)


def build_target(
    sentence: LabeledSentence,
    vocab: AnchorVocabulary,
    tokenizer,
    step: int = 1,
) -> PromptInstance:
    """Instance for one sentence: mention tokens target their anchor id.

    Every position of a multi-token mention gets the same anchor target;
    tokens labeled O target their own input id.
    """
    input_ids = tuple(tokenizer.ids(sentence.tokens))
    targets: list[int] = []
    roles: list[int] = []
    for tok_id, label in zip(input_ids, sentence.labels):
        if label == "O":
            targets.append(tok_id)
            roles.append(int(Role.CONTENT_O))
        else:
            entity_type = _tag_type(label)
            if not vocab.is_registered(entity_type):
                raise UnknownTypeError(
                    f"no anchor registered for type {entity_type!r}"
                )
            targets.append(vocab.anchor_id(entity_type))
            roles.append(int(Role.CONTENT_CURRENT_ENTITY))
    return PromptInstance(
        input_ids=input_ids,
        target_ids=tuple(targets),
        roles=tuple(roles),
        step=step,
        origin=sentence.source_id,
    )


def make_mdt(
    entity_type: str,
    vocab: AnchorVocabulary,
    tokenizer,
    rng: random.Random,
    template_format: str = "anchor",
) -> tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]:
    """One demonstration for a previously learned type.

    The anchor format reads "w belongs to A-X ." with w drawn uniformly
    from the type's representative words; the slot positions (the drawn
    word and the literal anchor) target the anchor id and the glue tokens
    reproduce themselves. The entity format is the minimal "w ." with the
    word again targeting the anchor.
    """
    if template_format not in TEMPLATE_FORMATS:
        raise ValueError(f"unknown template format {template_format!r}")
    record = vocab.record_for_type(entity_type)
    word = rng.choice(list(record.rep_words))
    word_id = tokenizer.id(word)
    anchor_id = vocab.anchor_id(entity_type)
    period = tokenizer.id(".")
    if template_format == "entity":
        input_ids = (word_id, period)
        target_ids = (anchor_id, period)
        roles = (int(Role.TEMPLATE_ANCHOR_SLOT), int(Role.TEMPLATE_FILLER))
        return input_ids, target_ids, roles
    belongs = tokenizer.id("belongs")
    to = tokenizer.id("to")
    input_ids = (word_id, belongs, to, anchor_id, period)
    target_ids = (anchor_id, belongs, to, anchor_id, period)
    roles = (
        int(Role.TEMPLATE_ANCHOR_SLOT),
        int(Role.TEMPLATE_FILLER),
        int(Role.TEMPLATE_FILLER),
        int(Role.TEMPLATE_ANCHOR_SLOT),
        int(Role.TEMPLATE_FILLER),
    )
    return input_ids, target_ids, roles


def augment_with_mdt(
    instance: PromptInstance,
    old_types: Sequence[str],
    per_class_count: int,
    vocab: AnchorVocabulary,
    tokenizer,
    rng: random.Random,
    template_format: str = "anchor",
) -> PromptInstance:
    """Append per_class_count demonstrations per old type to the instance.

    Demonstration words are drawn independently with replacement, in the
    order the types are given; the content region is left untouched. With
    no old types the instance is returned unchanged.
    """
    if not old_types or per_class_count <= 0:
        return instance
    input_ids = list(instance.input_ids)
    target_ids = list(instance.target_ids)
    roles = list(instance.roles)
    for entity_type in old_types:
        for _ in range(per_class_count):
            ids, tgts, rls = make_mdt(
                entity_type, vocab, tokenizer, rng, template_format
            )
            input_ids.extend(ids)
            target_ids.extend(tgts)
            roles.extend(rls)
    return replace(
        instance,
        input_ids=tuple(input_ids),
        target_ids=tuple(target_ids),
        roles=tuple(roles),
    )
