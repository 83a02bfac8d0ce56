"""Decoding and span-level scoring.

Inference needs one encoder pass per sentence: every token's label is read
off the same logit matrix by comparing, per position, the logits of the
anchor tokens of all types seen so far with the logit of the token itself.
The token winning its own comparison means no entity; ties go the same
way. Adjacent positions assigned the same type merge into one span, and
scoring is exact span match with macro-averaged F1 over seen types.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .anchor_vocab import AnchorVocabulary
from .corpus import StageDataset, spans_of
from .errors import TooFewStepsError

DECODE_MODES = ("restricted", "global")


@dataclass
class StepMetrics:
    """Span scores for one incremental step on one evaluation set."""

    step: int
    eval_mode: str
    macro_f1: float
    per_type: dict[str, dict[str, float]] = field(default_factory=dict)
    num_sentences: int = 0

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "eval_mode": self.eval_mode,
            "macro_f1": self.macro_f1,
            "per_type": self.per_type,
            "num_sentences": self.num_sentences,
        }


def decode(
    logits: np.ndarray,
    vocab: AnchorVocabulary,
    input_ids: Sequence[int],
    mode: str = "restricted",
) -> tuple[str, ...]:
    """Per-token type-or-O labels read off one logit matrix.

    Restricted mode compares each position's own-token logit against the
    registered anchor logits only; a position keeps O unless some anchor
    logit strictly exceeds it, and among anchors the earliest registered
    strict maximum wins. Global mode takes the argmax over the whole
    vocabulary and maps anything that is not an anchor row to O.
    """
    if mode not in DECODE_MODES:
        raise ValueError(f"unknown decode mode {mode!r}")
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[0] != len(input_ids):
        raise ValueError(
            f"logits {logits.shape} do not cover {len(input_ids)} positions"
        )
    anchor_ids = [(vocab.anchor_id(t), t) for t in vocab.registered_types()]
    labels: list[str] = []
    if mode == "global":
        id_to_type = {aid: t for aid, t in anchor_ids}
        winners = np.argmax(logits, axis=1)
        labels = [id_to_type.get(int(w), "O") for w in winners]
    else:
        for pos, tok_id in enumerate(input_ids):
            best = logits[pos, tok_id]
            label = "O"
            for aid, etype in anchor_ids:
                val = logits[pos, aid]
                if val > best:
                    best = val
                    label = etype
            labels.append(label)
    return tuple(labels)


def decode_classifier(
    logits: np.ndarray, seen_types: Sequence[str]
) -> tuple[str, ...]:
    """Type-or-O labels from per-token class logits; class 0 means O."""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != 1 + len(seen_types):
        raise ValueError(
            f"class logits {logits.shape} do not cover O plus "
            f"{len(seen_types)} types"
        )
    winners = np.argmax(logits, axis=1)  # first max wins, so ties favor O
    return tuple("O" if w == 0 else seen_types[w - 1] for w in winners)


def extract_spans(labels: Sequence[str]) -> set[tuple[int, int, str]]:
    """Entity spans as a set of (start, end_exclusive, type) triples."""
    return set(spans_of(labels))


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def macro_f1(
    pred_spans: Sequence[Sequence[tuple[int, int, str]]],
    gold_spans: Sequence[Sequence[tuple[int, int, str]]],
    seen_types: Sequence[str],
    step: int = 0,
    eval_mode: str = "",
    include_empty_types: bool = False,
) -> StepMetrics:
    """Exact-match macro F1 over the given types.

    Arguments are per-sentence span collections. Types with neither gold
    nor predicted spans are left out of the macro average unless
    include_empty_types is set (then they count as 0.0).
    """
    if len(gold_spans) != len(pred_spans):
        raise ValueError("gold and predicted sentence counts differ")
    counts = {t: {"tp": 0, "gold": 0, "pred": 0} for t in seen_types}
    for gold, pred in zip(gold_spans, pred_spans):
        gold_set, pred_set = set(gold), set(pred)
        for span in gold_set:
            if span[2] in counts:
                counts[span[2]]["gold"] += 1
        for span in pred_set:
            if span[2] in counts:
                counts[span[2]]["pred"] += 1
        for span in gold_set & pred_set:
            if span[2] in counts:
                counts[span[2]]["tp"] += 1
    per_type: dict[str, dict[str, float]] = {}
    macro_terms: list[float] = []
    for etype in seen_types:
        c = counts[etype]
        precision = c["tp"] / c["pred"] if c["pred"] else 0.0
        recall = c["tp"] / c["gold"] if c["gold"] else 0.0
        f1 = _f1(precision, recall)
        per_type[etype] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "gold": float(c["gold"]),
            "pred": float(c["pred"]),
            "correct": float(c["tp"]),
        }
        if c["gold"] or c["pred"] or include_empty_types:
            macro_terms.append(f1)
    macro = sum(macro_terms) / len(macro_terms) if macro_terms else 0.0
    return StepMetrics(
        step=step,
        eval_mode=eval_mode,
        macro_f1=macro,
        per_type=per_type,
        num_sentences=len(gold_spans),
    )


def score_labels(
    gold: Sequence[Sequence[str]],
    predicted: Sequence[Sequence[str]],
    seen_types: Sequence[str],
    step: int = 0,
    eval_mode: str = "",
    include_empty_types: bool = False,
) -> StepMetrics:
    """macro_f1 over label sequences instead of pre-extracted spans."""
    return macro_f1(
        [spans_of(p) for p in predicted],
        [spans_of(g) for g in gold],
        seen_types,
        step=step,
        eval_mode=eval_mode,
        include_empty_types=include_empty_types,
    )


def evaluate_step(
    model,
    vocab: AnchorVocabulary,
    tokenizer,
    dataset: StageDataset,
    seen_types: Sequence[str],
    decode_mode: str = "restricted",
    classifier_head: bool = False,
    include_empty_types: bool = False,
) -> tuple[StepMetrics, list[tuple[str, ...]]]:
    """Run the encoder once per sentence, decode, and score spans."""
    predictions: list[tuple[str, ...]] = []
    for sentence in dataset.sentences:
        ids = tokenizer.ids(sentence.tokens)
        if classifier_head:
            logits = model.classifier_forward(ids).detach().numpy()
            labels = decode_classifier(logits, seen_types)
        else:
            logits = model(ids).detach().numpy()
            labels = decode(logits, vocab, ids, decode_mode)
        predictions.append(labels)
    metrics = score_labels(
        [s.labels for s in dataset.sentences],
        predictions,
        seen_types,
        step=dataset.step,
        eval_mode=dataset.mode,
        include_empty_types=include_empty_types,
    )
    return metrics, predictions


def avg_ge2(step_scores: Sequence[float]) -> float:
    """Mean score over steps 2..T, the incremental-learning summary number."""
    if len(step_scores) < 2:
        raise TooFewStepsError(
            f"need at least 2 step scores, got {len(step_scores)}"
        )
    tail = step_scores[1:]
    return sum(tail) / len(tail)


def dump_predictions(
    dataset: StageDataset,
    predictions: Sequence[Sequence[str]],
    path: str | Path,
) -> None:
    """Write per-token gold and predicted tags, one sentence per block."""
    lines: list[str] = []
    for sentence, pred in zip(dataset.sentences, predictions):
        for token, gold, guess in zip(sentence.tokens, sentence.labels, pred):
            lines.append(f"{sentence.source_id}\t{token}\t{gold}\t{guess}")
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
