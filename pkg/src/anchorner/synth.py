"""Synthetic corpus with a built-in forgetting dilemma.

Two tasks of two entity types each. The training split mentions only the
first task's types, the validation split (the few-shot pool) mentions only
the second task's types, and the test split mixes all four. A model that
learns task two from the episode alone therefore has nothing in its new
training data to remind it of task one: whatever it still knows about the
old types at the end is exactly what the replay demonstrations and the
distillation term preserved.

Every entity type owns ten distinct surface words; the first six double as
the type's representative words. Mentions are single tokens so span scores
isolate the labeling behavior rather than boundary detection.
"""
from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from .anchor_vocab import anchor_token_for
from .continual import CorpusBundle, RunConfig, StageConfig
from .corpus import LabeledSentence, TaskSchedule, build_schedule, to_conll
from .model import EncoderConfig

TASKS = (("ALPHA", "BETA"), ("GAMMA", "DELTA"))

FILLERS = (
    "the", "a", "we", "saw", "near", "old", "small", "report", "from",
    "during", "while", "it", "was", "noted", "visited", "again", "quietly",
    "yesterday",
)

WORDS_PER_TYPE = 10
REP_WORDS_PER_TYPE = 6


def entity_words(entity_type: str) -> list[str]:
    return [f"{entity_type.lower()}{i}" for i in range(WORDS_PER_TYPE)]


def rep_word_table() -> dict[str, list[str]]:
    table: dict[str, list[str]] = {}
    for task in TASKS:
        for etype in task:
            table[anchor_token_for(etype)] = entity_words(etype)[
                :REP_WORDS_PER_TYPE
            ]
    return table


def _sentence(
    rng: random.Random, types: tuple[str, ...], index: int, split: str
) -> LabeledSentence:
    n_mentions = rng.randint(1, 2)
    mention_types = [rng.choice(types) for _ in range(n_mentions)]
    tokens: list[str] = []
    labels: list[str] = []

    def pad(lo: int, hi: int) -> None:
        for _ in range(rng.randint(lo, hi)):
            tokens.append(rng.choice(FILLERS))
            labels.append("O")

    pad(1, 3)
    for i, etype in enumerate(mention_types):
        tokens.append(rng.choice(entity_words(etype)))
        labels.append("B-" + etype)
        pad(1, 3) if i < len(mention_types) - 1 else pad(0, 2)
    tokens.append(".")
    labels.append("O")
    return LabeledSentence(
        tokens=tuple(tokens),
        labels=tuple(labels),
        source_id=f"{split}:{index}",
    )


def make_synthetic(
    seed: int = 0,
    n_train: int = 200,
    n_validation: int = 120,
    n_test: int = 80,
) -> tuple[CorpusBundle, TaskSchedule, dict[str, list[str]]]:
    """Deterministic three-split corpus plus its schedule and word table."""
    rng = random.Random(seed)
    first, second = TASKS
    both = first + second
    train = tuple(
        _sentence(rng, first, i, "train") for i in range(n_train)
    )
    validation = tuple(
        _sentence(rng, second, i, "valid") for i in range(n_validation)
    )
    test = tuple(_sentence(rng, both, i, "test") for i in range(n_test))
    schedule = build_schedule([list(t) for t in TASKS], "synthetic")
    return CorpusBundle(train, validation, test), schedule, rep_word_table()


def demo_config(seed: int = 0) -> RunConfig:
    """Run settings sized for the synthetic corpus on a laptop CPU.

    The 32-dim encoder trains from random init, so it needs a longer, hotter
    base stage than a pretrained encoder would, a milder freeze, and a
    heavier distillation weight; with these settings one full run takes a
    few seconds and the replay/distillation effect is large and stable.
    """
    return RunConfig(
        base=StageConfig(
            epochs=30, batch_size=16, freeze_fraction=0.0, lr=3e-3,
            mdt_per_class=0,
        ),
        incremental=StageConfig(
            epochs=16, batch_size=2, freeze_fraction=0.5, lr=1e-3,
            mdt_per_class=2,
        ),
        encoder=EncoderConfig(d_model=32, n_layers=2, n_heads=2),
        shots=5,
        alpha=2.0,
        seed=seed,
    )


def write_synthetic(
    out_dir: str | Path,
    seed: int = 0,
    n_train: int = 200,
    n_validation: int = 120,
    n_test: int = 80,
) -> Path:
    """Materialize the corpus as column files plus schedule and word JSONs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    bundle, schedule, table = make_synthetic(
        seed, n_train, n_validation, n_test
    )
    (out / "train.txt").write_text(to_conll(bundle.train), encoding="utf-8")
    (out / "valid.txt").write_text(
        to_conll(bundle.validation), encoding="utf-8"
    )
    (out / "test.txt").write_text(to_conll(bundle.test), encoding="utf-8")
    with (out / "schedules.json").open("w", encoding="utf-8") as handle:
        json.dump(
            {schedule.permutation_id: [list(t) for t in schedule.tasks]},
            handle,
            indent=2,
            sort_keys=True,
        )
    with (out / "anchor_words.json").open("w", encoding="utf-8") as handle:
        json.dump(table, handle, indent=2, sort_keys=True)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate the synthetic demo corpus."
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-train", type=int, default=200)
    parser.add_argument("--n-validation", type=int, default=120)
    parser.add_argument("--n-test", type=int, default=80)
    args = parser.parse_args(argv)
    out = write_synthetic(
        args.out, args.seed, args.n_train, args.n_validation, args.n_test
    )
    print(f"wrote synthetic corpus to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
