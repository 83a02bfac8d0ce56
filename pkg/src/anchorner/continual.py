"""Sequential training over a task schedule.

Each task contributes a disjoint set of entity types. The first task trains
on its full training split; every later task sees only a small episode
sampled from the validation split, with at least k labeled mentions per new
type. Before a new task starts, the current model is deep-copied as a
frozen teacher; the student then learns the new anchors from the episode
while a masked divergence term against the teacher, plus appended
demonstrations of the old anchors, preserves what earlier tasks taught.

All randomness flows from one master seed through per-purpose derived
seeds, so a repeated run reproduces every episode, shuffle and update.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import random
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch

from .anchor_vocab import (
    AnchorVocabulary,
    anchor_embedding_init,
    anchor_token_for,
    register_task,
)
from .corpus import (
    EVAL_MODES,
    TRAIN_MODES,
    LabeledSentence,
    StageDataset,
    TaskSchedule,
    build_eval,
    greedy_sample,
    reorganize_train,
    _tag_type,
)
from .errors import (
    TeacherMissingError,
    UnknownSwitchError,
    VocabNotExtendedError,
)
from .evaluate import avg_ge2, evaluate_step
from .model import (
    EncoderConfig,
    TinyRefModel,
    WordTokenizer,
    grad_step,
    make_optimizer,
    snapshot,
)
from .objectives import (
    LossConfig,
    kd_loss,
    kd_position_mask,
    pt_loss,
    pt_positions_for,
    total_loss,
)
from .prompting import (
    GLUE_TOKENS,
    TEMPLATE_FORMATS,
    PromptInstance,
    Role,
    augment_with_mdt,
    build_target,
)

ABLATION_SWITCHES = ("no_mdt", "mdt_entity_format", "no_apt")
HEAD_MODES = ("anchor", "classifier")


def derive_seed(master: int, label: str) -> int:
    """Stable sub-seed for one named purpose under a master seed."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


@dataclass
class StageConfig:
    """Optimization settings for one training stage."""

    epochs: int
    batch_size: int
    freeze_fraction: float
    lr: float = 1e-4
    mdt_per_class: int = 2


def base_stage_defaults() -> StageConfig:
    return StageConfig(
        epochs=5, batch_size=32, freeze_fraction=0.0, lr=1e-4, mdt_per_class=0
    )


def incremental_stage_defaults() -> StageConfig:
    return StageConfig(
        epochs=20, batch_size=2, freeze_fraction=0.75, lr=1e-4, mdt_per_class=2
    )


@dataclass
class RunConfig:
    """Everything one continual run depends on, seeds included."""

    base: StageConfig = field(default_factory=base_stage_defaults)
    incremental: StageConfig = field(default_factory=incremental_stage_defaults)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    shots: int = 5
    train_mode: str = "ToA"
    eval_mode: str = "EoA"
    decode_mode: str = "restricted"
    mdt_format: str = "anchor"
    head_mode: str = "anchor"
    alpha: float = 1.0
    beta: float = 1.0
    restrict_pt_positions: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.train_mode not in TRAIN_MODES:
            raise ValueError(f"train_mode must be one of {TRAIN_MODES}")
        if self.eval_mode not in EVAL_MODES:
            raise ValueError(f"eval_mode must be one of {EVAL_MODES}")
        if self.mdt_format not in TEMPLATE_FORMATS:
            raise ValueError(f"mdt_format must be one of {TEMPLATE_FORMATS}")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


def run_config_from_dict(data: dict) -> RunConfig:
    """Rebuild a RunConfig from its to_dict form (round-trip inverse)."""
    payload = dict(data)
    payload["base"] = StageConfig(**payload["base"])
    payload["incremental"] = StageConfig(**payload["incremental"])
    payload["encoder"] = EncoderConfig(**payload["encoder"])
    return RunConfig(**payload)


def ablate(config: RunConfig, switches: Sequence[str]) -> RunConfig:
    """Run configuration with the named components turned off or swapped."""
    out = copy.deepcopy(config)
    for switch in switches:
        if switch == "no_mdt":
            out.base.mdt_per_class = 0
            out.incremental.mdt_per_class = 0
        elif switch == "mdt_entity_format":
            out.mdt_format = "entity"
        elif switch == "no_apt":
            out.head_mode = "classifier"
        else:
            raise UnknownSwitchError(
                f"unknown ablation switch {switch!r}; "
                f"known: {', '.join(ABLATION_SWITCHES)}"
            )
    return out


@dataclass
class CorpusBundle:
    """The three splits a run draws on."""

    train: tuple[LabeledSentence, ...]
    validation: tuple[LabeledSentence, ...]
    test: tuple[LabeledSentence, ...]


@dataclass
class RunResult:
    """Everything a finished run reports.

    Wall-clock time stays out of the JSON form so that identical seeds
    produce byte-identical result files.
    """

    permutation_id: str
    config: dict
    switches: tuple[str, ...]
    macro_by_step: list[float]
    avg_ge2_score: float | None
    steps: list[dict]
    wall_time_s: float = 0.0
    predictions: list[list[tuple[str, ...]]] = field(default_factory=list)
    eval_datasets: list[StageDataset] = field(default_factory=list)
    model: object | None = None
    vocab: AnchorVocabulary | None = None

    def to_json_dict(self) -> dict:
        return {
            "permutation_id": self.permutation_id,
            "config": self.config,
            "switches": list(self.switches),
            "macro_by_step": self.macro_by_step,
            "avg_ge2": self.avg_ge2_score,
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def _classifier_target(
    sentence: LabeledSentence, seen_types: Sequence[str], tokenizer, step: int
) -> PromptInstance:
    """Per-token class targets for the conventional-head mode (0 is O)."""
    class_of = {t: i + 1 for i, t in enumerate(seen_types)}
    targets: list[int] = []
    roles: list[int] = []
    for label in sentence.labels:
        etype = _tag_type(label)
        if etype is None:
            targets.append(0)
            roles.append(int(Role.CONTENT_O))
        else:
            targets.append(class_of[etype])
            roles.append(int(Role.CONTENT_CURRENT_ENTITY))
    return PromptInstance(
        input_ids=tuple(tokenizer.ids(sentence.tokens)),
        target_ids=tuple(targets),
        roles=tuple(roles),
        step=step,
        origin=sentence.source_id,
    )


def build_instances(
    dataset: StageDataset,
    vocab: AnchorVocabulary,
    tokenizer,
    schedule: TaskSchedule,
    step: int,
    config: RunConfig,
    stage: StageConfig,
    rng: random.Random,
) -> list[PromptInstance]:
    """Training instances for one stage, demonstrations included.

    In anchor mode mention tokens target anchor ids and demonstrations are
    real template token streams. In the conventional-head mode targets are
    class indices; demonstrations then use the anchor's surface string as a
    plain word, with the slot position supervised to the old class.
    """
    old_types = schedule.seen_at(step - 1) if step > 1 else ()
    per_class = stage.mdt_per_class
    instances: list[PromptInstance] = []
    for sentence in dataset.sentences:
        if config.head_mode == "anchor":
            inst = build_target(sentence, vocab, tokenizer, step)
            inst = augment_with_mdt(
                inst,
                old_types,
                per_class,
                vocab,
                tokenizer,
                rng,
                config.mdt_format,
            )
        else:
            seen = schedule.seen_at(step)
            inst = _classifier_target(sentence, seen, tokenizer, step)
            if old_types and per_class:
                class_of = {t: i + 1 for i, t in enumerate(seen)}
                in_ids = list(inst.input_ids)
                tgts = list(inst.target_ids)
                rls = list(inst.roles)
                for etype in old_types:
                    record = vocab.record_for_type(etype)
                    for _ in range(per_class):
                        word = rng.choice(list(record.rep_words))
                        if config.mdt_format == "entity":
                            surface = [word, "."]
                            slot = [class_of[etype], 0]
                            roles = [
                                int(Role.TEMPLATE_ANCHOR_SLOT),
                                int(Role.TEMPLATE_FILLER),
                            ]
                        else:
                            surface = [
                                word,
                                "belongs",
                                "to",
                                anchor_token_for(etype),
                                ".",
                            ]
                            slot = [class_of[etype], 0, 0, 0, 0]
                            roles = [int(Role.TEMPLATE_ANCHOR_SLOT)] + [
                                int(Role.TEMPLATE_FILLER)
                            ] * 4
                        in_ids.extend(tokenizer.ids(surface))
                        tgts.extend(slot)
                        rls.extend(roles)
                inst = replace(
                    inst,
                    input_ids=tuple(in_ids),
                    target_ids=tuple(tgts),
                    roles=tuple(rls),
                )
        instances.append(inst)
    return instances


def train_stage(
    model: TinyRefModel,
    teacher: TinyRefModel | None,
    instances: Sequence[PromptInstance] | Callable[[], Sequence[PromptInstance]],
    stage: StageConfig,
    loss_cfg: LossConfig,
    rng: random.Random,
    classifier_head: bool = False,
) -> list[float]:
    """Epoch loop over shuffled mini-batches; returns mean loss per epoch.

    ``instances`` may be a plain sequence or a zero-argument builder. The
    builder is invoked once per epoch so appended demonstrations are drawn
    fresh each time instead of being frozen at stage start. A teacher,
    when given, adds the masked divergence term over its own output
    support. The last state of the model is the stage's product: there is
    no validation-based selection.
    """
    optimizer = make_optimizer(model, stage.lr)
    epoch_losses: list[float] = []
    support = None
    if teacher is not None:
        support = (
            teacher.num_classes if classifier_head else teacher.extended_size
        )
    for _ in range(stage.epochs):
        epoch_instances = list(instances() if callable(instances) else instances)
        order = list(range(len(epoch_instances)))
        rng.shuffle(order)
        batch_losses: list[float] = []
        for start in range(0, len(order), stage.batch_size):
            batch = [
                epoch_instances[i]
                for i in order[start : start + stage.batch_size]
            ]
            terms = []
            for inst in batch:
                if classifier_head:
                    logits = model.classifier_forward(inst.input_ids)
                else:
                    logits = model(inst.input_ids)
                positions = (
                    pt_positions_for(inst)
                    if loss_cfg.restrict_pt_positions
                    else None
                )
                pred = pt_loss(logits, inst.target_ids, positions)
                distill: torch.Tensor | float = 0.0
                if teacher is not None:
                    with torch.no_grad():
                        if classifier_head:
                            t_logits = teacher.classifier_forward(inst.input_ids)
                        else:
                            t_logits = teacher(inst.input_ids)
                    distill = kd_loss(
                        logits, t_logits, kd_position_mask(inst), support
                    )
                terms.append(total_loss(distill, pred, loss_cfg))
            loss = torch.stack(terms).mean()
            grad_step(model, loss, optimizer)
            batch_losses.append(float(loss.detach()))
        epoch_losses.append(sum(batch_losses) / len(batch_losses))
    return epoch_losses


def _collect_rep_words(
    schedule: TaskSchedule, rep_word_table: dict[str, Sequence[str]]
) -> list[str]:
    words: list[str] = []
    for etype in schedule.all_types:
        for key in (anchor_token_for(etype), etype):
            if key in rep_word_table:
                words.extend(rep_word_table[key])
                break
    return words


def prepare_tokenizer(
    corpus: CorpusBundle,
    schedule: TaskSchedule,
    rep_word_table: dict[str, Sequence[str]],
    include_anchor_surface: bool,
) -> WordTokenizer:
    """Word inventory over all splits plus template glue and slot words.

    The conventional-head mode also needs the anchor surface strings as
    ordinary words, since its demonstrations spell them out in text.
    """
    extra: list[str] = list(GLUE_TOKENS)
    extra.extend(_collect_rep_words(schedule, rep_word_table))
    if include_anchor_surface:
        extra.extend(anchor_token_for(t) for t in schedule.all_types)
    return WordTokenizer.build(
        [
            [s.tokens for s in corpus.train],
            [s.tokens for s in corpus.validation],
            [s.tokens for s in corpus.test],
        ],
        extra_tokens=extra,
    )


def run_continual(
    corpus: CorpusBundle,
    schedule: TaskSchedule,
    rep_word_table: dict[str, Sequence[str]],
    config: RunConfig,
    switches: Sequence[str] = (),
    episodes: dict[int, tuple[LabeledSentence, ...]] | None = None,
) -> RunResult:
    """Full continual run: base stage, then one few-shot stage per task.

    `episodes` may inject pre-sampled few-shot data keyed by step; any step
    not present is sampled here from the validation split with a seed
    derived from the master seed, so a rerun reproduces the same episode.
    """
    config = ablate(config, switches)
    started = time.perf_counter()
    anchor_head = config.head_mode == "anchor"
    tokenizer = prepare_tokenizer(corpus, schedule, rep_word_table, not anchor_head)
    torch.manual_seed(derive_seed(config.seed, "torch"))
    model = TinyRefModel(
        tokenizer, replace(config.encoder, seed=derive_seed(config.seed, "init"))
    )
    vocab = AnchorVocabulary(base_size=len(tokenizer))
    loss_cfg = LossConfig(
        alpha=config.alpha,
        beta=config.beta,
        restrict_pt_positions=config.restrict_pt_positions,
    )

    macro_by_step: list[float] = []
    step_records: list[dict] = []
    all_predictions: list[list[tuple[str, ...]]] = []
    eval_datasets: list[StageDataset] = []

    for t in range(1, schedule.num_tasks + 1):
        teacher = None
        if t > 1:
            teacher = snapshot(model)
            if teacher is None:
                raise TeacherMissingError(f"no teacher before step {t}")

        new_types = schedule.types_at(t)
        register_task(vocab, new_types, rep_word_table, t)
        if anchor_head:
            records = vocab.records[-len(new_types):]
            inits = []
            for record in records:
                vectors = [model.word_vector(w) for w in record.rep_words]
                record.init_vector = anchor_embedding_init(vectors)
                inits.append(record.init_vector)
            model.extend_vocab(np.stack(inits))
            if vocab.extended_size != model.extended_size:
                raise VocabNotExtendedError(
                    "anchor registry and embedding table sizes diverged"
                )
        else:
            model.extend_classifier(
                len(new_types), seed=derive_seed(config.seed, f"classifier{t}")
            )

        if t == 1:
            stage_data = reorganize_train(
                corpus.train, schedule, 1, config.train_mode
            )
            episode_ids: list[str] = []
        else:
            if episodes and t in episodes:
                episode = episodes[t]
            else:
                episode = greedy_sample(
                    corpus.validation,
                    new_types,
                    config.shots,
                    derive_seed(config.seed, f"episode{t}"),
                )
            episode_ids = [s.source_id for s in episode]
            stage_data = reorganize_train(episode, schedule, t, config.train_mode)

        stage = config.base if t == 1 else config.incremental
        model.freeze_lower(int(math.floor(stage.freeze_fraction * model.num_layers)))
        rng_mdt = random.Random(derive_seed(config.seed, f"mdt{t}"))

        def make_instances(
            data=stage_data, step=t, stage_cfg=stage, gen=rng_mdt
        ) -> list[PromptInstance]:
            return build_instances(
                data, vocab, tokenizer, schedule, step, config, stage_cfg, gen
            )

        rng_order = random.Random(derive_seed(config.seed, f"order{t}"))
        epoch_losses = train_stage(
            model,
            teacher,
            make_instances,
            stage,
            loss_cfg,
            rng_order,
            classifier_head=not anchor_head,
        )

        eval_data = build_eval(corpus.test, schedule, t, config.eval_mode)
        metrics, predictions = evaluate_step(
            model,
            vocab,
            tokenizer,
            eval_data,
            schedule.seen_at(t),
            decode_mode=config.decode_mode,
            classifier_head=not anchor_head,
        )
        macro_by_step.append(metrics.macro_f1)
        all_predictions.append(predictions)
        eval_datasets.append(eval_data)
        step_records.append(
            {
                "step": t,
                "new_types": list(new_types),
                "train_sentences": len(stage_data.sentences),
                "episode_source_ids": episode_ids,
                "epoch_losses": epoch_losses,
                "metrics": metrics.to_dict(),
            }
        )

    score = avg_ge2(macro_by_step) if len(macro_by_step) >= 2 else None
    return RunResult(
        permutation_id=schedule.permutation_id,
        config=config.to_dict(),
        switches=tuple(switches),
        macro_by_step=macro_by_step,
        avg_ge2_score=score,
        steps=step_records,
        wall_time_s=time.perf_counter() - started,
        predictions=all_predictions,
        eval_datasets=eval_datasets,
        model=model,
        vocab=vocab,
    )
