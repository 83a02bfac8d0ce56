"""Few-shot continual named entity recognition via anchor-word prompting.

Entity types arrive task by task; each new task brings only a handful of
labeled mentions. Recognition is cast as masked-word prediction: every
entity type owns a virtual anchor token whose embedding starts at the mean
of a few representative words, appended demonstration templates keep old
anchors in play, and a masked divergence against a frozen pre-task teacher
protects old knowledge while new anchors are learned.
"""
from .anchor_vocab import (
    ANCHOR_PREFIX,
    AnchorRecord,
    AnchorVocabulary,
    anchor_embedding_init,
    anchor_token_for,
    load_rep_words,
    register_task,
)
from .continual import (
    ABLATION_SWITCHES,
    HEAD_MODES,
    CorpusBundle,
    RunConfig,
    RunResult,
    StageConfig,
    ablate,
    base_stage_defaults,
    build_instances,
    derive_seed,
    incremental_stage_defaults,
    run_config_from_dict,
    run_continual,
    train_stage,
)
from .corpus import (
    EVAL_MODES,
    TRAIN_MODES,
    LabeledSentence,
    StageDataset,
    TaskSchedule,
    build_eval,
    build_schedule,
    greedy_sample,
    load_schedules,
    mention_counts,
    parse_conll,
    read_conll_file,
    reorganize_train,
    sentence_types,
    spans_of,
    to_conll,
)
from .errors import AnchorNerError
from .evaluate import (
    DECODE_MODES,
    StepMetrics,
    avg_ge2,
    decode,
    decode_classifier,
    dump_predictions,
    evaluate_step,
    extract_spans,
    macro_f1,
    score_labels,
)
from .model import (
    EncoderConfig,
    TinyRefModel,
    WordTokenizer,
    grad_step,
    load_checkpoint,
    make_optimizer,
    param_hash,
    save_checkpoint,
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
    make_mdt,
)
from .resources import (
    bundled_anchor_words,
    bundled_schedules,
    reference_scores,
)
from .synth import demo_config, make_synthetic, write_synthetic

__version__ = "0.1.0"
