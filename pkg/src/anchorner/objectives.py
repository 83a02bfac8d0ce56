"""Training objectives: anchor prediction loss and masked distillation.

Both losses work on per-position logits over the extended vocabulary. The
prediction loss is plain cross entropy against the instance targets. The
distillation loss keeps a frozen copy of the pre-task model as teacher and
matches the student to it position-wise, skipping positions inside current
task mentions, where the two models legitimately disagree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .errors import (
    EmptyPositionSetError,
    NonFiniteInputError,
    SupportMismatchError,
)
from .prompting import PromptInstance, Role


@dataclass(frozen=True)
class LossConfig:
    """Mixing weights for the combined objective.

    ``restrict_pt_positions`` limits the prediction loss to mention and
    demonstration-slot positions instead of every position; off by default.
    """

    alpha: float = 1.0
    beta: float = 1.0
    restrict_pt_positions: bool = False

    def __post_init__(self):
        if self.alpha == 0.0 and self.beta == 0.0:
            raise ValueError("alpha and beta must not both be zero")


def pt_loss(
    logits: torch.Tensor,
    target_ids: Sequence[int] | torch.Tensor,
    pt_positions: Sequence[int] | None = None,
) -> torch.Tensor:
    """Mean cross entropy of the target ids under the logits.

    ``pt_positions`` selects which positions contribute; by default all of
    them do. An explicitly empty selection is a caller bug.
    """
    if logits.ndim != 2:
        raise ValueError(f"expected (positions, vocab) logits, got {logits.shape}")
    targets = torch.as_tensor(target_ids, dtype=torch.long)
    if targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ValueError(
            f"targets {tuple(targets.shape)} do not match logits "
            f"{tuple(logits.shape)}"
        )
    if targets.numel() == 0:
        raise EmptyPositionSetError("no positions to score")
    if pt_positions is not None:
        index = torch.as_tensor(list(pt_positions), dtype=torch.long)
        if index.numel() == 0:
            raise EmptyPositionSetError("empty prediction position set")
        if index.numel() and (index.min() < 0 or index.max() >= logits.shape[0]):
            raise ValueError("prediction position out of range")
        logits = logits[index]
        targets = targets[index]
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = log_probs.gather(1, targets.unsqueeze(1)).squeeze(1)
    return -picked.mean()


def pt_positions_for(instance: PromptInstance) -> list[int]:
    """Positions the restricted prediction loss keeps: mentions and slots."""
    keep = (Role.CONTENT_CURRENT_ENTITY, Role.TEMPLATE_ANCHOR_SLOT)
    return [i for i, r in enumerate(instance.roles) if r in keep]


def kd_position_mask(instance: PromptInstance) -> torch.Tensor:
    """Boolean mask of positions the distillation loss matches.

    False exactly at current-task mention tokens; glue, demonstration and
    plain content positions all stay on.
    """
    return torch.tensor(
        [r != Role.CONTENT_CURRENT_ENTITY for r in instance.roles],
        dtype=torch.bool,
    )


def kd_loss(
    student_logits: torch.Tensor,
    teacher_logits: torch.Tensor,
    mask: torch.Tensor,
    teacher_support: int,
) -> torch.Tensor:
    """Masked mean KL(teacher || student) over the teacher's vocabulary.

    The student has extra vocabulary rows the teacher never saw; its logits
    are cut down to the first ``teacher_support`` entries and renormalized
    there, so both distributions live on the same support. Positions where
    the mask is false are skipped; with nothing left the loss is zero by
    convention, matching sentences made entirely of new-type mentions.
    """
    if student_logits.ndim != 2 or teacher_logits.ndim != 2:
        raise ValueError("expected (positions, vocab) logit matrices")
    if teacher_logits.shape[1] != teacher_support:
        raise SupportMismatchError(
            f"teacher logits cover {teacher_logits.shape[1]} ids, "
            f"expected {teacher_support}"
        )
    if student_logits.shape[1] < teacher_support:
        raise SupportMismatchError(
            f"student covers {student_logits.shape[1]} ids, fewer than the "
            f"teacher's {teacher_support}"
        )
    if student_logits.shape[0] != teacher_logits.shape[0]:
        raise SupportMismatchError(
            f"position counts differ: student {student_logits.shape[0]}, "
            f"teacher {teacher_logits.shape[0]}"
        )
    if mask.shape[0] != student_logits.shape[0]:
        raise ValueError("mask length does not match logits")
    mask = mask.to(torch.bool)
    if not bool(mask.any()):
        return torch.zeros((), dtype=student_logits.dtype)
    student = torch.log_softmax(
        student_logits[mask, :teacher_support], dim=-1
    )
    teacher = torch.log_softmax(teacher_logits[mask], dim=-1)
    kl = (teacher.exp() * (teacher - student)).sum(dim=-1)
    return kl.mean()


def total_loss(
    l_kd: torch.Tensor | float,
    l_pt: torch.Tensor | float,
    config: LossConfig,
) -> torch.Tensor:
    """alpha-weighted distillation plus beta-weighted prediction loss."""
    kd = torch.as_tensor(l_kd, dtype=torch.float64)
    pt = torch.as_tensor(l_pt, dtype=torch.float64)
    if not torch.isfinite(kd) or not torch.isfinite(pt):
        raise NonFiniteInputError(
            f"non-finite loss terms: kd={float(kd)}, pt={float(pt)}"
        )
    return config.alpha * kd + config.beta * pt
