"""Trainable reference encoder with a masked-LM output head.

A small bidirectional self-attention encoder over a word-level vocabulary
stands in for a pretrained language model so the whole training and
evaluation pipeline runs on a CPU in seconds. The output head is tied to
the embedding table by default, and the vocabulary grows in place when new
anchor rows are registered: rows are stored in per-task parameter blocks so
extending the vocabulary can never touch (or re-order) existing rows.

Everything runs in float64: the model is tiny, and the extra precision
keeps finite-difference gradient checks and cross-run determinism simple.
"""
from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import torch
from torch import nn

from .anchor_vocab import AnchorRecord, AnchorVocabulary
from .errors import (
    DimensionMismatchError,
    IdOutOfRangeError,
    LayerIndexOutOfRangeError,
    NonFiniteLossError,
)

DTYPE = torch.float64

UNK = "<unk>"


class SequenceEncoder(Protocol):
    """Capability contract for pluggable encoders.

    Any encoder exposing this surface (a pretrained-transformer adapter
    would implement it with a subword tokenizer) can drive the continual
    pipeline. Only the word-level reference implementation below ships.
    """

    def forward(self, input_ids) -> torch.Tensor: ...

    def extend_vocab(self, new_rows) -> None: ...

    def freeze_lower(self, n: int) -> None: ...

    @property
    def extended_size(self) -> int: ...


class WordTokenizer:
    """Word-level vocabulary with a single unknown token at id 0."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens: list[str] = [UNK]
        self._ids: dict[str, int] = {UNK: 0}
        for tok in tokens:
            if tok not in self._ids:
                self._ids[tok] = len(self.tokens)
                self.tokens.append(tok)

    @classmethod
    def build(
        cls,
        corpora: Iterable[Iterable[Sequence[str]]],
        extra_tokens: Sequence[str] = (),
    ) -> "WordTokenizer":
        """Collect tokens in encounter order from token-sequence iterables."""
        seen: list[str] = []
        seen_set: set[str] = set()
        for corpus in corpora:
            for token_seq in corpus:
                for tok in token_seq:
                    if tok not in seen_set:
                        seen_set.add(tok)
                        seen.append(tok)
        for tok in extra_tokens:
            if tok not in seen_set:
                seen_set.add(tok)
                seen.append(tok)
        return cls(seen)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, 0)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def pieces(self, token: str) -> list[int]:
        """Unit ids a token decomposes into; a single id at word level.

        Subword adapters return several ids here, and callers average the
        corresponding embedding rows.
        """
        return [self.id(token)]

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    ffn_mult: int = 4
    tie_weights: bool = True
    freeze_embeddings: bool = False
    init_std: float = 0.02
    seed: int = 0


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block, no dropout."""

    def __init__(self, d_model: int, n_heads: int, ffn_mult: int):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn_in = nn.Linear(d_model, ffn_mult * d_model)
        self.ffn_out = nn.Linear(ffn_mult * d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, d = x.shape
        h = self.norm1(x)
        q, k, v = self.qkv(h).split(d, dim=1)
        q = q.view(n, self.n_heads, self.d_head).transpose(0, 1)
        k = k.view(n, self.n_heads, self.d_head).transpose(0, 1)
        v = v.view(n, self.n_heads, self.d_head).transpose(0, 1)
        scores = q @ k.transpose(1, 2) / math.sqrt(self.d_head)
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(0, 1).reshape(n, d)
        x = x + self.proj(mixed)
        x = x + self.ffn_out(torch.nn.functional.gelu(self.ffn_in(self.norm2(x))))
        return x


def _sinusoidal_positions(length: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=DTYPE).unsqueeze(1)
    idx = torch.arange(0, d_model, 2, dtype=DTYPE)
    angle = pos / torch.pow(torch.tensor(10000.0, dtype=DTYPE), idx / d_model)
    enc = torch.zeros(length, d_model, dtype=DTYPE)
    enc[:, 0::2] = torch.sin(angle)
    enc[:, 1::2] = torch.cos(angle[:, : (d_model + 1) // 2])
    return enc


class TinyRefModel(nn.Module):
    """Word-level self-attention encoder with an extendable tied MLM head.

    The vocabulary rows live in a base block plus one block per registered
    task; logits for each block are computed separately and concatenated,
    so extending the vocabulary leaves old rows and old logits bit-exact.

    An optional per-token classification head (O + seen types) supports the
    degraded mode where anchor prediction is replaced by a conventional
    extendable classifier. Both heads share the encoder.
    """

    def __init__(self, tokenizer: WordTokenizer, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        self.tokenizer = tokenizer
        cfg = self.config

        self.blocks = nn.ModuleList(
            EncoderBlock(cfg.d_model, cfg.n_heads, cfg.ffn_mult)
            for _ in range(cfg.n_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d_model)
        self.to(DTYPE)

        gen = torch.Generator().manual_seed(cfg.seed)
        self.base_embedding = nn.Parameter(
            torch.empty(len(tokenizer), cfg.d_model, dtype=DTYPE).normal_(
                0.0, cfg.init_std, generator=gen
            )
        )
        self.anchor_blocks = nn.ParameterList()
        self.base_bias = nn.Parameter(torch.zeros(len(tokenizer), dtype=DTYPE))
        self.anchor_biases = nn.ParameterList()
        if not cfg.tie_weights:
            self.head_base = nn.Parameter(self.base_embedding.detach().clone())
            self.head_anchor_blocks = nn.ParameterList()
        self.classifier_blocks = nn.ParameterList()
        self.classifier_biases = nn.ParameterList()

        for module in self.modules():
            if isinstance(module, nn.Linear):
                module.weight.data.normal_(0.0, cfg.init_std, generator=gen)
                module.bias.data.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.data.fill_(1.0)
                module.bias.data.zero_()

        self.frozen_layers = 0
        self.forward_calls = 0
        self._pos_cache: dict[int, torch.Tensor] = {}

    # sizes ---------------------------------------------------------------

    @property
    def base_size(self) -> int:
        return self.base_embedding.shape[0]

    @property
    def anchor_count(self) -> int:
        return sum(int(b.shape[0]) for b in self.anchor_blocks)

    @property
    def extended_size(self) -> int:
        return self.base_size + self.anchor_count

    @property
    def num_classes(self) -> int:
        return sum(int(b.shape[0]) for b in self.classifier_blocks)

    @property
    def num_layers(self) -> int:
        return len(self.blocks)

    # forward -------------------------------------------------------------

    def _positions(self, length: int) -> torch.Tensor:
        if length not in self._pos_cache:
            self._pos_cache[length] = _sinusoidal_positions(
                length, self.config.d_model
            )
        return self._pos_cache[length]

    def embedding_table(self) -> torch.Tensor:
        """Full input embedding matrix, base rows then anchor blocks."""
        if self.anchor_blocks:
            return torch.cat([self.base_embedding, *self.anchor_blocks], dim=0)
        return self.base_embedding

    def encode(self, input_ids) -> torch.Tensor:
        """Contextual hidden states, one forward pass. Shape (N, d_model)."""
        ids = torch.as_tensor(input_ids, dtype=torch.long)
        if ids.dim() != 1:
            raise ValueError("expected a single flat id sequence")
        if ids.numel() == 0:
            raise ValueError("empty input")
        if int(ids.max()) >= self.extended_size or int(ids.min()) < 0:
            raise IdOutOfRangeError(
                f"id outside vocabulary of size {self.extended_size}"
            )
        self.forward_calls += 1
        table = self.embedding_table()
        x = table[ids] + self._positions(ids.shape[0])
        for block in self.blocks:
            x = block(x)
        return self.final_norm(x)

    def _head_blocks(self) -> list[torch.Tensor]:
        if self.config.tie_weights:
            return [self.base_embedding, *self.anchor_blocks]
        return [self.head_base, *self.head_anchor_blocks]

    def logits_from_hidden(self, hidden: torch.Tensor) -> torch.Tensor:
        biases = [self.base_bias, *self.anchor_biases]
        pieces = [
            hidden @ w.transpose(0, 1) + b
            for w, b in zip(self._head_blocks(), biases)
        ]
        return torch.cat(pieces, dim=1) if len(pieces) > 1 else pieces[0]

    def forward(self, input_ids) -> torch.Tensor:
        """Per-position logits over the full extended vocabulary."""
        return self.logits_from_hidden(self.encode(input_ids))

    def classifier_forward(self, input_ids) -> torch.Tensor:
        """Per-position logits over O + seen types (degraded head mode)."""
        if not self.classifier_blocks:
            raise ValueError("classifier head has not been extended yet")
        hidden = self.encode(input_ids)
        pieces = [
            hidden @ w.transpose(0, 1) + b
            for w, b in zip(self.classifier_blocks, self.classifier_biases)
        ]
        return torch.cat(pieces, dim=1) if len(pieces) > 1 else pieces[0]

    def reset_forward_count(self) -> None:
        self.forward_calls = 0

    # vocabulary growth ---------------------------------------------------

    def extend_vocab(self, new_rows) -> None:
        """Append anchor rows initialized to the given vectors.

        Existing rows are untouched; new bias entries start at zero. With
        an untied head the same vectors also initialize the new head rows.
        """
        rows = torch.as_tensor(np.asarray(new_rows), dtype=DTYPE)
        if rows.dim() == 1:
            rows = rows.unsqueeze(0)
        if rows.dim() != 2 or rows.shape[1] != self.config.d_model:
            raise DimensionMismatchError(
                f"expected vectors of dimension {self.config.d_model}, "
                f"got shape {tuple(rows.shape)}"
            )
        self.anchor_blocks.append(nn.Parameter(rows.clone()))
        self.anchor_biases.append(
            nn.Parameter(torch.zeros(rows.shape[0], dtype=DTYPE))
        )
        if not self.config.tie_weights:
            self.head_anchor_blocks.append(nn.Parameter(rows.clone()))

    def extend_classifier(self, n_new: int, seed: int = 0) -> None:
        """Grow the classification head by n_new type rows.

        The first extension also creates the O row (class 0). New rows are
        randomly initialized; old rows are never touched.
        """
        rows = n_new + (0 if self.classifier_blocks else 1)
        gen = torch.Generator().manual_seed(seed)
        block = torch.empty(rows, self.config.d_model, dtype=DTYPE).normal_(
            0.0, self.config.init_std, generator=gen
        )
        self.classifier_blocks.append(nn.Parameter(block))
        self.classifier_biases.append(
            nn.Parameter(torch.zeros(rows, dtype=DTYPE))
        )

    # embedding access ----------------------------------------------------

    def word_vector(self, word: str) -> np.ndarray:
        """Embedding for a surface word.

        Words the tokenizer splits into several units contribute the mean
        of their unit rows; at word level this is a single row.
        """
        ids = self.tokenizer.pieces(word)
        rows = self.base_embedding.detach()[ids]
        return rows.mean(dim=0).numpy().copy()

    # freezing ------------------------------------------------------------

    def freeze_lower(self, n: int) -> None:
        """Mark encoder blocks 1..n as non-trainable for subsequent steps."""
        if not 0 <= n <= self.num_layers:
            raise LayerIndexOutOfRangeError(
                f"cannot freeze {n} of {self.num_layers} layers"
            )
        self.frozen_layers = n

    def trainable_parameters(self) -> list[nn.Parameter]:
        """Parameters the optimizer may update.

        Frozen blocks stay out; anchor rows are always in (they are the
        new capacity each task adds); the base embedding follows the
        freeze_embeddings switch.
        """
        params: list[nn.Parameter] = []
        for i, block in enumerate(self.blocks):
            if i >= self.frozen_layers:
                params.extend(block.parameters())
        params.extend(self.final_norm.parameters())
        if not self.config.freeze_embeddings:
            params.append(self.base_embedding)
            if not self.config.tie_weights:
                params.append(self.head_base)
        params.extend(self.anchor_blocks)
        params.append(self.base_bias)
        params.extend(self.anchor_biases)
        if not self.config.tie_weights:
            params.extend(self.head_anchor_blocks)
        params.extend(self.classifier_blocks)
        params.extend(self.classifier_biases)
        return params


def snapshot(model: TinyRefModel) -> TinyRefModel:
    """Deep-copied frozen teacher; later student updates cannot reach it."""
    teacher = copy.deepcopy(model)
    for param in teacher.parameters():
        param.requires_grad_(False)
    teacher.eval()
    teacher.reset_forward_count()
    return teacher


def make_optimizer(model: TinyRefModel, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.trainable_parameters(), lr=lr)


def grad_step(
    model: TinyRefModel, loss: torch.Tensor, optimizer: torch.optim.Optimizer
) -> None:
    """One adaptive-moment update on the trainable parameters."""
    if not torch.isfinite(loss):
        raise NonFiniteLossError(f"loss is {loss.item()!r}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()


def param_hash(model: nn.Module) -> str:
    """Order-stable digest of all parameter values."""
    digest = hashlib.sha256()
    for name, param in sorted(model.state_dict().items()):
        digest.update(name.encode())
        digest.update(param.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# checkpointing -----------------------------------------------------------

CHECKPOINT_FORMAT = "anchorner-checkpoint-v1"


def save_checkpoint(
    model: TinyRefModel,
    vocab: AnchorVocabulary,
    path: str | Path,
    config_echo: dict | None = None,
) -> None:
    """Self-describing checkpoint: parameters, vocab manifest, config echo."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "encoder_config": asdict(model.config),
        "tokenizer_tokens": list(model.tokenizer.tokens[1:]),  # UNK implicit
        "anchor_block_sizes": [int(b.shape[0]) for b in model.anchor_blocks],
        "classifier_block_sizes": [
            int(b.shape[0]) for b in model.classifier_blocks
        ],
        "frozen_layers": model.frozen_layers,
        "state_dict": model.state_dict(),
        "anchor_records": [
            {
                "anchor_token": r.anchor_token,
                "entity_type": r.entity_type,
                "task_index": r.task_index,
                "rep_words": list(r.rep_words),
                "init_vector": None
                if r.init_vector is None
                else r.init_vector.tolist(),
            }
            for r in vocab.records
        ],
        "base_size": vocab.base_size,
        "config_echo": config_echo or {},
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> tuple[TinyRefModel, AnchorVocabulary, dict]:
    payload = torch.load(str(path), weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a recognized checkpoint: {path}")
    tokenizer = WordTokenizer(payload["tokenizer_tokens"])
    config = EncoderConfig(**payload["encoder_config"])
    model = TinyRefModel(tokenizer, config)
    for size in payload["anchor_block_sizes"]:
        model.extend_vocab(np.zeros((size, config.d_model)))
    offset = 0
    for size in payload["classifier_block_sizes"]:
        model.extend_classifier(size if offset else size - 1, seed=0)
        offset += size
    model.load_state_dict(payload["state_dict"])
    model.frozen_layers = payload["frozen_layers"]
    vocab = AnchorVocabulary(base_size=payload["base_size"])
    for record in payload["anchor_records"]:
        vocab.records.append(
            AnchorRecord(
                anchor_token=record["anchor_token"],
                entity_type=record["entity_type"],
                task_index=record["task_index"],
                rep_words=tuple(record["rep_words"]),
                init_vector=None
                if record["init_vector"] is None
                else np.asarray(record["init_vector"], dtype=np.float64),
            )
        )
    return model, vocab, payload["config_echo"]
