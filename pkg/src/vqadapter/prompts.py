"""Quality-level prompt construction and embedding.

Five fixed templates ("a video of <level> quality") describe the quality
scale; the optional learnable part is a three-vector prefix shared by all
levels, seeded from the embedding of the literal token "X". Antonym modes
keep only the good/bad pair for comparison runs.
"""

from __future__ import annotations

from enum import IntEnum

import torch
from torch import nn

from .backbone import AdapterHooks, TwoTowerBackbone, encode_text
from .errors import InputContractError


class QualityLevel(IntEnum):
    """Five-point quality scale; comparison follows perceptual order."""

    BAD = 0
    POOR = 1
    FAIR = 2
    GOOD = 3
    EXCELLENT = 4

    @property
    def label(self) -> str:
        return self.name.lower()


#: Fixed output order for all per-level quantities (best first).
LEVELS = (
    QualityLevel.EXCELLENT,
    QualityLevel.GOOD,
    QualityLevel.FAIR,
    QualityLevel.POOR,
    QualityLevel.BAD,
)
ANTONYM_LEVELS = (QualityLevel.GOOD, QualityLevel.BAD)

MODE_ANTONYM = "antonym"
MODE_ANTONYM_LEARNABLE = "antonym_learnable"
MODE_FIVE_LEVEL = "five_level"
MODE_FIVE_LEVEL_LEARNABLE = "five_level_learnable"
PROMPT_MODES = (
    MODE_ANTONYM,
    MODE_ANTONYM_LEARNABLE,
    MODE_FIVE_LEVEL,
    MODE_FIVE_LEVEL_LEARNABLE,
)

PREFIX_LENGTH = 3


def is_learnable_mode(mode: str) -> bool:
    return mode in (MODE_ANTONYM_LEARNABLE, MODE_FIVE_LEVEL_LEARNABLE)


def levels_for_mode(mode: str) -> tuple[QualityLevel, ...]:
    if mode not in PROMPT_MODES:
        raise InputContractError(f"unknown prompt mode {mode!r}; expected one of {PROMPT_MODES}")
    return ANTONYM_LEVELS if mode.startswith("antonym") else LEVELS


def prompt_template(level: QualityLevel) -> str:
    return f"a video of {level.label} quality"


class PromptBank(nn.Module):
    """Frozen templates plus the (optionally) learnable prefix vectors."""

    def __init__(
        self,
        mode: str,
        templates: tuple[str, ...],
        token_ids: torch.Tensor,
        prefix: torch.Tensor | None = None,
    ):
        super().__init__()
        if mode not in PROMPT_MODES:
            raise InputContractError(f"unknown prompt mode {mode!r}")
        self.mode = mode
        self.levels = levels_for_mode(mode)
        self.templates = tuple(templates)
        if len(self.templates) != len(self.levels):
            raise InputContractError(
                f"{mode} needs {len(self.levels)} templates, got {len(self.templates)}"
            )
        self.register_buffer("token_ids", token_ids.long())
        if is_learnable_mode(mode):
            if prefix is None or prefix.shape[0] != PREFIX_LENGTH:
                raise InputContractError(
                    f"learnable modes need a prefix of exactly {PREFIX_LENGTH} vectors"
                )
            self.prefix = nn.Parameter(prefix.clone())
        else:
            if prefix is not None:
                raise InputContractError(f"mode {mode} does not take a prefix")
            self.prefix = None

    @property
    def learnable(self) -> bool:
        return self.prefix is not None

    def num_prompts(self) -> int:
        return len(self.levels)


def build_prompt_bank(
    mode: str, backbone: TwoTowerBackbone, seed: int = 0
) -> PromptBank:
    """Tokenized prompt set for ``backbone``.

    Learnable modes reserve three placeholder slots ahead of each template
    and initialize the prefix from the backbone's embedding of the token
    "X" plus small noise to break the symmetry between the three slots.
    """
    levels = levels_for_mode(mode)
    templates = tuple(prompt_template(level) for level in levels)
    n_prefix = PREFIX_LENGTH if is_learnable_mode(mode) else 0
    sequences = [backbone.tokenize(t, n_prefix=n_prefix) for t in templates]
    token_ids = torch.stack([s.ids for s in sequences])
    prefix = None
    if n_prefix:
        seed_emb = backbone.placeholder_seed_embedding()
        gen = torch.Generator().manual_seed(seed)
        noise = torch.randn((n_prefix, seed_emb.shape[0]), generator=gen) * 0.02
        prefix = seed_emb.unsqueeze(0).repeat(n_prefix, 1) + noise
    return PromptBank(mode, templates, token_ids, prefix=prefix)


def embed_prompts(
    bank: PromptBank, backbone: TwoTowerBackbone, hooks: AdapterHooks | None = None
) -> torch.Tensor:
    """Joint-space embedding per prompt, rows in the bank's fixed level order."""
    adapter = hooks.adapter if hooks is not None else None
    return encode_text(
        backbone, bank.token_ids, AdapterHooks(adapter=adapter, prefix=bank.prefix)
    )
