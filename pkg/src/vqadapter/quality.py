"""Similarity scoring against the prompt set and the weighted-sum head."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import NumericContractError, InputContractError
from .prompts import QualityLevel

#: Ordinal anchors for head initialization, best level first.
FIVE_LEVEL_ANCHORS = (1.0, 0.75, 0.5, 0.25, 0.0)
ANTONYM_ANCHORS = (1.0, 0.0)


@dataclass
class LevelScores:
    """Cosine similarity per quality level, each in [-1, 1].

    ``values`` has the level axis last, so a single video gives shape (L,)
    and a batch gives (B, L); ``levels`` names that axis in fixed order.
    """

    values: torch.Tensor
    levels: tuple[QualityLevel, ...]

    def as_dict(self) -> dict[str, float]:
        if self.values.dim() != 1:
            raise InputContractError("as_dict applies to single-video scores")
        return {lvl.label: float(v) for lvl, v in zip(self.levels, self.values)}


def level_scores(
    video_embedding: torch.Tensor,
    prompt_embeddings: torch.Tensor,
    levels: tuple[QualityLevel, ...],
) -> LevelScores:
    """Cosine similarity of the video against each level prompt.

    ``video_embedding`` is (d,) or (B, d); ``prompt_embeddings`` is (L, d)
    in level order. Zero-norm inputs are rejected: the similarity would be
    undefined.
    """
    if prompt_embeddings.shape[0] != len(levels):
        raise InputContractError(
            f"{prompt_embeddings.shape[0]} prompt rows for {len(levels)} levels"
        )
    if video_embedding.shape[-1] != prompt_embeddings.shape[-1]:
        raise InputContractError(
            f"embedding width {video_embedding.shape[-1]} != prompt width "
            f"{prompt_embeddings.shape[-1]}"
        )
    v_norm = video_embedding.norm(dim=-1)
    t_norm = prompt_embeddings.norm(dim=-1)
    if bool((v_norm == 0).any()) or bool((t_norm == 0).any()):
        raise NumericContractError("zero-norm embedding: cosine similarity undefined")
    sims = (video_embedding.unsqueeze(-2) * prompt_embeddings).sum(-1)
    sims = sims / (v_norm.unsqueeze(-1) * t_norm)
    return LevelScores(values=sims, levels=tuple(levels))


class QualityHead(nn.Module):
    """Learnable weighted sum of the per-level similarities.

    Weights start at the ordinal anchors mapped onto the label range, so
    an untrained head already orders levels sensibly. ``softmax_scores``
    turns the raw similarities into a distribution first (off by default;
    the plain weighted sum is the reference behaviour).
    """

    def __init__(
        self,
        num_levels: int = 5,
        mos_range: tuple[float, float] = (0.0, 1.0),
        softmax_scores: bool = False,
    ):
        super().__init__()
        if num_levels == 5:
            anchors = FIVE_LEVEL_ANCHORS
        elif num_levels == 2:
            anchors = ANTONYM_ANCHORS
        else:
            raise InputContractError(f"unsupported level count {num_levels}")
        lo, hi = float(mos_range[0]), float(mos_range[1])
        init = torch.tensor([lo + a * (hi - lo) for a in anchors], dtype=torch.float32)
        self.weight = nn.Parameter(init)
        self.softmax_scores = softmax_scores

    @property
    def num_levels(self) -> int:
        return self.weight.shape[0]

    def forward(self, scores: torch.Tensor) -> torch.Tensor:
        if scores.shape[-1] != self.num_levels:
            raise InputContractError(
                f"{scores.shape[-1]} scores for a {self.num_levels}-level head"
            )
        if self.softmax_scores:
            scores = torch.softmax(scores, dim=-1)
        return (scores * self.weight).sum(dim=-1)


def predict_quality(scores: LevelScores, head: QualityHead) -> torch.Tensor:
    """Scalar quality prediction: the head's weighted sum of the level scores."""
    return head(scores.values)
