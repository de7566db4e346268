"""End-to-end assembly: frozen backbone + adapters + prompts + head."""

from __future__ import annotations

import torch
from torch import nn

from .backbone import AdapterHooks, TwoTowerBackbone, encode_video
from .errors import InputContractError
from .prompts import PromptBank, build_prompt_bank, embed_prompts, levels_for_mode
from .quality import LevelScores, QualityHead, level_scores
from .scma import AdapterState, SCMAConfig


class VideoQualityModel(nn.Module):
    """Scores clips by similarity to quality-level prompts.

    Backbone weights stay frozen; gradients flow only through the adapter
    state, the prompt prefix and the head weights.
    """

    def __init__(
        self,
        backbone: TwoTowerBackbone,
        adapter: AdapterState,
        prompts: PromptBank,
        head: QualityHead,
    ):
        super().__init__()
        if head.num_levels != prompts.num_prompts():
            raise InputContractError(
                f"head has {head.num_levels} weights, prompt bank has "
                f"{prompts.num_prompts()} prompts"
            )
        self.backbone = backbone
        self.adapter = adapter
        self.prompts = prompts
        self.head = head
        for p in self.backbone.parameters():
            p.requires_grad_(False)

    def hooks(self, use_adapter: bool = True) -> AdapterHooks:
        return AdapterHooks(adapter=self.adapter if use_adapter else None)

    def prompt_embeddings(self, use_adapter: bool = True) -> torch.Tensor:
        return embed_prompts(self.prompts, self.backbone, self.hooks(use_adapter))

    def video_embedding(self, prepared: torch.Tensor, use_adapter: bool = True) -> torch.Tensor:
        return encode_video(self.backbone, prepared, self.hooks(use_adapter))

    def score_clips(
        self, prepared_clips: list[torch.Tensor], use_adapter: bool = True
    ) -> tuple[torch.Tensor, LevelScores]:
        """Predictions and per-level similarities for a batch of clips.

        ``use_adapter=False`` runs the identical pipeline against the raw
        frozen backbone (the reference for identity-at-initialization).
        """
        prompt_emb = self.prompt_embeddings(use_adapter)
        videos = torch.stack(
            [self.video_embedding(clip, use_adapter) for clip in prepared_clips]
        )
        scores = level_scores(videos, prompt_emb, self.prompts.levels)
        return self.head(scores.values), scores

    def forward(self, prepared_clips: list[torch.Tensor]) -> torch.Tensor:
        preds, _ = self.score_clips(prepared_clips)
        return preds

    def trainable_modules(self) -> dict[str, nn.Module]:
        return {"adapter": self.adapter, "prompts": self.prompts, "head": self.head}


def assemble_model(
    backbone: TwoTowerBackbone,
    scma_config: SCMAConfig | None = None,
    prompt_mode: str = "five_level_learnable",
    mos_range: tuple[float, float] = (0.0, 1.0),
    softmax_scores: bool = False,
    seed: int = 0,
) -> VideoQualityModel:
    """Standard assembly used by the CLI and the tests."""
    scma_config = scma_config or SCMAConfig()
    adapter = AdapterState(scma_config, backbone.spec, seed=seed)
    prompts = build_prompt_bank(prompt_mode, backbone, seed=seed)
    head = QualityHead(
        num_levels=len(levels_for_mode(prompt_mode)),
        mos_range=mos_range,
        softmax_scores=softmax_scores,
    )
    return VideoQualityModel(backbone, adapter, prompts, head)
