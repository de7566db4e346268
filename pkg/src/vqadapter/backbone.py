"""Frozen two-tower encoder abstraction with adapter hook points.

Every backbone exposes the same surface: per-layer visual/text encoding
with an optional adapter injected between layers, pooled pre-projection
features, and the projections into the joint embedding space. Adapter
deltas are computed from each layer's *input* and added, gated, to that
layer's output; disabling the adapter (or zeroing its gates) reproduces
the frozen model exactly.

The bundled tiny backbone is a deterministic, seed-built stand-in that
makes the whole pipeline testable on a CPU in seconds.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import InputContractError
from .frames import resize_frames

VISUAL = "visual"
TEXTUAL = "textual"


@dataclass(frozen=True)
class BackboneSpec:
    """Dimensions of a two-tower encoder pair.

    ``embed_dim`` is the width of the joint space both projections map
    into; cosine similarity between branches requires it to be shared.
    """

    num_visual_layers: int
    num_text_layers: int
    visual_width: int
    text_width: int
    embed_dim: int
    frame_resolution: int
    context_length: int
    #: When set, video encoding rejects clips with a different frame count.
    frames_per_clip: int | None = None

    def __post_init__(self):
        for name in (
            "num_visual_layers",
            "num_text_layers",
            "visual_width",
            "text_width",
            "embed_dim",
            "frame_resolution",
            "context_length",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise InputContractError(f"{name} must be a positive integer, got {value!r}")
        if self.frames_per_clip is not None and self.frames_per_clip <= 0:
            raise InputContractError("frames_per_clip must be positive when set")

    def branch_width(self, modality: str) -> int:
        if modality == VISUAL:
            return self.visual_width
        if modality == TEXTUAL:
            return self.text_width
        raise InputContractError(f"unknown modality {modality!r}")

    def branch_layers(self, modality: str) -> int:
        return self.num_visual_layers if modality == VISUAL else self.num_text_layers


@dataclass
class LayerActivations:
    """Token representations leaving layer ``layer_index`` of one branch."""

    modality: str
    layer_index: int
    tokens: torch.Tensor


@dataclass
class TokenSequence:
    """Padded token ids plus the slots reserved for learnable prefix vectors."""

    ids: torch.Tensor
    prefix_positions: list[int]
    length: int


@dataclass
class AdapterHooks:
    """Trainable state injected into a frozen forward pass.

    ``adapter`` carries the per-layer and projection-stage deltas;
    ``prefix`` (n_prefix x token-embedding-width) replaces the placeholder
    token embeddings of the text branch.
    """

    adapter: object | None = None
    prefix: torch.Tensor | None = None


class TwoTowerBackbone(ABC):
    """Frozen visual/text encoder pair with per-layer adapter hook points."""

    spec: BackboneSpec

    @abstractmethod
    def prepare_frames(self, frames: np.ndarray) -> torch.Tensor:
        """Resize and pixel-normalize raw [0, 1] frames for the visual tower."""

    @abstractmethod
    def tokenize(self, text: str, n_prefix: int = 0) -> TokenSequence:
        """Tokenize ``text`` with ``n_prefix`` leading placeholder slots."""

    @abstractmethod
    def placeholder_seed_embedding(self) -> torch.Tensor:
        """Embedding of the literal placeholder token, used to seed prefixes."""

    @property
    @abstractmethod
    def token_embedding_width(self) -> int:
        """Width of text token embeddings (prefix vectors must match it)."""

    @abstractmethod
    def visual_features(
        self, prepared: torch.Tensor, adapter=None, collect: bool = False
    ) -> tuple[torch.Tensor, list[LayerActivations]]:
        """Pooled pre-projection visual feature for one clip's frames."""

    @abstractmethod
    def text_features(
        self,
        ids: torch.Tensor,
        adapter=None,
        prefix: torch.Tensor | None = None,
        collect: bool = False,
    ) -> tuple[torch.Tensor, list[LayerActivations]]:
        """Pooled pre-projection text features for a batch of id rows."""

    @abstractmethod
    def project_visual(self, pooled: torch.Tensor) -> torch.Tensor:
        """Frozen projection of pooled visual features into the joint space."""

    @abstractmethod
    def project_text(self, pooled: torch.Tensor) -> torch.Tensor:
        """Frozen projection of pooled text features into the joint space."""

    @abstractmethod
    def parameter_items(self) -> list[tuple[str, torch.Tensor]]:
        """All frozen tensors, stable order, for checksums and audits."""


def _adapter_for(adapter, modality: str):
    """The adapter if it applies any delta to this branch, else None."""
    if adapter is None or not adapter.adapts_branch(modality):
        return None
    return adapter


def run_layers(
    layers,
    tokens: torch.Tensor,
    modality: str,
    adapter=None,
    collect: bool = False,
) -> tuple[torch.Tensor, list[LayerActivations]]:
    """Shared layer loop: frozen layer forward plus gated adapter delta.

    The delta at layer k is a function of the layer *input* and is added
    to the layer output, so a zero gate leaves the frozen path untouched.
    """
    adapter = _adapter_for(adapter, modality)
    activations: list[LayerActivations] = []
    x = tokens
    for k, layer in enumerate(layers):
        y = layer(x)
        if adapter is not None and adapter.is_adapted(k, modality):
            delta = adapter.escma_delta(x, k, modality)
            y = adapter.apply_escma(y, delta, k, modality)
        x = y
        if collect:
            activations.append(
                LayerActivations(modality=modality, layer_index=k, tokens=x.detach().clone())
            )
    return x, activations


def _project_with_pscma(backbone, pooled, modality, adapter):
    if modality == VISUAL:
        out = backbone.project_visual(pooled)
    else:
        out = backbone.project_text(pooled)
    adapter = _adapter_for(adapter, modality)
    if adapter is not None and adapter.config.enable_pscma:
        out = out + adapter.pscma_gate_value(modality) * adapter.pscma_delta(pooled, modality)
    return out


def encode_video(
    backbone: TwoTowerBackbone,
    prepared: torch.Tensor,
    hooks: AdapterHooks | None = None,
    collect_activations: bool = False,
):
    """Joint-space embedding of one clip.

    ``prepared`` must come from :meth:`TwoTowerBackbone.prepare_frames`
    (already sampled to the configured count and resized). Frames are
    encoded through the frozen tower with optional adapter deltas, pooled,
    and projected; the projection-stage adapter applies as a gated
    residual parallel to the frozen projection.
    """
    spec = backbone.spec
    if spec.frames_per_clip is not None and prepared.shape[0] != spec.frames_per_clip:
        raise InputContractError(
            f"expected {spec.frames_per_clip} frames per clip, got {prepared.shape[0]}"
        )
    adapter = hooks.adapter if hooks is not None else None
    pooled, acts = backbone.visual_features(prepared, adapter, collect=collect_activations)
    embedding = _project_with_pscma(backbone, pooled, VISUAL, adapter)
    if collect_activations:
        return embedding, acts
    return embedding


def encode_text(
    backbone: TwoTowerBackbone,
    token_ids: torch.Tensor,
    hooks: AdapterHooks | None = None,
    collect_activations: bool = False,
):
    """Joint-space embeddings for a batch of tokenized prompts.

    Learnable prefix vectors in ``hooks.prefix`` replace the placeholder
    token embeddings before the first encoder layer.
    """
    if token_ids.dim() == 1:
        token_ids = token_ids.unsqueeze(0)
    if token_ids.shape[1] > backbone.spec.context_length:
        raise InputContractError(
            f"token sequence of length {token_ids.shape[1]} exceeds "
            f"context_length {backbone.spec.context_length}"
        )
    adapter = hooks.adapter if hooks is not None else None
    prefix = hooks.prefix if hooks is not None else None
    pooled, acts = backbone.text_features(
        token_ids, adapter, prefix=prefix, collect=collect_activations
    )
    embedding = _project_with_pscma(backbone, pooled, TEXTUAL, adapter)
    if collect_activations:
        return embedding, acts
    return embedding


def backbone_checksum(backbone: TwoTowerBackbone) -> str:
    """SHA-256 over all frozen tensors; changes iff any weight changes."""
    digest = hashlib.sha256()
    for name, tensor in sorted(backbone.parameter_items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# --- tiny deterministic backbone --------------------------------------------

#: Byte-level vocabulary plus specials.
_BOS = 256
_EOS = 257
_PAD = 258
PLACEHOLDER_TOKEN_ID = 259
_VOCAB = 260


class _FrozenBlock(nn.Module):
    """Residual token-wise MLP block: x + W2 gelu(W1 LN(x))."""

    def __init__(self, width: int, gen: torch.Generator):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)
        std = 0.7 / width**0.5
        with torch.no_grad():
            for lin in (self.fc1, self.fc2):
                lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen) * std)
                lin.bias.copy_(torch.randn(lin.bias.shape, generator=gen) * 0.01)

    def forward(self, x):
        return x + self.fc2(torch.nn.functional.gelu(self.fc1(self.norm(x))))


def _frozen_linear(d_in: int, d_out: int, gen: torch.Generator) -> nn.Linear:
    lin = nn.Linear(d_in, d_out)
    with torch.no_grad():
        lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen) / d_in**0.5)
        lin.bias.copy_(torch.randn(lin.bias.shape, generator=gen) * 0.01)
    return lin


class TinyBackbone(TwoTowerBackbone, nn.Module):
    """Seed-deterministic frozen encoder pair for desk-scale runs.

    Each frame becomes one visual token via a fixed linear map; text uses
    byte-level tokens. Layers are token-wise residual MLP blocks, pooling
    is a mean over frames / non-pad tokens. Same (seed, spec) always
    builds the same weights.
    """

    def __init__(self, spec: BackboneSpec, seed: int = 0):
        nn.Module.__init__(self)
        self.spec = spec
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        res = spec.frame_resolution
        self.visual_in = _frozen_linear(res * res * 3, spec.visual_width, gen)
        self.visual_layers = nn.ModuleList(
            _FrozenBlock(spec.visual_width, gen) for _ in range(spec.num_visual_layers)
        )
        self.visual_proj = _frozen_linear(spec.visual_width, spec.embed_dim, gen)
        self.token_embedding = nn.Embedding(_VOCAB, spec.text_width)
        self.position_embedding = nn.Parameter(
            torch.randn((spec.context_length, spec.text_width), generator=gen) * 0.02
        )
        with torch.no_grad():
            self.token_embedding.weight.copy_(
                torch.randn(self.token_embedding.weight.shape, generator=gen)
                / spec.text_width**0.5
            )
        self.text_layers = nn.ModuleList(
            _FrozenBlock(spec.text_width, gen) for _ in range(spec.num_text_layers)
        )
        self.text_proj = _frozen_linear(spec.text_width, spec.embed_dim, gen)
        self.requires_grad_(False)
        self.eval()

    # pixel contract: [0, 1] inputs mapped to [-1, 1]
    def prepare_frames(self, frames: np.ndarray) -> torch.Tensor:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise InputContractError(f"expected (N, H, W, 3) frames, got {frames.shape}")
        res = self.spec.frame_resolution
        frames = resize_frames(frames, (res, res))
        return torch.from_numpy(frames) * 2.0 - 1.0

    def tokenize(self, text: str, n_prefix: int = 0) -> TokenSequence:
        body = list(text.encode("utf-8"))
        ids = [_BOS] + [PLACEHOLDER_TOKEN_ID] * n_prefix + body + [_EOS]
        if len(ids) > self.spec.context_length:
            raise InputContractError(
                f"prompt needs {len(ids)} tokens, context_length is {self.spec.context_length}"
            )
        length = len(ids)
        ids = ids + [_PAD] * (self.spec.context_length - length)
        return TokenSequence(
            ids=torch.tensor(ids, dtype=torch.long),
            prefix_positions=list(range(1, 1 + n_prefix)),
            length=length,
        )

    def placeholder_seed_embedding(self) -> torch.Tensor:
        return self.token_embedding.weight[ord("X")].detach().clone()

    @property
    def token_embedding_width(self) -> int:
        return self.spec.text_width

    def visual_features(self, prepared, adapter=None, collect=False):
        res = self.spec.frame_resolution
        if prepared.dim() != 4 or prepared.shape[1:] != (res, res, 3):
            raise InputContractError(
                f"prepared frames must be (N, {res}, {res}, 3), got {tuple(prepared.shape)}"
            )
        tokens = self.visual_in(prepared.reshape(prepared.shape[0], -1))
        tokens, acts = run_layers(self.visual_layers, tokens, VISUAL, adapter, collect)
        return tokens.mean(dim=0), acts

    def text_features(self, ids, adapter=None, prefix=None, collect=False):
        if ids.dim() != 2:
            raise InputContractError(f"token ids must be (B, L), got {tuple(ids.shape)}")
        emb = self.token_embedding(ids)
        if prefix is not None:
            mask = ids == PLACEHOLDER_TOKEN_ID
            if mask.any():
                emb = emb.clone()
                for b in range(ids.shape[0]):
                    positions = mask[b].nonzero(as_tuple=True)[0]
                    if len(positions) != len(prefix):
                        raise InputContractError(
                            f"row {b} has {len(positions)} placeholder slots, "
                            f"prefix provides {len(prefix)}"
                        )
                    emb[b, positions] = prefix.to(emb.dtype)
        emb = emb + self.position_embedding[: ids.shape[1]]
        tokens, acts = run_layers(self.text_layers, emb, TEXTUAL, adapter, collect)
        valid = (ids != _PAD).unsqueeze(-1).to(tokens.dtype)
        pooled = (tokens * valid).sum(dim=1) / valid.sum(dim=1).clamp_min(1.0)
        return pooled, acts

    def project_visual(self, pooled):
        return self.visual_proj(pooled)

    def project_text(self, pooled):
        return self.text_proj(pooled)

    def parameter_items(self):
        return [(name, p) for name, p in self.named_parameters()]


def make_tiny_backbone(seed: int, spec: BackboneSpec) -> TinyBackbone:
    """Frozen deterministic backbone; same (seed, spec) gives identical weights."""
    return TinyBackbone(spec, seed=seed)
