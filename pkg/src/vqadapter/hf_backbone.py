"""Binding for pretrained two-tower contrastive encoders via transformers.

Wraps a CLIP-style checkpoint (any width/depth) behind the same surface
as the tiny backbone. Adapter deltas are injected with forward hooks on
the encoder layers, so the upstream forward pass stays byte-identical
when no adapter is active. Frames are encoded independently and
mean-pooled before the projection stage.
"""

from __future__ import annotations

from contextlib import ExitStack, contextmanager

import numpy as np
import torch
from torch import nn

from .backbone import (
    TEXTUAL,
    VISUAL,
    BackboneSpec,
    LayerActivations,
    TokenSequence,
    TwoTowerBackbone,
)
from .errors import InputContractError
from .frames import resize_frames

# Published normalization constants of the CLIP family of encoders; they
# belong to the binding, not to global configuration.
_PIXEL_MEAN = (0.48145466, 0.4578275, 0.40821073)
_PIXEL_STD = (0.26862954, 0.26130258, 0.27577711)


class PretrainedClipBackbone(TwoTowerBackbone, nn.Module):
    def __init__(self, checkpoint_path: str):
        nn.Module.__init__(self)
        try:
            from transformers import AutoTokenizer, CLIPModel
        except ImportError as exc:
            raise InputContractError(
                "the pretrained backbone binding needs the 'transformers' extra"
            ) from exc
        self.clip = CLIPModel.from_pretrained(checkpoint_path)
        self.tokenizer = AutoTokenizer.from_pretrained(checkpoint_path)
        self.clip.requires_grad_(False)
        self.clip.eval()
        cfg = self.clip.config
        self.spec = BackboneSpec(
            num_visual_layers=cfg.vision_config.num_hidden_layers,
            num_text_layers=cfg.text_config.num_hidden_layers,
            visual_width=cfg.vision_config.hidden_size,
            text_width=cfg.text_config.hidden_size,
            embed_dim=cfg.projection_dim,
            frame_resolution=cfg.vision_config.image_size,
            context_length=cfg.text_config.max_position_embeddings,
        )
        ids = self.tokenizer("X", add_special_tokens=False)["input_ids"]
        if len(ids) != 1:
            raise InputContractError(
                "tokenizer does not map the placeholder token 'X' to a single id"
            )
        self.placeholder_id = ids[0]
        mean = torch.tensor(_PIXEL_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_PIXEL_STD).view(1, 3, 1, 1)
        self.register_buffer("pixel_mean", mean)
        self.register_buffer("pixel_std", std)

    def prepare_frames(self, frames: np.ndarray) -> torch.Tensor:
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise InputContractError(f"expected (N, H, W, 3) frames, got {frames.shape}")
        res = self.spec.frame_resolution
        frames = resize_frames(frames, (res, res))
        t = torch.from_numpy(frames).permute(0, 3, 1, 2)
        return (t - self.pixel_mean) / self.pixel_std

    def tokenize(self, text: str, n_prefix: int = 0) -> TokenSequence:
        prefixed = " ".join(["X"] * n_prefix + [text]) if n_prefix else text
        ids = self.tokenizer(prefixed)["input_ids"]
        if len(ids) > self.spec.context_length:
            raise InputContractError(
                f"prompt needs {len(ids)} tokens, context_length is "
                f"{self.spec.context_length}"
            )
        positions = [i for i, t in enumerate(ids) if t == self.placeholder_id][:n_prefix]
        if len(positions) != n_prefix:
            raise InputContractError("placeholder tokens were merged by the tokenizer")
        pad = self.tokenizer.pad_token_id
        if pad is None:
            pad = self.tokenizer.eos_token_id
        padded = ids + [pad] * (self.spec.context_length - len(ids))
        return TokenSequence(
            ids=torch.tensor(padded, dtype=torch.long),
            prefix_positions=positions,
            length=len(ids),
        )

    def placeholder_seed_embedding(self) -> torch.Tensor:
        table = self.clip.text_model.embeddings.token_embedding.weight
        return table[self.placeholder_id].detach().clone()

    @property
    def token_embedding_width(self) -> int:
        return self.spec.text_width

    # -- hook plumbing -----------------------------------------------------------

    def _delta_hook(self, adapter, k: int, modality: str):
        def hook(module, args, kwargs, output):
            hidden_in = args[0] if args else kwargs["hidden_states"]
            delta = adapter.escma_delta(hidden_in, k, modality)
            if isinstance(output, tuple):
                return (adapter.apply_escma(output[0], delta, k, modality),) + output[1:]
            return adapter.apply_escma(output, delta, k, modality)

        return hook

    def _collect_hook(self, sink: list, k: int, modality: str):
        def hook(module, args, kwargs, output):
            out = output[0] if isinstance(output, tuple) else output
            sink.append(
                LayerActivations(modality=modality, layer_index=k, tokens=out.detach().clone())
            )
            return output

        return hook

    @contextmanager
    def _hooked(self, layers, modality: str, adapter, sink: list | None):
        adapted = adapter is not None and adapter.adapts_branch(modality)
        with ExitStack() as stack:
            for k, layer in enumerate(layers):
                if adapted and adapter.is_adapted(k, modality):
                    handle = layer.register_forward_hook(
                        self._delta_hook(adapter, k, modality), with_kwargs=True
                    )
                    stack.callback(handle.remove)
                if sink is not None:
                    handle = layer.register_forward_hook(
                        self._collect_hook(sink, k, modality), with_kwargs=True
                    )
                    stack.callback(handle.remove)
            yield

    def _prefix_hook(self, prefix: torch.Tensor):
        def hook(module, args, kwargs, output):
            ids = args[0] if args else kwargs["input"]
            mask = ids == self.placeholder_id
            if not bool(mask.any()):
                return output
            output = output.clone()
            for b in range(ids.shape[0]):
                positions = mask[b].nonzero(as_tuple=True)[0]
                if len(positions) != len(prefix):
                    raise InputContractError(
                        f"row {b} has {len(positions)} placeholder slots, "
                        f"prefix provides {len(prefix)}"
                    )
                output[b, positions] = prefix.to(output.dtype)
            return output

        return hook

    # -- encoder surface -----------------------------------------------------------

    def visual_features(self, prepared, adapter=None, collect=False):
        res = self.spec.frame_resolution
        if prepared.dim() != 4 or prepared.shape[1:] != (3, res, res):
            raise InputContractError(
                f"prepared frames must be (N, 3, {res}, {res}), got {tuple(prepared.shape)}"
            )
        sink: list[LayerActivations] | None = [] if collect else None
        layers = self.clip.vision_model.encoder.layers
        with self._hooked(layers, VISUAL, adapter, sink):
            out = self.clip.vision_model(pixel_values=prepared)
        return out.pooler_output.mean(dim=0), sink or []

    def text_features(self, ids, adapter=None, prefix=None, collect=False):
        if ids.dim() != 2:
            raise InputContractError(f"token ids must be (B, L), got {tuple(ids.shape)}")
        sink: list[LayerActivations] | None = [] if collect else None
        layers = self.clip.text_model.encoder.layers
        with ExitStack() as stack:
            if prefix is not None:
                handle = self.clip.text_model.embeddings.token_embedding.register_forward_hook(
                    self._prefix_hook(prefix), with_kwargs=True
                )
                stack.callback(handle.remove)
            stack.enter_context(self._hooked(layers, TEXTUAL, adapter, sink))
            attention_mask = self._validity_mask(ids)
            out = self.clip.text_model(input_ids=ids, attention_mask=attention_mask)
        return out.pooler_output, sink or []

    def _validity_mask(self, ids: torch.Tensor) -> torch.Tensor:
        # everything up to and including the first EOS is real content
        eos = self.tokenizer.eos_token_id
        is_eos = (ids == eos).int()
        first = torch.where(
            is_eos.any(dim=1), is_eos.argmax(dim=1), torch.full((ids.shape[0],), ids.shape[1] - 1)
        )
        return (torch.arange(ids.shape[1]) <= first.unsqueeze(1)).long()

    def project_visual(self, pooled):
        return self.clip.visual_projection(pooled)

    def project_text(self, pooled):
        return self.clip.text_projection(pooled)

    def parameter_items(self):
        return [(name, p) for name, p in self.clip.named_parameters()]
