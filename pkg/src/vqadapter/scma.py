"""Shared cross-modal adapters for the encoder layers and projection stage.

Per adapted encoder layer the delta is LayerNorm(Up(FFN(Down(x)))) of the
layer input, added to the layer output through a learnable per-layer,
per-branch gate. The bottleneck FFN (two r->r linears around a GELU) can
be shared across branches and across layers; the projection-stage variant
uses a single r->r linear instead of the FFN and adds its gated delta in
parallel to the frozen projection.

Gates start at zero and up-projections start as zero maps, so a freshly
constructed adapter is an exact identity: the end-to-end model reproduces
the frozen backbone until training moves the gates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .backbone import TEXTUAL, VISUAL, BackboneSpec
from .errors import InputContractError

MODALITIES = (VISUAL, TEXTUAL)


@dataclass(frozen=True)
class SCMAConfig:
    """Structure switches for the adapter set.

    ``adapted_layer_indices`` of None selects the last six layers of each
    branch (fewer when a branch is shallower). An explicit tuple is used
    verbatim for both branches and must be valid for both.
    """

    adapted_layer_indices: tuple[int, ...] | None = None
    bottleneck_dim: int = 4
    share_across_branches: bool = True
    share_across_layers: bool = True
    enable_pscma: bool = True
    adapt_visual: bool = True
    adapt_text: bool = True

    def __post_init__(self):
        if self.bottleneck_dim < 1:
            raise InputContractError("bottleneck_dim must be >= 1")
        if not (self.adapt_visual or self.adapt_text):
            raise InputContractError("at least one branch must be adapted")
        if self.adapted_layer_indices is not None:
            object.__setattr__(
                self, "adapted_layer_indices", tuple(int(k) for k in self.adapted_layer_indices)
            )

    def enabled_branches(self) -> tuple[str, ...]:
        out = []
        if self.adapt_visual:
            out.append(VISUAL)
        if self.adapt_text:
            out.append(TEXTUAL)
        return tuple(out)

    def resolve_layers(self, spec: BackboneSpec, modality: str) -> tuple[int, ...]:
        """Adapted layer indices for one branch."""
        n_layers = spec.branch_layers(modality)
        if self.adapted_layer_indices is None:
            count = min(6, n_layers)
            return tuple(range(n_layers - count, n_layers))
        bad = [k for k in self.adapted_layer_indices if not 0 <= k < n_layers]
        if bad:
            raise InputContractError(
                f"layer indices {bad} out of range for {modality} branch with {n_layers} layers"
            )
        return tuple(sorted(self.adapted_layer_indices))


def _bottleneck_ffn(r: int, gen: torch.Generator) -> nn.Sequential:
    ffn = nn.Sequential(nn.Linear(r, r), nn.GELU(), nn.Linear(r, r))
    with torch.no_grad():
        for lin in (ffn[0], ffn[2]):
            lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen) / r**0.5)
            lin.bias.zero_()
    return ffn


def _down_proj(width: int, r: int, gen: torch.Generator) -> nn.Linear:
    lin = nn.Linear(width, r)
    with torch.no_grad():
        lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen) * 0.02)
        lin.bias.zero_()
    return lin


def _zero_up(r: int, width: int) -> nn.Linear:
    lin = nn.Linear(r, width)
    with torch.no_grad():
        lin.weight.zero_()
        lin.bias.zero_()
    return lin


class AdapterState(nn.Module):
    """All trainable adapter tensors for one backbone.

    Sharing is realized through module identity: shared entries are a
    single module referenced from every site, so a gradient step taken at
    one layer is visible at every layer that shares it.
    """

    def __init__(self, config: SCMAConfig, spec: BackboneSpec, seed: int = 0):
        super().__init__()
        if config.bottleneck_dim > min(spec.visual_width, spec.text_width):
            raise InputContractError(
                "bottleneck_dim exceeds the narrower branch width "
                f"({config.bottleneck_dim} > {min(spec.visual_width, spec.text_width)})"
            )
        self.config = config
        self.spec = spec
        self._layers = {m: config.resolve_layers(spec, m) for m in config.enabled_branches()}
        share_proj = (
            config.share_across_branches and spec.visual_width == spec.text_width
        )
        if share_proj and len(set(len(v) for v in self._layers.values())) > 1:
            raise InputContractError(
                "cross-branch sharing needs the same number of adapted layers per branch"
            )
        self._share_proj = share_proj
        gen = torch.Generator().manual_seed(seed)
        r = config.bottleneck_dim

        self.down = nn.ModuleDict()
        self.up = nn.ModuleDict()
        self.ffn = nn.ModuleDict()
        self.escma_norm = nn.ModuleDict()
        self.escma_gate = nn.ParameterDict()
        for m in config.enabled_branches():
            width = spec.branch_width(m)
            for i, _ in enumerate(self._layers[m]):
                pkey = self._proj_key(m, i)
                if pkey not in self.down:
                    self.down[pkey] = _down_proj(width, r, gen)
                    self.up[pkey] = _zero_up(r, width)
                fkey = self._ffn_key(m, i)
                if fkey not in self.ffn:
                    self.ffn[fkey] = _bottleneck_ffn(r, gen)
                self.escma_norm[f"{m}_{i}"] = nn.LayerNorm(width)
                self.escma_gate[f"{m}_{i}"] = nn.Parameter(torch.zeros(()))

        self.pscma_down = nn.ModuleDict()
        self.pscma_up = nn.ModuleDict()
        self.pscma_ffn = nn.ModuleDict()
        self.pscma_norm = nn.ModuleDict()
        self.pscma_gate = nn.ParameterDict()
        if config.enable_pscma:
            for m in config.enabled_branches():
                width = spec.branch_width(m)
                pkey = "shared" if share_proj else m
                if pkey not in self.pscma_down:
                    self.pscma_down[pkey] = _down_proj(width, r, gen)
                    self.pscma_up[pkey] = _zero_up(r, spec.embed_dim)
                fkey = "shared" if config.share_across_branches else m
                if fkey not in self.pscma_ffn:
                    lin = nn.Linear(r, r)
                    with torch.no_grad():
                        lin.weight.copy_(torch.randn(lin.weight.shape, generator=gen) / r**0.5)
                        lin.bias.zero_()
                    self.pscma_ffn[fkey] = lin
                self.pscma_norm[m] = nn.LayerNorm(spec.embed_dim)
                self.pscma_gate[m] = nn.Parameter(torch.zeros(()))

    # -- key scheme: shared entries collapse onto one dictionary slot ---------

    def _proj_key(self, modality: str, position: int) -> str:
        scope = "shared" if self._share_proj else modality
        return f"{scope}_{position}"

    def _ffn_key(self, modality: str, position: int) -> str:
        scope = "shared" if self.config.share_across_branches else modality
        layer = "all" if self.config.share_across_layers else str(position)
        return f"{scope}_{layer}"

    # -- queries ---------------------------------------------------------------

    def adapts_branch(self, modality: str) -> bool:
        return modality in self._layers

    def adapted_layers(self, modality: str) -> tuple[int, ...]:
        return self._layers.get(modality, ())

    def is_adapted(self, k: int, modality: str) -> bool:
        return k in self._layers.get(modality, ())

    def _position(self, k: int, modality: str) -> int:
        layers = self._layers.get(modality, ())
        if k not in layers:
            raise InputContractError(f"layer {k} of the {modality} branch is not adapted")
        return layers.index(k)

    # -- deltas ------------------------------------------------------------------

    def escma_delta(self, x: torch.Tensor, k: int, modality: str) -> torch.Tensor:
        """LayerNorm(Up(FFN(Down(x)))) for adapted layer k of one branch."""
        width = self.spec.branch_width(modality)
        if x.shape[-1] != width:
            raise InputContractError(
                f"{modality} layer input width {x.shape[-1]} != branch width {width}"
            )
        i = self._position(k, modality)
        h = self.down[self._proj_key(modality, i)](x)
        h = self.ffn[self._ffn_key(modality, i)](h)
        h = self.up[self._proj_key(modality, i)](h)
        return self.escma_norm[f"{modality}_{i}"](h)

    def apply_escma(
        self, encoder_out: torch.Tensor, delta: torch.Tensor, k: int, modality: str
    ) -> torch.Tensor:
        """Gated residual combination: encoder output + gate_k * delta."""
        i = self._position(k, modality)
        return encoder_out + self.escma_gate[f"{modality}_{i}"] * delta

    def pscma_delta(self, x: torch.Tensor, modality: str) -> torch.Tensor:
        """Projection-stage delta in the joint space, from pooled branch features."""
        if not self.config.enable_pscma:
            raise InputContractError("P-SCMA is disabled in this configuration")
        if not self.adapts_branch(modality):
            raise InputContractError(f"{modality} branch is not adapted")
        pkey = "shared" if self._share_proj else modality
        fkey = "shared" if self.config.share_across_branches else modality
        h = self.pscma_down[pkey](x)
        h = self.pscma_ffn[fkey](h)
        h = self.pscma_up[pkey](h)
        return self.pscma_norm[modality](h)

    def pscma_gate_value(self, modality: str) -> torch.Tensor:
        if not self.adapts_branch(modality):
            raise InputContractError(f"{modality} branch is not adapted")
        return self.pscma_gate[modality]


def trainable_param_count(state: AdapterState, prompts=None, head=None) -> int:
    """Exact number of trainable scalars across adapter, prompts and head."""
    modules = [m for m in (state, prompts, head) if m is not None]
    return sum(
        p.numel() for m in modules for p in m.parameters() if p.requires_grad
    )


def closed_form_param_count(
    spec: BackboneSpec, config: SCMAConfig, prompt_mode: str | None = None
) -> int:
    """Documented closed form of the trainable-parameter budget.

    With widths d_v, d_t, joint width d_e, bottleneck r, per-branch adapted
    layer counts L_m over enabled branches m:

    * per-layer maps: sum over distinct (scope, layer) slots of
      (d*r + r) + (r*d + d); cross-branch sharing collapses the two
      branches onto one slot only when d_v == d_t
    * norms and gates: per branch and layer, 2*d + 1
    * bottleneck FFN: 2*(r^2 + r) per copy; copies collapse across
      branches and/or layers according to the sharing flags
    * projection stage (when enabled): per slot (d*r + r) + (r*d_e + d_e),
      per branch 2*d_e + 1, plus (r^2 + r) per FFN copy
    * learnable prompt modes add 3 * d_t prefix scalars
    * the head adds one weight per prompt level (5, or 2 for antonyms)
    """
    from . import prompts as prompt_mod

    r = config.bottleneck_dim
    branches = config.enabled_branches()
    layers = {m: config.resolve_layers(spec, m) for m in branches}
    share_proj = config.share_across_branches and spec.visual_width == spec.text_width

    total = 0
    proj_slots = set()
    ffn_slots = set()
    for m in branches:
        d = spec.branch_width(m)
        for i in range(len(layers[m])):
            pscope = "shared" if share_proj else m
            if (pscope, i) not in proj_slots:
                proj_slots.add((pscope, i))
                total += (d * r + r) + (r * d + d)
            fscope = "shared" if config.share_across_branches else m
            flayer = "all" if config.share_across_layers else i
            if (fscope, flayer) not in ffn_slots:
                ffn_slots.add((fscope, flayer))
                total += 2 * (r * r + r)
            total += 2 * d + 1  # norm + gate

    if config.enable_pscma:
        p_slots = set()
        pf_slots = set()
        for m in branches:
            d = spec.branch_width(m)
            pscope = "shared" if share_proj else m
            if pscope not in p_slots:
                p_slots.add(pscope)
                total += (d * r + r) + (r * spec.embed_dim + spec.embed_dim)
            fscope = "shared" if config.share_across_branches else m
            if fscope not in pf_slots:
                pf_slots.add(fscope)
                total += r * r + r
            total += 2 * spec.embed_dim + 1  # norm + gate

    if prompt_mode is not None:
        if prompt_mode not in prompt_mod.PROMPT_MODES:
            raise InputContractError(f"unknown prompt mode {prompt_mode!r}")
        if prompt_mod.is_learnable_mode(prompt_mode):
            total += prompt_mod.PREFIX_LENGTH * spec.text_width
        total += len(prompt_mod.levels_for_mode(prompt_mode))  # head weights
    return total
