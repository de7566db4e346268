"""Flat key-value config files and the builders that consume them.

Format: one ``key = value`` pair per line, ``#`` starts a comment. The
recognized keys are documented in the README; unknown keys are rejected
so typos fail loudly.
"""

from __future__ import annotations

from pathlib import Path

from .backbone import BackboneSpec, TinyBackbone, TwoTowerBackbone
from .errors import InputContractError
from .sampling import STRATEGIES, SamplingPlan
from .scma import SCMAConfig
from .training import TrainConfig

#: Desk-scale stand-in dimensions.
DEFAULT_TINY_SPEC = BackboneSpec(
    num_visual_layers=3,
    num_text_layers=2,
    visual_width=32,
    text_width=24,
    embed_dim=24,
    frame_resolution=32,
    context_length=64,
)

#: Documented default for a pretrained large two-tower binding; together
#: with the default adapter structure this lands the trainable budget at
#: 138,631 scalars (about 0.14M).
DEFAULT_PRETRAINED_SPEC = BackboneSpec(
    num_visual_layers=24,
    num_text_layers=12,
    visual_width=1024,
    text_width=768,
    embed_dim=768,
    frame_resolution=224,
    context_length=77,
)

_KNOWN_KEYS = {
    "backbone.kind",
    "backbone.seed",
    "backbone.checkpoint_path",
    "backbone.num_visual_layers",
    "backbone.num_text_layers",
    "backbone.visual_width",
    "backbone.text_width",
    "backbone.embed_dim",
    "backbone.frame_resolution",
    "backbone.context_length",
    "scma.adapted_layers",
    "scma.bottleneck_dim",
    "scma.share_across_branches",
    "scma.share_across_layers",
    "scma.enable_pscma",
    "scma.adapt_visual",
    "scma.adapt_text",
    "prompts.mode",
    "head.softmax_scores",
    "train.learning_rate",
    "train.epochs",
    "train.batch_size",
    "train.frames_per_video",
    "train.sampling_strategy",
    "train.sampling_seed",
    "train.loss_mix",
    "train.weight_decay",
    "train.seed",
    "train.val_fraction",
    "data.manifest",
    "data.cache_dir",
    "data.profile_max_side",
    "eval.num_splits",
    "eval.train_fraction",
    "eval.seeds",
}


def load_config(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise InputContractError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputContractError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KNOWN_KEYS:
            raise InputContractError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _get_bool(cfg: dict, key: str, default: bool) -> bool:
    raw = cfg.get(key)
    if raw is None:
        return default
    if raw.lower() in ("true", "1", "yes", "on"):
        return True
    if raw.lower() in ("false", "0", "no", "off"):
        return False
    raise InputContractError(f"{key}: expected a boolean, got {raw!r}")


def _get_int(cfg: dict, key: str, default: int) -> int:
    raw = cfg.get(key)
    return default if raw is None else int(raw)


def _get_float(cfg: dict, key: str, default: float) -> float:
    raw = cfg.get(key)
    return default if raw is None else float(raw)


def backbone_spec_from_config(cfg: dict) -> BackboneSpec:
    kind = cfg.get("backbone.kind", "tiny")
    base = DEFAULT_TINY_SPEC if kind == "tiny" else DEFAULT_PRETRAINED_SPEC
    return BackboneSpec(
        num_visual_layers=_get_int(cfg, "backbone.num_visual_layers", base.num_visual_layers),
        num_text_layers=_get_int(cfg, "backbone.num_text_layers", base.num_text_layers),
        visual_width=_get_int(cfg, "backbone.visual_width", base.visual_width),
        text_width=_get_int(cfg, "backbone.text_width", base.text_width),
        embed_dim=_get_int(cfg, "backbone.embed_dim", base.embed_dim),
        frame_resolution=_get_int(cfg, "backbone.frame_resolution", base.frame_resolution),
        context_length=_get_int(cfg, "backbone.context_length", base.context_length),
    )


def backbone_from_config(cfg: dict) -> TwoTowerBackbone:
    kind = cfg.get("backbone.kind", "tiny")
    if kind == "tiny":
        return TinyBackbone(backbone_spec_from_config(cfg), seed=_get_int(cfg, "backbone.seed", 0))
    if kind == "pretrained":
        checkpoint = cfg.get("backbone.checkpoint_path")
        if not checkpoint:
            raise InputContractError(
                "backbone.kind = pretrained requires backbone.checkpoint_path"
            )
        from .hf_backbone import PretrainedClipBackbone

        return PretrainedClipBackbone(checkpoint)
    raise InputContractError(f"backbone.kind must be tiny or pretrained, got {kind!r}")


def scma_config_from_config(cfg: dict) -> SCMAConfig:
    layers_raw = cfg.get("scma.adapted_layers")
    layers = None
    if layers_raw:
        layers = tuple(int(tok) for tok in layers_raw.replace(",", " ").split())
    return SCMAConfig(
        adapted_layer_indices=layers,
        bottleneck_dim=_get_int(cfg, "scma.bottleneck_dim", 4),
        share_across_branches=_get_bool(cfg, "scma.share_across_branches", True),
        share_across_layers=_get_bool(cfg, "scma.share_across_layers", True),
        enable_pscma=_get_bool(cfg, "scma.enable_pscma", True),
        adapt_visual=_get_bool(cfg, "scma.adapt_visual", True),
        adapt_text=_get_bool(cfg, "scma.adapt_text", True),
    )


def train_config_from_config(cfg: dict) -> TrainConfig:
    strategy = cfg.get("train.sampling_strategy", "UNISampl")
    if strategy not in STRATEGIES:
        raise InputContractError(
            f"train.sampling_strategy must be one of {STRATEGIES}, got {strategy!r}"
        )
    return TrainConfig(
        learning_rate=_get_float(cfg, "train.learning_rate", 1e-3),
        epochs=_get_int(cfg, "train.epochs", 8),
        batch_size=_get_int(cfg, "train.batch_size", 12),
        frames_per_video=_get_int(cfg, "train.frames_per_video", 8),
        sampling=SamplingPlan(
            strategy=strategy,
            target_count=_get_int(cfg, "train.frames_per_video", 8),
            seed=_get_int(cfg, "train.sampling_seed", 0),
        ),
        loss_mix=_get_float(cfg, "train.loss_mix", 0.5),
        weight_decay=_get_float(cfg, "train.weight_decay", 0.01),
        seed=_get_int(cfg, "train.seed", 0),
    )
