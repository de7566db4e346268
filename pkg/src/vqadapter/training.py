"""Fine-tuning loop over the adapter, prompt prefix and head weights.

The objective is a differentiable correlation surrogate plus a pairwise
rank hinge: the evaluation targets are rank correlations, so the loss is
kept scale-free rather than regressing absolute label values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace, asdict

import numpy as np
import torch

from .backbone import TwoTowerBackbone, backbone_checksum
from .data import ClipStore, ManifestRow
from .errors import AuditError, InputContractError
from .evaluation import compute_metrics
from .model import VideoQualityModel, assemble_model
from .sampling import SamplingPlan, plan_indices, PROFILE_STRATEGIES
from .scma import SCMAConfig

log = logging.getLogger(__name__)

#: Adapter map parameters get weight decay; gates, norms, prompt prefix and
#: head weights are excluded.
_DECAY_PREFIXES = ("down.", "up.", "ffn.", "pscma_down.", "pscma_up.", "pscma_ffn.")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 8
    batch_size: int = 12
    frames_per_video: int = 8
    sampling: SamplingPlan = field(default_factory=SamplingPlan)
    #: Mixing weight of the rank-hinge term against the correlation term.
    loss_mix: float = 0.5
    weight_decay: float = 0.01
    lr_floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.frames_per_video < 1:
            raise InputContractError("epochs, batch_size and frames_per_video must be >= 1")
        if self.learning_rate <= 0:
            raise InputContractError("learning_rate must be positive")


@dataclass
class TrainState:
    step: int = 0
    best_val_srocc: float = -np.inf
    best_tensors: dict | None = None
    rng: np.random.Generator = field(default_factory=np.random.default_rng)


@dataclass
class TrainResult:
    model: VideoQualityModel
    records: list[dict]
    skipped: list[dict]
    best_tensors: dict | None
    final_checksum: str


def batch_loss(preds: torch.Tensor, mos: torch.Tensor, loss_mix: float) -> torch.Tensor:
    """(1 - pearson)/2 plus a weighted pairwise rank hinge.

    A batch of one carries no ordering information, so it falls back to
    the plain absolute error.
    """
    preds = preds.reshape(-1)
    mos = mos.reshape(-1)
    if preds.shape != mos.shape:
        raise InputContractError(f"batch shapes differ: {preds.shape} vs {mos.shape}")
    if preds.numel() == 1:
        return (preds - mos).abs().mean()
    pc = preds - preds.mean()
    mc = mos - mos.mean()
    den = (pc.square().sum().sqrt() * mc.square().sum().sqrt()).clamp_min(1e-12)
    pearson = (pc * mc).sum() / den
    loss = (1.0 - pearson) / 2.0
    if loss_mix != 0.0:
        dp = preds.unsqueeze(1) - preds.unsqueeze(0)  # dp[i, j] = pred_i - pred_j
        dm = mos.unsqueeze(1) - mos.unsqueeze(0)
        higher = dm > 0  # pairs where clip i should outrank clip j
        if bool(higher.any()):
            loss = loss + loss_mix * torch.relu(-dp[higher]).mean()
    return loss


@dataclass
class AuditReport:
    trainable: list[tuple[str, tuple[int, ...]]]
    trainable_count: int
    frozen_count: int

    def names(self) -> list[str]:
        return [name for name, _ in self.trainable]


def assert_only_adapter_trainable(model: VideoQualityModel) -> AuditReport:
    """List the trainable tensors; fail hard if any backbone tensor trains."""
    trainable, frozen = [], 0
    offenders = []
    for name, p in model.named_parameters():
        if p.requires_grad:
            trainable.append((name, tuple(p.shape)))
            if name.startswith("backbone."):
                offenders.append(name)
        else:
            frozen += 1
    if offenders:
        raise AuditError(f"backbone tensors are trainable: {offenders}")
    allowed = ("adapter.", "prompts.", "head.")
    stray = [n for n, _ in trainable if not n.startswith(allowed)]
    if stray:
        raise AuditError(f"unexpected trainable tensors: {stray}")
    return AuditReport(
        trainable=trainable,
        trainable_count=sum(math.prod(s) for _, s in trainable),
        frozen_count=frozen,
    )


def build_optimizer(model: VideoQualityModel, config: TrainConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        local = name.split(".", 1)[1] if name.startswith("adapter.") else name
        if name.startswith("adapter.") and local.startswith(_DECAY_PREFIXES):
            decay.append(p)
        else:
            no_decay.append(p)
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": config.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=config.learning_rate,
    )


def _clip_seed(base_seed: int, epoch: int, row_index: int) -> int:
    return int(np.random.SeedSequence([base_seed, epoch, row_index]).generate_state(1)[0])


def prepare_clip(
    backbone: TwoTowerBackbone,
    store: ClipStore,
    row: ManifestRow,
    config: TrainConfig,
    epoch: int,
    row_index: int,
) -> torch.Tensor:
    """Sample, resize and normalize one clip for the visual tower."""
    frames = store.frames(row)
    plan = replace(
        config.sampling,
        target_count=config.frames_per_video,
        seed=_clip_seed(config.sampling.seed, epoch, row_index),
    )
    profile = store.profile(row) if plan.strategy in PROFILE_STRATEGIES else None
    result = plan_indices(plan, len(frames), profile)
    return backbone.prepare_frames(frames[result.indices])


def predict(
    model: VideoQualityModel,
    rows: list[ManifestRow],
    store: ClipStore,
    config: TrainConfig,
    epoch: int = 0,
    use_adapter: bool = True,
) -> np.ndarray:
    """Deterministic scores for a list of manifest rows."""
    preds = []
    with torch.no_grad():
        for start in range(0, len(rows), config.batch_size):
            chunk = rows[start : start + config.batch_size]
            clips = [
                prepare_clip(model.backbone, store, row, config, epoch, start + j)
                for j, row in enumerate(chunk)
            ]
            batch_preds, _ = model.score_clips(clips, use_adapter=use_adapter)
            preds.append(batch_preds.numpy())
    return np.concatenate(preds)


def _load_rows(store: ClipStore, rows: list[ManifestRow]) -> tuple[list, list[dict]]:
    usable, skipped = [], []
    for row in rows:
        try:
            store.frames(row)
            usable.append(row)
        except Exception as exc:  # noqa: BLE001 - contract: skip with warning
            log.warning("skipping unreadable clip %s: %s", row.video_id, exc)
            skipped.append({"video_id": row.video_id, "error": str(exc)})
    return usable, skipped


def train(
    model: VideoQualityModel,
    train_rows: list[ManifestRow],
    config: TrainConfig,
    store: ClipStore,
    val_rows: list[ManifestRow] | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Optimize the trainable set; backbone weights are untouched by contract.

    The returned records hold one JSON-ready dict per epoch (epoch 0 is
    the pre-training validation snapshot). Fully reproducible per seed.
    """
    if not train_rows:
        raise InputContractError("training manifest is empty")
    audit = assert_only_adapter_trainable(model)
    log.info("training %d tensors (%d scalars)", len(audit.trainable), audit.trainable_count)

    train_rows, skipped = _load_rows(store, train_rows)
    if not train_rows:
        raise InputContractError("no readable training clips")
    if val_rows:
        val_rows, val_skipped = _load_rows(store, val_rows)
        skipped.extend(val_skipped)

    torch.manual_seed(config.seed)
    optimizer = build_optimizer(model, config)
    steps_per_epoch = math.ceil(len(train_rows) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=total_steps, eta_min=config.lr_floor
    )
    state = TrainState(rng=np.random.default_rng(config.seed))
    mos_by_id = {row.video_id: row.mos for row in train_rows}

    records = []

    def snapshot(epoch: int, mean_loss: float | None):
        record = {"epoch": epoch, "loss": mean_loss, "lr": scheduler.get_last_lr()[0]}
        if val_rows:
            preds = predict(model, val_rows, store, config, epoch=epoch)
            mos = np.array([r.mos for r in val_rows])
            metrics = compute_metrics(preds, mos)
            record["val_srocc"] = metrics["srocc"]
            record["val_plcc"] = metrics["plcc"]
            if metrics["srocc"] > state.best_val_srocc:
                state.best_val_srocc = metrics["srocc"]
                state.best_tensors = {
                    name: {k: v.detach().clone() for k, v in module.state_dict().items()}
                    for name, module in model.trainable_modules().items()
                }
        records.append(record)

    snapshot(0, None)
    done = False
    for epoch in range(1, config.epochs + 1):
        order = state.rng.permutation(len(train_rows))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch_rows = [train_rows[i] for i in order[start : start + config.batch_size]]
            clips = [
                prepare_clip(model.backbone, store, row, config, epoch, int(i))
                for row, i in zip(batch_rows, order[start : start + config.batch_size])
            ]
            mos = torch.tensor([mos_by_id[r.video_id] for r in batch_rows])
            preds, _ = model.score_clips(clips)
            loss = batch_loss(preds, mos, config.loss_mix)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
            losses.append(float(loss.detach()))
            state.step += 1
            if max_steps is not None and state.step >= max_steps:
                done = True
                break
        snapshot(epoch, float(np.mean(losses)) if losses else None)
        if done:
            break

    return TrainResult(
        model=model,
        records=records,
        skipped=skipped,
        best_tensors=state.best_tensors,
        final_checksum=backbone_checksum(model.backbone),
    )


def split_protocol_runner(
    backbone: TwoTowerBackbone,
    store: ClipStore,
    config: TrainConfig,
    scma_config: SCMAConfig | None = None,
    prompt_mode: str = "five_level_learnable",
    mos_range: tuple[float, float] = (0.0, 1.0),
):
    """Closure for :func:`vqadapter.evaluation.run_split_protocol`.

    Each split assembles a fresh model (seeded by the split seed), trains
    it on the train rows and returns predictions for the test rows.
    """

    def run(train_rows, test_rows, seed):
        split_config = replace(config, seed=seed)
        model = assemble_model(
            backbone, scma_config, prompt_mode, mos_range=mos_range, seed=seed
        )
        train(model, list(train_rows), split_config, store)
        return predict(model, list(test_rows), store, split_config)

    return run


def train_config_snapshot(config: TrainConfig) -> dict:
    payload = asdict(config)
    payload["sampling"] = asdict(config.sampling)
    return payload
