"""Dataset manifests, frame decoding and caching, synthetic clips, checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import os
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbone import BackboneSpec, TwoTowerBackbone
from .errors import CheckpointError, IngestionError, InputContractError
from .frames import FrameSequence, resize_frames
from .model import VideoQualityModel
from .prompts import build_prompt_bank, levels_for_mode
from .quality import QualityHead
from .sampling import MotionProfile, motion_profile
from .scma import AdapterState, SCMAConfig

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


# --- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    video_id: str
    path: str
    mos: float


@dataclass
class DatasetManifest:
    """Rows of (video_id, path, mos) plus the dataset's declared score range."""

    name: str
    mos_range: tuple[float, float]
    rows: list[ManifestRow] = field(default_factory=list)
    base_dir: Path = Path(".")

    def __post_init__(self):
        lo, hi = self.mos_range
        if not lo < hi:
            raise InputContractError(f"mos_range must be increasing, got ({lo}, {hi})")
        seen = set()
        for row in self.rows:
            if row.video_id in seen:
                raise InputContractError(f"duplicate video_id {row.video_id!r}")
            seen.add(row.video_id)
            if not lo <= row.mos <= hi:
                raise InputContractError(
                    f"mos {row.mos} of {row.video_id!r} outside declared range ({lo}, {hi})"
                )

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def resolve_path(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.base_dir / p

    def validate_paths(self) -> None:
        for row in self.rows:
            if not self.resolve_path(row).exists():
                raise IngestionError(f"clip path does not exist: {self.resolve_path(row)}")

    def write(self, path: str | Path) -> None:
        path = Path(path)
        buf = io.StringIO()
        buf.write(f"# dataset: {self.name}\n")
        buf.write(f"# mos_range: {self.mos_range[0]!r} {self.mos_range[1]!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["video_id", "path", "mos"])
        for row in self.rows:
            writer.writerow([row.video_id, row.path, repr(row.mos)])
        _atomic_write_bytes(path, buf.getvalue().encode())

    @classmethod
    def read(cls, path: str | Path, check_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"manifest not found: {path}")
        name, mos_range = "unnamed", (0.0, 1.0)
        lines = path.read_text().splitlines()
        body_start = 0
        for i, line in enumerate(lines):
            if not line.startswith("#"):
                body_start = i
                break
            key, _, value = line.lstrip("# ").partition(":")
            if key.strip() == "dataset":
                name = value.strip()
            elif key.strip() == "mos_range":
                parts = value.split()
                mos_range = (float(parts[0]), float(parts[1]))
        reader = csv.DictReader(lines[body_start:])
        if reader.fieldnames != ["video_id", "path", "mos"]:
            raise IngestionError(
                f"manifest {path} must have header video_id,path,mos, "
                f"got {reader.fieldnames}"
            )
        rows = [
            ManifestRow(r["video_id"], r["path"], float(r["mos"])) for r in reader
        ]
        manifest = cls(name=name, mos_range=mos_range, rows=rows, base_dir=path.parent)
        if check_paths:
            manifest.validate_paths()
        return manifest


# --- decoding ----------------------------------------------------------------


@dataclass(frozen=True)
class DecodeConfig:
    """Full-rate decode by default; ``stride`` keeps every n-th frame."""

    stride: int = 1
    max_frames: int | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise InputContractError("stride must be >= 1")


def decode_frames(path: str | Path, config: DecodeConfig = DecodeConfig()) -> FrameSequence:
    """Decode a video file or a directory of numbered images to [0, 1] frames."""
    path = Path(path)
    if path.is_dir():
        return _decode_image_dir(path, config)
    if not path.exists():
        raise IngestionError(f"no such video: {path}")
    return _decode_video_file(path, config)


def _decode_image_dir(path: Path, config: DecodeConfig) -> FrameSequence:
    names = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not names:
        raise IngestionError(f"no image frames in directory: {path}")
    names = names[:: config.stride]
    if config.max_frames is not None:
        names = names[: config.max_frames]
    frames = []
    for p in names:
        try:
            with Image.open(p) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
        except Exception as exc:
            raise IngestionError(f"cannot decode frame {p}: {exc}") from exc
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise IngestionError(f"frames in {path} have mixed shapes: {sorted(shapes)}")
    indices = np.arange(0, len(frames) * config.stride, config.stride)
    return FrameSequence(
        frames=np.stack(frames), source_id=path.name, original_indices=indices
    )


def _decode_video_file(path: Path, config: DecodeConfig) -> FrameSequence:
    import cv2

    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise IngestionError(f"cannot open video: {path}")
    frames, indices = [], []
    index = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if index % config.stride == 0:
            frames.append(
                cv2.cvtColor(frame, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
            )
            indices.append(index)
            if config.max_frames is not None and len(frames) >= config.max_frames:
                break
        index += 1
    cap.release()
    if not frames:
        raise IngestionError(f"no decodable frames in video: {path}")
    return FrameSequence(
        frames=np.stack(frames), source_id=path.name, original_indices=np.array(indices)
    )


# --- frame cache ---------------------------------------------------------------


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def content_hash(path: str | Path) -> str:
    """Hash of the clip bytes (all frame files for a directory)."""
    path = Path(path)
    digest = hashlib.sha1()
    if path.is_dir():
        for p in sorted(path.iterdir()):
            if p.suffix.lower() in IMAGE_SUFFIXES:
                digest.update(p.name.encode())
                digest.update(p.read_bytes())
    else:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


class FrameCache:
    """Decoded/resized frames on disk, keyed by content hash and resolution."""

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def _slot(self, path: Path, resolution: tuple[int, int] | None) -> Path:
        res = f"{resolution[0]}x{resolution[1]}" if resolution else "native"
        return self.cache_dir / f"{content_hash(path)}_{res}.npy"

    def get_or_decode(
        self,
        path: str | Path,
        resolution: tuple[int, int] | None = None,
        config: DecodeConfig = DecodeConfig(),
    ) -> np.ndarray:
        path = Path(path)
        slot = self._slot(path, resolution)
        if slot.exists():
            return np.load(slot)
        frames = decode_frames(path, config).frames
        if resolution is not None:
            frames = resize_frames(frames, resolution)
        buf = io.BytesIO()
        np.save(buf, frames)
        _atomic_write_bytes(slot, buf.getvalue())
        return frames


class ClipStore:
    """In-memory frame and motion-profile store for one manifest.

    Decoding failures surface once, at load time, so callers can skip the
    affected rows and report them.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        cache: FrameCache | None = None,
        profile_max_side: int = 224,
    ):
        self.manifest = manifest
        self.cache = cache
        self.profile_max_side = profile_max_side
        self._frames: dict[str, np.ndarray] = {}
        self._profiles: dict[str, MotionProfile] = {}

    def frames(self, row: ManifestRow) -> np.ndarray:
        if row.video_id not in self._frames:
            path = self.manifest.resolve_path(row)
            if self.cache is not None:
                self._frames[row.video_id] = self.cache.get_or_decode(path)
            else:
                self._frames[row.video_id] = decode_frames(path).frames
        return self._frames[row.video_id]

    def profile(self, row: ManifestRow) -> MotionProfile:
        if row.video_id not in self._profiles:
            self._profiles[row.video_id] = motion_profile(
                self.frames(row), max_side=self.profile_max_side
            )
        return self._profiles[row.video_id]


# --- synthetic toy dataset ----------------------------------------------------


def _toy_clip(
    rng: np.random.Generator, n_frames: int, size: int, level: float
) -> np.ndarray:
    """Moving pattern degraded by noise, blur and contrast loss at ``level``."""
    from scipy.ndimage import gaussian_filter

    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    fx, fy = rng.uniform(2.0, 4.0, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(0.3, 0.7)
    color = rng.uniform(0.6, 1.0, size=3)
    sq = size // 4
    sx0, sy0 = rng.uniform(0.0, 0.5, size=2)
    vx, vy = rng.uniform(-0.3, 0.3, size=2)

    frames = np.empty((n_frames, size, size, 3), dtype=np.float32)
    for t in range(n_frames):
        base = 0.5 + 0.45 * np.sin(
            2 * np.pi * (fx * xx + fy * yy) + phase + speed * t
        )
        frame = base[..., None] * color[None, None, :]
        cx = int((sx0 + vx * t / n_frames) % 0.75 * size)
        cy = int((sy0 + vy * t / n_frames) % 0.75 * size)
        frame[cy : cy + sq, cx : cx + sq] = 1.0 - frame[cy : cy + sq, cx : cx + sq]
        frames[t] = frame

    if level > 0:
        frames = frames + rng.normal(0.0, 0.05 * level, size=frames.shape)
        sigma = 2.5 * level
        for t in range(n_frames):
            for c in range(3):
                frames[t, :, :, c] = gaussian_filter(frames[t, :, :, c], sigma=sigma)
        frames = 0.5 + (1.0 - 0.6 * level) * (frames - 0.5)
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def make_synthetic_dataset(
    out_dir: str | Path,
    n_clips: int = 32,
    seed: int = 0,
    n_frames: int = 16,
    size: int = 64,
) -> DatasetManifest:
    """Procedural clips with graded degradations and a monotone MOS.

    Clip i gets degradation level i/(n_clips-1); MOS maps that level
    strictly decreasingly onto [1, 5]. Frames are written as PNG
    directories so decoding needs no video codec. Same seed, same bytes.
    """
    if n_clips < 2:
        raise InputContractError("need at least 2 clips")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n_clips):
        level = i / (n_clips - 1)
        rng = np.random.default_rng([seed, i])
        frames = _toy_clip(rng, n_frames, size, level)
        clip_dir = out_dir / f"clip_{i:03d}"
        clip_dir.mkdir(exist_ok=True)
        for t in range(n_frames):
            img = Image.fromarray((frames[t] * 255.0).round().astype(np.uint8))
            img.save(clip_dir / f"frame_{t:03d}.png")
        mos = 1.0 + 4.0 * (1.0 - level)
        rows.append(ManifestRow(f"clip_{i:03d}", f"clip_{i:03d}", mos))
    manifest = DatasetManifest(
        name="toy-synthetic", mos_range=(1.0, 5.0), rows=rows, base_dir=out_dir
    )
    manifest.write(out_dir / "manifest.csv")
    return manifest


# --- checkpoints ---------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: VideoQualityModel,
    train_config: dict | None = None,
    metrics: dict | None = None,
) -> None:
    """Persist the trainable set only; backbone weights never enter the file."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "scma_config": asdict(model.adapter.config),
        "prompt_mode": model.prompts.mode,
        "softmax_scores": model.head.softmax_scores,
        "backbone_spec": asdict(model.backbone.spec),
        "tensors": {
            name: module.state_dict()
            for name, module in model.trainable_modules().items()
        },
        "train_config": train_config or {},
        "metrics": metrics or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    _atomic_write_bytes(Path(path), buf.getvalue())


def _shape_diff(expected: dict, found: dict) -> list[str]:
    diff = []
    for name in sorted(set(expected) | set(found)):
        if name not in found:
            diff.append(f"{name}: expected {tuple(expected[name].shape)}, missing")
        elif name not in expected:
            diff.append(f"{name}: unexpected, found {tuple(found[name].shape)}")
        elif tuple(expected[name].shape) != tuple(found[name].shape):
            diff.append(
                f"{name}: expected {tuple(expected[name].shape)}, "
                f"found {tuple(found[name].shape)}"
            )
    return diff


def load_checkpoint(
    path: str | Path,
    backbone: TwoTowerBackbone,
    scma_config: SCMAConfig | None = None,
) -> VideoQualityModel:
    """Rebuild a model around ``backbone`` from a saved trainable set.

    When ``scma_config`` is given it must match the checkpoint; shape
    mismatches (different backbone spec or adapter structure) fail with a
    per-tensor diff.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version!r}; "
            f"this build reads {CHECKPOINT_VERSION}"
        )
    saved_config = SCMAConfig(**payload["scma_config"])
    if scma_config is not None and scma_config != saved_config:
        raise CheckpointError(
            f"checkpoint was trained with {saved_config}, requested {scma_config}"
        )
    mode = payload["prompt_mode"]
    adapter = AdapterState(saved_config, backbone.spec)
    prompts = build_prompt_bank(mode, backbone)
    head = QualityHead(
        num_levels=len(levels_for_mode(mode)),
        softmax_scores=payload.get("softmax_scores", False),
    )
    modules = {"adapter": adapter, "prompts": prompts, "head": head}
    for name, module in modules.items():
        saved = payload["tensors"][name]
        diff = _shape_diff(dict(module.state_dict()), dict(saved))
        if diff:
            raise CheckpointError(
                f"checkpoint {path} does not fit the active configuration:\n  "
                + "\n  ".join(f"{name}.{line}" for line in diff)
            )
        module.load_state_dict(saved)
    return VideoQualityModel(backbone, adapter, prompts, head)
