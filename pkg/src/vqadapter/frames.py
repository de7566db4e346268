"""Decoded-frame container and shared resize helper."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputContractError


@dataclass
class FrameSequence:
    """N decoded frames, each H x W x 3, float32 pixel values in [0, 1]."""

    frames: np.ndarray
    source_id: str = ""
    #: Indices of these frames in the originating clip (identity when full-rate).
    original_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 4 or frames.shape[3] != 3:
            raise InputContractError(
                f"frames must be (N, H, W, 3), got shape {frames.shape}"
            )
        self.frames = np.clip(frames, 0.0, 1.0)
        if self.original_indices is None:
            self.original_indices = np.arange(len(frames))
        else:
            self.original_indices = np.asarray(self.original_indices)
            if len(self.original_indices) != len(frames):
                raise InputContractError("original_indices length mismatch")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def select(self, indices) -> "FrameSequence":
        indices = np.asarray(indices)
        return FrameSequence(
            frames=self.frames[indices],
            source_id=self.source_id,
            original_indices=self.original_indices[indices],
        )


def resize_frames(frames: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of (N, H, W, C) float frames to (N, *size*, C)."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.shape[1:3] == tuple(size):
        return frames
    t = torch.from_numpy(frames).permute(0, 3, 1, 2)
    t = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False, antialias=True)
    return t.permute(0, 2, 3, 1).contiguous().numpy()
