"""Frame selection strategies driven by inter-frame difference magnitudes.

The motion profile assigns every frame the mean-squared pixel difference
against its neighbours (interior frames average both neighbours, the first
and last frame use their single neighbour). The seg/sorted strategies pick
frames from that profile; the random/uniform ones ignore it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputContractError

RAND_SAMPL = "RandSampl"
UNI_SAMPL = "UNISampl"
UNI_RAND_START = "UNIRandStart"
MSE_SORTED_UNI = "MSESortedUNI"
SEG_MSE_MEAN = "SegMSEMean"
SEG_MSE_MEDIAN = "SegMSEMedian"
MIXED = "Mixed"

#: Strategies Mixed draws from, in its fixed draw order.
BASE_STRATEGIES = (
    RAND_SAMPL,
    UNI_SAMPL,
    UNI_RAND_START,
    MSE_SORTED_UNI,
    SEG_MSE_MEAN,
    SEG_MSE_MEDIAN,
)
STRATEGIES = BASE_STRATEGIES + (MIXED,)

#: Strategies whose selection depends on the motion profile.
PROFILE_STRATEGIES = (MSE_SORTED_UNI, SEG_MSE_MEAN, SEG_MSE_MEDIAN, MIXED)


@dataclass(frozen=True)
class MotionProfile:
    """Per-frame difference magnitudes m_1..m_N for an N-frame video."""

    values: np.ndarray
    frame_count: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(values) != self.frame_count:
            raise InputContractError(
                f"profile length {values.shape} does not match frame_count {self.frame_count}"
            )
        if np.any(values < 0):
            raise InputContractError("motion profile values must be nonnegative")


@dataclass(frozen=True)
class SamplingPlan:
    """How to pick ``target_count`` frames out of a clip."""

    strategy: str = UNI_SAMPL
    target_count: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise InputContractError(
                f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}"
            )
        if self.target_count < 1:
            raise InputContractError("target_count must be >= 1")


@dataclass(frozen=True)
class SamplingResult:
    indices: np.ndarray
    strategy: str
    #: Base strategy Mixed delegated to (equals ``strategy`` otherwise).
    delegate: str
    #: True when the clip had fewer frames than requested and indices repeat.
    padded: bool = False
    meta: dict = field(default_factory=dict)


def _frame_mse(a: np.ndarray, b: np.ndarray) -> float:
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))


def _shrink(frames: np.ndarray, max_side: int) -> np.ndarray:
    import cv2

    n, h, w = frames.shape[:3]
    scale = max_side / max(h, w)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    out = np.empty((n, nh, nw, frames.shape[3]), dtype=np.float32)
    for i in range(n):
        out[i] = cv2.resize(
            frames[i].astype(np.float32), (nw, nh), interpolation=cv2.INTER_AREA
        )
    return out


def motion_profile(frames: np.ndarray, max_side: int | None = None) -> MotionProfile:
    """Mean-squared difference of each frame against its neighbours.

    ``frames`` is (N, H, W, C) with pixel values in [0, 1] and N >= 2.
    Interior frames average the MSE to both neighbours; the first and last
    frame use their single adjacent frame. When ``max_side`` is given and
    the frames are larger, they are shrunk before differencing (cheaper,
    ordering essentially unchanged).
    """
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise InputContractError(f"expected (N, H, W, C) frames, got shape {frames.shape}")
    n = frames.shape[0]
    if n < 2:
        raise InputContractError("motion profile needs at least 2 frames")
    if max_side is not None and max(frames.shape[1], frames.shape[2]) > max_side:
        frames = _shrink(frames, max_side)

    diffs = frames[1:].astype(np.float64) - frames[:-1].astype(np.float64)
    step = np.mean(diffs * diffs, axis=(1, 2, 3))  # step[i] = MSE(v_i, v_{i+1})
    values = np.empty(n, dtype=np.float64)
    values[0] = step[0]
    values[-1] = step[-1]
    if n > 2:
        values[1:-1] = 0.5 * (step[:-1] + step[1:])
    return MotionProfile(values=values, frame_count=n)


def _check_counts(n: int, t: int) -> None:
    if t < 1:
        raise InputContractError("target count must be >= 1")
    if t > n:
        raise InputContractError(f"cannot pick {t} distinct frames out of {n}")


def sample_uniform(n: int, t: int) -> np.ndarray:
    """Evenly spaced picks: floor((i + 0.5) * N / T)."""
    _check_counts(n, t)
    return np.floor((np.arange(t) + 0.5) * n / t).astype(np.int64)


def sample_random(n: int, t: int, seed: int) -> np.ndarray:
    """T distinct indices drawn uniformly without replacement, sorted."""
    _check_counts(n, t)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=t, replace=False)).astype(np.int64)


def sample_uniform_random_start(n: int, t: int, seed: int) -> np.ndarray:
    """One pick per span of [0, N), all spans sharing a single random phase."""
    _check_counts(n, t)
    rng = np.random.default_rng(seed)
    phase = rng.random()
    bounds = np.floor(np.arange(t + 1) * n / t).astype(np.int64)
    lengths = bounds[1:] - bounds[:-1]
    return bounds[:-1] + np.floor(phase * lengths).astype(np.int64)


def sample_mse_sorted_uniform(profile: MotionProfile, t: int) -> np.ndarray:
    """Evenly spaced picks over the frames reordered by descending motion.

    Ties are broken by ascending original index, so a constant profile
    reduces to plain uniform sampling. Output is in original frame order.
    """
    n = profile.frame_count
    _check_counts(n, t)
    order = np.lexsort((np.arange(n), -profile.values))
    positions = np.floor((np.arange(t) + 0.5) * n / t).astype(np.int64)
    return np.sort(order[positions]).astype(np.int64)


def _segment_bounds(n: int, t: int) -> np.ndarray:
    # T contiguous segments; the first N mod T segments carry the extra frame.
    base, rem = divmod(n, t)
    lengths = np.full(t, base, dtype=np.int64)
    lengths[:rem] += 1
    return np.concatenate([[0], np.cumsum(lengths)])


def _sample_segmented(profile: MotionProfile, t: int, center) -> np.ndarray:
    n = profile.frame_count
    _check_counts(n, t)
    bounds = _segment_bounds(n, t)
    picks = np.empty(t, dtype=np.int64)
    for i in range(t):
        seg = profile.values[bounds[i] : bounds[i + 1]]
        # argmin returns the first minimum, i.e. ties resolve to lowest index
        picks[i] = bounds[i] + int(np.argmin(np.abs(seg - center(seg))))
    return picks


def sample_seg_mse_mean(profile: MotionProfile, t: int) -> np.ndarray:
    """Per contiguous segment, the frame whose motion is closest to the segment mean."""
    return _sample_segmented(profile, t, np.mean)


def sample_seg_mse_median(profile: MotionProfile, t: int) -> np.ndarray:
    """Per contiguous segment, the frame whose motion is closest to the segment median."""
    return _sample_segmented(profile, t, np.median)


def sample_mixed(
    n: int, t: int, profile: MotionProfile, seed: int
) -> tuple[np.ndarray, str]:
    """Delegate to one of the six base strategies, drawn uniformly per call.

    Returns (indices, name of the delegate). Intended as train-time
    augmentation: different seeds mix strategies across the epoch.
    """
    _check_counts(n, t)
    if profile is None:
        raise InputContractError("Mixed requires a motion profile")
    rng = np.random.default_rng(seed)
    delegate = BASE_STRATEGIES[int(rng.integers(len(BASE_STRATEGIES)))]
    sub_seed = int(rng.integers(2**31 - 1))
    indices = _dispatch(delegate, n, t, profile, sub_seed)
    return indices, delegate


def _dispatch(
    strategy: str, n: int, t: int, profile: MotionProfile | None, seed: int
) -> np.ndarray:
    if strategy in PROFILE_STRATEGIES and profile is None:
        raise InputContractError(f"strategy {strategy} requires a motion profile")
    if profile is not None and profile.frame_count != n:
        raise InputContractError(
            f"profile covers {profile.frame_count} frames, clip has {n}"
        )
    if strategy == RAND_SAMPL:
        return sample_random(n, t, seed)
    if strategy == UNI_SAMPL:
        return sample_uniform(n, t)
    if strategy == UNI_RAND_START:
        return sample_uniform_random_start(n, t, seed)
    if strategy == MSE_SORTED_UNI:
        return sample_mse_sorted_uniform(profile, t)
    if strategy == SEG_MSE_MEAN:
        return sample_seg_mse_mean(profile, t)
    if strategy == SEG_MSE_MEDIAN:
        return sample_seg_mse_median(profile, t)
    raise InputContractError(f"unknown strategy {strategy!r}")


def plan_indices(
    plan: SamplingPlan, n_frames: int, profile: MotionProfile | None = None
) -> SamplingResult:
    """Run a sampling plan against a clip of ``n_frames`` frames.

    Clips shorter than the target count are padded by cycling through all
    their frames in order; the result is flagged ``padded``.
    """
    if n_frames < 1:
        raise InputContractError("clip has no frames")
    t = plan.target_count
    if n_frames < t:
        indices = np.arange(t, dtype=np.int64) % n_frames
        return SamplingResult(
            indices=indices, strategy=plan.strategy, delegate=plan.strategy, padded=True
        )
    if plan.strategy == MIXED:
        indices, delegate = sample_mixed(n_frames, t, profile, plan.seed)
        return SamplingResult(indices=indices, strategy=MIXED, delegate=delegate)
    indices = _dispatch(plan.strategy, n_frames, t, profile, plan.seed)
    return SamplingResult(indices=indices, strategy=plan.strategy, delegate=plan.strategy)
