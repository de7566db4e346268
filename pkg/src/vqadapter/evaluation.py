"""Rank/linear correlation metrics and the repeated random-split protocol.

Tie handling follows the conventions of the VQA literature: average ranks
for the Spearman coefficient, tau-b correction for Kendall. No logistic
remapping is applied before the Pearson coefficient by default; pass
``logistic_fit=True`` to :func:`plcc` to get the four-parameter variant
some benchmarks use.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import InputContractError, NumericContractError

log = logging.getLogger(__name__)

METRIC_NAMES = ("srocc", "plcc", "krocc", "rmse")


def _pair(x, y, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InputContractError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < min_len:
        raise InputContractError(f"need at least {min_len} points, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NumericContractError("inputs contain non-finite values")
    return x, y


def plcc(x, y, logistic_fit: bool = False) -> float:
    """Pearson linear correlation; optionally after a 4-parameter logistic map."""
    x, y = _pair(x, y, 2)
    if logistic_fit:
        x = _fit_logistic(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    den = math.sqrt(float(xc @ xc)) * math.sqrt(float(yc @ yc))
    if den == 0.0:
        raise NumericContractError("correlation undefined for constant input")
    return float(xc @ yc) / den


def srocc(x, y) -> float:
    """Spearman rank correlation: Pearson over average-tied ranks."""
    x, y = _pair(x, y, 2)
    return plcc(stats.rankdata(x), stats.rankdata(y))


def krocc(x, y) -> float:
    """Kendall rank correlation with tau-b tie correction."""
    x, y = _pair(x, y, 2)
    tau = stats.kendalltau(x, y).statistic
    if not np.isfinite(tau):
        raise NumericContractError("correlation undefined for all-tied input")
    return float(tau)


def rmse(x, y) -> float:
    x, y = _pair(x, y, 1)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def _fit_logistic(pred: np.ndarray, mos: np.ndarray) -> np.ndarray:
    # q(x) = b1 * (1/2 - 1/(1 + exp(b2 (x - b3)))) + b4 x + b5
    def q(x, b1, b2, b3, b4, b5):
        return b1 * (0.5 - 1.0 / (1 + np.exp(np.clip(b2 * (x - b3), -50, 50)))) + b4 * x + b5

    p0 = [np.max(mos) - np.min(mos), 1.0, np.mean(pred), 0.0, np.mean(mos)]
    try:
        popt, _ = optimize.curve_fit(q, pred, mos, p0=p0, maxfev=20000)
        return q(pred, *popt)
    except RuntimeError:
        log.warning("logistic fit did not converge; using raw predictions")
        return pred


def compute_metrics(pred, mos) -> dict[str, float]:
    """All four headline metrics for one prediction/label set."""
    return {
        "srocc": srocc(pred, mos),
        "plcc": plcc(pred, mos),
        "krocc": krocc(pred, mos),
        "rmse": rmse(pred, mos),
    }


def split_indices(
    n: int, train_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train/test index partition, deterministic per seed."""
    if not 0.0 < train_fraction < 1.0:
        raise InputContractError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(n * train_fraction)
    if n_train == 0 or n_train == n:
        raise InputContractError(f"fraction {train_fraction} degenerate for n={n}")
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class SplitRecord:
    seed: int
    srocc: float
    plcc: float
    krocc: float
    rmse: float
    n: int
    predictions: list[float] | None = None
    labels: list[float] | None = None

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRIC_NAMES}


@dataclass
class EvalReport:
    """Per-split metrics plus their aggregate mean and standard deviation."""

    splits: list[SplitRecord] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    def aggregate(self) -> dict[str, dict[str, float]]:
        if not self.splits:
            raise NumericContractError("no completed splits to aggregate")
        out = {}
        for m in METRIC_NAMES:
            vals = np.array([getattr(s, m) for s in self.splits], dtype=np.float64)
            out[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_dict(self) -> dict:
        return {
            "splits": [
                {k: v for k, v in vars(s).items() if v is not None} for s in self.splits
            ],
            "failures": self.failures,
            "aggregate": self.aggregate() if self.splits else {},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EvalReport":
        report = cls(failures=list(payload.get("failures", [])))
        for row in payload.get("splits", []):
            report.splits.append(SplitRecord(**row))
        return report

    def table(self) -> str:
        """Human-readable fixed-width summary."""
        lines = ["seed    srocc    plcc     krocc    rmse     n"]
        for s in self.splits:
            lines.append(
                f"{s.seed:<7d} {s.srocc:<8.4f} {s.plcc:<8.4f} {s.krocc:<8.4f} {s.rmse:<8.4f} {s.n}"
            )
        agg = self.aggregate()
        lines.append("-" * len(lines[0]))
        mean = " ".join(f"{agg[m]['mean']:<8.4f}" for m in METRIC_NAMES)
        std = " ".join(f"{agg[m]['std']:<8.4f}" for m in METRIC_NAMES)
        lines.append(f"mean    {mean}")
        lines.append(f"std     {std}")
        if self.failures:
            lines.append(f"failed splits: {[f['seed'] for f in self.failures]}")
        return "\n".join(lines)


def run_split_protocol(
    manifest,
    train_and_predict,
    num_splits: int = 10,
    train_fraction: float = 0.8,
    seeds: list[int] | None = None,
    keep_predictions: bool = False,
) -> EvalReport:
    """Repeated random train/test evaluation.

    ``manifest`` is any sequence of rows carrying a ``mos`` attribute.
    ``train_and_predict(train_rows, test_rows, seed)`` must return the
    predicted scores for ``test_rows``. Failed splits are recorded and the
    aggregate covers the completed ones only.
    """
    rows = list(manifest)
    if not rows:
        raise InputContractError("manifest is empty")
    if seeds is None:
        seeds = list(range(num_splits))
    report = EvalReport()
    for seed in seeds:
        train_idx, test_idx = split_indices(len(rows), train_fraction, seed)
        train_rows = [rows[i] for i in train_idx]
        test_rows = [rows[i] for i in test_idx]
        mos = np.array([r.mos for r in test_rows], dtype=np.float64)
        try:
            pred = np.asarray(train_and_predict(train_rows, test_rows, seed), dtype=np.float64)
            if pred.shape != mos.shape:
                raise InputContractError(
                    f"predictions shape {pred.shape} != labels shape {mos.shape}"
                )
            record = SplitRecord(seed=seed, n=len(test_rows), **compute_metrics(pred, mos))
            if keep_predictions:
                record.predictions = [float(v) for v in pred]
                record.labels = [float(v) for v in mos]
            report.splits.append(record)
        except Exception as exc:  # noqa: BLE001 - contract: record and continue
            log.warning("split seed=%d failed: %s", seed, exc)
            report.failures.append({"seed": seed, "error": str(exc)})
    return report
