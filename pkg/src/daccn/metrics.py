"""Seven-metric depth evaluation (Abs Rel, Sq Rel, RMSE, RMSE log, delta < 1.25^k)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateError, DimensionError

COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
HEADERS = ("Abs Rel", "Sq Rel", "RMSE", "RMSE log", "d<1.25", "d<1.25^2", "d<1.25^3")

# "standard": mean((pred - gt)^2 / gt); "relative-squared": mean(((pred - gt) / gt)^2)
SQ_REL_CONVENTIONS = ("standard", "relative-squared")


@dataclass
class MetricsReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int
    sq_rel_convention: str = "standard"

    def as_dict(self):
        return asdict(self)

    def to_record(self, sep: str = "\t") -> str:
        """Single-line delimited record, full float precision."""
        values = [repr(float(getattr(self, c))) for c in COLUMNS]
        return sep.join(values + [str(self.n_pixels), self.sq_rel_convention])

    @staticmethod
    def record_header(sep: str = "\t") -> str:
        return sep.join(COLUMNS + ("n_pixels", "sq_rel_convention"))

    @classmethod
    def from_record(cls, line: str, sep: str = "\t") -> "MetricsReport":
        parts = line.strip().split(sep)
        vals = [float(p) for p in parts[:7]]
        return cls(*vals, n_pixels=int(parts[7]), sq_rel_convention=parts[8])

    def to_table(self, label: str = "") -> str:
        return format_table([self], [label])


def format_table(reports: Sequence[MetricsReport], labels: Sequence[str]) -> str:
    width = max([len(l) for l in labels] + [8])
    head = f"{'':<{width}} | " + " | ".join(f"{h:>9}" for h in HEADERS)
    lines = [head, "-" * len(head)]
    for label, r in zip(labels, reports):
        cells = " | ".join(f"{getattr(r, c):>9.4f}" for c in COLUMNS)
        lines.append(f"{label:<{width}} | {cells}")
    lines.append(f"(sq_rel convention: {reports[0].sq_rel_convention})")
    return "\n".join(lines)


def depth_metrics(pred: np.ndarray, gt: np.ndarray, valid_mask: Optional[np.ndarray] = None,
                  median_scaling: bool = True, clamp=(0.1, 100.0),
                  sq_rel_convention: str = "standard") -> MetricsReport:
    """Compare predicted and ground-truth depth over ``valid_mask``.

    Ground truth outside ``clamp`` is excluded; predictions are median-scaled
    (optional) and then clamped to ``clamp``.
    """
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} vs gt {gt.shape}")
    if sq_rel_convention not in SQ_REL_CONVENTIONS:
        raise ValueError(f"unknown sq_rel convention {sq_rel_convention!r}")
    mask = np.ones(gt.shape, dtype=bool) if valid_mask is None else np.asarray(valid_mask, bool)
    lo, hi = clamp if clamp is not None else (None, None)
    if lo is not None:
        mask = mask & (gt >= lo) & (gt <= hi)
    mask &= gt > 0
    if not mask.any():
        raise DegenerateError("empty evaluation mask")
    p, g = pred[mask], gt[mask]
    if median_scaling:
        p = p * (np.median(g) / np.median(p))
    if lo is not None:
        p = np.clip(p, lo, hi)

    ratio = np.maximum(p / g, g / p)
    diff = p - g
    if sq_rel_convention == "standard":
        sq_rel = np.mean(diff ** 2 / g)
    else:
        sq_rel = np.mean((diff / g) ** 2)
    return MetricsReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(sq_rel),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n_pixels=int(mask.sum()),
        sq_rel_convention=sq_rel_convention,
    )


def mean_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Per-image average (the usual benchmark aggregation)."""
    vals = {c: float(np.mean([getattr(r, c) for r in reports])) for c in COLUMNS}
    return MetricsReport(**vals, n_pixels=int(sum(r.n_pixels for r in reports)),
                         sq_rel_convention=reports[0].sq_rel_convention)
