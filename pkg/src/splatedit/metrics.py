"""Image quality metrics: PSNR, SSIM (full and masked), mask coverage."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .ssim import d_ssim, ssim


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB (peak 1.0); inf for identical inputs.

    With a mask, the MSE runs over masked pixels only.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    diff = a - b
    if mask is not None:
        mask = np.asarray(mask, bool)
        if not mask.any():
            raise ValueError("empty mask")
        diff = diff[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def amcr(masks) -> float:
    """Average mask coverage: mean percentage of image area that is masked."""
    if not masks:
        raise ValueError("need at least one mask")
    fractions = []
    for m in masks:
        m = np.asarray(m)
        fractions.append(float(np.count_nonzero(m)) / m.size * 100.0)
    return float(np.mean(fractions))


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.6f}"


@dataclass
class MetricReport:
    """Per-view and aggregate metrics; aggregates are arithmetic means."""

    views: list = field(default_factory=list)  # list of per-view dicts

    def add_view(self, name, rendered, reference, mask=None) -> dict:
        row = {
            "view": name,
            "psnr": psnr(rendered, reference),
            "ssim": ssim(rendered, reference),
        }
        if mask is not None:
            row["masked_psnr"] = psnr(rendered, reference, mask)
            row["masked_ssim"] = ssim(rendered, reference, mask)
            row["mask_coverage_pct"] = float(np.count_nonzero(mask)) / np.asarray(mask).size * 100.0
        self.views.append(row)
        return row

    def aggregate(self) -> dict:
        if not self.views:
            return {}
        keys = [k for k in self.views[0] if k != "view"]
        return {k: float(np.mean([v[k] for v in self.views if k in v])) for k in keys}

    def to_json(self) -> str:
        agg = self.aggregate()
        doc = {
            "views": [{k: (_fmt(v) if isinstance(v, float) else v)
                       for k, v in row.items()} for row in self.views],
            "aggregate": {k: _fmt(v) for k, v in agg.items()},
        }
        return json.dumps(doc, indent=1)

    def to_csv(self) -> str:
        if not self.views:
            return ""
        buf = io.StringIO()
        keys = list(self.views[0].keys())
        writer = csv.DictWriter(buf, fieldnames=keys)
        writer.writeheader()
        for row in self.views:
            writer.writerow({k: (_fmt(v) if isinstance(v, float) else v)
                             for k, v in row.items()})
        agg = self.aggregate()
        agg_row = {"view": "aggregate"}
        agg_row.update({k: _fmt(v) for k, v in agg.items()})
        writer.writerow(agg_row)
        return buf.getvalue()
