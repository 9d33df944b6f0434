"""Hole-region evaluation: MAE, RMSE, PSNR, SSIM and temporal warping error.

All metrics are reported on the 8-bit scale. Inputs are frames in [-1, 1]
(``signed=True``, the pipeline convention) or already in 0..255. The region
argument is a pipeline mask, so the metrics look at pixels where it is 0.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage

from .errors import EmptyRegion, ShapeMismatch
from .geometry import warp_bilinear

PEAK = 255.0
PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * PEAK) ** 2
SSIM_C2 = (0.03 * PEAK) ** 2


def to_8bit(x, signed=True):
    x = np.asarray(x, dtype=np.float64)
    return (x + 1.0) * 127.5 if signed else x


def _prepare(pred, gt, mask, signed):
    p, g = to_8bit(pred, signed), to_8bit(gt, signed)
    if p.shape != g.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs ground truth {g.shape}")
    if p.ndim == 2:
        p, g = p[..., None], g[..., None]
    hole = np.asarray(mask) == 0
    if hole.shape != p.shape[:2]:
        raise ShapeMismatch(f"mask {hole.shape} does not match image {p.shape[:2]}")
    if not hole.any():
        raise EmptyRegion("hole region is empty")
    return p, g, hole


def hole_errors(pred, gt, mask, signed=True):
    """Per-value differences over hole pixels x channels, on the 8-bit scale."""
    p, g, hole = _prepare(pred, gt, mask, signed)
    return (p - g)[hole].ravel()


def masked_mae(pred, gt, mask, signed=True):
    return float(np.mean(np.abs(hole_errors(pred, gt, mask, signed))))


def masked_rmse(pred, gt, mask, signed=True):
    return float(np.sqrt(np.mean(hole_errors(pred, gt, mask, signed) ** 2)))


def psnr_from_rmse(rmse):
    return math.inf if rmse == 0 else 20.0 * math.log10(PEAK / rmse)


def masked_psnr(pred, gt, mask, signed=True):
    """PSNR in dB over the hole; ``inf`` for identical inputs (reports cap it at 99)."""
    return psnr_from_rmse(masked_rmse(pred, gt, mask, signed))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(x, y):
    """Local SSIM of two single-channel 8-bit images; borders use symmetric reflection."""
    win = gaussian_window()

    def filt(a):
        return ndimage.correlate(a, win, mode="reflect")

    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x ** 2
    var_y = filt(y * y) - mu_y ** 2
    cov = filt(x * y) - mu_x * mu_y
    return ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2))


def _ssim_values(pred, gt, mask, signed=True):
    p, g, hole = _prepare(pred, gt, mask, signed)
    return np.concatenate([ssim_map(p[..., c], g[..., c])[hole] for c in range(p.shape[-1])])


def masked_ssim(pred, gt, mask, signed=True):
    """Mean SSIM over windows centred on hole pixels, averaged over channels."""
    return float(np.mean(_ssim_values(pred, gt, mask, signed)))


def twe(frames, flows_consecutive, masks, signed=True):
    """Temporal warping error.

    ``flows_consecutive[t]`` lives on the grid of frame t+1 and points into frame t,
    so warping frame t with it predicts frame t+1. The RMSE is taken over pixels of
    frame t+1 that are in its hole, have a valid flow and sample in bounds, and is
    averaged over the consecutive pairs that have any such pixel.
    """
    if len(flows_consecutive) != len(frames) - 1 or len(masks) != len(frames):
        raise ShapeMismatch("need F frames, F masks and F-1 consecutive flows")
    per_pair = []
    for t, flow in enumerate(flows_consecutive):
        src = to_8bit(frames[t], signed)
        nxt = to_8bit(frames[t + 1], signed)
        res = warp_bilinear(src, np.asarray(flow.displacement, np.float64))
        region = (res.in_bounds > 0) & (np.asarray(flow.valid) > 0) & (np.asarray(masks[t + 1]) == 0)
        if not region.any():
            continue
        diff = (res.warped - nxt)[region]
        per_pair.append(float(np.sqrt(np.mean(diff ** 2))))
    if not per_pair:
        raise EmptyRegion("no valid hole pixel in any consecutive pair")
    return float(np.mean(per_pair))


@dataclass
class FrameMetrics:
    index: int
    mae: float
    rmse: float
    psnr: float
    ssim: float
    hole_pixel_count: int


@dataclass
class EvalReport:
    mae: float
    rmse: float
    psnr: float
    ssim: float
    twe: Optional[float]
    hole_pixel_count: int
    per_frame: List[FrameMetrics] = field(default_factory=list)

    def to_records(self):
        """Line-delimited JSON: one record per frame, then a summary record."""
        lines = [json.dumps({"type": "frame", **asdict(f)}) for f in self.per_frame]
        summary = {k: v for k, v in asdict(self).items() if k != "per_frame"}
        lines.append(json.dumps({"type": "summary", **summary}))
        return "\n".join(lines) + "\n"

    def summary_table(self):
        rows = [("frame", "MAE", "RMSE", "PSNR", "SSIM", "holes")]
        for f in self.per_frame:
            rows.append((str(f.index), f"{f.mae:.3f}", f"{f.rmse:.3f}", f"{f.psnr:.3f}", f"{f.ssim:.4f}",
                         str(f.hole_pixel_count)))
        rows.append(("all", f"{self.mae:.3f}", f"{self.rmse:.3f}", f"{self.psnr:.3f}", f"{self.ssim:.4f}",
                     str(self.hole_pixel_count)))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        text = "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)
        if self.twe is not None:
            text += f"\nTWE: {self.twe:.3f}"
        return text


def evaluate(preds, gts, masks, flows_consecutive=None, signed=True) -> EvalReport:
    """Pooled hole-region metrics over a list of frames plus per-frame records.

    Frames with an empty hole are skipped in the per-frame breakdown. MAE and RMSE
    pool all hole values, PSNR derives from the pooled RMSE (capped at 99 dB), SSIM
    pools all hole-centred windows.
    """
    errs, ssims, per_frame = [], [], []
    for i, (p, g, m) in enumerate(zip(preds, gts, masks)):
        if not (np.asarray(m) == 0).any():
            continue
        e = hole_errors(p, g, m, signed)
        s = _ssim_values(p, g, m, signed)
        errs.append(e)
        ssims.append(s)
        rmse = float(np.sqrt(np.mean(e ** 2)))
        per_frame.append(FrameMetrics(i, float(np.mean(np.abs(e))), rmse, min(psnr_from_rmse(rmse), PSNR_CAP),
                                      float(np.mean(s)), int((np.asarray(m) == 0).sum())))
    if not errs:
        raise EmptyRegion("no hole pixel in any frame")
    e = np.concatenate(errs)
    rmse = float(np.sqrt(np.mean(e ** 2)))
    t = None
    if flows_consecutive is not None:
        t = twe(preds, flows_consecutive, masks, signed)
    return EvalReport(float(np.mean(np.abs(e))), rmse, min(psnr_from_rmse(rmse), PSNR_CAP),
                      float(np.mean(np.concatenate(ssims))), t, sum(f.hole_pixel_count for f in per_frame),
                      per_frame)
