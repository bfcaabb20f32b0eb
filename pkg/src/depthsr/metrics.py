"""RMSE / PSNR and the per-image evaluation report."""
import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

DEFAULT_REPORT_SCALE = 255.0
PSNR_CAP = 100.0


class EvaluationError(RuntimeError):
    def __init__(self, source_id, cause):
        super().__init__(f"method failed on sample {source_id!r}: {cause}")
        self.source_id = source_id


def _values_and_mask(pred, gt):
    p = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "values", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {g.shape}")
    mask = getattr(gt, "valid_mask", None)
    if mask is None:
        mask = np.ones(g.shape, dtype=bool)
    return p, g, mask


def rmse_normalized(pred, gt):
    p, g, mask = _values_and_mask(pred, gt)
    if not mask.any():
        raise ValueError("ground truth has no valid pixels")
    d = p[mask] - g[mask]
    return float(np.sqrt(np.mean(d * d)))


def rmse(pred, gt, report_scale=DEFAULT_REPORT_SCALE):
    """RMSE over the ground-truth valid pixels, reported on ``report_scale``."""
    return rmse_normalized(pred, gt) * report_scale


def psnr(pred, gt, peak=1.0):
    """PSNR in dB on the normalized range; ``inf`` for identical inputs."""
    r = rmse_normalized(pred, gt)
    if r == 0.0:
        return math.inf
    return 20.0 * math.log10(peak / r)


@dataclass(frozen=True)
class EvalRow:
    source_id: str
    scale: int
    rmse: float
    psnr: float
    seconds: float

    @property
    def psnr_infinite(self):
        return self.psnr >= PSNR_CAP


@dataclass
class EvalReport:
    per_image: list
    averages: dict = field(default_factory=dict)
    config_digest: str = ""
    method: str = ""

    @classmethod
    def from_rows(cls, rows, config_digest="", method=""):
        averages = {}
        for s in sorted({r.scale for r in rows}):
            sel = [r for r in rows if r.scale == s]
            averages[s] = (float(np.mean([r.rmse for r in sel])),
                           float(np.mean([r.psnr for r in sel])))
        return cls(list(rows), averages, config_digest, method)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["source_id", "scale", "rmse", "psnr", "seconds"])
            for r in self.per_image:
                wr.writerow([r.source_id, r.scale, repr(r.rmse), repr(r.psnr), f"{r.seconds:.6f}"])

    @staticmethod
    def read_csv(path):
        with open(path, newline="") as fh:
            rows = [EvalRow(d["source_id"], int(d["scale"]), float(d["rmse"]), float(d["psnr"]),
                            float(d["seconds"])) for d in csv.DictReader(fh)]
        return EvalReport.from_rows(rows)

    def summary(self):
        head = f"{'method':<10} {'scale':>5} {'n':>5} {'RMSE':>9} {'PSNR':>9}"
        lines = [head, "-" * len(head)]
        for s, (r, p) in self.averages.items():
            n = sum(1 for row in self.per_image if row.scale == s)
            lines.append(f"{self.method:<10} {s:>4}x {n:>5} {r:>9.4f} {p:>9.3f}")
        if self.config_digest:
            lines.append(f"config {self.config_digest[:16]}")
        return "\n".join(lines)


def evaluate(method, samples, report_scale=DEFAULT_REPORT_SCALE, config_digest="", name=""):
    """Run ``method(sample) -> DepthMap`` over samples and tabulate RMSE / PSNR.

    Infinite PSNR (exact reconstruction) is stored as ``PSNR_CAP``.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    rows = []
    for s in samples:
        t0 = time.perf_counter()
        try:
            pred = method(s)
        except Exception as exc:
            raise EvaluationError(s.source_id, exc) from exc
        dt = time.perf_counter() - t0
        p = min(psnr(pred, s.hr_depth_gt), PSNR_CAP)
        rows.append(EvalRow(s.source_id, s.scale, rmse(pred, s.hr_depth_gt, report_scale), p, dt))
    return EvalReport.from_rows(rows, config_digest, name)
