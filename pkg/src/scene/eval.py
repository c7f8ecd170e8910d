"""Rate-distortion curves and Bjontegaard BD-rate.

BD-rate fits log10(bitrate) as a cubic polynomial of the quality metric for
each curve, integrates both fits over the shared metric interval and reports
``(10 ** mean_log_difference - 1) * 100``. Negative values are savings of the
test pipeline relative to the anchor. When the metric ranges do not overlap
the result is explicitly undefined.
"""

from __future__ import annotations

import csv
import logging
import math
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .checkpoint import load_checkpoint
from .core.ssim import ms_ssim
from .errors import ConfigError, FormatError
from .harness import EXTENSIONS, Encoder, EncoderJob, VideoClip, write_y4m
from .inference import enhance
from .model import SceneParams
from .semantics import ToyProvider

log = logging.getLogger(__name__)

UNDEFINED_REASON = "no overlapping metric interval"
DEFAULT_LADDER = (20, 28, 36, 44)


@dataclass(frozen=True)
class RdPoint:
    bitrate: float  # kbps
    metric: float
    label: str = ""

    def __post_init__(self):
        if not self.bitrate > 0 or not math.isfinite(self.bitrate):
            raise ConfigError(f"bitrate must be positive and finite, got {self.bitrate}")
        if not math.isfinite(self.metric):
            raise ConfigError(f"metric must be finite, got {self.metric}")


@dataclass
class RdCurve:
    points: list[RdPoint]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bitrate)
        if len(self.points) < 4:
            raise ConfigError(f"an RD curve needs at least 4 points, got {len(self.points)}")
        rates = [p.bitrate for p in self.points]
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError("RD curve bitrates must be strictly increasing")
        metrics = [p.metric for p in self.points]
        if any(b < a for a, b in zip(metrics, metrics[1:])):
            msg = "metric is not monotone in bitrate"
            self.warnings.append(msg)
            log.warning(msg)

    @classmethod
    def from_pairs(cls, pairs, label: str = "") -> "RdCurve":
        return cls([RdPoint(float(r), float(m), label) for r, m in pairs])

    @property
    def bitrates(self) -> np.ndarray:
        return np.array([p.bitrate for p in self.points])

    @property
    def metrics(self) -> np.ndarray:
        return np.array([p.metric for p in self.points])

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class BdRateResult:
    value: float | None
    overlap: tuple[float, float] | None
    reason: str = ""

    @property
    def defined(self) -> bool:
        return self.value is not None

    def __str__(self) -> str:
        if self.value is None:
            return f"undefined ({self.reason})"
        return f"{self.value:.2f}%"


def _dedupe_metrics(metrics: np.ndarray) -> np.ndarray:
    """Nudge repeated metric values apart by one ulp so the fit stays a function."""
    out = metrics.astype(np.float64).copy()
    order = np.argsort(out, kind="stable")
    for prev, cur in zip(order, order[1:]):
        if out[cur] <= out[prev]:
            out[cur] = np.nextafter(out[prev], np.inf)
            warnings.warn("duplicate metric values perturbed for BD-rate fit", RuntimeWarning, stacklevel=3)
    return out


def _integral_cubic(metric: np.ndarray, log_rate: np.ndarray, lo: float, hi: float) -> float:
    coeffs = np.polyfit(metric, log_rate, 3)
    anti = np.polyint(coeffs)
    return float(np.polyval(anti, hi) - np.polyval(anti, lo))


def _integral_pchip(metric: np.ndarray, log_rate: np.ndarray, lo: float, hi: float) -> float:
    from scipy.interpolate import PchipInterpolator

    order = np.argsort(metric)
    return float(PchipInterpolator(metric[order], log_rate[order]).integrate(lo, hi))


def bd_rate(anchor: RdCurve, test: RdCurve, method: str = "cubic") -> BdRateResult:
    """Average bitrate difference (percent) of ``test`` vs ``anchor`` at equal quality."""
    if method not in ("cubic", "pchip"):
        raise ConfigError(f"unknown BD-rate interpolation {method!r}")
    for curve in (anchor, test):
        if len(curve) < 4:
            raise ConfigError("BD-rate needs at least 4 points per curve")
    m_a, m_t = _dedupe_metrics(anchor.metrics), _dedupe_metrics(test.metrics)
    r_a, r_t = np.log10(anchor.bitrates), np.log10(test.bitrates)
    lo = max(m_a.min(), m_t.min())
    hi = min(m_a.max(), m_t.max())
    if not hi > lo:
        return BdRateResult(None, None, UNDEFINED_REASON)
    # Fit on a metric axis mapped to [-1, 1] over the overlap and on log-rates
    # relative to a shared offset: same averages, far better conditioned fits.
    centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    offset = 0.5 * (r_a.mean() + r_t.mean())
    x_a, x_t = (m_a - centre) / half, (m_t - centre) / half
    integrate = _integral_cubic if method == "cubic" else _integral_pchip
    avg_diff = (integrate(x_t, r_t - offset, -1.0, 1.0) - integrate(x_a, r_a - offset, -1.0, 1.0)) / 2.0
    return BdRateResult((10.0**avg_diff - 1.0) * 100.0, (float(lo), float(hi)))


# ------------------------------------------------------------------ CSV I/O

RD_HEADER = ["label", "bitrate_kbps", "metric"]


def write_rd_csv(path, curves: Sequence[RdCurve]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RD_HEADER)
        for curve in curves:
            for p in curve.points:
                w.writerow([p.label, repr(p.bitrate), repr(p.metric)])
    return path


def read_rd_csv(path, prefix: str | None = None) -> RdCurve:
    """Read an RD CSV; ``prefix`` keeps only rows whose label starts with it."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != RD_HEADER:
            raise FormatError(f"{path}: expected header {','.join(RD_HEADER)}, got {reader.fieldnames}")
        points = [
            RdPoint(float(row["bitrate_kbps"]), float(row["metric"]), row["label"])
            for row in reader
            if prefix is None or row["label"].startswith(prefix)
        ]
    return RdCurve(points)


def read_score_csv(path) -> np.ndarray:
    """Per-frame external scores from a ``frame_index,score`` CSV, in frame order."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["frame_index", "score"]:
            raise FormatError(f"{path}: expected header frame_index,score")
        rows = sorted((int(r["frame_index"]), float(r["score"])) for r in reader)
    if not rows:
        raise FormatError(f"{path}: no scores")
    return np.array([s for _, s in rows])


# ------------------------------------------------------------------ scoring

Metric = Callable[[VideoClip, VideoClip, str], float]


def ms_ssim_metric(reference: VideoClip, distorted: VideoClip, label: str = "") -> float:
    """Mean per-frame MS-SSIM of ``distorted`` against ``reference``."""
    if reference.frames.shape != distorted.frames.shape:
        raise FormatError(f"clip shapes differ: {reference.frames.shape} vs {distorted.frames.shape}")
    scores = [ms_ssim(reference.frame(i), distorted.frame(i)).item() for i in range(len(reference))]
    return float(np.mean(scores))


class ExternalScores:
    """Metric backed by precomputed per-frame scores (e.g. from a VMAF tool).

    Looks up ``<directory>/<label with '/' replaced by '_'>.csv``.
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def __call__(self, reference: VideoClip, distorted: VideoClip, label: str = "") -> float:
        path = self.directory / (label.replace("/", "_") + ".csv")
        return float(read_score_csv(path).mean())


def resolve_metric(metric) -> Metric:
    if callable(metric):
        return metric
    if metric == "ms_ssim":
        return ms_ssim_metric
    if isinstance(metric, str) and metric.startswith("external:"):
        return ExternalScores(metric.split(":", 1)[1])
    raise ConfigError(f"unknown metric {metric!r}")


def build_rd_curve(
    clip: VideoClip,
    ladder: Sequence[int],
    codec: str,
    encoder: Encoder,
    metric="ms_ssim",
    reference: VideoClip | None = None,
    label_prefix: str = "",
    workdir=None,
    parallel: int = 1,
    preset: str = "medium",
) -> RdCurve:
    """Encode ``clip`` at each QP, decode, and score against ``reference``.

    ``reference`` defaults to ``clip`` itself; pass the pristine source when
    ``clip`` is a pre-processed version of it.
    """
    encoder.require(codec)
    score = resolve_metric(metric)
    reference = clip if reference is None else reference
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        src = write_y4m(clip, Path(tmp) / "input.y4m")

        def run(qp: int) -> RdPoint:
            job = EncoderJob(codec, src, Path(tmp) / f"qp{qp}{EXTENSIONS[codec]}", qp=int(qp), preset=preset)
            decoded, kbps = encoder.encode_decode(job)
            label = f"{label_prefix}{job.label}"
            return RdPoint(kbps, score(reference, decoded, label), label)

        with ThreadPoolExecutor(max_workers=max(1, parallel)) as pool:
            points = list(pool.map(run, ladder))
    return RdCurve(points)


@dataclass
class PipelineReport:
    anchor: RdCurve
    enhanced: RdCurve
    bd: BdRateResult

    def write_csv(self, path) -> Path:
        return write_rd_csv(path, [self.anchor, self.enhanced])


def compare_pipelines(
    clip: VideoClip,
    checkpoint,
    ladder: Sequence[int] = DEFAULT_LADDER,
    codec: str = "h264",
    encoder: Encoder | None = None,
    provider=None,
    metric="ms_ssim",
    report_path=None,
    workdir=None,
    parallel: int = 1,
    method: str = "cubic",
) -> PipelineReport:
    """Codec-only anchor vs enhance-then-encode, both scored against ``clip``."""
    encoder = encoder or Encoder()
    params = checkpoint if isinstance(checkpoint, SceneParams) else load_checkpoint(checkpoint)
    provider = provider or ToyProvider(seed=0, embed_dim=params.config.embed_dim)
    enhanced_frames = np.concatenate(
        [enhance(clip.frame(i), params, provider, indices=[i]) for i in range(len(clip))]
    )
    enhanced = VideoClip(enhanced_frames, clip.frame_rate, name=f"{clip.name}-enhanced")
    common = dict(encoder=encoder, metric=metric, reference=clip, workdir=workdir, parallel=parallel)
    anchor_curve = build_rd_curve(clip, ladder, codec, label_prefix="anchor/", **common)
    test_curve = build_rd_curve(enhanced, ladder, codec, label_prefix="scene/", **common)
    report = PipelineReport(anchor_curve, test_curve, bd_rate(anchor_curve, test_curve, method))
    if report_path is not None:
        report.write_csv(report_path)
    return report
