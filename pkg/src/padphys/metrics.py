"""Video-level PAD metrics: temporal pooling, EER thresholds, APCER/BPCER/ACER and ROC.

Conventions: a higher score means "more genuine"; a video is accepted as
bona-fide when its pooled score is >= the threshold.  Rates are stored as
fractions in [0, 1] and printed as percentages.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

BONAFIDE = "bonafide"
TOTAL = "Total"
MEAN = "mean"


class MetricsError(ValueError):
    pass


@dataclass
class VideoScore:
    clip_id: str
    label: str  # "bonafide" or an attack abbreviation
    frame_scores: np.ndarray = field(repr=False)
    pooled: float = float("nan")

    def __post_init__(self):
        self.frame_scores = np.asarray(self.frame_scores, dtype=np.float64)
        if math.isnan(self.pooled):
            self.pooled = pool_video(self.frame_scores)

    @property
    def is_bonafide(self) -> bool:
        return self.label == BONAFIDE


def pool_video(frame_scores: Sequence[float]) -> float:
    """Video decision score: the mean of its per-frame scores."""
    s = np.asarray(frame_scores, dtype=np.float64)
    if s.size == 0:
        raise MetricsError("cannot pool an empty score sequence")
    return float(s.mean())


def _split(scores: Sequence[VideoScore]) -> tuple[np.ndarray, np.ndarray]:
    bona = np.array([v.pooled for v in scores if v.is_bonafide], dtype=np.float64)
    attack = np.array([v.pooled for v in scores if not v.is_bonafide], dtype=np.float64)
    return bona, attack


def candidate_thresholds(values: np.ndarray) -> np.ndarray:
    """Midpoints between adjacent distinct scores, plus -inf and +inf."""
    u = np.unique(values)
    mids = (u[:-1] + u[1:]) / 2.0
    return np.concatenate(([-np.inf], mids, [np.inf]))


def eer_threshold(scores: Sequence[VideoScore]) -> tuple[float, float]:
    """Threshold where the bona-fide and attack error rates are closest to equal.

    Ties on ``|FNR - FPR|`` go to the smaller ``(FNR + FPR) / 2``, then to the
    smaller threshold.  Returns ``(threshold, eer)`` with ``eer = (FNR + FPR) / 2``.
    """
    bona, attack = _split(scores)
    nb, na = len(bona), len(attack)
    if nb == 0 or na == 0:
        raise MetricsError("EER needs at least one bona-fide and one attack video")
    cand = candidate_thresholds(np.concatenate([bona, attack]))
    fn = np.searchsorted(np.sort(bona), cand, side="left")  # bona-fide scored below tau
    fp = na - np.searchsorted(np.sort(attack), cand, side="left")  # attacks at or above tau
    # integer keys scaled by na*nb keep the comparisons exact
    gap = np.abs(fn * na - fp * nb)
    total = fn * na + fp * nb
    best = np.lexsort((cand, total, gap))[0]
    eer = (fn[best] / nb + fp[best] / na) / 2.0
    return float(cand[best]), float(eer)


@dataclass
class ReportRow:
    name: str
    apcer: float
    bpcer: float
    acer: float
    n_attack: int
    n_bonafide: int


@dataclass
class RocCurve:
    name: str
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


@dataclass
class MetricsReport:
    threshold: float
    rows: list[ReportRow]
    roc: dict[str, RocCurve] = field(default_factory=dict)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def total(self) -> ReportRow:
        return self.row(TOTAL)

    @property
    def attack_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.name != TOTAL]

    def to_table(self) -> str:
        return format_table(self.rows, self.threshold)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attack", "n_attack", "n_bonafide", "APCER", "BPCER", "ACER"])
        for r in self.rows:
            w.writerow([r.name, r.n_attack, r.n_bonafide, _pct(r.apcer), _pct(r.bpcer), _pct(r.acer)])
        return buf.getvalue()

    def roc_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["curve", "fpr", "tpr", "threshold"])
        for name, c in self.roc.items():
            for f, t, th in c.points():
                w.writerow([name, f"{f:.6f}", f"{t:.6f}", _fmt_thr(th)])
        return buf.getvalue()

    def roc_svg(self) -> str:
        return roc_svg(self.roc)


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _fmt_thr(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def format_table(rows: Sequence[ReportRow], threshold: Optional[float] = None) -> str:
    lines = []
    if threshold is not None:
        lines.append(f"threshold = {threshold:.6f}")
    lines.append(f"{'attack':<8} {'n':>5} {'APCER':>8} {'BPCER':>8} {'ACER':>8}")
    lines.append("-" * 41)
    for r in rows:
        if r.name == TOTAL:
            lines.append("-" * 41)
        lines.append(f"{r.name:<8} {r.n_attack:>5} {_pct(r.apcer):>8} {_pct(r.bpcer):>8} {_pct(r.acer):>8}")
    return "\n".join(lines) + "\n"


def attack_types_in(scores: Sequence[VideoScore]) -> list[str]:
    """Attack labels in order of first appearance."""
    seen: dict[str, None] = {}
    for v in scores:
        if not v.is_bonafide:
            seen.setdefault(v.label, None)
    return list(seen)


def classify_and_report(scores: Sequence[VideoScore], threshold: float, with_roc: bool = True) -> MetricsReport:
    """APCER per attack type and overall, BPCER, and ACER at a fixed threshold.

    Per-attack ACER pairs that attack's APCER with the global BPCER.
    """
    if not math.isfinite(threshold):
        raise MetricsError(f"threshold must be finite, got {threshold}")
    bona, attack = _split(scores)
    if len(bona) == 0 or len(attack) == 0:
        raise MetricsError("a report needs both bona-fide and attack videos")
    bpcer = float(np.count_nonzero(bona < threshold)) / len(bona)
    rows = []
    for name in attack_types_in(scores):
        s = np.array([v.pooled for v in scores if v.label == name])
        apcer = float(np.count_nonzero(s >= threshold)) / len(s)
        rows.append(ReportRow(name, apcer, bpcer, (apcer + bpcer) / 2.0, len(s), len(bona)))
    apcer = float(np.count_nonzero(attack >= threshold)) / len(attack)
    rows.append(ReportRow(TOTAL, apcer, bpcer, (apcer + bpcer) / 2.0, len(attack), len(bona)))
    roc = roc_curves(scores) if with_roc else {}
    return MetricsReport(float(threshold), rows, roc)


# ---------------------------------------------------------------------------
# ROC


def _roc_counts(bona: np.ndarray, attack: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, true-accept counts, false-accept counts), descending thresholds from +inf."""
    thr = np.unique(np.concatenate([bona, attack]))[::-1]
    bs, as_ = np.sort(bona), np.sort(attack)
    tp = len(bs) - np.searchsorted(bs, thr, side="left")
    fp = len(as_) - np.searchsorted(as_, thr, side="left")
    return (np.concatenate(([np.inf], thr)), np.concatenate(([0], tp)), np.concatenate(([0], fp)))


def roc_curve(scores: Sequence[VideoScore], name: str = TOTAL) -> RocCurve:
    """ROC of bona-fide acceptance (TPR) against attack acceptance (FPR).

    One point per distinct score threshold plus the (0, 0) start; the area is
    the trapezoid sum, computed in integers and divided once.
    """
    bona, attack = _split(scores)
    nb, na = len(bona), len(attack)
    if nb == 0 or na == 0:
        raise MetricsError("ROC needs both bona-fide and attack videos")
    thr, tp, fp = _roc_counts(bona, attack)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * nb * na)
    return RocCurve(name, fp / na, tp / nb, thr, auc)


def roc_curves(scores: Sequence[VideoScore]) -> dict[str, RocCurve]:
    """Per-attack curves (each against all bona-fide videos), the pooled total and the mean curve."""
    bona = [v for v in scores if v.is_bonafide]
    out = {}
    for name in attack_types_in(scores):
        out[name] = roc_curve(bona + [v for v in scores if v.label == name], name)
    out[TOTAL] = roc_curve(scores, TOTAL)
    out[MEAN] = mean_roc([out[n] for n in attack_types_in(scores)], scores)
    return out


def mean_roc(curves: Sequence[RocCurve], scores: Sequence[VideoScore]) -> RocCurve:
    """Threshold-averaged ROC: at each threshold the per-attack FPRs are averaged.

    The TPR depends only on the bona-fide scores, which all curves share.
    """
    bona, _ = _split(scores)
    names = [c.name for c in curves]
    allscores = np.array([v.pooled for v in scores if v.is_bonafide or v.label in names])
    thr = np.concatenate(([np.inf], np.unique(allscores)[::-1]))
    bs = np.sort(bona)
    tpr = (len(bs) - np.searchsorted(bs, thr, side="left")) / len(bs)
    fprs = []
    for name in names:
        s = np.sort([v.pooled for v in scores if v.label == name])
        fprs.append((len(s) - np.searchsorted(s, thr, side="left")) / len(s))
    fpr = np.mean(fprs, axis=0)
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(MEAN, fpr, tpr, thr, auc)


_COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79"]


def roc_svg(curves: dict[str, RocCurve], size: int = 420) -> str:
    """Standalone SVG with one polyline per attack curve plus the mean curve."""
    pad = 50
    plot = size - 2 * pad

    def xy(f, t):
        return f"{pad + f * plot:.2f},{pad + (1.0 - t) * plot:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 120}" height="{size}" '
        f'viewBox="0 0 {size + 120} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{plot}" height="{plot}" fill="none" stroke="#000"/>',
        f'<line x1="{pad}" y1="{pad + plot}" x2="{pad + plot}" y2="{pad}" stroke="#bbb" stroke-dasharray="4,4"/>',
        f'<text x="{pad + plot / 2}" y="{size - 12}" text-anchor="middle" font-size="12">APCER (FPR)</text>',
        f'<text x="14" y="{pad + plot / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {pad + plot / 2})">1 - BPCER (TPR)</text>',
    ]
    names = [n for n in curves if n not in (TOTAL, MEAN)]
    if MEAN in curves:
        names.append(MEAN)
    for i, name in enumerate(names):
        c = curves[name]
        color = "#000" if name == MEAN else _COLORS[i % len(_COLORS)]
        width = 2.5 if name == MEAN else 1.5
        pts = " ".join(xy(f, t) for f, t in zip(c.fpr, c.tpr))
        parts.append(f'<polyline data-curve="{name}" fill="none" stroke="{color}" stroke-width="{width}" '
                     f'points="{pts}"/>')
        ly = pad + 14 + 16 * i
        parts.append(f'<line x1="{size - 40}" y1="{ly - 4}" x2="{size - 20}" y2="{ly - 4}" stroke="{color}" '
                     f'stroke-width="{width}"/>')
        parts.append(f'<text x="{size - 15}" y="{ly}" font-size="11">{name} (AUC {c.auc:.3f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def read_report_csv(text: str) -> list[ReportRow]:
    rows = []
    for d in csv.DictReader(io.StringIO(text)):
        rows.append(ReportRow(d["attack"], float(d["APCER"]) / 100.0, float(d["BPCER"]) / 100.0,
                              float(d["ACER"]) / 100.0, int(d["n_attack"]), int(d["n_bonafide"])))
    return rows
