"""FAR / FRR / HTER from liveness decisions and distance-threshold sweeps."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EvaluationError
from .labels import Liveness


@dataclass(frozen=True)
class ConfusionCounts:
    real_accepted: int
    real_rejected: int
    fake_accepted: int
    fake_rejected: int

    @property
    def reals(self) -> int:
        return self.real_accepted + self.real_rejected

    @property
    def fakes(self) -> int:
        return self.fake_accepted + self.fake_rejected

    @property
    def frr(self) -> float:
        if self.reals == 0:
            raise EvaluationError("FRR undefined without real samples")
        return self.real_rejected / self.reals

    @property
    def far(self) -> float:
        if self.fakes == 0:
            raise EvaluationError("FAR undefined without fake samples")
        return self.fake_accepted / self.fakes


@dataclass(frozen=True)
class MetricsReport:
    threshold: float
    frr: float
    far: float
    hter: float
    counts: ConfusionCounts

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, threshold: float) -> "MetricsReport":
        frr, far = counts.frr, counts.far
        return cls(threshold, frr, far, hter(frr, far), counts)

    def to_dict(self) -> dict:
        return asdict(self)


class SweepPoint(NamedTuple):
    tau: float
    frr: float
    far: float
    hter: float


def hter(frr: float, far: float) -> float:
    """Half total error rate, (FRR + FAR) / 2."""
    for name, v in (("FRR", frr), ("FAR", far)):
        if not 0.0 <= v <= 1.0:
            raise EvaluationError(f"{name} must lie in [0, 1], got {v}")
    return (frr + far) / 2


def _verdict(decision) -> Liveness:
    return Liveness.coerce(getattr(decision, "verdict", decision))


def confusion_counts(decisions: Sequence, truths: Sequence) -> ConfusionCounts:
    """Tally accept/reject against ground truth.

    ``decisions`` are Decision objects or bare verdicts; ``truths`` are
    liveness labels (Liveness, "real"/"fake", or bool with True meaning real).
    """
    if len(decisions) != len(truths):
        raise EvaluationError(f"{len(decisions)} decisions but {len(truths)} labels")
    cells = {(t, v): 0 for t in Liveness for v in Liveness}
    for decision, truth in zip(decisions, truths):
        cells[(Liveness.coerce(truth), _verdict(decision))] += 1
    counts = ConfusionCounts(
        real_accepted=cells[(Liveness.REAL, Liveness.REAL)],
        real_rejected=cells[(Liveness.REAL, Liveness.FAKE)],
        fake_accepted=cells[(Liveness.FAKE, Liveness.REAL)],
        fake_rejected=cells[(Liveness.FAKE, Liveness.FAKE)],
    )
    if counts.reals == 0 or counts.fakes == 0:
        raise EvaluationError(f"need both real and fake samples, got {counts.reals} real and {counts.fakes} fake")
    return counts


def _split_by_truth(distances, truths):
    d = np.asarray(distances, dtype=np.float64)
    is_real = np.array([Liveness.coerce(t) is Liveness.REAL for t in truths], dtype=bool)
    if d.shape != is_real.shape:
        raise EvaluationError(f"{d.size} distances but {is_real.size} labels")
    if not is_real.any() or is_real.all():
        raise EvaluationError("threshold sweep needs at least one real and one fake sample")
    return np.sort(d[is_real]), np.sort(d[~is_real])


def candidate_thresholds(distances) -> np.ndarray:
    """Midpoints between adjacent distinct distances plus one value on each side.

    The low candidate is half the smallest distance; it is at most the
    smallest distance, so it accepts nothing under the strict ``d < tau`` rule.
    The high candidate is twice the largest distance (1.0 if all are zero).
    """
    u = np.unique(np.asarray(distances, dtype=np.float64))
    if u.size == 0:
        raise EvaluationError("no distances")
    low = u[0] / 2
    high = 2 * u[-1] if u[-1] > 0 else 1.0
    return np.concatenate([[low], (u[:-1] + u[1:]) / 2, [high]])


def counts_at(real_sorted, fake_sorted, tau) -> ConfusionCounts:
    real_accepted = int(np.searchsorted(real_sorted, tau, side="left"))
    fake_accepted = int(np.searchsorted(fake_sorted, tau, side="left"))
    return ConfusionCounts(real_accepted, real_sorted.size - real_accepted, fake_accepted, fake_sorted.size - fake_accepted)


def threshold_sweep(distances: Sequence[float], truths: Sequence) -> list[SweepPoint]:
    """FRR, FAR and HTER at every candidate threshold, in increasing tau."""
    real, fake = _split_by_truth(distances, truths)
    points = []
    for tau in candidate_thresholds(np.concatenate([real, fake])):
        c = counts_at(real, fake, tau)
        points.append(SweepPoint(float(tau), c.frr, c.far, hter(c.frr, c.far)))
    return points


def best_threshold(distances: Sequence[float], truths: Sequence) -> MetricsReport:
    """Candidate with the lowest HTER; ties go to lower FRR, then smaller tau."""
    real, fake = _split_by_truth(distances, truths)
    best = None
    for tau in candidate_thresholds(np.concatenate([real, fake])):
        report = MetricsReport.from_counts(counts_at(real, fake, tau), float(tau))
        key = (report.hter, report.frr, report.threshold)
        if best is None or key < best[0]:
            best = (key, report)
    return best[1]


def _fmt(v: float) -> str:
    return format(v, ".9g")


def emit_report(report: MetricsReport | None, sweep: Sequence[SweepPoint], fmt: str = "csv") -> bytes:
    """Serialize a report.

    ``csv`` writes the sweep as ``tau,frr,far,hter`` rows at 9 significant
    digits. ``json`` writes the operating-point report plus the sweep.
    """
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SweepPoint._fields)
        for point in sweep:
            writer.writerow([_fmt(v) for v in point])
        return buf.getvalue().encode()
    if fmt == "json":
        body = {"report": None if report is None else report.to_dict(), "sweep": [p._asdict() for p in sweep]}
        return (json.dumps(body, indent=2) + "\n").encode()
    raise ValueError(f"unknown report format {fmt!r}")


def parse_csv_report(data: bytes) -> list[SweepPoint]:
    rows = list(csv.reader(io.StringIO(data.decode())))
    if not rows or tuple(rows[0]) != SweepPoint._fields:
        raise ValueError("not a tau,frr,far,hter report")
    return [SweepPoint(*(float(v) for v in row)) for row in rows[1:]]
