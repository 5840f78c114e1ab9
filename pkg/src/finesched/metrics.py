"""Success metrics, run reports and their on-disk formats."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HIT, MISS, DROPPED = 0, 1, 2
OUTCOME_NAMES = ("hit", "miss", "dropped")
DYNAMICS_COLUMNS = ("t_ms", "ingest_qps", "accuracy", "batch", "queue_depth", "workers")


def aggregate(status, accuracy) -> dict:
    """SLO attainment over all queries; mean accuracy over hits only.

    `status` holds HIT/MISS/DROPPED codes (or their names), `accuracy` the
    served accuracy per query (ignored for non-hits).  Mean accuracy is
    ``None`` when nothing hit.
    """
    status = np.asarray(
        [OUTCOME_NAMES.index(s) if isinstance(s, str) else s for s in status], dtype=np.int8
    ) if not isinstance(status, np.ndarray) else status
    accuracy = np.asarray(accuracy, dtype=np.float64)
    total = len(status)
    hit = status == HIT
    hits = int(hit.sum())
    acc_hits = accuracy[hit]
    mean_acc = float(acc_hits.mean()) if hits else None
    return {
        "total": total,
        "hits": hits,
        "misses": int((status == MISS).sum()),
        "drops": int((status == DROPPED).sum()),
        "slo_attainment": hits / total if total else 0.0,
        "mean_serving_accuracy": mean_acc,
        # misses and drops scored as zero accuracy; reported only
        "effective_accuracy": float(acc_hits.sum() / total) if total else None,
    }


@dataclass
class SimReport:
    status: np.ndarray
    accuracy: np.ndarray
    completion_us: np.ndarray
    arrival_us: np.ndarray
    deadline_us: np.ndarray
    batches: dict = field(default_factory=dict)
    dynamics: dict = field(default_factory=dict)
    divergence: bool = False
    max_backlog: int = 0
    divergence_threshold: float = math.inf
    config: dict = field(default_factory=dict)
    valid: bool = True
    events: list = field(default_factory=list)

    def __post_init__(self):
        self._agg = aggregate(self.status, self.accuracy)

    @property
    def slo_attainment(self) -> float:
        return self._agg["slo_attainment"]

    @property
    def mean_serving_accuracy(self) -> float | None:
        return self._agg["mean_serving_accuracy"]

    @property
    def hits(self) -> int:
        return self._agg["hits"]

    @property
    def misses(self) -> int:
        return self._agg["misses"]

    @property
    def drops(self) -> int:
        return self._agg["drops"]

    def __len__(self) -> int:
        return len(self.status)

    def summary(self) -> dict:
        out = dict(self._agg)
        out.update(
            divergence=bool(self.divergence),
            max_backlog=int(self.max_backlog),
            divergence_threshold=float(self.divergence_threshold),
            batches=int(len(self.batches.get("start", ()))),
            valid=bool(self.valid),
        )
        return out

    def window(self, start_us: int, end_us: int) -> dict:
        """Aggregates over queries arriving in [start_us, end_us)."""
        m = (self.arrival_us >= start_us) & (self.arrival_us < end_us)
        return aggregate(self.status[m], self.accuracy[m])


def write_report(report: SimReport, path: str | Path) -> None:
    doc = {"config": report.config, "summary": report.summary()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_outcomes(report: SimReport, path: str | Path) -> None:
    with open(path, "w") as fh:
        for i, (s, a, c) in enumerate(
            zip(report.status.tolist(), report.accuracy.tolist(), report.completion_us.tolist())
        ):
            rec = {"id": i, "outcome": OUTCOME_NAMES[s], "completion_us": c}
            if s == HIT:
                rec["accuracy"] = a
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_outcomes(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    status, acc = [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            status.append(OUTCOME_NAMES.index(rec["outcome"]))
            acc.append(rec.get("accuracy", math.nan))
    return np.array(status, dtype=np.int8), np.array(acc, dtype=np.float64)


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if float(x).is_integer():
        return str(int(x))
    return f"{x:.4f}"


def export_dynamics(report: SimReport, path: str | Path) -> None:
    """One CSV row per sample; empty cells where no batch was dispatched."""
    d = report.dynamics
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DYNAMICS_COLUMNS)
        for row in zip(*(d[c].tolist() for c in DYNAMICS_COLUMNS)):
            w.writerow([_fmt(v) for v in row])


def reaggregate_attainment(report: SimReport, tighten_us: int) -> float:
    """Attainment if every deadline were `tighten_us` earlier, same event log.

    Dropped queries stay dropped; served ones hit only if they completed by
    the tightened deadline.
    """
    dl = report.deadline_us - tighten_us
    hit = (report.status != DROPPED) & (report.completion_us <= dl)
    return float(hit.sum() / len(hit)) if len(hit) else 0.0
