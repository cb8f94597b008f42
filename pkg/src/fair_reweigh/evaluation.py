"""Hard-prediction fairness/utility metrics and the four-region verdict."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import model
from .influence import FairnessNotion

THRESHOLD = 0.5
REGION_TOL = 1e-4
REGIONS = ("fairer_and_accurate", "fairer_only", "accurate_only", "worse")


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    eop_gap: float | None
    dp_gap: float | None
    tpr: tuple
    positive_rate: tuple
    group_counts: dict
    confusion: dict

    def gap(self, notion) -> float | None:
        notion = FairnessNotion.parse(notion)
        return self.eop_gap if notion is FairnessNotion.EOP else self.dp_gap

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    CSV_FIELDS = ("accuracy", "eop_gap", "dp_gap")

    def csv_row(self) -> str:
        return ",".join("" if getattr(self, f) is None else repr(getattr(self, f)) for f in self.CSV_FIELDS)


def _rate(mask, pred):
    return float(pred[mask].mean()) if mask.any() else None


def metrics_from_predictions(y, a, pred) -> MetricReport:
    """Metrics from 0/1 labels, groups and hard predictions."""
    y, a, pred = (np.asarray(v).astype(int) for v in (y, a, pred))
    tpr = tuple(_rate((a == g) & (y == 1), pred) for g in (1, 0))
    pos = tuple(_rate(a == g, pred) for g in (1, 0))
    eop = None if None in tpr else abs(tpr[0] - tpr[1])
    dp = None if None in pos else abs(pos[0] - pos[1])
    counts = {f"a{g}_y{c}": int(np.sum((a == g) & (y == c))) for g in (0, 1) for c in (0, 1)}
    confusion = {
        "tp": int(np.sum((pred == 1) & (y == 1))),
        "fp": int(np.sum((pred == 1) & (y == 0))),
        "tn": int(np.sum((pred == 0) & (y == 0))),
        "fn": int(np.sum((pred == 0) & (y == 1))),
    }
    return MetricReport(float(np.mean(pred == y)), eop, dp, tpr, pos, counts, confusion)


def predict(params, x) -> np.ndarray:
    """Hard predictions; probability exactly 0.5 counts as positive."""
    return (model.predict_proba(params, x) >= THRESHOLD).astype(int)


def evaluate(params, data) -> MetricReport:
    return metrics_from_predictions(data.y, data.a, predict(params, data.x))


def region(base: MetricReport, new: MetricReport, notion, tol: float = REGION_TOL) -> str:
    """Place ``new`` relative to ``base``: fairer iff the gap shrinks by more than ``tol``,
    accurate iff accuracy does not drop by more than ``tol``."""
    b, n = base.gap(notion), new.gap(notion)
    fairer = b is not None and n is not None and (b - n) > tol
    accurate = new.accuracy >= base.accuracy - tol
    if fairer and accurate:
        return "fairer_and_accurate"
    if fairer:
        return "fairer_only"
    if accurate:
        return "accurate_only"
    return "worse"
