"""Shortcut detection and report aggregation.

A "Clever Hans" sample is one the model gets right with high confidence while
the explanation (a) avoids the ground-truth object region and (b) is
nevertheless faithful, i.e. inserting the pixels it ranks highly recovers the
score. The detector intersects those three per-sample filters and returns the
survivors sorted by confidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyReportError,
    EmptySalientAreaError,
    MissingMasksError,
)
from .metrics import (
    DEFAULT_IOSR_THETA,
    GroundTruthMask,
    insertion_auc,
    iosr,
    pointing_game,
)
from .model import ModelHandle
from .tensors import Image

LOCALIZATION_METRICS = ("iosr", "pg")


@dataclass(frozen=True)
class CleverHansCriteria:
    theta_confidence: float = 0.9
    theta_localization: float = 0.3
    theta_faithfulness: float = 0.5
    localization_metric: str = "iosr"
    iosr_theta: float = DEFAULT_IOSR_THETA  # salient-area cut inside IoSR
    insertion_steps: int = 100

    def __post_init__(self):
        if not 0.0 < self.theta_confidence < 1.0 + 1e-12:
            raise ValueError("theta_confidence must be in (0, 1]")
        if not 0.0 <= self.theta_localization <= 1.0:
            raise ValueError("theta_localization must be in [0, 1]")
        if not 0.0 < self.theta_faithfulness < 1.0:
            raise ValueError("theta_faithfulness must be in (0, 1)")
        if self.localization_metric not in LOCALIZATION_METRICS:
            raise ValueError(f"localization_metric must be one of {LOCALIZATION_METRICS}")

    def to_dict(self):
        return {
            "theta_confidence": self.theta_confidence,
            "theta_localization": self.theta_localization,
            "theta_faithfulness": self.theta_faithfulness,
            "localization_metric": self.localization_metric,
            "iosr_theta": self.iosr_theta,
            "insertion_steps": self.insertion_steps,
        }


@dataclass(frozen=True)
class DiagnosticSample:
    sample_id: str
    image: Image
    class_index: int
    gt_mask: GroundTruthMask | None
    saliency_path: str = ""


@dataclass(frozen=True)
class CleverHansFinding:
    sample_id: str
    class_index: int
    confidence: float
    localization: float
    faithfulness: float
    saliency_path: str = ""

    def to_dict(self):
        return {
            "sample_id": self.sample_id,
            "class_index": self.class_index,
            "confidence": self.confidence,
            "localization": self.localization,
            "faithfulness": self.faithfulness,
            "saliency_path": self.saliency_path,
        }


def detect_clever_hans(model: ModelHandle, explainer, samples,
                       criteria: CleverHansCriteria | None = None,
                       counters: dict | None = None) -> list:
    """Samples passing confidence > theta_c, localization < theta_l and
    insertion area > theta_f, sorted by descending confidence.

    The filters short-circuit cheapest-first, so maps and insertion curves
    are only computed for samples that stay in the running. Duplicate sample
    ids and samples whose salient area is empty are dropped (the latter
    counted under ``localization_excluded``).
    """
    criteria = criteria or CleverHansCriteria()
    findings = []
    seen = set()
    for sample in samples:
        if sample.sample_id in seen:
            continue
        seen.add(sample.sample_id)
        if sample.gt_mask is None:
            raise MissingMasksError(f"sample {sample.sample_id} has no ground-truth mask")

        confidence = float(model.predict(sample.image)[sample.class_index])
        if not confidence > criteria.theta_confidence:
            continue

        smap = explainer(model, sample.image, sample.class_index)
        if criteria.localization_metric == "pg":
            loc = 1.0 if pointing_game(smap, sample.gt_mask) else 0.0
        else:
            try:
                loc = iosr(smap, sample.gt_mask, criteria.iosr_theta)
            except EmptySalientAreaError:
                if counters is not None:
                    counters["localization_excluded"] = \
                        counters.get("localization_excluded", 0) + 1
                continue
        if not loc < criteria.theta_localization:
            continue

        curve = insertion_auc(model, sample.image, sample.class_index, smap,
                              steps=criteria.insertion_steps)
        if not curve.iauc > criteria.theta_faithfulness:
            continue

        findings.append(CleverHansFinding(
            sample_id=sample.sample_id, class_index=sample.class_index,
            confidence=confidence, localization=loc, faithfulness=curve.iauc,
            saliency_path=sample.saliency_path,
        ))
    findings.sort(key=lambda f: (-f.confidence, f.sample_id))
    return findings


# ---------------------------------------------------------------------------
# table-style aggregation

@dataclass(frozen=True)
class SummaryRow:
    dataset: str
    model_id: str
    method: str
    metric: str
    mean: float
    n_included: int
    n_excluded: int


def aggregate_report(rows) -> list:
    """Group means per (dataset, model, method, metric) plus grand means per
    (method, metric) across groups, '*' marking the collapsed axes."""
    rows = list(rows)
    if not rows:
        raise EmptyReportError("no rows to aggregate")
    groups = {}
    for row in rows:
        key = (row.dataset, row.model_id, row.method, row.metric)
        bucket = groups.setdefault(key, {"values": [], "excluded": 0})
        if row.value is None:
            bucket["excluded"] += max(1, getattr(row, "n_excluded", 1))
        else:
            bucket["values"].append(float(row.value))
            bucket["excluded"] += getattr(row, "n_excluded", 0)

    summaries = []
    grand = {}
    for key in sorted(groups):
        dataset, model_id, method, metric = key
        bucket = groups[key]
        vals = bucket["values"]
        mean = float(np.mean(vals)) if vals else float("nan")
        summaries.append(SummaryRow(dataset, model_id, method, metric, mean,
                                    len(vals), bucket["excluded"]))
        if vals:
            grand.setdefault((method, metric), []).append(
                (mean, len(vals), bucket["excluded"]))
    for (method, metric) in sorted(grand):
        entries = grand[(method, metric)]
        summaries.append(SummaryRow(
            "*", "*", method, metric,
            float(np.mean([m for m, _, _ in entries])),
            sum(n for _, n, _ in entries), sum(e for _, _, e in entries)))
    return summaries
