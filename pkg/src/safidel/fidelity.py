"""Instance-level fidelity checks between synthetic and real perception data.

All distance-based checks take the minimum over the supplied set of real
counterparts; because that set is only an approximation of all real data
matching the scene, the reported minimum is an upper bound on the true
discrepancy (shrinking the set can only raise it, never lower it).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .boxes import BoundingBox, iou
from .dataset import GroundTruthObject, ImageTensor
from .scenario import AttributeSelector, ScenarioDescription, inter, safety_similar

METRICS = ("l1", "l2", "linf")

SAFETY_RELEVANT = "safety_relevant"
ALL_OBJECTS = "all_objects"


@dataclass(frozen=True)
class Detection:
    label: str
    bbox: BoundingBox
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_json_dict(self) -> dict:
        return {"label": self.label, "bbox": list(self.bbox.as_tuple()), "score": self.score}

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "Detection":
        return cls(
            label=str(data["label"]),
            bbox=BoundingBox(*(float(v) for v in data["bbox"])),
            score=float(data["score"]),
        )


@dataclass
class DetectionSet:
    """A perception output: labeled scored boxes plus optional layer features."""

    image_id: str
    detections: list[Detection] = field(default_factory=list)
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out: dict = {
            "image_id": self.image_id,
            "detections": [d.to_json_dict() for d in self.detections],
        }
        if self.features:
            out["features"] = {k: [float(x) for x in v] for k, v in self.features.items()}
        return out

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "DetectionSet":
        return cls(
            image_id=str(data.get("image_id", "")),
            detections=[Detection.from_json_dict(d) for d in data.get("detections", [])],
            features={
                k: np.asarray(v, dtype=np.float64)
                for k, v in (data.get("features") or {}).items()
            },
        )


def _normalize_metric(metric: str) -> str:
    m = metric.lower()
    if m not in METRICS:
        raise ValueError(f"unknown metric {metric!r}, expected one of {METRICS}")
    return m


@dataclass(frozen=True)
class FidelityQuery:
    """Distance metric, tolerance, and (for latent features) the layers to check."""

    metric: str
    epsilon: float
    layers: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "metric", _normalize_metric(self.metric))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class FidelityVerdict:
    """Outcome of one fidelity check; min_distance is a conservative upper bound."""

    min_distance: float
    holds: bool
    witness_id: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "min_distance": self.min_distance,
            "holds": self.holds,
            "witness_id": self.witness_id,
        }


@dataclass(frozen=True)
class InconsistencyCount:
    """Objects detected in exactly one of the real/synthetic pair.

    ``false_negatives`` were missed in real but found in synthetic;
    ``false_positives`` the reverse.
    """

    false_negatives: int
    false_positives: int
    total: int
    num_objects: int

    def __post_init__(self):
        if self.total != self.false_negatives + self.false_positives:
            raise ValueError("total must equal false_negatives + false_positives")
        if self.total > self.num_objects:
            raise ValueError("total cannot exceed num_objects")

    def to_json_dict(self) -> dict:
        return {
            "false_negatives": self.false_negatives,
            "false_positives": self.false_positives,
            "total": self.total,
            "num_objects": self.num_objects,
        }


def vector_distance(metric: str, x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    d = x - y
    m = _normalize_metric(metric)
    if m == "l1":
        return float(np.abs(d).sum())
    if m == "l2":
        return float(np.sqrt((d * d).sum()))
    return float(np.abs(d).max()) if d.size else 0.0


def match_detections(
    dets: Sequence[Detection],
    gt: Sequence[GroundTruthObject],
    iou_min: float = 0.5,
) -> list[tuple[int, int | None]]:
    """Greedy one-to-one matching of detections to ground truth.

    Detections are taken in descending score order; each claims the not yet
    matched same-label object with the highest IoU >= ``iou_min``.  Don't-care
    regions absorb otherwise unmatched detections but are never reported.
    Returns (gt_index, detection_index or None) for every non-don't-care
    ground-truth object, in ground-truth order.
    """
    if not 0.0 < iou_min <= 1.0:
        raise ValueError("iou_min must be in (0, 1]")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    claimed: dict[int, int] = {}
    for di in order:
        det = dets[di]
        best_gi, best_iou = None, 0.0
        for gi, obj in enumerate(gt):
            if obj.dont_care or gi in claimed or obj.label != det.label:
                continue
            v = iou(det.bbox, obj.bbox)
            if v >= iou_min and v > best_iou:
                best_gi, best_iou = gi, v
        if best_gi is not None:
            claimed[best_gi] = di
        # else: possibly absorbed by a don't-care region; has no effect on
        # the per-object report either way.
    return [(gi, claimed.get(gi)) for gi, obj in enumerate(gt) if not obj.dont_care]


def embed_output(
    dets: DetectionSet, sel: AttributeSelector, image_size: tuple[float, float]
) -> np.ndarray:
    """Fixed-dimension embedding of a variable-length detection list.

    One entry per grid cell (row-major): the maximum score among detections
    whose bbox center falls in the cell and whose score is at or above the
    selector threshold, else 0.
    """
    out = np.zeros(sel.grid_rows * sel.grid_cols, dtype=np.float64)
    for det in dets.detections:
        if det.score < sel.score_threshold:
            continue
        cx, cy = det.bbox.center
        row, col = sel.cell_index(cx, cy, image_size)
        idx = row * sel.grid_cols + col
        out[idx] = max(out[idx], det.score)
    return out


def _min_over(
    candidates: Sequence[tuple[str, float]],
) -> tuple[float, str]:
    best_id, best = None, np.inf
    for cid, dist in candidates:
        if dist < best:
            best_id, best = cid, dist
    return float(best), best_id


def iv_fidelity(
    x_syn: ImageTensor,
    rw: Sequence[ImageTensor],
    q: FidelityQuery,
    *,
    per_pixel: bool = False,
) -> FidelityVerdict:
    """Input-value fidelity: is some real image within epsilon in pixel space?

    Distances are raw norms over the flattened [0, 1] pixel vector; with
    ``per_pixel`` they are averaged (l1 by element count, l2 by its square
    root) so tolerances can be stated per pixel.
    """
    if not rw:
        raise ValueError("real-world set must be non-empty")
    flat = x_syn.flatten()
    n = flat.size
    dists = []
    for i, candidate in enumerate(rw):
        if candidate.data.shape != x_syn.data.shape:
            raise ValueError(
                f"image {i} has shape {candidate.data.shape}, expected {x_syn.data.shape}"
            )
        d = vector_distance(q.metric, flat, candidate.flatten())
        if per_pixel:
            if q.metric == "l1":
                d /= n
            elif q.metric == "l2":
                d /= np.sqrt(n)
        dists.append((str(i), d))
    min_distance, witness = _min_over(dists)
    return FidelityVerdict(min_distance, min_distance <= q.epsilon, witness)


def ov_fidelity(
    dets_syn: DetectionSet,
    dets_rw: Sequence[DetectionSet],
    q: FidelityQuery,
    sel: AttributeSelector,
    image_size: tuple[float, float],
) -> FidelityVerdict:
    """Output-value fidelity: distance between grid-cell score embeddings."""
    if not dets_rw:
        raise ValueError("real-world set must be non-empty")
    syn_vec = embed_output(dets_syn, sel, image_size)
    dists = [
        (cand.image_id, vector_distance(q.metric, syn_vec, embed_output(cand, sel, image_size)))
        for cand in dets_rw
    ]
    min_distance, witness = _min_over(dists)
    return FidelityVerdict(min_distance, min_distance <= q.epsilon, witness)


def lf_fidelity(
    feat_syn: DetectionSet,
    feat_rw: Sequence[DetectionSet],
    q: FidelityQuery,
) -> FidelityVerdict:
    """Latent-feature fidelity: some real counterpart close on *all* layers.

    The per-candidate distance is the max over the queried layers, so the
    verdict holds iff the minimum of those maxima is within epsilon.  An
    empty layer set holds vacuously.
    """
    if not feat_rw:
        raise ValueError("real-world set must be non-empty")

    def layer_vec(ds: DetectionSet, layer: str) -> np.ndarray:
        if layer not in ds.features:
            raise ValueError(f"detection set {ds.image_id!r} lacks features for layer {layer!r}")
        return ds.features[layer]

    dists = []
    for cand in feat_rw:
        worst = 0.0
        for layer in q.layers:
            worst = max(
                worst,
                vector_distance(q.metric, layer_vec(feat_syn, layer), layer_vec(cand, layer)),
            )
        dists.append((cand.image_id, worst))
    min_distance, witness = _min_over(dists)
    return FidelityVerdict(min_distance, min_distance <= q.epsilon, witness)


def sa_fidelity(
    dets_syn: DetectionSet,
    dets_rw: Sequence[DetectionSet],
    sd: ScenarioDescription,
    sel: AttributeSelector,
    image_size: tuple[float, float],
) -> FidelityVerdict:
    """Safety-aware fidelity: some real counterpart is safety-similar."""
    if not dets_rw:
        raise ValueError("real-world set must be non-empty")
    for cand in dets_rw:
        if safety_similar(sd, dets_syn, cand, sel, image_size):
            return FidelityVerdict(0.0, True, cand.image_id)
    return FidelityVerdict(1.0, False, None)


def _detected_flags(
    gt: Sequence[GroundTruthObject],
    dets: DetectionSet,
    iou_min: float,
) -> dict[int, bool]:
    return {
        gi: di is not None
        for gi, di in match_detections(dets.detections, gt, iou_min)
    }


def _scope_indices(
    gt: Sequence[GroundTruthObject], sel: AttributeSelector, mode: str
) -> list[int]:
    if mode not in (SAFETY_RELEVANT, ALL_OBJECTS):
        raise ValueError(f"unknown mode {mode!r}")
    return [
        gi
        for gi, obj in enumerate(gt)
        if not obj.dont_care
        and (mode == ALL_OBJECTS or obj.bbox.area >= sel.area_threshold)
    ]


def count_inconsistencies(
    gt: Sequence[GroundTruthObject],
    dets_real: DetectionSet,
    dets_syn: DetectionSet,
    sel: AttributeSelector,
    iou_min: float = 0.5,
    mode: str = SAFETY_RELEVANT,
) -> InconsistencyCount:
    """Count objects detected in exactly one of the real/synthetic pair.

    In ``safety_relevant`` mode only ground-truth objects with bbox area at
    or above the selector threshold are scored; ``all_objects`` scores every
    non-don't-care object.
    """
    scope = _scope_indices(gt, sel, mode)
    real = _detected_flags(gt, dets_real, iou_min)
    syn = _detected_flags(gt, dets_syn, iou_min)
    fn = sum(1 for gi in scope if not real[gi] and syn[gi])
    fp = sum(1 for gi in scope if real[gi] and not syn[gi])
    return InconsistencyCount(
        false_negatives=fn,
        false_positives=fp,
        total=fn + fp,
        num_objects=len(scope),
    )


def fnr_consistency(
    gt: Sequence[GroundTruthObject],
    dets_real: DetectionSet,
    dets_syn: DetectionSet,
    sel: AttributeSelector,
    iou_min: float = 0.5,
) -> float:
    """Absolute difference of real vs synthetic miss rates on close-by objects.

    Returns 0 when there is no safety-relevant object (vacuously consistent).
    """
    scope = _scope_indices(gt, sel, SAFETY_RELEVANT)
    if not scope:
        return 0.0
    real = _detected_flags(gt, dets_real, iou_min)
    syn = _detected_flags(gt, dets_syn, iou_min)
    fnr_real = sum(1 for gi in scope if not real[gi]) / len(scope)
    fnr_syn = sum(1 for gi in scope if not syn[gi]) / len(scope)
    return abs(fnr_real - fnr_syn)
