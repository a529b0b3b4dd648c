"""
EHOI Evaluation Suite

Average precision machinery plus the side/state/association constrained
variants used to score egocentric hand-object interaction detections:

    AP Hand     class-agnostic hand AP
    mAP Obj     per-category AP of active objects
    AP H+Side   hand AP, side must be correct
    AP H+State  hand AP, contact state must be correct
    mAP H+Obj   mAP Obj, the associated hand must overlap the linked GT hand
    mAP All     hand AP per active-object category, side, state and active
                object must all be correct
"""

from collections import defaultdict
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from config.settings import get_settings
from src.errors import DatasetValidationError, ReportSchemaError
from src.geometry import iou
from src.models import ContactState, Frame, FrameSet, HandRecord, ObjectRecord
from src.services.matcher import HandObjectMatcher

METRIC_KEYS = ("ap_hand", "map_obj", "ap_h_side", "ap_h_state", "map_h_obj", "map_all")
METRIC_LABELS = {
    "ap_hand": "AP Hand",
    "map_obj": "mAP Obj",
    "ap_h_side": "AP H+Side",
    "ap_h_state": "AP H+State",
    "map_h_obj": "mAP H+Obj",
    "map_all": "mAP All",
}
EXTRA_KEYS = ("map_det", "mar_obj")
EXTRA_LABELS = {"map_det": "mAP Det", "mar_obj": "mAR Obj"}

ScoredMatch = Tuple[float, bool]


class Interpolation(str, Enum):
    """Precision envelope integration scheme"""
    COCO101 = "coco101"
    ALL_POINTS = "allpoints"


class AssociationSource(str, Enum):
    """Where detection hand-object associations come from"""
    MATCH = "match"
    FILE = "file"


class MapAllMode(str, Enum):
    """Averaging axis of mAP All"""
    PER_CATEGORY = "per_category"
    POOLED = "pooled"


class ApConfig(BaseModel):
    """Evaluation configuration"""
    iou_threshold: float = Field(0.5, gt=0, lt=1, description="IoU needed for a true positive")
    interpolation: Interpolation = Interpolation.COCO101
    require_side: bool = Field(True, description="AP H+Side and mAP All check the hand side")
    require_state: bool = Field(True, description="AP H+State and mAP All check the contact state")
    require_object: bool = Field(True, description="mAP All checks the active object")
    require_hand: bool = Field(True, description="mAP H+Obj checks the associated hand")
    associations: AssociationSource = AssociationSource.MATCH
    map_all_mode: MapAllMode = MapAllMode.PER_CATEGORY

    @classmethod
    def from_settings(cls) -> "ApConfig":
        settings = get_settings()
        return cls(iou_threshold=settings.iou_threshold, interpolation=settings.interpolation)


class CountTally(BaseModel):
    tp: int = 0
    fp: int = 0
    fn: int = 0


class EvalReport(BaseModel):
    """Metric vector of one evaluation run, percentages in [0, 100]"""
    schema_version: int = 1
    ap_hand: float = 0.0
    map_obj: float = 0.0
    ap_h_side: float = 0.0
    ap_h_state: float = 0.0
    map_h_obj: float = 0.0
    map_all: float = 0.0
    map_det: float = 0.0
    mar_obj: float = 0.0
    per_category: Dict[str, float] = Field(default_factory=dict)
    per_category_det: Dict[str, float] = Field(default_factory=dict)
    absent_categories: List[str] = Field(default_factory=list)
    counts: Dict[str, CountTally] = Field(default_factory=dict)
    iou_threshold: float = 0.5
    interpolation: Interpolation = Interpolation.COCO101
    metadata: Dict[str, str] = Field(default_factory=dict)

    def metrics(self) -> Dict[str, float]:
        return {key: getattr(self, key) for key in METRIC_KEYS}

    def to_flat(self) -> Dict[str, Any]:
        """Flat key -> value document written as the report file"""
        flat: Dict[str, Any] = {
            "schema_version": self.schema_version,
            "iou_threshold": self.iou_threshold,
            "interpolation": self.interpolation.value,
        }
        for key in METRIC_KEYS + EXTRA_KEYS:
            flat[key] = getattr(self, key)
        for name, value in self.per_category.items():
            flat[f"per_category.{name}"] = value
        for name, value in self.per_category_det.items():
            flat[f"per_category_det.{name}"] = value
        for name in self.absent_categories:
            flat[f"absent.{name}"] = True
        for metric, tally in self.counts.items():
            for field in ("tp", "fp", "fn"):
                flat[f"counts.{metric}.{field}"] = getattr(tally, field)
        for key, value in self.metadata.items():
            flat[f"metadata.{key}"] = value
        return flat

    @classmethod
    def from_flat(cls, flat: Dict[str, Any], expected_version: Optional[int] = None) -> "EvalReport":
        """Rebuild a report from its flat document"""
        version = flat.get("schema_version")
        if expected_version is not None and version != expected_version:
            raise ReportSchemaError(
                "report", f"schema version {version!r} does not match expected {expected_version}"
            )

        fields: Dict[str, Any] = {"per_category": {}, "per_category_det": {},
                                  "absent_categories": [], "counts": {}, "metadata": {}}
        counts: Dict[str, Dict[str, int]] = defaultdict(dict)
        for key, value in flat.items():
            prefix, _, rest = key.partition(".")
            if not rest:
                fields[key] = value
            elif prefix in ("per_category", "per_category_det", "metadata"):
                fields[prefix][rest] = value
            elif prefix == "absent":
                fields["absent_categories"].append(rest)
            elif prefix == "counts":
                metric, _, field = rest.rpartition(".")
                counts[metric][field] = value
        fields["counts"] = {m: CountTally(**c) for m, c in counts.items()}
        return cls(**fields)


def average_precision(matches: Sequence[ScoredMatch], gt_count: int,
                      interpolation: Interpolation = Interpolation.COCO101) -> float:
    """
    Area under the precision envelope of a ranked detection list.

    Detections are ranked by descending score (stable on ties). With
    p_env(i) = max_{j >= i} precision(j):

        COCO101:    mean of p_env sampled at recall r in {0, 0.01, ..., 1}
        ALL_POINTS: sum_i (recall(i) - recall(i-1)) * p_env(i)

    Parameters:
    matches: (score, is_true_positive) pairs
    gt_count: Number of ground-truth instances
    interpolation: Integration scheme

    Returns:
    AP in [0, 1]; 0 when there is no ground truth or no detection
    """
    if gt_count < 0:
        raise ValueError(f"gt_count must be non-negative, got {gt_count}")
    if gt_count == 0 or len(matches) == 0:
        return 0.0

    scores = np.array([s for s, _ in matches], dtype=np.float64)
    flags = np.array([bool(t) for _, t in matches], dtype=bool)[np.argsort(-scores, kind="stable")]

    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / gt_count
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]

    if Interpolation(interpolation) == Interpolation.COCO101:
        thresholds = np.linspace(0.0, 1.0, 101)
        idx = np.searchsorted(recall, thresholds, side="left")
        sampled = np.zeros_like(thresholds)
        inside = idx < recall.size
        sampled[inside] = envelope[idx[inside]]
        return float(np.mean(sampled))

    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


def greedy_assign(dets: Sequence[Any], gts: Sequence[Any], iou_threshold: float,
                  predicate: Optional[Callable[[Any, Any], bool]] = None) -> List[ScoredMatch]:
    """
    Match detections to ground truth greedily by descending score.

    Each detection claims the unclaimed ground truth with the highest IoU
    (at least iou_threshold) that also satisfies the predicate. A detection
    failing the predicate is a false positive and leaves the ground truth free.

    Args:
        dets: Records with ``box`` and ``score``
        gts: Records with ``box``
        iou_threshold: Minimum IoU for a match
        predicate: Extra attribute check on (det, gt)

    Returns:
        (score, is_tp) in processing order
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    claimed = [False] * len(gts)
    out: List[ScoredMatch] = []

    for i in order:
        det = dets[i]
        best_j, best_iou = None, -1.0
        for j, gt in enumerate(gts):
            if claimed[j]:
                continue
            overlap = iou(det.box, gt.box)
            if overlap < iou_threshold or overlap <= best_iou:
                continue
            if predicate is not None and not predicate(det, gt):
                continue
            best_j, best_iou = j, overlap
        if best_j is not None:
            claimed[best_j] = True
        out.append((det.score, best_j is not None))
    return out


class _Pool:
    """Scored matches and ground-truth count for one AP computation"""

    def __init__(self):
        self.matches: List[ScoredMatch] = []
        self.gt_count = 0

    def add(self, matches: List[ScoredMatch], gt_count: int):
        self.matches.extend(matches)
        self.gt_count += gt_count

    def tally(self) -> CountTally:
        tp = sum(1 for _, t in self.matches if t)
        return CountTally(tp=tp, fp=len(self.matches) - tp, fn=self.gt_count - tp)


class _FrameAssociations:
    """Active objects and hand-object links of one detection frame"""

    def __init__(self, frame: Frame, assignments: Optional[Dict[int, Optional[int]]]):
        self.hand_object: Dict[int, ObjectRecord] = {}
        self.object_hands: Dict[int, List[HandRecord]] = defaultdict(list)

        if assignments is not None:
            for hand in frame.hands:
                object_id = assignments.get(hand.id)
                if object_id is not None:
                    self.hand_object[hand.id] = frame.object(object_id)
                    self.object_hands[object_id].append(hand)
        else:
            for obj in sorted(frame.objects, key=lambda o: o.id):
                if not obj.active:
                    continue
                self.object_hands.setdefault(obj.id, [])
                hand = frame.hand(obj.linked_hand) if obj.linked_hand is not None else None
                if hand is not None:
                    self.object_hands[obj.id].append(hand)
                    self.hand_object.setdefault(hand.id, obj)

    def is_active(self, obj: ObjectRecord) -> bool:
        return obj.id in self.object_hands


class EHOIEvaluator:
    """Compute the six-metric EHOI evaluation suite"""

    def __init__(self, config: Optional[ApConfig] = None):
        self.config = config or ApConfig()

    @staticmethod
    def validate_inputs(gt: FrameSet, dets: FrameSet):
        """
        Check that detections and ground truth describe the same frames and categories

        Raises:
            DatasetValidationError: Naming the first mismatching frame or category
        """
        gt_ids, det_ids = set(gt.frame_ids()), set(dets.frame_ids())
        extra, missing = sorted(det_ids - gt_ids), sorted(gt_ids - det_ids)
        if extra:
            raise DatasetValidationError(f"frame {extra[0]}", "present in detections but not in ground truth")
        if missing:
            raise DatasetValidationError(f"frame {missing[0]}", "missing from detections")

        if [c.name for c in dets.categories.categories] != [c.name for c in gt.categories.categories]:
            raise DatasetValidationError("categories", "detection category table differs from ground truth")

        for frame in dets.frames:
            for obj in frame.objects:
                if obj.category not in gt.categories:
                    raise DatasetValidationError(
                        f"frame {frame.frame_id}", f"object {obj.id} has unknown category {obj.category}"
                    )

    def evaluate(self, gt: FrameSet, dets: FrameSet, jobs: int = 1) -> EvalReport:
        """
        Evaluate detections against ground truth.

        Args:
            gt: Validated ground-truth frames
            dets: Validated detection frames with the same frame ids
            jobs: Frame-level parallelism for the matcher

        Returns:
            EvalReport with all metrics as percentages
        """
        cfg = self.config
        self.validate_inputs(gt, dets)
        logger.info(f"Evaluating {len(dets.frames)} frames at IoU {cfg.iou_threshold} ({cfg.interpolation.value})")

        assignments: Dict[int, Dict[int, Optional[int]]] = {}
        if cfg.associations == AssociationSource.MATCH:
            for fm in HandObjectMatcher.match_dataset(dets, jobs=jobs):
                assignments[fm.frame_id] = fm.assignments()

        hand_pools = {key: _Pool() for key in ("ap_hand", "ap_h_side", "ap_h_state")}
        category_pools: Dict[str, Dict[int, _Pool]] = {
            key: defaultdict(_Pool) for key in ("map_obj", "map_h_obj", "map_all", "map_det")
        }

        gt_frames, det_frames = gt.by_id(), dets.by_id()
        for frame_id in sorted(gt_frames):
            gt_frame, det_frame = gt_frames[frame_id], det_frames[frame_id]
            links = _FrameAssociations(det_frame, assignments.get(frame_id))
            self._score_hands(gt_frame, det_frame, hand_pools)
            self._score_objects(gt_frame, det_frame, links, category_pools)
            self._score_interactions(gt_frame, det_frame, links, category_pools["map_all"])

        return self._build_report(gt, hand_pools, category_pools)

    def _score_hands(self, gt_frame: Frame, det_frame: Frame, pools: Dict[str, _Pool]):
        cfg = self.config
        predicates = {
            "ap_hand": None,
            "ap_h_side": lambda d, g: not cfg.require_side or d.side == g.side,
            "ap_h_state": lambda d, g: not cfg.require_state or d.state == g.state,
        }
        for key, predicate in predicates.items():
            matches = greedy_assign(det_frame.hands, gt_frame.hands, cfg.iou_threshold, predicate)
            pools[key].add(matches, len(gt_frame.hands))

    def _score_objects(self, gt_frame: Frame, det_frame: Frame, links: _FrameAssociations,
                       pools: Dict[str, Dict[int, _Pool]]):
        cfg = self.config

        def hand_overlaps(det_obj: ObjectRecord, gt_obj: ObjectRecord) -> bool:
            if not cfg.require_hand:
                return True
            gt_hand = gt_frame.hand(gt_obj.linked_hand) if gt_obj.linked_hand is not None else None
            if gt_hand is None:
                return False
            return any(iou(h.box, gt_hand.box) >= cfg.iou_threshold for h in links.object_hands[det_obj.id])

        categories = {o.category for o in gt_frame.objects} | {o.category for o in det_frame.objects}
        for category in sorted(categories):
            gts_all = [o for o in gt_frame.objects if o.category == category]
            dets_all = [o for o in det_frame.objects if o.category == category]
            pools["map_det"][category].add(
                greedy_assign(dets_all, gts_all, cfg.iou_threshold), len(gts_all)
            )

            gts = [o for o in gts_all if o.active]
            dets = [o for o in dets_all if links.is_active(o)]
            if not gts and not dets:
                continue
            pools["map_obj"][category].add(greedy_assign(dets, gts, cfg.iou_threshold), len(gts))
            pools["map_h_obj"][category].add(
                greedy_assign(dets, gts, cfg.iou_threshold, hand_overlaps), len(gts)
            )

    def _score_interactions(self, gt_frame: Frame, det_frame: Frame, links: _FrameAssociations,
                            pools: Dict[int, _Pool]):
        cfg = self.config
        gt_actives: Dict[int, List[ObjectRecord]] = defaultdict(list)
        for obj in gt_frame.objects:
            if obj.active and obj.linked_hand is not None:
                gt_actives[obj.linked_hand].append(obj)

        def interaction_correct(d: HandRecord, g: HandRecord) -> bool:
            if cfg.require_side and d.side != g.side:
                return False
            if cfg.require_state and d.state != g.state:
                return False
            if cfg.require_object:
                det_obj = links.hand_object.get(d.id)
                if det_obj is None:
                    return False
                return any(
                    a.category == det_obj.category and iou(det_obj.box, a.box) >= cfg.iou_threshold
                    for a in gt_actives[g.id]
                )
            return True

        gt_hands = [h for h in gt_frame.hands if h.state == ContactState.IN_CONTACT]
        det_hands = [h for h in det_frame.hands if h.state == ContactState.IN_CONTACT]

        if cfg.map_all_mode == MapAllMode.POOLED:
            pools[0].add(greedy_assign(det_hands, gt_hands, cfg.iou_threshold, interaction_correct),
                         len(gt_hands))
            return

        categories = {a.category for h in gt_hands for a in gt_actives[h.id]}
        categories |= {links.hand_object[h.id].category for h in det_hands if h.id in links.hand_object}
        for category in sorted(categories):
            gts = [h for h in gt_hands if any(a.category == category for a in gt_actives[h.id])]
            dets = [h for h in det_hands
                    if h.id in links.hand_object and links.hand_object[h.id].category == category]
            pools[category].add(
                greedy_assign(dets, gts, cfg.iou_threshold, interaction_correct), len(gts)
            )

    def _ap(self, pool: _Pool) -> float:
        return average_precision(pool.matches, pool.gt_count, self.config.interpolation)

    def _mean_ap(self, pools: Dict[int, _Pool]) -> float:
        scored = [self._ap(p) for p in pools.values() if p.gt_count > 0]
        return float(np.mean(scored)) if scored else 0.0

    def _build_report(self, gt: FrameSet, hand_pools: Dict[str, _Pool],
                      category_pools: Dict[str, Dict[int, _Pool]]) -> EvalReport:
        table = gt.categories

        def percent(value: float) -> float:
            return 100.0 * value

        counts = {key: pool.tally() for key, pool in hand_pools.items()}
        for key, pools in category_pools.items():
            tallies = [p.tally() for p in pools.values()]
            counts[key] = CountTally(
                tp=sum(t.tp for t in tallies), fp=sum(t.fp for t in tallies), fn=sum(t.fn for t in tallies)
            )

        obj_pools = category_pools["map_obj"]
        recalls = [p.tally().tp / p.gt_count for p in obj_pools.values() if p.gt_count > 0]

        report = EvalReport(
            schema_version=get_settings().report_schema_version,
            ap_hand=percent(self._ap(hand_pools["ap_hand"])),
            ap_h_side=percent(self._ap(hand_pools["ap_h_side"])),
            ap_h_state=percent(self._ap(hand_pools["ap_h_state"])),
            map_obj=percent(self._mean_ap(obj_pools)),
            map_h_obj=percent(self._mean_ap(category_pools["map_h_obj"])),
            map_all=percent(self._mean_ap(category_pools["map_all"])),
            map_det=percent(self._mean_ap(category_pools["map_det"])),
            mar_obj=percent(float(np.mean(recalls))) if recalls else 0.0,
            per_category={table.name(c): percent(self._ap(obj_pools[c])) for c in sorted(obj_pools)},
            per_category_det={
                table.name(c): percent(self._ap(p)) for c, p in sorted(category_pools["map_det"].items())
            },
            absent_categories=[table.name(c) for c in sorted(obj_pools) if obj_pools[c].gt_count == 0],
            counts=counts,
            iou_threshold=self.config.iou_threshold,
            interpolation=self.config.interpolation,
        )
        logger.info(
            "Evaluation complete: " + ", ".join(f"{METRIC_LABELS[k]}={v:.2f}" for k, v in report.metrics().items())
        )
        return report


def evaluate(gt: FrameSet, dets: FrameSet, cfg: Optional[ApConfig] = None, jobs: int = 1) -> EvalReport:
    """Module-level shortcut for EHOIEvaluator(cfg).evaluate"""
    return EHOIEvaluator(cfg).evaluate(gt, dets, jobs=jobs)
