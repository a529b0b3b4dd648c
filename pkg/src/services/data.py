"""Annotation/detection parsing, validation, statistics and splitting service"""

import json
import math
from collections import defaultdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Type, TypeVar, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ValidationError

from config.settings import get_settings
from src.errors import DatasetValidationError, DocumentParseError, ReferentialIntegrityError
from src.geometry import BBox
from src.models import (
    Category, CategoryTable, ContactState, Frame, FrameSet, HandRecord, HandSide, ObjectRecord,
    OffsetVector, SplitName, SplitSpec, Video,
)
from src.schemas import (
    AnnotationDocument, AnnotationEntry, CategoryEntry, DetectedHand, DetectedObject,
    DetectionDocument, SplitDocument,
)
from src.services.interactions import encode_offset

Document = Union[str, bytes, Dict[str, Any]]
M = TypeVar("M", bound=BaseModel)


def _coerce_document(document: Document, source: Optional[str] = None) -> Any:
    if isinstance(document, (str, bytes)):
        try:
            return json.loads(document)
        except json.JSONDecodeError as exc:
            raise DocumentParseError(f"malformed JSON: {exc}", source=source) from exc
    return document


def _validate_document(model: Type[M], document: Document, source: Optional[str] = None) -> M:
    payload = _coerce_document(document, source)
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        raise DocumentParseError(f"schema violation: {exc}", source=source) from exc


def _build(model: Type[M], record: str, **fields) -> M:
    """Construct a domain record, reporting invariant failures against its id"""
    try:
        return model(**fields)
    except ValidationError as exc:
        messages = "; ".join(err["msg"] for err in exc.errors())
        raise DatasetValidationError(record, messages) from exc


def _to_box(values: Sequence[float], bbox_format: str, record: str) -> BBox:
    x, y, a, b = values
    try:
        if bbox_format == "xyxy":
            return BBox.from_corners(x, y, a, b)
        return BBox(x=x, y=y, w=a, h=b)
    except (ValueError, ValidationError) as exc:
        raise DatasetValidationError(record, f"invalid box {list(values)}") from exc


def _to_offset(values: Sequence[float], record: str) -> OffsetVector:
    vx, vy, m = values
    if m < 0:
        raise DatasetValidationError(record, f"negative offset magnitude {m}")
    try:
        return OffsetVector.from_raw(vx, vy, m)
    except ValidationError as exc:
        messages = "; ".join(err["msg"] for err in exc.errors())
        raise DatasetValidationError(record, messages) from exc


def _category_table(entries: List[CategoryEntry]) -> CategoryTable:
    categories = tuple(Category(id=c.id, name=c.name) for c in sorted(entries, key=lambda c: c.id))
    return _build(CategoryTable, "categories", categories=categories)


def _without_none(payload: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in payload.items() if v is not None}


class DatasetReader:
    """Parse and validate annotation and detection documents"""

    @staticmethod
    def load_document(path: Union[str, Path]) -> Any:
        """
        Read a JSON file

        Raises:
            DocumentParseError: If the file cannot be read or is not valid JSON
        """
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise DocumentParseError(f"cannot read file: {exc}", source=str(path)) from exc
        return _coerce_document(text, source=str(path))

    @staticmethod
    def parse_annotations(document: Document, source: Optional[str] = None) -> FrameSet:
        """
        Parse a ground-truth document into a validated FrameSet

        Args:
            document: JSON text or already-decoded mapping
            source: Name used in parse diagnostics

        Returns:
            FrameSet with every referential invariant enforced

        Raises:
            DocumentParseError: Malformed JSON or schema violation
            DatasetValidationError: Unknown category, dangling link, duplicate id...
        """
        doc = _validate_document(AnnotationDocument, document, source)
        table = _category_table(doc.categories)

        videos = {v.id: Video(id=v.id, name=v.name) for v in doc.videos}
        declared_videos = bool(videos)

        by_image: Dict[int, List[AnnotationEntry]] = defaultdict(list)
        image_ids = set()
        for image in doc.images:
            if image.id in image_ids:
                raise DatasetValidationError(f"frame {image.id}", "duplicate frame id")
            image_ids.add(image.id)

        seen_annotations = set()
        for ann in doc.annotations:
            if ann.image_id not in image_ids:
                raise ReferentialIntegrityError(f"annotation {ann.id}", f"refers to unknown frame {ann.image_id}")
            if (ann.image_id, ann.id) in seen_annotations:
                raise DatasetValidationError(f"annotation {ann.id}", f"duplicate id in frame {ann.image_id}")
            seen_annotations.add((ann.image_id, ann.id))
            by_image[ann.image_id].append(ann)

        frames = []
        for image in doc.images:
            if image.video_id is not None and image.video_id not in videos:
                if declared_videos:
                    raise ReferentialIntegrityError(f"frame {image.id}", f"refers to unknown video {image.video_id}")
                videos[image.video_id] = Video(id=image.video_id)

            hands, objects = DatasetReader._annotation_records(
                by_image[image.id], table, doc.bbox_format, image.id, image.width, image.height
            )
            frames.append(_build(
                Frame, f"frame {image.id}",
                frame_id=image.id,
                file_name=image.file_name,
                width=image.width,
                height=image.height,
                hands=tuple(hands),
                objects=tuple(objects),
                kind=image.frame_kind,
                video_id=image.video_id,
                depth_file=image.depth_file,
                mask_file=image.mask_file,
            ))

        fs = FrameSet(frames=tuple(frames), categories=table, videos=tuple(videos.values()))
        logger.info(
            f"Parsed {len(frames)} annotated frames "
            f"({sum(len(f.hands) for f in frames)} hands, {sum(len(f.objects) for f in frames)} objects)"
        )
        return fs

    @staticmethod
    def _annotation_records(annotations: List[AnnotationEntry], table: CategoryTable, bbox_format: str,
                            frame_id: int, width: int, height: int) -> Tuple[List[HandRecord], List[ObjectRecord]]:
        hand_entries = [a for a in annotations if a.kind == "hand"]
        hand_ids = {a.id for a in hand_entries}

        objects = []
        for ann in annotations:
            if ann.kind != "object":
                continue
            record = f"annotation {ann.id}"
            if ann.category_id not in table:
                raise DatasetValidationError(record, f"unknown category {ann.category_id} in frame {frame_id}")
            if ann.active and ann.linked_hand_id is None:
                raise DatasetValidationError(record, f"active object in frame {frame_id} has no linked hand")
            if ann.linked_hand_id is not None and ann.linked_hand_id not in hand_ids:
                raise ReferentialIntegrityError(
                    record, f"linked hand {ann.linked_hand_id} does not exist in frame {frame_id}"
                )
            objects.append(_build(
                ObjectRecord, record,
                id=ann.id,
                box=_to_box(ann.bbox, bbox_format, record),
                category=ann.category_id,
                active=ann.active,
                linked_hand=ann.linked_hand_id,
                distance_3d=ann.distance_3d,
            ))

        linked_actives: Dict[int, List[ObjectRecord]] = defaultdict(list)
        for obj in sorted(objects, key=lambda o: o.id):
            if obj.active:
                linked_actives[obj.linked_hand].append(obj)

        hands = []
        for ann in hand_entries:
            record = f"annotation {ann.id}"
            box = _to_box(ann.bbox, bbox_format, record)
            offset = None
            if ann.contact_state == ContactState.IN_CONTACT:
                if not linked_actives[ann.id]:
                    raise DatasetValidationError(record, f"hand in contact in frame {frame_id} links no active object")
                if ann.offset is not None:
                    offset = _to_offset(ann.offset, record)
                else:
                    offset = encode_offset(box, linked_actives[ann.id][0].box, width, height)
            elif ann.offset is not None:
                logger.debug(f"Dropping offset of hand {ann.id} without contact in frame {frame_id}")
            hands.append(_build(
                HandRecord, record,
                id=ann.id,
                box=box,
                side=ann.hand_side,
                state=ann.contact_state,
                offset=offset,
            ))
        return hands, objects

    @staticmethod
    def parse_detections(document: Document, categories: Optional[CategoryTable] = None,
                         image_sizes: Optional[Dict[int, Tuple[int, int]]] = None,
                         contact_threshold: Optional[float] = None,
                         source: Optional[str] = None) -> FrameSet:
        """
        Parse detector outputs into a validated FrameSet

        Args:
            document: JSON text or decoded mapping
            categories: Table used when the document has none (reference table otherwise)
            image_sizes: frame id -> (width, height) for frames lacking dimensions
            contact_threshold: contact_prob at or above which a hand is in contact
            source: Name used in parse diagnostics

        Returns:
            FrameSet of detections (scores mandatory, links only in matched files)
        """
        doc = _validate_document(DetectionDocument, document, source)
        if doc.categories is not None:
            table = _category_table(doc.categories)
        else:
            table = categories or CategoryTable.reference()
        threshold = get_settings().contact_threshold if contact_threshold is None else contact_threshold
        image_sizes = image_sizes or {}

        frames = []
        seen = set()
        for det in doc.frames:
            record = f"frame {det.image_id}"
            if det.image_id in seen:
                raise DatasetValidationError(record, "duplicate frame id")
            seen.add(det.image_id)

            if det.width is not None and det.height is not None:
                width, height = det.width, det.height
            elif det.image_id in image_sizes:
                width, height = image_sizes[det.image_id]
            else:
                raise DatasetValidationError(record, "image size unknown (no width/height and no size source)")

            hands = [DatasetReader._detected_hand(h, doc.bbox_format, det.image_id, threshold) for h in det.hands]
            hand_ids = [h.id for h in hands]
            if len(set(hand_ids)) != len(hand_ids):
                raise DatasetValidationError(record, "duplicate hand id")

            objects = [DatasetReader._detected_object(o, doc.bbox_format, det.image_id, table, set(hand_ids))
                       for o in det.objects]
            object_ids = [o.id for o in objects]
            if len(set(object_ids)) != len(object_ids):
                raise DatasetValidationError(record, "duplicate object id")

            frames.append(_build(
                Frame, record,
                frame_id=det.image_id,
                file_name=det.file_name,
                width=width,
                height=height,
                hands=tuple(hands),
                objects=tuple(objects),
            ))

        logger.info(f"Parsed detections for {len(frames)} frames")
        return FrameSet(frames=tuple(frames), categories=table)

    @staticmethod
    def _detected_hand(hand: DetectedHand, bbox_format: str, frame_id: int, threshold: float) -> HandRecord:
        record = f"frame {frame_id} hand {hand.id}"
        if hand.contact_state is not None:
            state = hand.contact_state
            state_score = hand.state_score if hand.state_score is not None else 1.0
        else:
            in_contact = hand.contact_prob >= threshold
            state = ContactState.IN_CONTACT if in_contact else ContactState.NO_CONTACT
            state_score = hand.contact_prob if in_contact else 1.0 - hand.contact_prob

        offset = None
        if state == ContactState.IN_CONTACT:
            if hand.offset is None:
                raise DatasetValidationError(record, "hand in contact has no offset vector")
            offset = _to_offset(hand.offset, record)

        return _build(
            HandRecord, record,
            id=hand.id,
            box=_to_box(hand.bbox, bbox_format, record),
            score=hand.score,
            side=hand.hand_side,
            side_score=hand.side_score,
            state=state,
            state_score=state_score,
            offset=offset,
        )

    @staticmethod
    def _detected_object(obj: DetectedObject, bbox_format: str, frame_id: int,
                         table: CategoryTable, hand_ids: set) -> ObjectRecord:
        record = f"frame {frame_id} object {obj.id}"
        if obj.category_id not in table:
            raise DatasetValidationError(record, f"unknown category {obj.category_id}")
        if obj.linked_hand_id is not None and obj.linked_hand_id not in hand_ids:
            raise ReferentialIntegrityError(record, f"linked hand {obj.linked_hand_id} does not exist")
        return _build(
            ObjectRecord, record,
            id=obj.id,
            box=_to_box(obj.bbox, bbox_format, record),
            score=obj.score,
            category=obj.category_id,
            active=obj.active,
            linked_hand=obj.linked_hand_id,
        )

    @staticmethod
    def parse_split_spec(document: Document, source: Optional[str] = None) -> SplitSpec:
        doc = _validate_document(SplitDocument, document, source)
        try:
            return SplitSpec.from_lists(doc.model_dump())
        except ValueError as exc:
            raise DatasetValidationError("split spec", str(exc)) from exc


class DatasetWriter:
    """Serialize FrameSets back to their file documents"""

    @staticmethod
    def _categories(table: CategoryTable) -> List[Dict[str, Any]]:
        return [{"id": c.id, "name": c.name} for c in table.categories]

    @staticmethod
    def serialize_annotations(fs: FrameSet) -> Dict[str, Any]:
        """Ground-truth FrameSet -> COCO-style document (boxes as xywh)"""
        images, annotations = [], []
        for frame in fs.frames:
            images.append(_without_none({
                "id": frame.frame_id,
                "file_name": frame.file_name,
                "width": frame.width,
                "height": frame.height,
                "video_id": frame.video_id,
                "frame_kind": frame.kind.value,
                "depth_file": frame.depth_file,
                "mask_file": frame.mask_file,
            }))
            for hand in frame.hands:
                annotations.append(_without_none({
                    "id": hand.id,
                    "image_id": frame.frame_id,
                    "kind": "hand",
                    "bbox": hand.box.to_list(),
                    "hand_side": hand.side.value,
                    "contact_state": hand.state.value,
                    "offset": hand.offset.to_list() if hand.offset else None,
                }))
            for obj in frame.objects:
                annotations.append(_without_none({
                    "id": obj.id,
                    "image_id": frame.frame_id,
                    "kind": "object",
                    "bbox": obj.box.to_list(),
                    "category_id": obj.category,
                    "active": obj.active,
                    "linked_hand_id": obj.linked_hand,
                    "distance_3d": obj.distance_3d,
                }))
        return {
            "bbox_format": "xywh",
            "images": images,
            "annotations": annotations,
            "categories": DatasetWriter._categories(fs.categories),
            "videos": [{"id": v.id, "name": v.name} for v in fs.videos],
        }

    @staticmethod
    def serialize_detections(fs: FrameSet, matches: Optional[Sequence[Any]] = None) -> Dict[str, Any]:
        """
        Detection FrameSet -> detection document

        Args:
            fs: Detections
            matches: FrameMatches per frame; their quadruplets are written when given
        """
        quadruplets = {fm.frame_id: fm.quadruplets for fm in matches} if matches is not None else {}
        frames = []
        for frame in fs.frames:
            entry: Dict[str, Any] = {
                "image_id": frame.frame_id,
                "file_name": frame.file_name,
                "width": frame.width,
                "height": frame.height,
                "hands": [_without_none({
                    "id": h.id,
                    "bbox": h.box.to_list(),
                    "score": h.score,
                    "hand_side": h.side.value,
                    "side_score": h.side_score,
                    "contact_state": h.state.value,
                    "state_score": h.state_score,
                    "offset": h.offset.to_list() if h.offset else None,
                }) for h in frame.hands],
                "objects": [_without_none({
                    "id": o.id,
                    "bbox": o.box.to_list(),
                    "score": o.score,
                    "category_id": o.category,
                    "active": o.active,
                    "linked_hand_id": o.linked_hand,
                }) for o in frame.objects],
            }
            if frame.frame_id in quadruplets:
                entry["quadruplets"] = [
                    {
                        "hand": q.hand,
                        "contact_state": q.contact_state.value,
                        "active_object": q.active_object,
                        "other_objects": list(q.other_objects),
                    }
                    for q in quadruplets[frame.frame_id]
                ]
            frames.append(entry)
        return {
            "version": 1,
            "bbox_format": "xywh",
            "categories": DatasetWriter._categories(fs.categories),
            "frames": frames,
        }

    @staticmethod
    def write_json(path: Union[str, Path], payload: Any):
        """Write sorted, indented JSON so identical payloads give identical bytes"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        logger.debug(f"Wrote {path}")


class DatasetStatistics(BaseModel):
    """Counts reported in the dataset statistics tables"""
    num_videos: int = 0
    num_images: int = 0
    num_hands: int = 0
    hands_in_contact: int = 0
    hands_no_contact: int = 0
    left_hands: int = 0
    right_hands: int = 0
    num_categories: int = 0
    num_objects: int = 0
    num_active_objects: int = 0
    per_category_all: Dict[str, int] = {}
    per_category_active: Dict[str, int] = {}


class SplitStatistics(BaseModel):
    """One column of the split table"""
    videos: int = 0
    images: int = 0
    percent_images: float = 0.0
    hands: int = 0
    objects: int = 0
    active_objects: int = 0


class SplitResult(BaseModel):
    """Video-level partition of a FrameSet"""
    parts: Dict[SplitName, FrameSet]
    stats: Dict[SplitName, SplitStatistics]


STATS_ROWS = (
    ("#videos", "num_videos"),
    ("Total number of images", "num_images"),
    ("#hands", "num_hands"),
    ("#hands in contact", "hands_in_contact"),
    ("#hands not in contact", "hands_no_contact"),
    ("#left hands", "left_hands"),
    ("#right hands", "right_hands"),
    ("#object categories", "num_categories"),
    ("#objects", "num_objects"),
    ("#active objects", "num_active_objects"),
)

SPLIT_ROWS = (
    ("#Videos", "videos"),
    ("#images", "images"),
    ("%images", "percent_images"),
    ("#Hands", "hands"),
    ("#Objects", "objects"),
    ("#Active Objects", "active_objects"),
)


class DatasetAnalyzer:
    """Statistics, splits and subsampling over FrameSets"""

    @staticmethod
    def stats(fs: FrameSet) -> DatasetStatistics:
        """
        Count images, hands and objects

        Args:
            fs: Validated FrameSet

        Returns:
            DatasetStatistics with per-category all/active histograms
        """
        hands = [h for f in fs.frames for h in f.hands]
        objects = [o for f in fs.frames for o in f.objects]

        per_all = {c.name: 0 for c in fs.categories.categories}
        per_active = dict(per_all)
        for obj in objects:
            name = fs.categories.name(obj.category)
            per_all[name] += 1
            if obj.active:
                per_active[name] += 1

        in_contact = sum(1 for h in hands if h.in_contact)
        left = sum(1 for h in hands if h.side == HandSide.LEFT)
        return DatasetStatistics(
            num_videos=len(fs.video_ids()),
            num_images=len(fs.frames),
            num_hands=len(hands),
            hands_in_contact=in_contact,
            hands_no_contact=len(hands) - in_contact,
            left_hands=left,
            right_hands=len(hands) - left,
            num_categories=sum(1 for v in per_all.values() if v > 0),
            num_objects=len(objects),
            num_active_objects=sum(1 for o in objects if o.active),
            per_category_all=per_all,
            per_category_active=per_active,
        )

    @staticmethod
    def render_stats_table(stats: DatasetStatistics) -> Tuple[str, pd.DataFrame]:
        """Two-column statistics table in the published row order"""
        df = pd.DataFrame({
            "statistic": [label for label, _ in STATS_ROWS],
            "value": [getattr(stats, key) for _, key in STATS_ROWS],
        })
        text = pd.DataFrame({
            "statistic": df["statistic"],
            "value": [f"{v:,}" for v in df["value"]],
        }).to_string(index=False)
        return text + "\n", df

    @staticmethod
    def category_histogram(stats: DatasetStatistics) -> pd.DataFrame:
        return pd.DataFrame({
            "category": list(stats.per_category_all),
            "all": list(stats.per_category_all.values()),
            "active": [stats.per_category_active.get(n, 0) for n in stats.per_category_all],
        })

    @staticmethod
    def split(fs: FrameSet, spec: SplitSpec) -> SplitResult:
        """
        Partition frames by video so no video leaks across splits

        Raises:
            DatasetValidationError: If a frame has no video or its video is unassigned
        """
        buckets: Dict[SplitName, List[Frame]] = {name: [] for name in SplitName}
        for frame in fs.frames:
            if frame.video_id is None:
                raise DatasetValidationError(f"frame {frame.frame_id}", "has no video id and cannot be split")
            if frame.video_id not in spec.assignment:
                raise DatasetValidationError(f"video {frame.video_id}", "not assigned to any split")
            buckets[spec.assignment[frame.video_id]].append(frame)

        total = len(fs.frames)
        parts, stats = {}, {}
        for name, frames in buckets.items():
            part = fs.with_frames(frames)
            parts[name] = part
            stats[name] = SplitStatistics(
                videos=len(part.video_ids()),
                images=len(frames),
                percent_images=100.0 * len(frames) / total if total else 0.0,
                hands=sum(len(f.hands) for f in frames),
                objects=sum(len(f.objects) for f in frames),
                active_objects=sum(1 for f in frames for o in f.objects if o.active),
            )
            logger.info(f"Split {name.value}: {len(frames)} frames from {stats[name].videos} videos")
        return SplitResult(parts=parts, stats=stats)

    @staticmethod
    def render_split_table(result: SplitResult) -> Tuple[str, pd.DataFrame]:
        """Rows #Videos .. #Active Objects, columns Train/Val/Test"""
        columns = {name.value.capitalize(): result.stats[name] for name in SplitName}
        df = pd.DataFrame(
            {col: [getattr(s, key) for _, key in SPLIT_ROWS] for col, s in columns.items()},
            index=[label for label, _ in SPLIT_ROWS],
        )
        df.index.name = "Split"

        def fmt(key: str, value) -> str:
            return f"{value:.2f}" if key == "percent_images" else f"{int(value):,}"

        text_df = pd.DataFrame(
            {col: [fmt(key, getattr(s, key)) for _, key in SPLIT_ROWS] for col, s in columns.items()},
            index=df.index,
        )
        return text_df.to_string() + "\n", df

    @staticmethod
    def subsample(fs: FrameSet, fraction: float, seed: int) -> FrameSet:
        """
        Seeded uniform subsample of ceil(fraction * N) frames, original order kept

        Args:
            fs: FrameSet to subsample
            fraction: Share of frames to keep, in (0, 1]
            seed: Random seed

        Returns:
            Subsampled FrameSet
        """
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
        n = len(fs.frames)
        if fraction == 1 or n == 0:
            return fs

        k = math.ceil(round(fraction * n, 9))
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(n, size=k, replace=False))
        logger.info(f"Subsampled {k}/{n} frames (fraction={fraction}, seed={seed})")
        return fs.with_frames(fs.frames[i] for i in keep)

    @staticmethod
    def merge(a: FrameSet, b: FrameSet) -> FrameSet:
        """Concatenate two FrameSets with disjoint frame ids and the same categories"""
        if a.categories != b.categories:
            raise DatasetValidationError("categories", "cannot merge FrameSets with different category tables")
        overlap = set(a.frame_ids()) & set(b.frame_ids())
        if overlap:
            raise DatasetValidationError(f"frame {min(overlap)}", "present in both FrameSets")
        videos = {v.id: v for v in a.videos}
        for v in b.videos:
            videos.setdefault(v.id, v)
        return FrameSet(frames=a.frames + b.frames, categories=a.categories, videos=tuple(videos.values()))


load_document = DatasetReader.load_document
parse_annotations = DatasetReader.parse_annotations
parse_detections = DatasetReader.parse_detections
serialize_annotations = DatasetWriter.serialize_annotations
serialize_detections = DatasetWriter.serialize_detections
write_json = DatasetWriter.write_json
stats = DatasetAnalyzer.stats
split = DatasetAnalyzer.split
subsample = DatasetAnalyzer.subsample
