"""Pydantic schemas for annotation and detection documents"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from src.models import ContactState, FrameKind, HandSide

BBoxFormat = Literal["xywh", "xyxy"]


def _check_length(v: Optional[List[float]], n: int, name: str) -> Optional[List[float]]:
    if v is not None and len(v) != n:
        raise ValueError(f"{name} must have {n} values, got {len(v)}")
    return v


# ============ Shared Entries ============

class CategoryEntry(BaseModel):
    """Category table entry"""
    id: int
    name: str = Field(..., min_length=1)


class VideoEntry(BaseModel):
    """Source video entry"""
    id: int
    name: str = ""


# ============ Annotation Document ============

class ImageEntry(BaseModel):
    """Annotated image (one frame)"""
    id: int
    file_name: str = ""
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    video_id: Optional[int] = None
    frame_kind: FrameKind = FrameKind.UNSPECIFIED
    depth_file: Optional[str] = None
    mask_file: Optional[str] = None


class AnnotationEntry(BaseModel):
    """Hand or object annotation with interaction attributes"""
    id: int
    image_id: int
    kind: Literal["hand", "object"] = "object"
    bbox: List[float]
    category_id: Optional[int] = None
    hand_side: Optional[HandSide] = None
    contact_state: Optional[ContactState] = None
    active: bool = False
    linked_hand_id: Optional[int] = None
    offset: Optional[List[float]] = None
    distance_3d: Optional[float] = None

    @field_validator("bbox")
    @classmethod
    def bbox_length(cls, v):
        return _check_length(v, 4, "bbox")

    @field_validator("offset")
    @classmethod
    def offset_length(cls, v):
        return _check_length(v, 3, "offset")

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind == "hand":
            if self.hand_side is None or self.contact_state is None:
                raise ValueError(f"Hand annotation {self.id} needs hand_side and contact_state")
        elif self.category_id is None:
            raise ValueError(f"Object annotation {self.id} needs category_id")
        return self


class AnnotationDocument(BaseModel):
    """COCO-style ground-truth document"""
    info: Dict[str, Any] = Field(default_factory=dict)
    bbox_format: BBoxFormat = "xywh"
    images: List[ImageEntry]
    annotations: List[AnnotationEntry] = Field(default_factory=list)
    categories: List[CategoryEntry]
    videos: List[VideoEntry] = Field(default_factory=list)


# ============ Detection Document ============

class DetectedHand(BaseModel):
    """Hand detection with side, state and offset head outputs"""
    id: int
    bbox: List[float]
    score: float = Field(..., ge=0, le=1)
    hand_side: HandSide
    side_score: float = Field(1.0, ge=0, le=1)
    contact_state: Optional[ContactState] = None
    contact_prob: Optional[float] = Field(None, ge=0, le=1)
    state_score: Optional[float] = Field(None, ge=0, le=1)
    offset: Optional[List[float]] = None

    @field_validator("bbox")
    @classmethod
    def bbox_length(cls, v):
        return _check_length(v, 4, "bbox")

    @field_validator("offset")
    @classmethod
    def offset_length(cls, v):
        return _check_length(v, 3, "offset")

    @model_validator(mode="after")
    def check_state(self):
        if self.contact_state is None and self.contact_prob is None:
            raise ValueError(f"Hand detection {self.id} needs contact_state or contact_prob")
        return self


class DetectedObject(BaseModel):
    """Object detection; active/linked_hand_id are present in matched files"""
    id: int
    bbox: List[float]
    score: float = Field(..., ge=0, le=1)
    category_id: int
    active: bool = False
    linked_hand_id: Optional[int] = None

    @field_validator("bbox")
    @classmethod
    def bbox_length(cls, v):
        return _check_length(v, 4, "bbox")


class QuadrupletEntry(BaseModel):
    """Resolved interaction written by the match command"""
    hand: int
    contact_state: ContactState
    active_object: Optional[int] = None
    other_objects: List[int] = Field(default_factory=list)


class DetectionFrame(BaseModel):
    """Detections for one image"""
    image_id: int
    file_name: str = ""
    width: Optional[int] = Field(None, gt=0)
    height: Optional[int] = Field(None, gt=0)
    hands: List[DetectedHand] = Field(default_factory=list)
    objects: List[DetectedObject] = Field(default_factory=list)
    quadruplets: Optional[List[QuadrupletEntry]] = None


class DetectionDocument(BaseModel):
    """Per-frame detector outputs"""
    version: int = 1
    bbox_format: BBoxFormat = "xywh"
    categories: Optional[List[CategoryEntry]] = None
    frames: List[DetectionFrame] = Field(default_factory=list)


# ============ Split Document ============

class SplitDocument(BaseModel):
    """Video ids per split"""
    train: List[int] = Field(default_factory=list)
    val: List[int] = Field(default_factory=list)
    test: List[int] = Field(default_factory=list)
