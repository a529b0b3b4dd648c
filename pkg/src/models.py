"""Domain models for hands, objects, interactions and datasets"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.geometry import BBox

VERSOR_TOLERANCE = 1e-6

REFERENCE_CATEGORIES = (
    "power supply",
    "oscilloscope",
    "welder station",
    "electric screwdriver",
    "screwdriver",
    "pliers",
    "welder probe tip",
    "oscilloscope probe tip",
    "low voltage board",
    "high voltage board",
    "register",
    "electric screwdriver battery",
    "working area",
    "welder base",
    "socket",
    "left red button",
    "left green button",
    "right red button",
    "right green button",
)


class HandSide(str, Enum):
    """Hand side enumeration"""
    LEFT = "left"
    RIGHT = "right"


class ContactState(str, Enum):
    """Hand contact state enumeration"""
    IN_CONTACT = "contact"
    NO_CONTACT = "no_contact"


class FrameKind(str, Enum):
    """Why a frame was selected for annotation"""
    CONTACT = "contact"
    NON_CONTACT = "non_contact"
    UNSPECIFIED = "unspecified"


class SplitName(str, Enum):
    """Dataset split enumeration"""
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


class OffsetVector(_Frozen):
    """Unit direction (vx, vy) plus magnitude m as a fraction of the image diagonal"""

    vx: float
    vy: float
    m: float = Field(..., ge=0)

    @model_validator(mode="after")
    def check_versor(self):
        if self.m > 0 and abs(self.vx ** 2 + self.vy ** 2 - 1.0) >= VERSOR_TOLERANCE:
            raise ValueError(f"Offset versor ({self.vx}, {self.vy}) is not a unit vector")
        return self

    @classmethod
    def from_raw(cls, vx: float, vy: float, m: float) -> "OffsetVector":
        """Normalize a regressed direction; a zero direction becomes (1, 0).

        Directions already within tolerance are kept bit-for-bit.
        """
        if abs(vx ** 2 + vy ** 2 - 1.0) < VERSOR_TOLERANCE:
            return cls(vx=vx, vy=vy, m=m)
        norm = math.hypot(vx, vy)
        if norm == 0:
            return cls(vx=1.0, vy=0.0, m=m)
        return cls(vx=vx / norm, vy=vy / norm, m=m)

    def to_list(self) -> List[float]:
        return [self.vx, self.vy, self.m]


class HandRecord(_Frozen):
    """Detected or annotated hand"""

    id: int
    box: BBox
    score: float = Field(1.0, ge=0, le=1)
    side: HandSide
    side_score: float = Field(1.0, ge=0, le=1)
    state: ContactState
    state_score: float = Field(1.0, ge=0, le=1)
    offset: Optional[OffsetVector] = None

    @model_validator(mode="after")
    def check_offset_presence(self):
        if self.state == ContactState.IN_CONTACT and self.offset is None:
            raise ValueError(f"Hand {self.id} is in contact but has no offset vector")
        if self.state == ContactState.NO_CONTACT and self.offset is not None:
            raise ValueError(f"Hand {self.id} has no contact but carries an offset vector")
        return self

    @property
    def in_contact(self) -> bool:
        return self.state == ContactState.IN_CONTACT


class ObjectRecord(_Frozen):
    """Detected or annotated object"""

    id: int
    box: BBox
    score: float = Field(1.0, ge=0, le=1)
    category: int
    active: bool = False
    linked_hand: Optional[int] = None
    distance_3d: Optional[float] = None  # preserved, unused


class EHOIQuadruplet(_Frozen):
    """<hand, contact_state, active_object, <other_objects>>"""

    hand: int
    contact_state: ContactState
    active_object: Optional[int] = None
    other_objects: Tuple[int, ...] = ()

    @model_validator(mode="after")
    def check_consistency(self):
        if self.active_object is not None:
            if self.contact_state != ContactState.IN_CONTACT:
                raise ValueError(f"Hand {self.hand} has an active object but no contact")
            if self.active_object in self.other_objects:
                raise ValueError(f"Active object {self.active_object} listed among other objects")
        return self


class Category(_Frozen):
    id: int
    name: str


class CategoryTable(_Frozen):
    """Ordered category list; ids are 1..N and names are unique"""

    categories: Tuple[Category, ...]

    @model_validator(mode="after")
    def check_ids(self):
        ids = [c.id for c in self.categories]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"Category ids must be contiguous from 1, got {ids}")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("Category names must be unique")
        return self

    @classmethod
    def reference(cls) -> "CategoryTable":
        """The 19 industrial-laboratory categories"""
        return cls.from_names(REFERENCE_CATEGORIES)

    @classmethod
    def from_names(cls, names) -> "CategoryTable":
        return cls(categories=tuple(Category(id=i, name=n) for i, n in enumerate(names, start=1)))

    def __contains__(self, category_id: int) -> bool:
        return 1 <= category_id <= len(self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def name(self, category_id: int) -> str:
        return self.categories[category_id - 1].name

    @property
    def ids(self) -> List[int]:
        return [c.id for c in self.categories]


class Video(_Frozen):
    id: int
    name: str = ""


class Frame(_Frozen):
    """One annotated or detected image"""

    frame_id: int
    file_name: str = ""
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    hands: Tuple[HandRecord, ...] = ()
    objects: Tuple[ObjectRecord, ...] = ()
    kind: FrameKind = FrameKind.UNSPECIFIED
    video_id: Optional[int] = None
    depth_file: Optional[str] = None
    mask_file: Optional[str] = None

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def hand(self, hand_id: int) -> Optional[HandRecord]:
        for h in self.hands:
            if h.id == hand_id:
                return h
        return None

    def object(self, object_id: int) -> Optional[ObjectRecord]:
        for o in self.objects:
            if o.id == object_id:
                return o
        return None


class FrameSet(_Frozen):
    """Frames plus their category table and video list"""

    frames: Tuple[Frame, ...] = ()
    categories: CategoryTable = Field(default_factory=CategoryTable.reference)
    videos: Tuple[Video, ...] = ()

    def __len__(self) -> int:
        return len(self.frames)

    def frame_ids(self) -> List[int]:
        return [f.frame_id for f in self.frames]

    def by_id(self) -> Dict[int, Frame]:
        return {f.frame_id: f for f in self.frames}

    def video_ids(self) -> List[int]:
        """Video ids in order of first appearance"""
        seen: Dict[int, None] = {}
        for f in self.frames:
            if f.video_id is not None:
                seen.setdefault(f.video_id, None)
        return list(seen)

    def with_frames(self, frames) -> "FrameSet":
        """Same categories, only the videos still referenced"""
        frames = tuple(frames)
        used = {f.video_id for f in frames}
        return FrameSet(
            frames=frames,
            categories=self.categories,
            videos=tuple(v for v in self.videos if v.id in used),
        )


class SplitSpec(_Frozen):
    """Video id -> split assignment"""

    assignment: Dict[int, SplitName]

    @classmethod
    def from_lists(cls, lists: Dict[str, List[int]]) -> "SplitSpec":
        """Build from {"train": [...], "val": [...], "test": [...]}; a video may appear once"""
        assignment: Dict[int, SplitName] = {}
        for split_name, videos in lists.items():
            split = SplitName(split_name)
            for video_id in videos:
                if video_id in assignment:
                    raise ValueError(
                        f"Video {video_id} assigned to both {assignment[video_id].value} and {split.value}"
                    )
                assignment[video_id] = split
        return cls(assignment=assignment)
