"""
Box and Mask Geometry

Exact axis-aligned box arithmetic and binary-mask helpers used by the
matcher, the evaluation suite and the motion-blur box correction.

Boxes are (x, y, w, h) in pixels with a top-left origin. Areas are computed
on continuous regions, which coincides with pixel counting on integer boxes:

    IoU(a, b) = |a ∩ b| / (|a| + |b| - |a ∩ b|)
"""

import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

Point = Tuple[float, float]


class BBox(BaseModel):
    """Axis-aligned rectangle in pixel coordinates"""

    model_config = ConfigDict(frozen=True)

    x: float = Field(..., description="Left edge")
    y: float = Field(..., description="Top edge")
    w: float = Field(..., ge=0, description="Width")
    h: float = Field(..., ge=0, description="Height")

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        """Build a box from (x1, y1, x2, y2) corner coordinates"""
        if x2 < x1 or y2 < y1:
            raise ValueError(f"Corner box ({x1}, {y1}, {x2}, {y2}) has negative extent")
        return cls(x=x1, y=y1, w=x2 - x1, h=y2 - y1)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def area(self) -> float:
        return self.w * self.h

    def center(self) -> Point:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_corners(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.x2, self.y2)

    def to_list(self) -> list:
        return [self.x, self.y, self.w, self.h]

    def scaled(self, k: float) -> "BBox":
        """Scale every coordinate by k (image rescaling)"""
        return BBox(x=self.x * k, y=self.y * k, w=self.w * k, h=self.h * k)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(x=self.x + dx, y=self.y + dy, w=self.w, h=self.h)


class BinaryMask(BaseModel):
    """Row-major boolean grid, one entry per pixel"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    bits: np.ndarray

    @field_validator("bits", mode="before")
    @classmethod
    def coerce_bits(cls, v):
        """Accept any 2-D array-like and store it as a read-only bool array"""
        arr = np.array(v, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"Mask must be 2-D, got shape {arr.shape}")
        arr.setflags(write=False)
        return arr

    @classmethod
    def from_array(cls, array) -> "BinaryMask":
        """Nonzero entries are set pixels"""
        return cls(bits=np.asarray(array) != 0)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(bits=np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    def to_array(self) -> np.ndarray:
        return self.bits.copy()


def intersection_area(a: BBox, b: BBox) -> float:
    """
    Area of the overlap between two boxes.

    Parameters:
    a: First box
    b: Second box

    Returns:
    Overlap area, 0 when the boxes are disjoint or only share an edge
    """
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    """
    Intersection over Union of two boxes.

    IoU = |a ∩ b| / |a ∪ b|

    Parameters:
    a: First box
    b: Second box

    Returns:
    Ratio in [0, 1]; 0 when the union has zero area
    """
    inter = intersection_area(a, b)
    union = a.area() + b.area() - inter
    if union <= 0:
        return 0.0
    return inter / union


def intersects(a: BBox, b: BBox) -> bool:
    """True iff the overlap has positive area (touching edges do not count)"""
    return intersection_area(a, b) > 0


def center_distance(a: BBox, point: Point) -> float:
    """Euclidean distance between the center of a box and a point"""
    cx, cy = a.center()
    return math.hypot(cx - point[0], cy - point[1])


def enlarge(box: BBox, factor: float, width: float, height: float) -> BBox:
    """
    Scale a box about its center by (1 + factor) and clip it to the image.

    Parameters:
    box: Box to enlarge
    factor: Relative growth (0.3 grows each side length by 30%)
    width: Image width in pixels
    height: Image height in pixels

    Returns:
    Enlarged box clipped to [0, width] x [0, height]
    """
    if factor < 0:
        raise ValueError(f"Enlargement factor must be non-negative, got {factor}")
    if width <= 0 or height <= 0:
        raise ValueError(f"Image bounds must be positive, got {width}x{height}")

    cx, cy = box.center()
    half_w = box.w * (1.0 + factor) / 2.0
    half_h = box.h * (1.0 + factor) / 2.0

    x1 = min(max(cx - half_w, 0.0), width)
    y1 = min(max(cy - half_h, 0.0), height)
    x2 = min(max(cx + half_w, 0.0), width)
    y2 = min(max(cy + half_h, 0.0), height)
    return BBox.from_corners(x1, y1, x2, y2)


def mask_to_box(mask: BinaryMask) -> Optional[BBox]:
    """
    Tightest box around the set pixels of a mask.

    A pixel at column c spans [c, c + 1), so the box width is
    max_col - min_col + 1.

    Returns:
    The box, or None when no pixel is set
    """
    rows = np.flatnonzero(mask.bits.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.bits.any(axis=0))

    y_min, y_max = int(rows[0]), int(rows[-1])
    x_min, x_max = int(cols[0]), int(cols[-1])
    return BBox(x=x_min, y=y_min, w=x_max - x_min + 1, h=y_max - y_min + 1)
