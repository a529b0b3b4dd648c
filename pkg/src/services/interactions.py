"""
Offset Vector Codec and Quadruplet Assembly

The offset vector links the center of a hand box to the center of its
active object:

    d = c_object - c_hand
    m = |d| / diag(image)
    v = d / |d|                 (v = (1, 0) when |d| = 0)

and the interaction point is recovered as

    p_interaction = c_hand + m * diag(image) * v
"""

import math
from typing import Dict, List, Optional, Sequence

from src.errors import ReferentialIntegrityError
from src.geometry import BBox, Point, enlarge
from src.models import ContactState, EHOIQuadruplet, HandRecord, ObjectRecord, OffsetVector

HAND_CROP_ENLARGEMENT = 0.3


def _diagonal(width: float, height: float) -> float:
    if width <= 0 or height <= 0:
        raise ValueError(f"Image dimensions must be positive, got {width}x{height}")
    return math.hypot(width, height)


def encode_offset(hand_box: BBox, object_box: BBox, width: float, height: float) -> OffsetVector:
    """
    Encode the hand-to-object center displacement.

    Parameters:
    hand_box: Hand bounding box
    object_box: Active object bounding box
    width: Image width in pixels
    height: Image height in pixels

    Returns:
    OffsetVector with m expressed as a fraction of the image diagonal
    """
    diag = _diagonal(width, height)
    hx, hy = hand_box.center()
    ox, oy = object_box.center()
    dx, dy = ox - hx, oy - hy

    length = math.hypot(dx, dy)
    if length == 0:
        return OffsetVector(vx=1.0, vy=0.0, m=0.0)
    return OffsetVector(vx=dx / length, vy=dy / length, m=length / diag)


def decode_offset(hand_box: BBox, offset: OffsetVector, width: float, height: float) -> Point:
    """
    Recover the interaction point, the predicted active-object center.

    The point is not clipped to the image.
    """
    diag = _diagonal(width, height)
    hx, hy = hand_box.center()
    scale = offset.m * diag
    return (hx + scale * offset.vx, hy + scale * offset.vy)


def hand_crop(hand: HandRecord, width: float, height: float,
              factor: float = HAND_CROP_ENLARGEMENT) -> BBox:
    """Hand box enlarged by 30% (default) for context, clipped to the image"""
    return enlarge(hand.box, factor, width, height)


def build_quadruplets(hands: Sequence[HandRecord], objects: Sequence[ObjectRecord],
                      matches: Dict[int, Optional[int]]) -> List[EHOIQuadruplet]:
    """
    Assemble one <hand, contact_state, active_object, <other_objects>> per hand.

    Args:
        hands: Hands of one frame
        objects: Objects of the same frame, in output order
        matches: hand id -> selected object id (None when nothing was selected)

    Returns:
        Quadruplets in hand order

    Raises:
        ReferentialIntegrityError: If a match refers to an unknown hand or object
    """
    hand_ids = {h.id for h in hands}
    object_ids = [o.id for o in objects]
    known_objects = set(object_ids)

    for hand_id, object_id in matches.items():
        if hand_id not in hand_ids:
            raise ReferentialIntegrityError(f"hand {hand_id}", "matched hand does not exist in the frame")
        if object_id is not None and object_id not in known_objects:
            raise ReferentialIntegrityError(
                f"object {object_id}", f"object matched to hand {hand_id} does not exist in the frame"
            )

    quadruplets = []
    for hand in hands:
        active = matches.get(hand.id)
        if active is not None and hand.state != ContactState.IN_CONTACT:
            raise ReferentialIntegrityError(f"hand {hand.id}", "hand without contact cannot own an active object")
        quadruplets.append(EHOIQuadruplet(
            hand=hand.id,
            contact_state=hand.state,
            active_object=active,
            other_objects=tuple(oid for oid in object_ids if oid != active),
        ))
    return quadruplets
