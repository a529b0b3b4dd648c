"""Shared fixtures: the 12-frame dataset, perfect detections and the micro dataset"""

import copy
import json

import pytest

from src.geometry import BBox
from src.models import (
    CategoryTable, ContactState, Frame, FrameSet, HandRecord, HandSide, ObjectRecord,
)
from src.services.data import parse_annotations, serialize_detections
from src.services.interactions import encode_offset

WIDTH, HEIGHT = 640, 480
NUM_FRAMES = 12

IN_CONTACT_BOX = [200, 300, 60, 60]
NO_CONTACT_BOX = [420, 300, 60, 60]
ACTIVE_BOX = [240, 280, 80, 60]
OTHER_BOXES = ([20, 20, 40, 40], [100, 20, 40, 40], [20, 120, 40, 40], [560, 20, 40, 40])
OTHER_CATEGORIES = (13, 14, 15, 16)


def build_fixture_document():
    """
    12 frames from 4 videos (3 frames each), two hands and five objects per frame.

    Frame i: hand 100i+1 in contact with object 100i+11 (category i), hand
    100i+2 without contact, objects 100i+12..15 of categories 13..16.
    Odd frames have the in-contact hand on the right, even frames on the left.
    """
    table = CategoryTable.reference()
    images, annotations = [], []
    for i in range(1, NUM_FRAMES + 1):
        odd = i % 2 == 1
        images.append({
            "id": i,
            "file_name": f"frame_{i:04d}.png",
            "width": WIDTH,
            "height": HEIGHT,
            "video_id": (i - 1) // 3 + 1,
            "frame_kind": "contact" if odd else "non_contact",
        })
        annotations.append({
            "id": 100 * i + 1, "image_id": i, "kind": "hand", "bbox": IN_CONTACT_BOX,
            "hand_side": "right" if odd else "left", "contact_state": "contact",
        })
        annotations.append({
            "id": 100 * i + 2, "image_id": i, "kind": "hand", "bbox": NO_CONTACT_BOX,
            "hand_side": "left" if odd else "right", "contact_state": "no_contact",
        })
        annotations.append({
            "id": 100 * i + 11, "image_id": i, "kind": "object", "bbox": ACTIVE_BOX,
            "category_id": i, "active": True, "linked_hand_id": 100 * i + 1,
        })
        for k, (box, category) in enumerate(zip(OTHER_BOXES, OTHER_CATEGORIES)):
            annotations.append({
                "id": 100 * i + 12 + k, "image_id": i, "kind": "object", "bbox": box,
                "category_id": category,
            })
    return {
        "info": {"description": "12-frame fixture"},
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c.id, "name": c.name} for c in table.categories],
        "videos": [{"id": v, "name": f"video_{v}"} for v in range(1, 5)],
    }


def perfect_detections(gt: FrameSet) -> FrameSet:
    """Detections copied from the ground truth, associations left to the matcher"""
    frames = []
    for frame in gt.frames:
        hands = tuple(
            h.model_copy(update={"score": 0.99 - 0.01 * k, "side_score": 0.9, "state_score": 0.9})
            for k, h in enumerate(frame.hands)
        )
        objects = tuple(
            o.model_copy(update={"score": 0.95 - 0.01 * k, "active": False, "linked_hand": None,
                                 "distance_3d": None})
            for k, o in enumerate(frame.objects)
        )
        frames.append(Frame(frame_id=frame.frame_id, file_name=frame.file_name,
                            width=frame.width, height=frame.height, hands=hands, objects=objects))
    return FrameSet(frames=tuple(frames), categories=gt.categories)


@pytest.fixture
def fixture_document():
    return build_fixture_document()


@pytest.fixture
def fixture_gt(fixture_document):
    return parse_annotations(copy.deepcopy(fixture_document))


@pytest.fixture
def perfect_dets(fixture_gt):
    return perfect_detections(fixture_gt)


@pytest.fixture
def fixture_files(tmp_path, fixture_document, fixture_gt, perfect_dets):
    """GT, detection and split-spec files written to a temporary directory"""
    gt_path = tmp_path / "gt.json"
    dets_path = tmp_path / "dets.json"
    split_path = tmp_path / "split.json"
    gt_path.write_text(json.dumps(fixture_document))
    dets_path.write_text(json.dumps(serialize_detections(perfect_dets)))
    split_path.write_text(json.dumps({"train": [1, 2], "val": [3], "test": [4]}))
    return {"gt": gt_path, "dets": dets_path, "split": split_path}


# ============ Micro dataset ============

MICRO_HAND_BOX = BBox(x=100, y=100, w=50, h=50)
MICRO_ACTIVE_BOX = BBox(x=130, y=110, w=60, h=40)


def _hand(hand_id, side, target_box, score=1.0):
    return HandRecord(
        id=hand_id, box=MICRO_HAND_BOX, score=score, side=side, state=ContactState.IN_CONTACT,
        offset=encode_offset(MICRO_HAND_BOX, target_box, WIDTH, HEIGHT),
    )


def _object(object_id, category, box, score=1.0, active=False, linked_hand=None):
    return ObjectRecord(id=object_id, box=box, score=score, category=category,
                        active=active, linked_hand=linked_hand)


def build_micro_dataset():
    """
    Three frames with one in-contact hand each.

    Frame 1 is fully correct. Frame 2 has the wrong hand side. Frame 3 points
    the hand at the wrong (category 2) object. Categories: 1 = pliers, 2 = screwdriver.
    """
    table = CategoryTable.from_names(["pliers", "screwdriver"])
    b_far = BBox(x=400, y=400, w=40, h=40)
    b_side = BBox(x=300, y=100, w=40, h=40)
    b_near = BBox(x=90, y=140, w=40, h=40)

    gt = FrameSet(categories=table, frames=(
        Frame(frame_id=1, width=WIDTH, height=HEIGHT,
              hands=(_hand(1, HandSide.RIGHT, MICRO_ACTIVE_BOX),),
              objects=(_object(11, 1, MICRO_ACTIVE_BOX, active=True, linked_hand=1), _object(12, 2, b_far))),
        Frame(frame_id=2, width=WIDTH, height=HEIGHT,
              hands=(_hand(21, HandSide.LEFT, MICRO_ACTIVE_BOX),),
              objects=(_object(31, 2, MICRO_ACTIVE_BOX, active=True, linked_hand=21), _object(32, 1, b_side))),
        Frame(frame_id=3, width=WIDTH, height=HEIGHT,
              hands=(_hand(41, HandSide.RIGHT, MICRO_ACTIVE_BOX),),
              objects=(_object(51, 1, MICRO_ACTIVE_BOX, active=True, linked_hand=41), _object(52, 2, b_near))),
    ))
    dets = FrameSet(categories=table, frames=(
        Frame(frame_id=1, width=WIDTH, height=HEIGHT,
              hands=(_hand(1, HandSide.RIGHT, MICRO_ACTIVE_BOX, score=0.9),),
              objects=(_object(11, 1, MICRO_ACTIVE_BOX, score=0.8), _object(12, 2, b_far, score=0.7))),
        Frame(frame_id=2, width=WIDTH, height=HEIGHT,
              hands=(_hand(21, HandSide.RIGHT, MICRO_ACTIVE_BOX, score=0.8),),
              objects=(_object(31, 2, MICRO_ACTIVE_BOX, score=0.9), _object(32, 1, b_side, score=0.6))),
        Frame(frame_id=3, width=WIDTH, height=HEIGHT,
              hands=(_hand(41, HandSide.RIGHT, b_near, score=0.7),),
              objects=(_object(51, 1, MICRO_ACTIVE_BOX, score=0.85), _object(52, 2, b_near, score=0.75))),
    ))
    return gt, dets


@pytest.fixture
def micro_dataset():
    return build_micro_dataset()
