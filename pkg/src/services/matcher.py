"""Hand to active-object matching service"""

from typing import Dict, List, Optional, Sequence, Tuple

from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, ConfigDict

from src.errors import ReferentialIntegrityError
from src.geometry import center_distance, intersects
from src.models import EHOIQuadruplet, Frame, FrameSet, HandRecord, ObjectRecord
from src.services.interactions import build_quadruplets, decode_offset


class MatchResult(BaseModel):
    """Outcome of matching one in-contact hand"""

    model_config = ConfigDict(frozen=True)

    hand: int
    interaction_point: Tuple[float, float]
    active_object: Optional[int] = None
    candidates_considered: int = 0


class FrameMatches(BaseModel):
    """Matching output for one frame"""

    model_config = ConfigDict(frozen=True)

    frame_id: int
    results: Tuple[MatchResult, ...] = ()
    quadruplets: Tuple[EHOIQuadruplet, ...] = ()

    def assignments(self) -> Dict[int, Optional[int]]:
        return {r.hand: r.active_object for r in self.results}


class HandObjectMatcher:
    """Resolve every in-contact hand to its active object via the interaction point"""

    @staticmethod
    def match_hand(hand: HandRecord, objects: Sequence[ObjectRecord],
                   width: int, height: int) -> MatchResult:
        """
        Select the object whose center is closest to the interaction point
        among those overlapping the hand box with positive area.

        Ties go to the higher score, then to the lower id.
        """
        point = decode_offset(hand.box, hand.offset, width, height)
        candidates = [o for o in objects if intersects(o.box, hand.box)]

        best = None
        if candidates:
            best = min(candidates, key=lambda o: (center_distance(o.box, point), -o.score, o.id))

        return MatchResult(
            hand=hand.id,
            interaction_point=point,
            active_object=best.id if best is not None else None,
            candidates_considered=len(candidates),
        )

    @staticmethod
    def match_frame(hands: Sequence[HandRecord], objects: Sequence[ObjectRecord],
                    width: int, height: int) -> List[MatchResult]:
        """
        Match all in-contact hands of a frame; hands without contact are skipped.

        Args:
            hands: Detected hands
            objects: Candidate objects (their own active flag is ignored)
            width: Image width in pixels
            height: Image height in pixels

        Returns:
            One MatchResult per in-contact hand, in hand order
        """
        return [
            HandObjectMatcher.match_hand(h, objects, width, height)
            for h in hands if h.in_contact
        ]

    @staticmethod
    def match_single_frame(frame: Frame) -> FrameMatches:
        results = HandObjectMatcher.match_frame(frame.hands, frame.objects, frame.width, frame.height)
        assignments = {r.hand: r.active_object for r in results}
        try:
            quadruplets = build_quadruplets(frame.hands, frame.objects, assignments)
        except ReferentialIntegrityError as exc:
            raise ReferentialIntegrityError(f"frame {frame.frame_id}", str(exc)) from exc

        logger.debug(
            f"Frame {frame.frame_id}: {len(results)} in-contact hands, "
            f"{sum(r.active_object is not None for r in results)} matched"
        )
        return FrameMatches(frame_id=frame.frame_id, results=tuple(results), quadruplets=tuple(quadruplets))

    @staticmethod
    def match_dataset(frames: FrameSet, jobs: int = 1) -> List[FrameMatches]:
        """
        Apply match_frame to every frame, preserving frame order.

        Args:
            frames: Parsed detections
            jobs: Frame-level parallelism degree

        Returns:
            One FrameMatches per frame
        """
        if jobs > 1 and len(frames.frames) > 1:
            matches = Parallel(n_jobs=jobs)(
                delayed(HandObjectMatcher.match_single_frame)(f) for f in frames.frames
            )
        else:
            matches = [HandObjectMatcher.match_single_frame(f) for f in frames.frames]

        matched = sum(1 for fm in matches for r in fm.results if r.active_object is not None)
        logger.info(f"Matched {matched} active objects across {len(matches)} frames")
        return list(matches)

    @staticmethod
    def apply_matches(frame: Frame, matches: FrameMatches) -> Frame:
        """
        Mark matched objects active and link them to their hand.

        When several hands select the same object, the lowest hand id is linked.
        """
        owner: Dict[int, int] = {}
        for result in matches.results:
            if result.active_object is not None:
                current = owner.get(result.active_object)
                if current is None or result.hand < current:
                    owner[result.active_object] = result.hand

        objects = tuple(
            o.model_copy(update={"active": o.id in owner, "linked_hand": owner.get(o.id)})
            for o in frame.objects
        )
        return frame.model_copy(update={"objects": objects})


match_frame = HandObjectMatcher.match_frame
match_dataset = HandObjectMatcher.match_dataset
